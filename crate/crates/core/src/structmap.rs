//! Classical (non-learned) structure maps: Sobel gradient magnitude,
//! global-mean thresholding, and the multi-scale ground-truth pyramids used
//! both as self-supervision targets and as fusion masks.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;
use crate::plane::Plane;

/// Binarization convention for structure maps.
///
/// `EdgePositive` marks pixels whose gradient magnitude is at or above the
/// global mean (1 = edge). `PaperLiteral` is the complementary reading, with
/// 1 assigned where `grad - mean <= 0`. The tie at grad == mean is inclusive
/// on both sides, so a constant image yields all-ones under either
/// convention.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    #[default]
    EdgePositive,
    PaperLiteral,
}

/// Per-scale binary structure maps for one image. Level 1 matches the input
/// resolution; each following level is computed on a 2x2 average-pooled
/// copy, so dimensions halve (floor) per level.
#[derive(Clone, Debug, PartialEq)]
pub struct StructurePyramid {
    levels: Vec<Plane>,
    polarity: Polarity,
}

impl StructurePyramid {
    pub fn levels(&self) -> &[Plane] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Plane {
        &self.levels[k]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }
}

/// Sobel gradient magnitude `sqrt(gx^2 + gy^2)` with the standard 3x3
/// kernels and replicate-padded borders.
pub fn sobel_magnitude(img: &Plane) -> Result<Plane> {
    if img.is_empty() {
        return Err(Error::TooSmall {
            context: "sobel on empty image",
        });
    }
    let data = kernels::sobel_magnitude_raw(img.h(), img.w(), img.data());
    Plane::new(img.h(), img.w(), data)
}

/// Thresholds a gradient-magnitude map at its global mean.
pub fn binarize_by_global_mean(grad: &Plane, polarity: Polarity) -> Plane {
    let mean = grad.mean();
    match polarity {
        Polarity::EdgePositive => grad.map(|v| if v >= mean { 1.0 } else { 0.0 }),
        Polarity::PaperLiteral => grad.map(|v| if v - mean <= 0.0 { 1.0 } else { 0.0 }),
    }
}

/// Ground-truth structure pyramid: level k applies Sobel + thresholding to
/// the input downsampled (k-1) times by 2x2 average pooling.
pub fn structure_pyramid_gt(img: &Plane, n_levels: usize, polarity: Polarity) -> Result<StructurePyramid> {
    if n_levels == 0 {
        return Err(Error::InvalidConfig {
            what: alloc::string::String::from("pyramid needs at least one level"),
        });
    }
    let min_dim = 1usize << (n_levels - 1);
    if img.h() < min_dim || img.w() < min_dim {
        return Err(Error::TooSmall {
            context: "image too small for requested pyramid levels",
        });
    }
    let mut levels = Vec::with_capacity(n_levels);
    let mut cur = img.clone();
    for k in 0..n_levels {
        if k > 0 {
            cur = cur.avg_pool2()?;
        }
        levels.push(binarize_by_global_mean(&sobel_magnitude(&cur)?, polarity));
    }
    Ok(StructurePyramid { levels, polarity })
}

/// Level-1 edge map with edge-positive polarity, for visual inspection.
pub fn edge_map_for_display(img: &Plane) -> Result<Plane> {
    Ok(binarize_by_global_mean(
        &sobel_magnitude(img)?,
        Polarity::EdgePositive,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_core::{RngCore, SeedableRng};
    use structfuse_oracles as oracle;

    fn random_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(h, w, |_, _| {
            (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn constant_image_has_zero_magnitude() {
        let img = Plane::filled(16, 16, 0.37);
        let mag = sobel_magnitude(&img).unwrap();
        assert!(mag.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_matches_convolution_oracle() {
        let img = Plane::from_fn(8, 8, |_, j| if j < 4 { 0.0 } else { 1.0 });
        let mag = sobel_magnitude(&img).unwrap();
        // interior response right at the step: |gx| = 4 * edge height
        assert!((mag.get(4, 3) - 4.0).abs() < 1e-6);
        assert!((mag.get(4, 4) - 4.0).abs() < 1e-6);
        let expected = oracle::sobel_magnitude(8, 8, img.data());
        for (a, b) in mag.data().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn random_plane_matches_convolution_oracle() {
        let img = random_plane(5, 5, 42);
        let mag = sobel_magnitude(&img).unwrap();
        let expected = oracle::sobel_magnitude(5, 5, img.data());
        for (a, b) in mag.data().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_plane_is_all_ones_under_paper_literal() {
        let grad = Plane::zeros(9, 9);
        let m = binarize_by_global_mean(&grad, Polarity::PaperLiteral);
        assert!(m.data().iter().all(|&v| v == 1.0));
        // ... and all ones under edge-positive too: 0 >= 0.
        let m = binarize_by_global_mean(&grad, Polarity::EdgePositive);
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_pixel_plane_polarity() {
        let grad = Plane::new(1, 2, alloc::vec![0.0, 2.0]).unwrap();
        let lit = binarize_by_global_mean(&grad, Polarity::PaperLiteral);
        assert_eq!(lit.data(), &[1.0, 0.0]);
        let pos = binarize_by_global_mean(&grad, Polarity::EdgePositive);
        assert_eq!(pos.data(), &[0.0, 1.0]);
    }

    #[test]
    fn binarize_matches_scalar_oracle_both_polarities() {
        let grad = sobel_magnitude(&random_plane(16, 16, 9)).unwrap();
        for (pol, literal) in [(Polarity::PaperLiteral, true), (Polarity::EdgePositive, false)] {
            let got = binarize_by_global_mean(&grad, pol);
            let want = oracle::binarize_by_mean(grad.data(), literal);
            assert_eq!(got.data(), &want[..]);
        }
    }

    #[test]
    fn constant_image_pyramid_all_ones_paper_literal() {
        let img = Plane::filled(64, 64, 0.5);
        let pyr = structure_pyramid_gt(&img, 3, Polarity::PaperLiteral).unwrap();
        assert_eq!(pyr.n_levels(), 3);
        for (k, level) in pyr.levels().iter().enumerate() {
            assert_eq!((level.h(), level.w()), (64 >> k, 64 >> k));
            assert!(level.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn single_level_pyramid_is_binarized_sobel() {
        let img = random_plane(12, 10, 3);
        let pyr = structure_pyramid_gt(&img, 1, Polarity::EdgePositive).unwrap();
        let direct = binarize_by_global_mean(&sobel_magnitude(&img).unwrap(), Polarity::EdgePositive);
        assert_eq!(pyr.level(0), &direct);
    }

    #[test]
    fn checkerboard_pyramid_matches_composed_oracle() {
        let img = Plane::from_fn(32, 32, |i, j| ((i / 2 + j / 2) % 2) as f64);
        let pyr = structure_pyramid_gt(&img, 3, Polarity::EdgePositive).unwrap();
        let mut cur: Vec<f64> = img.data().to_vec();
        let (mut h, mut w) = (32usize, 32usize);
        for k in 0..3 {
            if k > 0 {
                let (nh, nw, pooled) = oracle::avg_pool2(h, w, &cur);
                h = nh;
                w = nw;
                cur = pooled;
            }
            let mag = oracle::sobel_magnitude(h, w, &cur);
            let want = oracle::binarize_by_mean(&mag, false);
            assert_eq!(pyr.level(k).data(), &want[..], "level {k}");
        }
    }

    #[test]
    fn too_small_image_rejected() {
        let img = Plane::filled(3, 3, 0.1);
        assert!(structure_pyramid_gt(&img, 3, Polarity::EdgePositive).is_err());
    }

    #[test]
    fn display_edge_map_conventions() {
        let flat = Plane::filled(8, 8, 0.2);
        let m = edge_map_for_display(&flat).unwrap();
        // constant image: gradient 0 everywhere, mean 0, so every pixel >= mean
        assert!(m.data().iter().all(|&v| v == 1.0));

        let step = Plane::from_fn(9, 9, |_, j| if j < 4 { 0.0 } else { 1.0 });
        let m = edge_map_for_display(&step).unwrap();
        // a single connected vertical band around the step
        for i in 0..9 {
            for j in 0..9 {
                let expect = (3..=4).contains(&j);
                assert_eq!(m.get(i, j) == 1.0, expect, "({i},{j})");
            }
        }
    }

    proptest! {
        // Binary maps under the two polarities are complements away from ties.
        #[test]
        fn polarities_are_complements(seed in 0u64..1000) {
            let grad = sobel_magnitude(&random_plane(8, 8, seed)).unwrap();
            let mean = grad.mean();
            let lit = binarize_by_global_mean(&grad, Polarity::PaperLiteral);
            let pos = binarize_by_global_mean(&grad, Polarity::EdgePositive);
            for idx in 0..grad.len() {
                if grad.data()[idx] != mean {
                    prop_assert_eq!(lit.data()[idx] + pos.data()[idx], 1.0);
                }
            }
        }

        // Positive rescaling of the input leaves every binary map unchanged.
        #[test]
        fn scale_invariance(seed in 0u64..200, scale in 0.05f64..0.99) {
            let img = random_plane(12, 12, seed);
            let scaled = img.map(|v| v * scale);
            let a = structure_pyramid_gt(&img, 2, Polarity::EdgePositive).unwrap();
            let b = structure_pyramid_gt(&scaled, 2, Polarity::EdgePositive).unwrap();
            prop_assert_eq!(a.levels(), b.levels());
        }

        // Determinism: same input, same bytes.
        #[test]
        fn deterministic(seed in 0u64..200) {
            let img = random_plane(16, 16, seed);
            let a = structure_pyramid_gt(&img, 3, Polarity::PaperLiteral).unwrap();
            let b = structure_pyramid_gt(&img, 3, Polarity::PaperLiteral).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
