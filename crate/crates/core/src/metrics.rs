//! The six-metric evaluation engine: MI, SF, AG, VIF, Qabf and SSIM over
//! (ir, vi, fused) luminance triples, with batch aggregation.
//!
//! Conventions, pinned once here: every function takes planes in [0,1];
//! MI, SF, AG, VIF and Qabf rescale to [0,255] internally (MI additionally
//! quantizes to 8 bits), SSIM runs on [0,1] with unit dynamic range. MI and
//! VIF are sums over both sources.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::kernels;
use crate::losses;
use crate::plane::Plane;

/// The six metric values for one pair.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct MetricValues {
    pub mi: f64,
    pub sf: f64,
    pub ag: f64,
    pub vif: f64,
    pub qabf: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportMetadata {
    pub dataset: String,
    pub checkpoint_id: String,
    pub timestamp: String,
}

/// Per-pair and aggregate metric values over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Sorted by pair id.
    pub per_pair: Vec<(String, MetricValues)>,
    /// Arithmetic mean of each metric over the evaluated pairs.
    pub aggregate: MetricValues,
    /// Pairs that failed evaluation, with the reason; skipped from the
    /// aggregate.
    pub skipped: Vec<(String, String)>,
    pub metadata: ReportMetadata,
}

/// Quantizes a [0,1] plane to 8 bits (round half away from zero).
pub fn quantize_u8(p: &Plane) -> Vec<u8> {
    p.data()
        .iter()
        .map(|&v| fmath::round(v.clamp(0.0, 1.0) * 255.0) as u8)
        .collect()
}

fn check_triple(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<()> {
    if !fused.same_shape(ir) || !fused.same_shape(vi) {
        return Err(Error::ShapeMismatch {
            context: "metric inputs differ in shape",
        });
    }
    Ok(())
}

fn scaled_255(p: &Plane) -> Vec<f64> {
    p.data().iter().map(|&v| v * 255.0).collect()
}

// ---------------------------------------------------------------------------
// MI
// ---------------------------------------------------------------------------

fn mi_pair_bits(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mut joint = vec![0u32; 256 * 256];
    let mut hx = [0u32; 256];
    let mut hy = [0u32; 256];
    for (&a, &b) in x.iter().zip(y.iter()) {
        joint[a as usize * 256 + b as usize] += 1;
        hx[a as usize] += 1;
        hy[b as usize] += 1;
    }
    let mut mi_nat = 0.0;
    for a in 0..256 {
        if hx[a] == 0 {
            continue;
        }
        for b in 0..256 {
            let c = joint[a * 256 + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let px = hx[a] as f64 / n;
            let py = hy[b] as f64 / n;
            mi_nat += pxy * fmath::ln(pxy / (px * py));
        }
    }
    mi_nat / fmath::ln(2.0)
}

/// MI(fused, ir) + MI(fused, vi) in bits from 256-bin joint histograms.
pub fn metric_mi(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    let f = quantize_u8(fused);
    let a = quantize_u8(ir);
    let b = quantize_u8(vi);
    Ok(mi_pair_bits(&f, &a) + mi_pair_bits(&f, &b))
}

// ---------------------------------------------------------------------------
// SF / AG
// ---------------------------------------------------------------------------

/// Spatial frequency sqrt(RF^2 + CF^2) of the fused image on the
/// [0,255] scale; RF/CF are RMS first differences over the interior counts.
pub fn metric_sf(fused: &Plane) -> Result<f64> {
    let (h, w) = (fused.h(), fused.w());
    if h < 2 || w < 2 {
        return Err(Error::TooSmall {
            context: "spatial frequency needs at least 2x2",
        });
    }
    let img = scaled_255(fused);
    let mut rf = 0.0;
    for i in 0..h {
        for j in 1..w {
            let d = img[i * w + j] - img[i * w + j - 1];
            rf += d * d;
        }
    }
    let mut cf = 0.0;
    for i in 1..h {
        for j in 0..w {
            let d = img[i * w + j] - img[(i - 1) * w + j];
            cf += d * d;
        }
    }
    Ok(fmath::sqrt(
        rf / (h * (w - 1)) as f64 + cf / ((h - 1) * w) as f64,
    ))
}

/// Average gradient: mean of sqrt((dx^2+dy^2)/2) over the forward-difference
/// grid, on the [0,255] scale.
pub fn metric_ag(fused: &Plane) -> Result<f64> {
    let (h, w) = (fused.h(), fused.w());
    if h < 2 || w < 2 {
        return Err(Error::TooSmall {
            context: "average gradient needs at least 2x2",
        });
    }
    let img = scaled_255(fused);
    let mut acc = 0.0;
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let dx = img[i * w + j + 1] - img[i * w + j];
            let dy = img[(i + 1) * w + j] - img[i * w + j];
            acc += fmath::sqrt((dx * dx + dy * dy) / 2.0);
        }
    }
    Ok(acc / ((h - 1) * (w - 1)) as f64)
}

// ---------------------------------------------------------------------------
// VIF (pixel domain, 4 scales, noise variance 2)
// ---------------------------------------------------------------------------

struct Grid {
    h: usize,
    w: usize,
    d: Vec<f64>,
}

fn filter_valid(g: &Grid, k: usize, win: &[f64]) -> Grid {
    Grid {
        h: g.h - k + 1,
        w: g.w - k + 1,
        d: kernels::conv_valid(g.h, g.w, &g.d, k, win),
    }
}

fn decimate2(g: &Grid) -> Grid {
    let oh = g.h.div_ceil(2);
    let ow = g.w.div_ceil(2);
    let mut d = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            d[i * ow + j] = g.d[(2 * i) * g.w + 2 * j];
        }
    }
    Grid { h: oh, w: ow, d }
}

fn vifp_single(h: usize, w: usize, reference: &[f64], distorted: &[f64]) -> Result<f64> {
    const SIGMA_NSQ: f64 = 2.0;
    const EPS: f64 = 1e-10;
    let mut refg = Grid {
        h,
        w,
        d: reference.to_vec(),
    };
    let mut disg = Grid {
        h,
        w,
        d: distorted.to_vec(),
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for scale in 1..=4usize {
        let k = (1usize << (4 - scale + 1)) + 1;
        let win = kernels::gaussian_window(k, k as f64 / 5.0);
        if scale > 1 {
            if refg.h < k || refg.w < k {
                return Err(Error::TooSmall {
                    context: "image smaller than coarsest-scale kernel",
                });
            }
            refg = decimate2(&filter_valid(&refg, k, &win));
            disg = decimate2(&filter_valid(&disg, k, &win));
        }
        if refg.h < k || refg.w < k {
            return Err(Error::TooSmall {
                context: "image smaller than coarsest-scale kernel",
            });
        }
        let mu1 = filter_valid(&refg, k, &win);
        let mu2 = filter_valid(&disg, k, &win);
        let sq = |g: &Grid| Grid {
            h: g.h,
            w: g.w,
            d: g.d.iter().map(|&v| v * v).collect(),
        };
        let prod = Grid {
            h: refg.h,
            w: refg.w,
            d: refg.d.iter().zip(disg.d.iter()).map(|(&a, &b)| a * b).collect(),
        };
        let e11 = filter_valid(&sq(&refg), k, &win);
        let e22 = filter_valid(&sq(&disg), k, &win);
        let e12 = filter_valid(&prod, k, &win);
        for idx in 0..mu1.d.len() {
            let m1 = mu1.d[idx];
            let m2 = mu2.d[idx];
            let mut s1 = (e11.d[idx] - m1 * m1).max(0.0);
            let s2 = (e22.d[idx] - m2 * m2).max(0.0);
            let s12 = e12.d[idx] - m1 * m2;

            let mut g = s12 / (s1 + EPS);
            let mut sv = s2 - g * s12;
            if s1 < EPS {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv <= EPS {
                sv = EPS;
            }
            num += fmath::log10(1.0 + g * g * s1 / (sv + SIGMA_NSQ));
            den += fmath::log10(1.0 + s1 / SIGMA_NSQ);
        }
    }
    if den == 0.0 {
        return Err(Error::OutOfRange {
            context: "VIF undefined: reference images carry no information",
        });
    }
    Ok(num / den)
}

/// VIFP(ir -> fused) + VIFP(vi -> fused) on the [0,255] scale.
pub fn metric_vif(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    let f = scaled_255(fused);
    let a = scaled_255(ir);
    let b = scaled_255(vi);
    Ok(vifp_single(fused.h(), fused.w(), &a, &f)?
        + vifp_single(fused.h(), fused.w(), &b, &f)?)
}

// ---------------------------------------------------------------------------
// Qabf
// ---------------------------------------------------------------------------

struct EdgeField {
    strength: Vec<f64>,
    angle: Vec<f64>,
}

// Replicate borders, consistent with the structure pipeline: a constant
// image carries no edges anywhere, borders included.
fn edge_field(h: usize, w: usize, img: &[f64]) -> EdgeField {
    let gx = kernels::conv3x3_replicate(h, w, img, &kernels::SOBEL_X);
    let gy = kernels::conv3x3_replicate(h, w, img, &kernels::SOBEL_Y);
    let mut strength = Vec::with_capacity(h * w);
    let mut angle = Vec::with_capacity(h * w);
    for p in 0..h * w {
        strength.push(fmath::sqrt(gx[p] * gx[p] + gy[p] * gy[p]));
        angle.push(if gx[p] == 0.0 {
            core::f64::consts::FRAC_PI_2
        } else {
            fmath::atan(gy[p] / gx[p])
        });
    }
    EdgeField { strength, angle }
}

// Sigmoid constants from the published edge-transfer metric.
const GAMMA_G: f64 = 0.9994;
const K_G: f64 = -15.0;
const SIGMA_G: f64 = 0.5;
const GAMMA_A: f64 = 0.9879;
const K_A: f64 = -22.0;
const SIGMA_A: f64 = 0.8;

fn edge_preservation(src: &EdgeField, fus: &EdgeField, idx: usize) -> f64 {
    let ga = src.strength[idx];
    let gf = fus.strength[idx];
    // relative edge strength: ratio of the weaker to the stronger edge;
    // zero when the source carries no edge at all
    let g_rel = if ga > gf {
        gf / ga
    } else if ga < gf {
        ga / gf
    } else if ga == 0.0 {
        0.0
    } else {
        1.0
    };
    let a_rel = 1.0 - fmath::abs(src.angle[idx] - fus.angle[idx]) / core::f64::consts::FRAC_PI_2;
    let qg = GAMMA_G / (1.0 + fmath::exp(K_G * (g_rel - SIGMA_G)));
    let qa = GAMMA_A / (1.0 + fmath::exp(K_A * (a_rel - SIGMA_A)));
    qg * qa
}

/// Gradient-based edge-transfer metric: per-pixel edge preservation against
/// each source, weighted by source edge strength.
pub fn metric_qabf(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    let (h, w) = (fused.h(), fused.w());
    let ea = edge_field(h, w, &scaled_255(ir));
    let eb = edge_field(h, w, &scaled_255(vi));
    let ef = edge_field(h, w, &scaled_255(fused));
    let mut num = 0.0;
    let mut den = 0.0;
    for idx in 0..h * w {
        num += edge_preservation(&ea, &ef, idx) * ea.strength[idx]
            + edge_preservation(&eb, &ef, idx) * eb.strength[idx];
        den += ea.strength[idx] + eb.strength[idx];
    }
    if den == 0.0 {
        return Err(Error::OutOfRange {
            context: "Qabf undefined: source images carry no edges",
        });
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

/// (SSIM(fused, ir) + SSIM(fused, vi)) / 2, sharing constants with the
/// training loss so that metric_ssim == 1 - ssim_loss exactly.
pub fn metric_ssim(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    Ok(0.5 * (losses::ssim_value(fused, ir)? + losses::ssim_value(fused, vi)?))
}

// ---------------------------------------------------------------------------
// dataset evaluation
// ---------------------------------------------------------------------------

/// All six metrics for one (ir, vi, fused) triple.
pub fn evaluate_pair(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<MetricValues> {
    Ok(MetricValues {
        mi: metric_mi(fused, ir, vi)?,
        sf: metric_sf(fused)?,
        ag: metric_ag(fused)?,
        vif: metric_vif(fused, ir, vi)?,
        qabf: metric_qabf(fused, ir, vi)?,
        ssim: metric_ssim(fused, ir, vi)?,
    })
}

/// Evaluates a batch of triples. Per-pair failures are recorded and the
/// pair skipped; output ordering is by pair id.
pub fn evaluate_dataset<I>(items: I, metadata: ReportMetadata) -> Result<MetricReport>
where
    I: IntoIterator<Item = (String, Plane, Plane, Plane)>,
{
    let mut per_pair: Vec<(String, MetricValues)> = Vec::new();
    let mut skipped: Vec<(String, String)> = Vec::new();
    let mut any = false;
    for (id, ir, vi, fused) in items {
        any = true;
        match evaluate_pair(&fused, &ir, &vi) {
            Ok(values) => per_pair.push((id, values)),
            Err(e) => skipped.push((id, alloc::format!("{e}"))),
        }
    }
    if !any {
        return Err(Error::TooSmall {
            context: "evaluate_dataset needs at least one pair",
        });
    }
    if per_pair.is_empty() {
        return Err(Error::OutOfRange {
            context: "every pair failed evaluation",
        });
    }
    per_pair.sort_by(|a, b| a.0.cmp(&b.0));
    skipped.sort_by(|a, b| a.0.cmp(&b.0));
    let n = per_pair.len() as f64;
    let mut agg = MetricValues {
        mi: 0.0,
        sf: 0.0,
        ag: 0.0,
        vif: 0.0,
        qabf: 0.0,
        ssim: 0.0,
    };
    for (_, v) in &per_pair {
        agg.mi += v.mi;
        agg.sf += v.sf;
        agg.ag += v.ag;
        agg.vif += v.vif;
        agg.qabf += v.qabf;
        agg.ssim += v.ssim;
    }
    agg.mi /= n;
    agg.sf /= n;
    agg.ag /= n;
    agg.vif /= n;
    agg.qabf /= n;
    agg.ssim /= n;
    Ok(MetricReport {
        per_pair,
        aggregate: agg,
        skipped,
        metadata,
    })
}
