//! Dataset discovery and image IO.
//!
//! Layout: `<root>/ir/<id>.png` and `<root>/vi/<id>.png` (PNG, JPEG or BMP,
//! 8-bit). Pairs are matched by identical file stem; every stem must
//! resolve to exactly one file per modality.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageReader};
use structfuse_core::color::rgb_to_yuv;
use structfuse_core::imagedata::ImagePair;
use structfuse_core::plane::Plane;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root {0} has no ir/ and vi/ subdirectories")]
    BadLayout(PathBuf),
    #[error("dataset at {0} contains no pairs")]
    Empty(PathBuf),
    #[error("pair id {0} resolves to more than one {1} file")]
    AmbiguousId(String, &'static str),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{0} uses a 16-bit or float sample format; only 8-bit input is supported")]
    UnsupportedDepth(PathBuf),
    #[error(transparent)]
    Core(#[from] structfuse_core::Error),
}

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// A discovered train/test split: a root directory plus the ordered pair
/// ids living under it.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub root: PathBuf,
    pub pair_ids: Vec<String>,
    pub crop_size: Option<usize>,
}

impl DatasetSplit {
    /// Scans `<root>/ir` and `<root>/vi` and pairs files by stem.
    pub fn discover(root: &Path) -> Result<Self, DatasetError> {
        let ir_dir = root.join("ir");
        let vi_dir = root.join("vi");
        if !ir_dir.is_dir() || !vi_dir.is_dir() {
            return Err(DatasetError::BadLayout(root.to_path_buf()));
        }
        let ir = scan_stems(&ir_dir, "ir")?;
        let vi = scan_stems(&vi_dir, "vi")?;
        let pair_ids: Vec<String> = ir
            .keys()
            .filter(|id| vi.contains_key(*id))
            .cloned()
            .collect();
        if pair_ids.is_empty() {
            return Err(DatasetError::Empty(root.to_path_buf()));
        }
        Ok(DatasetSplit {
            root: root.to_path_buf(),
            pair_ids,
            crop_size: None,
        })
    }

    pub fn len(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_ids.is_empty()
    }

    fn modality_path(&self, sub: &str, id: &str) -> Result<PathBuf, DatasetError> {
        let dir = self.root.join(sub);
        let mut found = None;
        for ext in EXTENSIONS {
            let p = dir.join(format!("{id}.{ext}"));
            if p.is_file() {
                if found.is_some() {
                    return Err(DatasetError::AmbiguousId(
                        id.to_string(),
                        if sub == "ir" { "ir" } else { "vi" },
                    ));
                }
                found = Some(p);
            }
        }
        found.ok_or_else(|| DatasetError::Io {
            path: dir.join(id),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "pair file missing"),
        })
    }

    pub fn ir_path(&self, id: &str) -> Result<PathBuf, DatasetError> {
        self.modality_path("ir", id)
    }

    pub fn vi_path(&self, id: &str) -> Result<PathBuf, DatasetError> {
        self.modality_path("vi", id)
    }

    /// Loads one registered pair in YUV space.
    pub fn load_pair(&self, id: &str) -> Result<ImagePair, DatasetError> {
        load_pair(&self.ir_path(id)?, &self.vi_path(id)?, id)
    }

    /// Loads every pair, in id order.
    pub fn load_all(&self) -> Result<Vec<ImagePair>, DatasetError> {
        self.pair_ids.iter().map(|id| self.load_pair(id)).collect()
    }
}

fn scan_stems(dir: &Path, what: &'static str) -> Result<BTreeMap<String, PathBuf>, DatasetError> {
    let mut stems = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stems.insert(stem.to_string(), path.clone()).is_some() {
            return Err(DatasetError::AmbiguousId(stem.to_string(), what));
        }
    }
    Ok(stems)
}

fn decode(path: &Path) -> Result<DynamicImage, DatasetError> {
    let reader = ImageReader::open(path)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let img = reader.decode().map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => Ok(img),
        _ => Err(DatasetError::UnsupportedDepth(path.to_path_buf())),
    }
}

/// Decodes an image as a single luminance plane in [0,1]; RGB input is
/// reduced via the BT.601 luma weights.
pub fn load_gray_plane(path: &Path) -> Result<Plane, DatasetError> {
    let img = decode(path)?;
    Ok(luma_plane(&img))
}

fn luma_plane(img: &DynamicImage) -> Plane {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Plane::from_fn(h as usize, w as usize, |i, j| {
        let p = rgb.get_pixel(j as u32, i as u32);
        let (y, _, _) = rgb_to_yuv(
            p[0] as f64 / 255.0,
            p[1] as f64 / 255.0,
            p[2] as f64 / 255.0,
        );
        y
    })
}

/// Decodes an infrared/visible file pair into a registered [`ImagePair`].
pub fn load_pair(ir_path: &Path, vi_path: &Path, id: &str) -> Result<ImagePair, DatasetError> {
    let ir = decode(ir_path)?;
    let vi = decode(vi_path)?;

    let ir_y = luma_plane(&ir);

    let rgb = vi.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (h, w) = (h as usize, w as usize);
    let mut vi_y = Plane::zeros(h, w);
    let mut vi_u = Plane::zeros(h, w);
    let mut vi_v = Plane::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let p = rgb.get_pixel(j as u32, i as u32);
            let (y, u, v) = rgb_to_yuv(
                p[0] as f64 / 255.0,
                p[1] as f64 / 255.0,
                p[2] as f64 / 255.0,
            );
            vi_y.set(i, j, y);
            vi_u.set(i, j, u.clamp(0.0, 1.0));
            vi_v.set(i, j, v.clamp(0.0, 1.0));
        }
    }
    Ok(ImagePair::new(id.to_string(), ir_y, vi_y, vi_u, vi_v)?)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a [0,1] plane as an 8-bit grayscale PNG.
pub fn save_gray_png(path: &Path, plane: &Plane) -> Result<(), DatasetError> {
    let (h, w) = (plane.h(), plane.w());
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            buf.put_pixel(j as u32, i as u32, image::Luma([quantize(plane.get(i, j))]));
        }
    }
    buf.save(path).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes three [0,1] planes as an 8-bit RGB PNG.
pub fn save_rgb_png(path: &Path, rgb: &[Plane; 3]) -> Result<(), DatasetError> {
    let (h, w) = (rgb[0].h(), rgb[0].w());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            buf.put_pixel(
                j as u32,
                i as u32,
                image::Rgb([
                    quantize(rgb[0].get(i, j)),
                    quantize(rgb[1].get(i, j)),
                    quantize(rgb[2].get(i, j)),
                ]),
            );
        }
    }
    buf.save(path).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
