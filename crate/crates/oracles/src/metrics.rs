//! Scalar-loop references for MI, SF, AG and Qabf.

use std::f64::consts::PI;

/// Mutual information in bits between two 8-bit images via a 256x256 joint
/// histogram; summed over both sources: MI(f,a) + MI(f,b).
pub fn mutual_information(fused: &[u8], a: &[u8], b: &[u8]) -> f64 {
    mi_pair(fused, a) + mi_pair(fused, b)
}

fn mi_pair(x: &[u8], y: &[u8]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mut joint = vec![0.0f64; 256 * 256];
    let mut px = [0.0f64; 256];
    let mut py = [0.0f64; 256];
    for i in 0..x.len() {
        joint[x[i] as usize * 256 + y[i] as usize] += 1.0;
        px[x[i] as usize] += 1.0;
        py[y[i] as usize] += 1.0;
    }
    let mut mi_nat = 0.0;
    for xi in 0..256 {
        for yi in 0..256 {
            let pxy = joint[xi * 256 + yi] / n;
            if pxy > 0.0 {
                mi_nat += pxy * (pxy / ((px[xi] / n) * (py[yi] / n))).ln();
            }
        }
    }
    mi_nat / 2.0f64.ln()
}

/// Spatial frequency on a [0,255]-scale plane: sqrt(RF^2 + CF^2), where RF
/// and CF are RMS of horizontal/vertical first differences over the
/// interior difference counts.
pub fn spatial_frequency(h: usize, w: usize, img: &[f64]) -> f64 {
    assert_eq!(img.len(), h * w);
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
    let rf = rf / (h * (w - 1)) as f64;
    let cf = cf / ((h - 1) * w) as f64;
    (rf + cf).sqrt()
}

/// Average gradient on a [0,255]-scale plane: mean over the (h-1)x(w-1)
/// forward-difference grid of sqrt((dx^2 + dy^2)/2).
pub fn average_gradient(h: usize, w: usize, img: &[f64]) -> f64 {
    assert_eq!(img.len(), h * w);
    let mut acc = 0.0;
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let dx = img[i * w + j + 1] - img[i * w + j];
            let dy = img[(i + 1) * w + j] - img[i * w + j];
            acc += ((dx * dx + dy * dy) / 2.0).sqrt();
        }
    }
    acc / ((h - 1) * (w - 1)) as f64
}

fn sobel_same_replicate(h: usize, w: usize, src: &[f64], k: &[f64; 9]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    let si = (i + di).clamp(0, h as isize - 1);
                    let sj = (j + dj).clamp(0, w as isize - 1);
                    acc += k[((di + 1) * 3 + (dj + 1)) as usize]
                        * src[si as usize * w + sj as usize];
                }
            }
            out[i as usize * w + j as usize] = acc;
        }
    }
    out
}

struct EdgeField {
    strength: Vec<f64>,
    angle: Vec<f64>,
}

fn edge_field(h: usize, w: usize, img: &[f64]) -> EdgeField {
    let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let gx = sobel_same_replicate(h, w, img, &kx);
    let gy = sobel_same_replicate(h, w, img, &ky);
    let strength = (0..h * w)
        .map(|i| (gx[i] * gx[i] + gy[i] * gy[i]).sqrt())
        .collect();
    let angle = (0..h * w)
        .map(|i| {
            if gx[i] == 0.0 {
                PI / 2.0
            } else {
                (gy[i] / gx[i]).atan()
            }
        })
        .collect();
    EdgeField { strength, angle }
}

/// Edge preservation of the fused image relative to one source.
fn q_source(src: &EdgeField, fus: &EdgeField, idx: usize) -> f64 {
    const GAMMA_G: f64 = 0.9994;
    const K_G: f64 = -15.0;
    const SIGMA_G: f64 = 0.5;
    const GAMMA_A: f64 = 0.9879;
    const K_A: f64 = -22.0;
    const SIGMA_A: f64 = 0.8;

    let ga = src.strength[idx];
    let gf = fus.strength[idx];
    let g_rel = if ga > gf {
        gf / ga
    } else if ga < gf {
        ga / gf
    } else if ga == 0.0 {
        0.0
    } else {
        1.0
    };
    let a_rel = 1.0 - (src.angle[idx] - fus.angle[idx]).abs() / (PI / 2.0);
    let qg = GAMMA_G / (1.0 + (K_G * (g_rel - SIGMA_G)).exp());
    let qa = GAMMA_A / (1.0 + (K_A * (a_rel - SIGMA_A)).exp());
    qg * qa
}

/// Xydeas-Petrovic gradient-based edge-transfer metric on [0,255]-scale
/// planes. Returns NaN when neither source contains any edges.
pub fn qabf(h: usize, w: usize, a: &[f64], b: &[f64], fused: &[f64]) -> f64 {
    let ea = edge_field(h, w, a);
    let eb = edge_field(h, w, b);
    let ef = edge_field(h, w, fused);
    let mut num = 0.0;
    let mut den = 0.0;
    for idx in 0..h * w {
        let qaf = q_source(&ea, &ef, idx);
        let qbf = q_source(&eb, &ef, idx);
        num += qaf * ea.strength[idx] + qbf * eb.strength[idx];
        den += ea.strength[idx] + eb.strength[idx];
    }
    num / den
}
