//! Reference SSIM: per-window statistics computed directly from the
//! definition (no shared convolution helpers).

fn gaussian_window(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k / 2) as f64;
    let mut w = vec![0.0; k * k];
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            w[i * k + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean SSIM over the valid region with an 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range `l`.
pub fn ssim(h: usize, w: usize, x: &[f64], y: &[f64], l: f64) -> f64 {
    assert_eq!(x.len(), h * w);
    assert_eq!(y.len(), h * w);
    const K: usize = 11;
    assert!(h >= K && w >= K, "image smaller than SSIM window");
    let win = gaussian_window(K, 1.5);
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);

    let oh = h - K + 1;
    let ow = w - K + 1;
    let mut total = 0.0;
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..K {
                for dj in 0..K {
                    let wv = win[di * K + dj];
                    let xv = x[(i + di) * w + j + dj];
                    let yv = y[(i + di) * w + j + dj];
                    mx += wv * xv;
                    my += wv * yv;
                    mxx += wv * xv * xv;
                    myy += wv * yv * yv;
                    mxy += wv * xv * yv;
                }
            }
            let sx = mxx - mx * mx;
            let sy = myy - my * my;
            let sxy = mxy - mx * my;
            let v = ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sx + sy + c2));
            total += v;
        }
    }
    total / (oh * ow) as f64
}
