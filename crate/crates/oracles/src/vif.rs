//! Reference pixel-domain Visual Information Fidelity (4 scales, Gaussian
//! windows, noise variance 2), written as direct loops.

struct Grid {
    h: usize,
    w: usize,
    d: Vec<f64>,
}

fn gaussian(k: usize, sigma: f64) -> Vec<f64> {
    let c = (k / 2) as f64;
    let mut w = vec![0.0; k * k];
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            w[i * k + j] = v;
            s += v;
        }
    }
    for v in &mut w {
        *v /= s;
    }
    w
}

fn filter_valid(g: &Grid, k: usize, win: &[f64]) -> Grid {
    let oh = g.h - k + 1;
    let ow = g.w - k + 1;
    let mut d = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for di in 0..k {
                for dj in 0..k {
                    acc += win[di * k + dj] * g.d[(i + di) * g.w + j + dj];
                }
            }
            d[i * ow + j] = acc;
        }
    }
    Grid { h: oh, w: ow, d }
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

fn mul(a: &Grid, b: &Grid) -> Grid {
    Grid {
        h: a.h,
        w: a.w,
        d: a.d.iter().zip(b.d.iter()).map(|(x, y)| x * y).collect(),
    }
}

/// VIFP of a distorted image against a reference, both on a [0,255] scale.
pub fn vifp(h: usize, w: usize, reference: &[f64], distorted: &[f64]) -> f64 {
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
        let k = (1 << (4 - scale + 1)) + 1;
        let win = gaussian(k, k as f64 / 5.0);
        if scale > 1 {
            refg = decimate2(&filter_valid(&refg, k, &win));
            disg = decimate2(&filter_valid(&disg, k, &win));
        }
        assert!(
            refg.h >= k && refg.w >= k,
            "image smaller than coarsest-scale kernel"
        );
        let mu1 = filter_valid(&refg, k, &win);
        let mu2 = filter_valid(&disg, k, &win);
        let e11 = filter_valid(&mul(&refg, &refg), k, &win);
        let e22 = filter_valid(&mul(&disg, &disg), k, &win);
        let e12 = filter_valid(&mul(&refg, &disg), k, &win);
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
            num += (1.0 + g * g * s1 / (sv + SIGMA_NSQ)).log10();
            den += (1.0 + s1 / SIGMA_NSQ).log10();
        }
    }
    num / den
}
