//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Criteria 7 and 8 share a lazily-built fixture holding the fixed-seed
//! overfit run and its two single-module ablations (4 pairs, 64x64 crops,
//! 300 steps each).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structfuse_cli::trainer::{self, RunOptions, TrainConfig};
use structfuse_cli::{checkpoint, dataset, report};
use structfuse_core::autodiff::Tape;
use structfuse_core::imagedata::ImagePair;
use structfuse_core::losses;
use structfuse_core::metrics;
use structfuse_core::network::{MergeMode, Model, ModelConfig};
use structfuse_core::plane::Plane;
use structfuse_core::spf;
use structfuse_core::structmap::{
    binarize_by_global_mean, sobel_magnitude, structure_pyramid_gt, Polarity,
};
use structfuse_core::tensor::Tensor;
use structfuse_oracles as oracle;
use structfuse_oracles::fd::rel_err;

fn pass(n: usize, what: &str) {
    println!("ACCEPTANCE {n:02} ({what}): PASS");
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn random_plane(h: usize, w: usize, seed: u64, lo: f64, hi: f64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Plane::from_fn(h, w, |_, _| lo + (hi - lo) * unit(&mut rng))
}

/// Low-frequency field standing in for a natural crop.
fn textured_plane(h: usize, w: usize, seed: u64) -> Plane {
    let noise = random_plane(h, w, seed, 0.0, 1.0);
    Plane::from_fn(h, w, |i, j| {
        let mut s = 0.0;
        let mut c = 0.0;
        for di in -2..=2isize {
            for dj in -2..=2isize {
                let si = (i as isize + di).clamp(0, h as isize - 1) as usize;
                let sj = (j as isize + dj).clamp(0, w as isize - 1) as usize;
                s += noise.get(si, sj);
                c += 1.0;
            }
        }
        s / c
    })
}

/// Registered pair in the shape real data takes: both modalities observe
/// the same low-frequency scene, the infrared side adds a thermal blob and
/// a warm rectangle, the visible side adds an illumination edge and fine
/// texture.
fn synth_pair(id: &str, h: usize, w: usize, seed: u64) -> ImagePair {
    use std::f64::consts::TAU;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fx = 1.0 + 2.0 * unit(&mut rng);
    let fy = 1.0 + 2.0 * unit(&mut rng);
    let px = TAU * unit(&mut rng);
    let py = TAU * unit(&mut rng);
    let cx = 0.25 + 0.5 * unit(&mut rng);
    let cy = 0.25 + 0.5 * unit(&mut rng);
    let edge_col = w / 4 + (rng.next_u64() as usize) % (w / 2);

    let base = move |i: usize, j: usize| {
        0.5 + 0.22 * (TAU * fx * j as f64 / w as f64 + px).sin()
            + 0.22 * (TAU * fy * i as f64 / h as f64 + py).sin()
    };
    let ir = Plane::from_fn(h, w, |i, j| {
        let di = i as f64 / h as f64 - cy;
        let dj = j as f64 / w as f64 - cx;
        let blob = (-(di * di + dj * dj) / 0.015).exp();
        let rect = if i > h / 8 && i < h / 4 && j > w / 8 && j < w / 2 {
            0.2
        } else {
            0.0
        };
        (0.55 * base(i, j) + 0.4 * blob + rect + 0.05).clamp(0.0, 1.0)
    });
    let vi_y = Plane::from_fn(h, w, |i, j| {
        let edge = if j >= edge_col { 0.18 } else { 0.0 };
        let texture = 0.05 * ((i * 31 + j * 17) % 13) as f64 / 13.0;
        (0.62 * base(i, j) + edge + texture + 0.08).clamp(0.0, 1.0)
    });
    let vi_u = Plane::from_fn(h, w, |i, j| 0.4 + 0.2 * ((i + j) % 7) as f64 / 7.0);
    let vi_v = Plane::from_fn(h, w, |i, j| 0.45 + 0.1 * ((i * j) % 5) as f64 / 5.0);
    ImagePair::new(id.to_string(), ir, vi_y, vi_u, vi_v).unwrap()
}

// ---------------------------------------------------------------------------
// criterion 1: structure maps match the per-pixel brute force exactly
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_structmap_oracle_equivalence() {
    let t0 = Instant::now();
    for seed in 0..50u64 {
        let img = random_plane(16, 16, 7000 + seed, 0.0, 1.0);
        let mag = sobel_magnitude(&img).unwrap();
        let mag_oracle = oracle::sobel_magnitude(16, 16, img.data());
        for (pol, literal) in [(Polarity::PaperLiteral, true), (Polarity::EdgePositive, false)] {
            let got = binarize_by_global_mean(&mag, pol);
            let want = oracle::binarize_by_mean(&mag_oracle, literal);
            assert_eq!(got.data(), &want[..], "seed {seed}, polarity {pol:?}");
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    pass(1, "structure-map oracle equivalence");
}

// ---------------------------------------------------------------------------
// criterion 2: J operator is exactly XOR on binary inputs
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_j_operator_truth_table() {
    let x = Plane::new(1, 4, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let y = Plane::new(1, 4, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let j = spf::j_operator(&x, &y).unwrap();
    assert_eq!(j.data(), &[0.0, 1.0, 1.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let a = Plane::from_fn(9, 9, |_, _| (rng.next_u64() & 1) as f64);
        let b = Plane::from_fn(9, 9, |_, _| (rng.next_u64() & 1) as f64);
        let j = spf::j_operator(&a, &b).unwrap();
        let want = oracle::j_operator(a.data(), b.data());
        assert_eq!(j.data(), &want[..]);
    }
    pass(2, "J-operator truth table");
}

// ---------------------------------------------------------------------------
// criterion 3: enhancement formulas match the scalar loop
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_enhancement_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for round in 0..10 {
        let s_ir = Plane::from_fn(8, 8, |_, _| (rng.next_u64() & 1) as f64);
        let s_vi = Plane::from_fn(8, 8, |_, _| (rng.next_u64() & 1) as f64);
        let f_ir = Tensor::new(
            vec![4, 8, 8],
            (0..256).map(|_| 2.0 * unit(&mut rng) - 1.0).collect(),
        )
        .unwrap();
        let f_vi = Tensor::new(
            vec![4, 8, 8],
            (0..256).map(|_| 2.0 * unit(&mut rng) - 1.0).collect(),
        )
        .unwrap();
        let masks = spf::split_unique_masks(&s_ir, &s_vi).unwrap();
        let (e_ir, e_vi) = spf::enhance_features(&f_ir, &f_vi, &s_ir, &s_vi, &masks).unwrap();
        let (o_ir, o_vi) =
            oracle::enhance_features(4, 64, f_ir.data(), f_vi.data(), s_ir.data(), s_vi.data());
        for i in 0..256 {
            assert!((e_ir.data()[i] - o_ir[i]).abs() < 1e-6, "round {round}");
            assert!((e_vi.data()[i] - o_vi[i]).abs() < 1e-6, "round {round}");
        }
    }
    pass(3, "enhancement formula equivalence");
}

// ---------------------------------------------------------------------------
// criterion 4: gradient correctness (losses + end-to-end, 1e-4 relative)
// ---------------------------------------------------------------------------

fn check_loss_grad(
    name: &str,
    build: impl Fn(&mut Tape, structfuse_core::autodiff::NodeId) -> structfuse_core::autodiff::NodeId,
    point: &Plane,
) {
    let eval = |vals: &[f64]| {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![16, 16], vals.to_vec()).unwrap(), false);
        let r = build(&mut t, x);
        t.value(r).item()
    };
    let fd = oracle::finite_diff_grad(eval, point.data(), 1e-5);
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_plane(point), true);
    let r = build(&mut t, x);
    let grads = t.backward(r).unwrap();
    let g = grads.get(x).unwrap();
    for (i, (a, b)) in g.data().iter().zip(fd.iter()).enumerate() {
        assert!(
            rel_err(*a, *b, 1e-6) < 1e-4,
            "{name} coordinate {i}: analytic {a} vs numeric {b}"
        );
    }
}

#[test]
fn criterion_04_gradient_correctness() {
    let t0 = Instant::now();
    // tie-free random 16x16 inputs
    let fused = random_plane(16, 16, 41, 0.05, 0.95);
    let ir = random_plane(16, 16, 42, 0.05, 0.95);
    let vi = random_plane(16, 16, 43, 0.05, 0.95);
    let gt = structure_pyramid_gt(&random_plane(16, 16, 44, 0.0, 1.0), 1, Polarity::EdgePositive)
        .unwrap();
    let gt_plane = gt.level(0).clone();

    check_loss_grad(
        "charbonnier",
        |t, x| losses::charbonnier_on_tape(t, &[x], &[&gt_plane], 1.0).unwrap(),
        &fused,
    );
    let ssim_build = |t: &mut Tape, x: structfuse_core::autodiff::NodeId| {
        let i = t.leaf(Tensor::from_plane(&ir), false);
        let v = t.leaf(Tensor::from_plane(&vi), false);
        losses::ssim_loss_on_tape(t, x, i, v).unwrap()
    };
    check_loss_grad("ssim", ssim_build, &fused);
    let smooth_build = |t: &mut Tape, x: structfuse_core::autodiff::NodeId| {
        let i = t.leaf(Tensor::from_plane(&ir), false);
        let v = t.leaf(Tensor::from_plane(&vi), false);
        losses::smooth_loss_on_tape(t, x, i, v).unwrap()
    };
    check_loss_grad("smooth", smooth_build, &fused);
    let grad_build = |t: &mut Tape, x: structfuse_core::autodiff::NodeId| {
        let i = t.leaf(Tensor::from_plane(&ir), false);
        let v = t.leaf(Tensor::from_plane(&vi), false);
        losses::grad_loss_on_tape(t, x, i, v).unwrap()
    };
    check_loss_grad("grad", grad_build, &fused);

    // end-to-end: full default-scale model with the learned merge so the
    // sampled parameters span encoder, merge and decoder
    let cfg = ModelConfig {
        merge: MergeMode::Learned1x1,
        seed: 4,
        ..ModelConfig::default()
    };
    let model = Model::init(cfg).unwrap();
    let gt_ir = structure_pyramid_gt(&ir, 3, Polarity::EdgePositive).unwrap();
    let gt_vi = structure_pyramid_gt(&vi, 3, Polarity::EdgePositive).unwrap();

    let objective = |m: &Model| -> (f64, Option<Vec<Option<Tensor>>>, Vec<String>) {
        let mut tape = Tape::new();
        let graph = m
            .build_fusion_graph(&mut tape, &ir, &vi, &gt_ir, &gt_vi, true, true, true)
            .unwrap();
        let ir_n = tape.leaf_plane(&ir, false);
        let vi_n = tape.leaf_plane(&vi, false);
        let mut preds = graph.soft_ir.clone();
        preds.extend_from_slice(&graph.soft_vi);
        let gts: Vec<&Plane> = gt_ir.levels().iter().chain(gt_vi.levels()).collect();
        let rec = losses::charbonnier_on_tape(&mut tape, &preds, &gts, 1.0).unwrap();
        let ssim = losses::ssim_loss_on_tape(&mut tape, graph.fused, ir_n, vi_n).unwrap();
        let smooth = losses::smooth_loss_on_tape(&mut tape, graph.fused, ir_n, vi_n).unwrap();
        let grad = losses::grad_loss_on_tape(&mut tape, graph.fused, ir_n, vi_n).unwrap();
        let total = losses::total_on_tape(&mut tape, Some(rec), ssim, smooth, grad, 0.01).unwrap();
        let value = tape.value(total).item();
        let mut g = tape.backward(total).unwrap();
        let grads = graph.param_ids.iter().map(|&id| g.take(id)).collect();
        (value, Some(grads), Vec::new())
    };

    let (_, analytic, _) = objective(&model);
    let analytic = analytic.unwrap();

    // >= 100 sampled parameter coordinates spread over every tensor
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let n_params = model.params().len();
    let mut checked = 0usize;
    let mut pidx = 0usize;
    while checked < 100 + n_params {
        let i = pidx % n_params;
        pidx += 1;
        let tensor = model.params().value(i);
        let coord = (rng.next_u64() % tensor.numel() as u64) as usize;
        let base = tensor.data()[coord];
        let h = 1e-5;

        let mut plus = model.clone();
        plus.params_mut().value_mut(i).data_mut()[coord] = base + h;
        let (fp, _, _) = objective(&plus);
        let mut minus = model.clone();
        minus.params_mut().value_mut(i).data_mut()[coord] = base - h;
        let (fm, _, _) = objective(&minus);
        let fd = (fp - fm) / (2.0 * h);
        let an = analytic[i]
            .as_ref()
            .unwrap_or_else(|| panic!("no grad for {}", model.params().name(i)))
            .data()[coord];
        assert!(
            rel_err(an, fd, 1e-6) < 1e-4,
            "{} coord {coord}: analytic {an} vs fd {fd}",
            model.params().name(i)
        );
        checked += 1;
    }
    let elapsed = t0.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    pass(4, "gradient correctness");
}

// ---------------------------------------------------------------------------
// criterion 5: loss anchor values
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_loss_anchor_values() {
    // pred == gt with eps = 1 -> exactly 1.0
    let img = random_plane(16, 16, 51, 0.0, 1.0);
    let gt = structure_pyramid_gt(&img, 2, Polarity::EdgePositive).unwrap();
    let preds: Vec<Plane> = gt.levels().to_vec();
    assert_eq!(
        losses::charbonnier_rec(&preds, &preds, &gt, &gt, 1.0).unwrap(),
        1.0
    );

    // fused == max(ir, vi) -> smooth = 0
    let ir = random_plane(12, 12, 52, 0.0, 1.0);
    let vi = random_plane(12, 12, 53, 0.0, 1.0);
    let maxed = Plane::from_fn(12, 12, |i, j| ir.get(i, j).max(vi.get(i, j)));
    assert_eq!(losses::smooth_loss(&maxed, &ir, &vi).unwrap(), 0.0);

    // identical triple -> ssim loss = 0 and grad loss = 0
    let x = random_plane(16, 16, 54, 0.0, 1.0);
    assert_eq!(losses::ssim_loss(&x, &x, &x).unwrap(), 0.0);
    assert_eq!(losses::grad_loss(&x, &x, &x).unwrap(), 0.0);

    // total-loss linearity with alpha = 1/100
    let b = losses::total_loss(1.0, 0.0, 0.0, 0.0, 0.01, 1.0);
    assert!((b.total - 0.01).abs() < 1e-6);
    let b = losses::total_loss(0.8, 0.3, 0.2, 0.1, 0.01, 1.0);
    assert!((b.total - (0.01 * 0.8 + 0.6)).abs() < 1e-6);
    b.check_invariants().unwrap();
    pass(5, "loss anchor values");
}

// ---------------------------------------------------------------------------
// criterion 6: metric oracle equivalence and identical-triple anchors
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_metric_oracle_equivalence() {
    // handcrafted <= 8x8 images against scalar-loop oracles, 1e-9
    let a = Plane::from_fn(8, 8, |i, j| ((i + 2 * j) % 5) as f64 / 4.0);
    let b = Plane::from_fn(8, 8, |i, j| ((3 * i + j) % 7) as f64 / 6.0);
    let f = Plane::from_fn(8, 8, |i, j| ((i * j + 1) % 4) as f64 / 3.0);
    let q8 = metrics::quantize_u8;
    let scale = |p: &Plane| -> Vec<f64> { p.data().iter().map(|&v| v * 255.0).collect() };

    let mi = metrics::metric_mi(&f, &a, &b).unwrap();
    assert!((mi - oracle::mutual_information(&q8(&f), &q8(&a), &q8(&b))).abs() < 1e-9);
    let sf = metrics::metric_sf(&f).unwrap();
    assert!((sf - oracle::spatial_frequency(8, 8, &scale(&f))).abs() < 1e-9);
    let ag = metrics::metric_ag(&f).unwrap();
    assert!((ag - oracle::average_gradient(8, 8, &scale(&f))).abs() < 1e-9);
    let qabf = metrics::metric_qabf(&f, &a, &b).unwrap();
    assert!((qabf - oracle::qabf(8, 8, &scale(&a), &scale(&b), &scale(&f))).abs() < 1e-9);

    // SSIM and VIF against the reference implementations on 64x64, 1e-6
    let ta = textured_plane(64, 64, 61);
    let tb = textured_plane(64, 64, 62);
    let tf = textured_plane(64, 64, 63);
    let ssim = metrics::metric_ssim(&tf, &ta, &tb).unwrap();
    let ssim_want = 0.5
        * (oracle::ssim(64, 64, tf.data(), ta.data(), 1.0)
            + oracle::ssim(64, 64, tf.data(), tb.data(), 1.0));
    assert!((ssim - ssim_want).abs() < 1e-6);
    let vif = metrics::metric_vif(&tf, &ta, &tb).unwrap();
    let vif_want =
        oracle::vifp(64, 64, &scale(&ta), &scale(&tf)) + oracle::vifp(64, 64, &scale(&tb), &scale(&tf));
    assert!((vif - vif_want).abs() < 1e-6);

    // identical-triple anchors
    let x = textured_plane(64, 64, 64);
    let mi_xx = metrics::metric_mi(&x, &x, &x).unwrap();
    let qx = q8(&x);
    let mut hist = [0u32; 256];
    for &v in &qx {
        hist[v as usize] += 1;
    }
    let n = qx.len() as f64;
    let entropy: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    assert!((mi_xx - 2.0 * entropy).abs() < 1e-9);
    assert!((metrics::metric_vif(&x, &x, &x).unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(metrics::metric_ssim(&x, &x, &x).unwrap(), 1.0);
    let flat = Plane::filled(16, 16, 0.4);
    assert_eq!(metrics::metric_sf(&flat).unwrap(), 0.0);
    assert_eq!(metrics::metric_ag(&flat).unwrap(), 0.0);
    pass(6, "metric oracle equivalence");
}

// ---------------------------------------------------------------------------
// overfit fixture shared by criteria 7 and 8
// ---------------------------------------------------------------------------

struct RunOutcome {
    rows: Vec<(u64, f64, f64, f64, f64, f64)>,
    final_checkpoint: PathBuf,
}

impl RunOutcome {
    fn fus_at(&self, step: u64) -> f64 {
        let row = self
            .rows
            .iter()
            .find(|r| r.0 == step)
            .unwrap_or_else(|| panic!("no log row for step {step}"));
        // L_fus = ssim + smooth + grad
        row.3 + row.4 + row.5
    }

    fn fus_final(&self) -> f64 {
        let last = self.rows.last().unwrap();
        last.3 + last.4 + last.5
    }
}

struct OverfitFixture {
    _dir: tempfile::TempDir,
    pairs: Vec<ImagePair>,
    full: RunOutcome,
    no_sfe: RunOutcome,
    no_spf: RunOutcome,
    train_wall: Duration,
}

fn overfit_config() -> TrainConfig {
    TrainConfig {
        epochs_main: 300, // 4 pairs, batch 4 -> exactly 300 steps
        seed: 2024,
        ..TrainConfig::desk()
    }
}

fn read_rows(path: &Path) -> Vec<(u64, f64, f64, f64, f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
                f[3].parse().unwrap(),
                f[4].parse().unwrap(),
                f[5].parse().unwrap(),
            )
        })
        .collect()
}

fn overfit_fixture() -> &'static OverfitFixture {
    static FIXTURE: OnceLock<OverfitFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::TempDir::new().unwrap();
        let pairs: Vec<ImagePair> = (0..4)
            .map(|i| synth_pair(&format!("p{i}"), 64, 64, 9000 + i as u64))
            .collect();
        let t0 = Instant::now();
        let run = |name: &str, sfe: bool, spf: bool| -> RunOutcome {
            let cfg = TrainConfig {
                sfe_enabled: sfe,
                spf_enabled: spf,
                ..overfit_config()
            };
            let out = dir.path().join(name);
            let opts = RunOptions {
                out_dir: out,
                jobs: 2,
            };
            let artifacts = trainer::train_fusion(&cfg, &pairs, &opts, None, None).unwrap();
            RunOutcome {
                rows: read_rows(&artifacts.loss_log),
                final_checkpoint: artifacts.final_checkpoint,
            }
        };
        let full = run("full", true, true);
        let train_wall = t0.elapsed();
        let no_sfe = run("no_sfe", false, true);
        let no_spf = run("no_spf", true, false);
        OverfitFixture {
            _dir: dir,
            pairs,
            full,
            no_sfe,
            no_spf,
            train_wall,
        }
    })
}

// ---------------------------------------------------------------------------
// criterion 7: overfit convergence
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_overfit_convergence() {
    let fx = overfit_fixture();
    assert!(
        fx.train_wall < Duration::from_secs(600),
        "overfit run took {:?}",
        fx.train_wall
    );
    let early = fx.full.fus_at(10);
    let late = fx.full.fus_final();
    assert!(
        late < 0.5 * early,
        "L_fus did not halve: step10 {early} -> final {late}"
    );

    // fused outputs beat the elementwise-max baseline on SSIM for >= 3/4 pairs
    let model = checkpoint::load(&fx.full.final_checkpoint)
        .unwrap()
        .into_model()
        .unwrap();
    let mut wins = 0;
    for pair in &fx.pairs {
        let fused = model.forward_fusion(pair, true, false).unwrap().fused_y;
        let baseline = Plane::from_fn(pair.h(), pair.w(), |i, j| {
            pair.ir_y.get(i, j).max(pair.vi_y.get(i, j))
        });
        let s_fused = metrics::metric_ssim(&fused, &pair.ir_y, &pair.vi_y).unwrap();
        let s_base = metrics::metric_ssim(&baseline, &pair.ir_y, &pair.vi_y).unwrap();
        if s_fused > s_base {
            wins += 1;
        }
    }
    assert!(wins >= 3, "fused beat the max baseline on only {wins}/4 pairs");
    pass(7, "overfit convergence");
}

// ---------------------------------------------------------------------------
// criterion 8: ablation ordering
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_ablation_ordering() {
    let fx = overfit_fixture();
    let full = fx.full.fus_final();
    let no_sfe = fx.no_sfe.fus_final();
    let no_spf = fx.no_spf.fus_final();
    assert!(
        full <= no_sfe,
        "full {full} should not exceed SFE-ablated {no_sfe}"
    );
    assert!(
        full <= no_spf,
        "full {full} should not exceed SPF-ablated {no_spf}"
    );
    pass(8, "ablation ordering");
}

// ---------------------------------------------------------------------------
// criterion 9: determinism and resumability
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_determinism_and_resume() {
    let pairs: Vec<ImagePair> = (0..3)
        .map(|i| synth_pair(&format!("d{i}"), 48, 48, 500 + i as u64))
        .collect();
    let cfg = TrainConfig {
        crop: 32,
        base_channels: 4,
        batch_size: 2,
        epochs_main: 8, // 2 steps/epoch -> 16 steps
        lr_init: 1e-3,
        checkpoint_interval: 6,
        seed: 77,
        ..TrainConfig::default()
    };
    let d1 = tempfile::TempDir::new().unwrap();
    let d2 = tempfile::TempDir::new().unwrap();
    let mk = |d: &Path| RunOptions {
        out_dir: d.to_path_buf(),
        jobs: 2,
    };
    let a = trainer::train_fusion(&cfg, &pairs, &mk(d1.path()), None, None).unwrap();
    let b = trainer::train_fusion(&cfg, &pairs, &mk(d2.path()), None, None).unwrap();
    assert_eq!(
        std::fs::read(&a.loss_log).unwrap(),
        std::fs::read(&b.loss_log).unwrap(),
        "same seed must give byte-identical loss logs"
    );

    let mid = d1.path().join("ckpt_step_6.sfck");
    let d3 = tempfile::TempDir::new().unwrap();
    let resumed = trainer::train_fusion(&cfg, &pairs, &mk(d3.path()), None, Some(&mid)).unwrap();
    let full_rows = read_rows(&a.loss_log);
    let resumed_rows = read_rows(&resumed.loss_log);
    assert_eq!(resumed_rows.len() + 6, full_rows.len());
    for (r, f) in resumed_rows.iter().zip(full_rows.iter().skip(6)) {
        assert_eq!(r, f, "resumed trajectory diverged at step {}", r.0);
    }
    let m_full = checkpoint::load(&a.final_checkpoint).unwrap().into_model().unwrap();
    let m_res = checkpoint::load(&resumed.final_checkpoint)
        .unwrap()
        .into_model()
        .unwrap();
    assert_eq!(m_full.params(), m_res.params());
    pass(9, "determinism and resumability");
}

// ---------------------------------------------------------------------------
// criterion 10: CLI round-trip on a toy dataset
// ---------------------------------------------------------------------------

fn save_plane_as_png(path: &Path, p: &Plane) {
    dataset::save_gray_png(path, p).unwrap();
}

fn build_toy_dataset(root: &Path) -> Vec<(String, usize, usize)> {
    let specs = [("pair_a", 64, 64), ("pair_b", 90, 78), ("pair_c", 250, 250)];
    std::fs::create_dir_all(root.join("ir")).unwrap();
    std::fs::create_dir_all(root.join("vi")).unwrap();
    for (i, (id, h, w)) in specs.iter().enumerate() {
        let pair = synth_pair(id, *h, *w, 3000 + i as u64);
        save_plane_as_png(&root.join("ir").join(format!("{id}.png")), &pair.ir_y);
        // visible side as RGB with mild chroma
        let rgb = structfuse_core::color::yuv_planes_to_rgb(&pair.vi_y, &pair.vi_u, &pair.vi_v)
            .unwrap();
        dataset::save_rgb_png(&root.join("vi").join(format!("{id}.png")), &rgb).unwrap();
    }
    specs
        .iter()
        .map(|(id, h, w)| (id.to_string(), *h, *w))
        .collect()
}

#[test]
fn criterion_10_cli_round_trip() {
    let bin = env!("CARGO_BIN_EXE_structfuse");
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("toy");
    let specs = build_toy_dataset(&data);

    // an untrained (but valid) desk-profile checkpoint is enough for the
    // pipeline round trip
    let model = Model::init(ModelConfig {
        base_channels: 8,
        seed: 3,
        ..ModelConfig::default()
    })
    .unwrap();
    let ckpt = dir.path().join("model.sfck");
    checkpoint::save(&ckpt, &model, true, None, None).unwrap();

    let fused_dir = dir.path().join("fused");
    let status = Command::new(bin)
        .args([
            "fuse",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            fused_dir.to_str().unwrap(),
            "--jobs",
            "2",
        ])
        .status()
        .unwrap();
    assert!(status.success(), "fuse exited with {status:?}");

    // outputs exist at the original (non-divisible) dimensions
    for (id, h, w) in &specs {
        let img = image::open(fused_dir.join(format!("{id}.png"))).unwrap();
        assert_eq!(
            (img.height() as usize, img.width() as usize),
            (*h, *w),
            "{id} did not round-trip its dimensions"
        );
    }
    assert!(fused_dir.join("manifest.json").is_file());

    // re-running is byte-identical (manifests aside)
    let fused_dir2 = dir.path().join("fused2");
    let status = Command::new(bin)
        .args([
            "fuse",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            fused_dir2.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    for (id, _, _) in &specs {
        let a = std::fs::read(fused_dir.join(format!("{id}.png"))).unwrap();
        let b = std::fs::read(fused_dir2.join(format!("{id}.png"))).unwrap();
        assert_eq!(a, b, "{id} output not deterministic");
    }

    // eval produces a schema-valid report with exact mean aggregates
    let report_dir = dir.path().join("report");
    let status = Command::new(bin)
        .args([
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--fused",
            fused_dir.to_str().unwrap(),
            "--out",
            report_dir.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success(), "eval exited with {status:?}");
    let doc = report::read_json(&report_dir.join("report.json")).unwrap();
    assert_eq!(doc.pairs.len(), 3);
    assert!(doc.skipped.is_empty());
    let mean = |f: fn(&report::MetricsDoc) -> f64| -> f64 {
        doc.pairs.iter().map(|p| f(&p.metrics)).sum::<f64>() / doc.pairs.len() as f64
    };
    assert!((doc.aggregate.mi - mean(|m| m.mi)).abs() < 1e-9);
    assert!((doc.aggregate.sf - mean(|m| m.sf)).abs() < 1e-9);
    assert!((doc.aggregate.ag - mean(|m| m.ag)).abs() < 1e-9);
    assert!((doc.aggregate.vif - mean(|m| m.vif)).abs() < 1e-9);
    assert!((doc.aggregate.qabf - mean(|m| m.qabf)).abs() < 1e-9);
    assert!((doc.aggregate.ssim - mean(|m| m.ssim)).abs() < 1e-9);
    assert!(report_dir.join("report.csv").is_file());

    // SSIM sanity: fusing with visible-luma copies scores at least as well
    // against the sources as the raw (vi, ir) cross-similarity
    let split = dataset::DatasetSplit::discover(&data).unwrap();
    for (id, _, _) in &specs {
        let pair = split.load_pair(id).unwrap();
        let vi_copy_score = metrics::metric_ssim(&pair.vi_y, &pair.ir_y, &pair.vi_y).unwrap();
        let cross = losses::ssim_value(&pair.vi_y, &pair.ir_y).unwrap();
        let baseline = 0.5 * (cross + 1.0);
        assert!((vi_copy_score - baseline).abs() < 1e-12);
        assert!(vi_copy_score >= cross);
    }

    // unknown flag -> usage exit code 64
    let out = Command::new(bin)
        .args(["fuse", "--definitely-not-a-flag"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));

    // missing checkpoint -> exit 2; empty dataset -> exit 3
    let out = Command::new(bin)
        .args([
            "fuse",
            "--checkpoint",
            dir.path().join("nope.sfck").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(empty.join("ir")).unwrap();
    std::fs::create_dir_all(empty.join("vi")).unwrap();
    let out = Command::new(bin)
        .args([
            "fuse",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--data",
            empty.to_str().unwrap(),
            "--out",
            dir.path().join("y").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    pass(10, "CLI round-trip");
}
