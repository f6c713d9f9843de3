//! Acceptance suite: one test per numbered criterion, each printing a single
//! PASS line with the measured quantity and its pinned gate. Expensive
//! fixtures (trained models, optimization grids, attack batches) are built
//! once and shared. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines for passing criteria.

use amvis::adversarial::{attack, project, AdvConfig, AttackResult};
use amvis::am::{feature_vis, pixel_am, AmConfig};
use amvis::cli::runner_up_class;
use amvis::data::synth_dataset;
use amvis::fourier::{
    decode, forward_fft, high_freq_energy_ratio, init_spectrum, SpectralScale,
};
use amvis::models::{
    build_small_cnn, build_tiny_vit, train, ModelGraph, TrainConfig, TrainReport,
};
use amvis::objectives::{objective_on_tape, UnitKind, UnitRef};
use amvis::tensor::gradcheck::grad_check_coords;
use amvis::tensor::tape::Tape;
use amvis::tensor::Tensor;
use amvis::transforms::{TransformPolicy, TransformSpec};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

const CLASSES: usize = 6;

struct CnnFixture {
    model: ModelGraph,
    report: TrainReport,
    checksum: u64,
    train_secs: f64,
}

fn cnn() -> &'static CnnFixture {
    static CELL: OnceLock<CnnFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let train_set = synth_dataset(CLASSES, 200, 32, 32, 0).unwrap();
        let test_set = synth_dataset(CLASSES, 40, 32, 32, 1).unwrap();
        let mut model = build_small_cnn((3, 32, 32), CLASSES, 0).unwrap();
        let report = train(&mut model, &train_set, &test_set, &TrainConfig::new(12, 0.01, 0)).unwrap();
        let checksum = model.weights_checksum();
        CnnFixture {
            model,
            report,
            checksum,
            train_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

struct GridRun {
    initial: f64,
    final_: f64,
    hf_pixel: f64,
    hf_fourier: f64,
}

/// 3 logit units x 5 seeds, N=500, transforms off; fourier and pixel runs on
/// identical unit/seed pairs.
fn am_grid() -> &'static Vec<GridRun> {
    static CELL: OnceLock<Vec<GridRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = cnn();
        let mut runs = Vec::new();
        for unit_idx in [0usize, 2, 4] {
            let unit = UnitRef::new("logits", UnitKind::LogitNeuron, unit_idx);
            for seed in 0..5u64 {
                let mut fc = AmConfig::fourier(500, seed);
                fc.transforms = TransformPolicy::disabled(seed);
                let (fx, ft) = feature_vis(&f.model, &unit, &fc).unwrap();
                let mut pc = AmConfig::pixel(500, seed);
                pc.transforms = TransformPolicy::disabled(seed);
                let (px, _) = pixel_am(&f.model, &unit, &pc).unwrap();
                runs.push(GridRun {
                    initial: ft.initial_objective(),
                    final_: ft.final_objective(),
                    hf_pixel: high_freq_energy_ratio(&px, 0.25).unwrap(),
                    hf_fourier: high_freq_energy_ratio(&fx, 0.25).unwrap(),
                });
            }
        }
        assert_eq!(f.model.weights_checksum(), f.checksum, "weights moved during AM grid");
        runs
    })
}

struct AttackSuite {
    /// vit-preset (eps 0.05) on 50 correctly-classified images
    loose: Vec<AttackResult>,
    /// resnet-preset (eps 0.01), same images, reported not gated
    tight: Vec<AttackResult>,
    /// vit-preset with lambda = 0, paired with `loose`
    loose_zero_lambda: Vec<AttackResult>,
}

fn attack_suite() -> &'static AttackSuite {
    static CELL: OnceLock<AttackSuite> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = cnn();
        let pool = synth_dataset(CLASSES, 20, 32, 32, 9).unwrap();
        let preds = f.model.predict(&pool.images).unwrap();
        let mut loose = Vec::new();
        let mut tight = Vec::new();
        let mut zero = Vec::new();
        for (i, img) in pool.images.iter().enumerate() {
            if loose.len() == 50 {
                break;
            }
            if preds[i] != pool.labels[i] {
                continue;
            }
            let target = runner_up_class(&f.model, img).unwrap();
            let mut cfg = AdvConfig::vit_preset(target);
            loose.push(attack(&f.model, img, &cfg).unwrap());
            cfg.lambda = 0.0;
            zero.push(attack(&f.model, img, &cfg).unwrap());
            let cfg = AdvConfig::resnet_preset(target);
            tight.push(attack(&f.model, img, &cfg).unwrap());
        }
        assert!(loose.len() == 50, "only {} correctly-classified images", loose.len());
        assert_eq!(f.model.weights_checksum(), f.checksum, "weights moved during attacks");
        AttackSuite {
            loose,
            tight,
            loose_zero_lambda: zero,
        }
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn random_coords(numel: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.next_u64() % numel as u64) as usize).collect()
}

// ---- criterion 1: gradient fidelity -----------------------------------------

#[test]
fn criterion_01_gradient_fidelity() {
    let t0 = Instant::now();
    const OP_TOL: f64 = 1e-4;
    const E2E_TOL: f64 = 1e-3;
    let mut worst_op: (String, f64) = (String::new(), 0.0);

    type OpCase = (
        &'static str,
        Tensor,
        Box<dyn Fn(&mut Tape, amvis::tensor::tape::VarId) -> amvis::error::Result<amvis::tensor::tape::VarId>>,
    );
    // inputs are kept away from relu/abs/maxpool kinks; the checker flags
    // and excludes any residual one-sided points
    let smooth = Tensor::randn(&[4, 5, 6], 0.8, 1);
    let positive = {
        let mut t = Tensor::randn(&[4, 5, 6], 0.5, 2);
        t.data.iter_mut().for_each(|v| *v = v.abs() + 0.5);
        t
    };
    let img = Tensor::randn(&[1, 3, 16, 16], 0.5, 3);
    let chw = Tensor::randn(&[3, 8, 8], 0.5, 4);
    let mat = Tensor::randn(&[6, 5], 0.7, 5);
    let bat = Tensor::randn(&[3, 4, 5], 0.7, 6);
    let spec_re = Tensor::randn(&[2, 8, 5], 0.7, 7);

    let cases: Vec<OpCase> = vec![
        ("add", smooth.clone(), Box::new(|t, x| {
            let o = t.leaf(Tensor::randn(&[4, 5, 6], 0.5, 11), false);
            let y = t.add(x, o)?;
            t.mean_all(y)
        })),
        ("sub", smooth.clone(), Box::new(|t, x| {
            let o = t.leaf(Tensor::randn(&[5, 6], 0.5, 12), false);
            let y = t.sub(x, o)?;
            t.mean_all(y)
        })),
        ("mul", smooth.clone(), Box::new(|t, x| {
            let o = t.leaf(Tensor::randn(&[4, 5, 6], 0.5, 13), false);
            let y = t.mul(x, o)?;
            t.mean_all(y)
        })),
        ("div", smooth.clone(), Box::new(|t, x| {
            let mut d = Tensor::randn(&[4, 5, 6], 0.3, 14);
            d.data.iter_mut().for_each(|v| *v = v.abs() + 1.0);
            let o = t.leaf(d, false);
            let y = t.div(x, o)?;
            t.mean_all(y)
        })),
        ("neg", smooth.clone(), Box::new(|t, x| {
            let y = t.neg(x);
            t.mean_all(y)
        })),
        ("scale", smooth.clone(), Box::new(|t, x| {
            let y = t.scale(x, -1.7);
            t.mean_all(y)
        })),
        ("add_scalar", smooth.clone(), Box::new(|t, x| {
            let y = t.add_scalar(x, 0.3);
            t.mean_all(y)
        })),
        ("relu", positive.clone(), Box::new(|t, x| {
            let y = t.relu(x);
            t.mean_all(y)
        })),
        ("sigmoid", smooth.clone(), Box::new(|t, x| {
            let y = t.sigmoid(x);
            t.mean_all(y)
        })),
        ("gelu", smooth.clone(), Box::new(|t, x| {
            let y = t.gelu(x);
            t.mean_all(y)
        })),
        ("sqrt", positive.clone(), Box::new(|t, x| {
            let y = t.sqrt(x);
            t.mean_all(y)
        })),
        ("abs", positive.clone(), Box::new(|t, x| {
            let y = t.abs(x);
            t.mean_all(y)
        })),
        ("matmul", mat.clone(), Box::new(|t, x| {
            let o = t.leaf(Tensor::randn(&[5, 4], 0.7, 15), false);
            let y = t.matmul(x, o)?;
            t.mean_all(y)
        })),
        ("bmm", bat.clone(), Box::new(|t, x| {
            let o = t.leaf(Tensor::randn(&[3, 5, 2], 0.7, 16), false);
            let y = t.bmm(x, o)?;
            t.mean_all(y)
        })),
        ("transpose_last2", bat.clone(), Box::new(|t, x| {
            let y = t.transpose_last2(x)?;
            let o = t.leaf(Tensor::randn(&[3, 5, 4], 0.4, 17), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("permute", smooth.clone(), Box::new(|t, x| {
            let y = t.permute(x, &[2, 0, 1])?;
            let o = t.leaf(Tensor::randn(&[6, 4, 5], 0.4, 18), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("reshape", smooth.clone(), Box::new(|t, x| {
            let y = t.reshape(x, &[2, 60])?;
            let o = t.leaf(Tensor::randn(&[2, 60], 0.4, 19), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("narrow", smooth.clone(), Box::new(|t, x| {
            let y = t.narrow(x, 1, 1, 3)?;
            t.mean_all(y)
        })),
        ("select", smooth.clone(), Box::new(|t, x| {
            let y = t.select(x, 2, 3)?;
            t.mean_all(y)
        })),
        ("conv2d", img.clone(), Box::new(|t, x| {
            let k = t.leaf(Tensor::randn(&[4, 3, 3, 3], 0.4, 20), false);
            let y = t.conv2d(x, k, 1, 1)?;
            t.mean_all(y)
        })),
        ("conv2d_kernel", Tensor::randn(&[4, 3, 3, 3], 0.4, 21), Box::new(|t, k| {
            let x = t.leaf(Tensor::randn(&[1, 3, 16, 16], 0.5, 22), false);
            let y = t.conv2d(x, k, 1, 1)?;
            t.mean_all(y)
        })),
        ("max_pool2x2", img.clone(), Box::new(|t, x| {
            let y = t.max_pool2x2(x)?;
            t.mean_all(y)
        })),
        ("softmax", smooth.clone(), Box::new(|t, x| {
            let y = t.softmax(x, 2)?;
            let o = t.leaf(Tensor::randn(&[4, 5, 6], 0.4, 23), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("reduce_sum", smooth.clone(), Box::new(|t, x| {
            let y = t.reduce_sum(x, &[0, 2], false)?;
            let o = t.leaf(Tensor::randn(&[5], 0.4, 24), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("reduce_mean", smooth.clone(), Box::new(|t, x| {
            let y = t.reduce_mean(x, &[1], true)?;
            let o = t.leaf(Tensor::randn(&[4, 1, 6], 0.4, 25), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("sum_all", smooth.clone(), Box::new(|t, x| t.sum_all(x))),
        ("mean_all", smooth.clone(), Box::new(|t, x| t.mean_all(x))),
        ("cross_entropy", Tensor::randn(&[4, 6], 0.9, 26), Box::new(|t, x| {
            t.cross_entropy(x, &[0, 3, 5, 2])
        })),
        ("spectrum_decode", spec_re.clone(), Box::new(|t, re| {
            let im = t.leaf(Tensor::randn(&[2, 8, 5], 0.7, 27), false);
            let scale = SpectralScale::new(8, 8, 1.0);
            let y = amvis::fourier::decode_on_tape(t, re, im, &scale, 8, 8)?;
            t.mean_all(y)
        })),
        ("patch_extract", img.clone(), Box::new(|t, x| {
            let y = t.patch_extract(x, 4)?;
            let o = t.leaf(Tensor::randn(&[1, 16, 48], 0.4, 28), false);
            let z = t.mul(y, o)?;
            t.mean_all(z)
        })),
        ("warp", chw.clone(), Box::new(|t, x| {
            let spec = TransformSpec { dx: 1, dy: -1, scale: 1.05, angle: 0.1 };
            let y = t.warp(x, spec)?;
            t.mean_all(y)
        })),
    ];
    for (name, input, f) in cases {
        let coords = random_coords(input.numel(), 100, 0xC0FFEE);
        let rep = grad_check_coords(&f, &input, 1e-4, &coords).unwrap();
        assert!(
            rep.max_rel_err < OP_TOL,
            "op {}: rel err {} >= {}",
            name,
            rep.max_rel_err,
            OP_TOL
        );
        if rep.max_rel_err > worst_op.1 {
            worst_op = (name.to_string(), rep.max_rel_err);
        }
    }

    // end-to-end objectives, one per UnitRef kind
    let cnn_model = build_small_cnn((3, 32, 32), CLASSES, 31).unwrap();
    let vit_model = build_tiny_vit((3, 32, 32), 8, 32, 4, 2, CLASSES, 32).unwrap();
    let x = Tensor::randn(&[1, 3, 32, 32], 0.25, 33).clamp(0.05, 0.95);
    let e2e: Vec<(&str, &ModelGraph, UnitRef)> = vec![
        ("logit-neuron", &cnn_model, UnitRef::new("logits", UnitKind::LogitNeuron, 2)),
        ("conv-channel", &cnn_model, UnitRef::new("conv_pw_3", UnitKind::ConvChannel, 7)),
        ("vit-hidden-dim", &vit_model, UnitRef::new("hidden_2", UnitKind::VitHiddenDim, 11)),
    ];
    let mut worst_e2e: (String, f64) = (String::new(), 0.0);
    for (name, model, unit) in e2e {
        let coords = random_coords(x.numel(), 100, 0xBEEF);
        let rep = grad_check_coords(
            |t, v| objective_on_tape(model, t, v, &unit),
            &x,
            1e-4,
            &coords,
        )
        .unwrap();
        assert!(
            rep.max_rel_err < E2E_TOL,
            "objective {}: rel err {} >= {}",
            name,
            rep.max_rel_err,
            E2E_TOL
        );
        if rep.max_rel_err > worst_e2e.1 {
            worst_e2e = (name.to_string(), rep.max_rel_err);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 1 took {:.1}s (budget 120s)", secs);
    println!(
        "criterion 01 PASS: gradient fidelity — worst op {} {:.2e} (gate 1e-4), worst objective {} {:.2e} (gate 1e-3), {:.1}s",
        worst_op.0, worst_op.1, worst_e2e.0, worst_e2e.1, secs
    );
}

// ---- criterion 2: fourier machinery ------------------------------------------

#[test]
fn criterion_02_fourier_machinery() {
    let scale = SpectralScale::new(32, 32, 1.0);

    // decode -> forward_fft roundtrip (forward_fft returns the scaled
    // spectrum s(k) * z(k))
    let z = init_spectrum((3, 32, 32), 5, 0.8);
    let pre = amvis::fourier::decode_pre_sigmoid(&z, &scale);
    let z2 = forward_fft(&pre).unwrap();
    let (h, wh) = (32usize, 17usize);
    let mut max_err: f64 = 0.0;
    for c in 0..3 {
        for ky in 0..h {
            for kx in 0..wh {
                let i = (c * h + ky) * wh + kx;
                let s = scale.weight(ky, kx);
                max_err = max_err.max((z2.re.data[i] - s * z.re.data[i]).abs());
                max_err = max_err.max((z2.im.data[i] - s * z.im.data[i]).abs());
            }
        }
    }
    assert!(max_err < 1e-5, "roundtrip err {}", max_err);

    // zero spectrum decodes to the exact 0.5 image
    let zero = init_spectrum((3, 32, 32), 0, 0.0);
    let img = decode(&zero, &scale);
    assert!(img.data.iter().all(|&v| v == 0.5), "zero spectrum not exactly 0.5");

    // Parseval: pixel energy of the pre-sigmoid image equals weighted
    // spectral energy
    let pixel_energy: f64 = pre.data.iter().map(|v| v * v).sum();
    let mut spectral_energy = 0.0;
    for c in 0..3 {
        for ky in 0..h {
            for kx in 0..wh {
                let i = (c * h + ky) * wh + kx;
                let m: f64 = if kx == 0 || kx == 16 { 1.0 } else { 2.0 };
                let s = scale.weight(ky, kx);
                spectral_energy += m * s * s * (z.re.data[i] * z.re.data[i] + z.im.data[i] * z.im.data[i]);
            }
        }
    }
    let rel = (pixel_energy - spectral_energy).abs() / pixel_energy.max(1e-12);
    assert!(rel < 1e-4, "Parseval rel err {}", rel);
    println!(
        "criterion 02 PASS: fourier — roundtrip {:.2e} (gate 1e-5), zero spectrum exact 0.5, Parseval rel {:.2e} (gate 1e-4)",
        max_err, rel
    );
}

// ---- criterion 3: Algorithm-1 behavior ---------------------------------------

#[test]
fn criterion_03_feature_vis_amplification() {
    let t0 = Instant::now();
    let grid = am_grid();
    // trained-model initial logits are negative, so "5x the initial value"
    // is gated as: final > initial and final >= 5 * |initial|
    let amps: Vec<f64> = grid
        .iter()
        .map(|r| {
            assert!(r.final_ > r.initial, "objective did not increase");
            r.final_ / r.initial.abs().max(1e-6)
        })
        .collect();
    let med = median(amps);
    assert!(med >= 5.0, "median amplification {:.2} < 5", med);

    // byte-identical rerun under a fixed seed
    let f = cnn();
    let unit = UnitRef::new("logits", UnitKind::LogitNeuron, 2);
    let mut cfg = AmConfig::fourier(25, 7);
    cfg.transforms = TransformPolicy::default_with_seed(7);
    let (a, ta) = feature_vis(&f.model, &unit, &cfg).unwrap();
    let (b, tb) = feature_vis(&f.model, &unit, &cfg).unwrap();
    assert_eq!(a.data, b.data, "rerun not bit-identical");
    assert_eq!(
        ta.points.iter().map(|p| p.objective.to_bits()).collect::<Vec<_>>(),
        tb.points.iter().map(|p| p.objective.to_bits()).collect::<Vec<_>>()
    );
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 300.0, "criterion 3 took {:.0}s (budget 300s)", secs);
    println!(
        "criterion 03 PASS: feature_vis N=500 — median amplification {:.2}x (gate 5x) over 5 seeds x 3 units, deterministic rerun, {:.0}s",
        med, secs
    );
}

// ---- criterion 4: pixel vs fourier high-frequency contrast -------------------

#[test]
fn criterion_04_high_frequency_contrast() {
    let grid = am_grid();
    let pm = median(grid.iter().map(|r| r.hf_pixel).collect());
    let fm = median(grid.iter().map(|r| r.hf_fourier).collect());
    assert!(
        pm > fm,
        "pixel median {:.4} not above fourier median {:.4}",
        pm,
        fm
    );
    println!(
        "criterion 04 PASS: high-frequency energy ratio (cutoff 0.25) — pixel median {:.4} > fourier median {:.4}",
        pm, fm
    );
}

// ---- criterion 5: softmax/logit dissociation ----------------------------------

#[test]
fn criterion_05_softmax_logit_dissociation() {
    let softmax0 = |z: &[f64]| {
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        e[0] / e.iter().sum::<f64>()
    };
    let z = [2.0, 1.0, 1.0];
    let zp = [3.0, 2.9, 2.9];
    let (p, pp) = (softmax0(&z), softmax0(&zp));
    assert!((p - 0.5761).abs() < 1e-3, "softmax(z)[0] = {}", p);
    assert!((pp - 0.3559).abs() < 1e-3, "softmax(z')[0] = {}", pp);
    assert!(p > pp && z[0] < zp[0]);

    // the same values through the tape's softmax op
    let mut tape = Tape::new();
    let zv = tape.leaf(Tensor::from_vec(vec![1, 3], z.to_vec()).unwrap(), false);
    let sv = tape.softmax(zv, 1).unwrap();
    assert!((tape.value(sv).data[0] - p).abs() < 1e-12);
    println!(
        "criterion 05 PASS: dissociation witness — softmax[0] {:.4} > {:.4} while logit 2 < 3 (gates 0.5761/0.3559 +- 1e-3)",
        p, pp
    );
}

// ---- criterion 6: attack constraint exactness ---------------------------------

#[test]
fn criterion_06_attack_constraints() {
    let suite = attack_suite();
    let mut max_linf_excess: f64 = f64::MIN;
    for (r, eps) in suite
        .loose
        .iter()
        .chain(&suite.loose_zero_lambda)
        .map(|r| (r, 0.05))
        .chain(suite.tight.iter().map(|r| (r, 0.01)))
    {
        assert!(r.linf <= eps + 1e-6, "linf {} > eps {}", r.linf, eps);
        assert!(
            r.x_adv.data.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "x_adv out of range"
        );
        max_linf_excess = max_linf_excess.max(r.linf - eps);
    }

    // projector idempotence on 1000 random probes
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..1000 {
        let x = Tensor::randn(&[3, 4, 4], 1.0, rng.next_u64());
        let orig = Tensor::randn(&[3, 4, 4], 0.3, rng.next_u64()).clamp(0.0, 1.0);
        let eps = 0.001 + 0.1 * (i as f64 / 1000.0);
        let p1 = project(&x, &orig, eps).unwrap();
        let p2 = project(&p1, &orig, eps).unwrap();
        assert_eq!(p1.data, p2.data, "projection not idempotent");
        assert!(p1.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    println!(
        "criterion 06 PASS: constraints — max linf excess {:.1e} (gate 1e-6), range exact, projector idempotent on 1000 probes",
        max_linf_excess
    );
}

// ---- criterion 7: attack efficacy ---------------------------------------------

#[test]
fn criterion_07_attack_efficacy() {
    let t0 = Instant::now();
    let suite = attack_suite();
    let rate = suite.loose.iter().filter(|r| r.success).count() as f64 / suite.loose.len() as f64;
    let tight_rate =
        suite.tight.iter().filter(|r| r.success).count() as f64 / suite.tight.len() as f64;
    assert!(rate >= 0.8, "success rate {:.2} < 0.8 at eps=0.05", rate);
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 180.0, "criterion 7 took {:.0}s (budget 180s)", secs);
    println!(
        "criterion 07 PASS: targeted success {:.2} at eps=0.05 (gate 0.80) over 50 images; eps=0.01 reported (not gated): {:.2}; {:.0}s",
        rate, tight_rate, secs
    );
}

// ---- criterion 8: TV regularization effect ------------------------------------

#[test]
fn criterion_08_tv_regularization() {
    let suite = attack_suite();
    assert!(suite.loose.len() >= 30);
    let tv_reg = median(suite.loose.iter().map(|r| r.tv).collect());
    let tv_zero = median(suite.loose_zero_lambda.iter().map(|r| r.tv).collect());
    assert!(
        tv_reg < tv_zero,
        "median tv with lambda ({:.3}) not below lambda=0 ({:.3})",
        tv_reg,
        tv_zero
    );
    let rate_reg = suite.loose.iter().filter(|r| r.success).count() as f64 / suite.loose.len() as f64;
    let rate_zero = suite.loose_zero_lambda.iter().filter(|r| r.success).count() as f64
        / suite.loose_zero_lambda.len() as f64;
    let degradation = rate_zero - rate_reg;
    assert!(
        degradation <= 0.10 + 1e-12,
        "success degradation {:.3} > 0.10",
        degradation
    );
    println!(
        "criterion 08 PASS: median tv(delta) {:.3} with lambda=1e-4 < {:.3} with lambda=0; success degradation {:.3} (gate <= 0.10)",
        tv_reg, tv_zero, degradation
    );
}

// ---- criterion 9: frozen-f contract -------------------------------------------

#[test]
fn criterion_09_frozen_weights() {
    let f = cnn();
    // force both expensive fixtures, which assert the checksum internally,
    // then run one more of each kind and re-verify here
    let _ = am_grid();
    let _ = attack_suite();
    let unit = UnitRef::new("conv_pw_4", UnitKind::ConvChannel, 3);
    feature_vis(&f.model, &unit, &AmConfig::fourier(10, 3)).unwrap();
    pixel_am(&f.model, &unit, &AmConfig::pixel(10, 3)).unwrap();
    let img = synth_dataset(CLASSES, 1, 32, 32, 17).unwrap().images[0].clone();
    attack(&f.model, &img, &AdvConfig::vit_preset(1)).unwrap();
    assert_eq!(f.model.weights_checksum(), f.checksum, "weights changed");
    println!(
        "criterion 09 PASS: frozen-f — checksum {:016x} unchanged across all visualize and attack runs",
        f.checksum
    );
}

// ---- criterion 10: trainability gates -----------------------------------------

#[test]
fn criterion_10_model_trainability() {
    let f = cnn();
    assert!(
        f.report.test_accuracy >= 0.95,
        "CNN test accuracy {:.3} < 0.95",
        f.report.test_accuracy
    );
    let t0 = Instant::now();
    let train_set = synth_dataset(CLASSES, 200, 32, 32, 0).unwrap();
    let test_set = synth_dataset(CLASSES, 40, 32, 32, 1).unwrap();
    let mut vit = build_tiny_vit((3, 32, 32), 8, 64, 4, 4, CLASSES, 0).unwrap();
    let vit_report = train(&mut vit, &train_set, &test_set, &TrainConfig::new(40, 0.05, 0)).unwrap();
    let vit_secs = t0.elapsed().as_secs_f64();
    assert!(
        vit_report.test_accuracy >= 0.90,
        "ViT test accuracy {:.3} < 0.90",
        vit_report.test_accuracy
    );
    let total = f.train_secs + vit_secs;
    assert!(total < 900.0, "total training {:.0}s (budget 900s)", total);
    println!(
        "criterion 10 PASS: trainability — CNN test acc {:.3} (gate 0.95), ViT test acc {:.3} (gate 0.90), total training {:.0}s (budget 900s)",
        f.report.test_accuracy, vit_report.test_accuracy, total
    );
}
