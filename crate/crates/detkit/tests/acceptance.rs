//! Acceptance suite: every check this library must satisfy, one test per
//! criterion, each printing a PASS/FAIL line (visible with `--nocapture`).
//!
//! Run with: cargo test -p detkit --test acceptance -- --nocapture

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use detkit::attention::{fsca_forward, FscaParams};
use detkit::eeconv::{eeconv_macs, run_fusion_trials, ConvShape};
use detkit::loss::{
    fws_loss, iou, random_box_pair, regress_demo, siou_core_loss, wise_gamma, BoxCwh,
    FocalerConfig, RegressConfig, SiouConfig, WiseConfig, WiseState, DEFAULT_DEMO_LR,
    ema_update,
};
use detkit::metrics::{
    average_precision, evaluate, match_detections, pr_curve, Detection, EvalConfig, GroundTruth,
    MatchState,
};
use detkit::pipeline::{run_pipeline, PipelineConfig};
use detkit::spd::{spd_inverse, spd_rearrange};
use detkit::synthgen::{dataset_stats, generate_annotations, generate_scene, write_ppm, SceneSpec};
use detkit::tensor::{dft2, idft2, ComplexTensor4, Tensor4};

fn criterion(idx: u32, name: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {idx:02} {name}: {status} ({detail})");
    assert!(pass, "criterion {idx:02} {name}: {detail}");
}

#[test]
fn criterion_01_fusion_equivalence() {
    let start = Instant::now();
    let report = run_fusion_trials(200, 16, 32, 1e-9, 20250810, false).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        1,
        "fusion-equivalence",
        report.passed && elapsed < 30.0,
        format!(
            "200 trials, max deviation {:.3e} <= 1e-9, {:.1}s < 30s",
            report.max_deviation, elapsed
        ),
    );
}

#[test]
fn criterion_02_zero_inference_overhead() {
    let shapes = [
        (1, 1, 1, 1, 1),
        (1, 3, 8, 32, 32),
        (1, 8, 8, 16, 16),
        (2, 4, 12, 20, 20),
        (1, 16, 16, 64, 64),
        (4, 2, 6, 10, 14),
        (1, 7, 13, 9, 11),
        (3, 5, 5, 31, 17),
        (1, 32, 64, 8, 8),
        (2, 24, 24, 24, 24),
    ];
    let mut pass = true;
    for (b, ic, oc, h, w) in shapes {
        let macs = eeconv_macs(&ConvShape::new(b, ic, oc, h, w).unwrap());
        pass &= macs.fused == macs.vanilla;
        pass &= macs.train_composite == 4 * macs.vanilla;
    }
    criterion(
        2,
        "zero-inference-overhead",
        pass,
        "10 shapes: fused MACs == vanilla exactly, train composite == 4x".into(),
    );
}

#[test]
fn criterion_03_spd_losslessness() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pass = true;
    for _ in 0..100 {
        let scale = rng.gen_range(2..4usize);
        let (bh, bw) = (rng.gen_range(1..6usize), rng.gen_range(1..6usize));
        let x = Tensor4::random(
            rng.gen_range(1..3usize),
            rng.gen_range(1..4usize),
            bh * scale,
            bw * scale,
            -10.0,
            10.0,
            &mut rng,
        )
        .unwrap();
        let y = spd_rearrange(&x, scale).unwrap();
        // Bit-exact round trip.
        pass &= spd_inverse(&y, scale).unwrap() == x;
        // Value multiset preserved.
        let mut a: Vec<u64> = x.values().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = y.values().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        pass &= a == b;
    }
    // Symbolic 2×2 ordering: [[a, b], [c, d]] → channels [a, b, c, d].
    let x = Tensor4::new(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = spd_rearrange(&x, 2).unwrap();
    pass &= y.values() == [1.0, 2.0, 3.0, 4.0] && y.shape() == (1, 4, 1, 1);
    criterion(
        3,
        "spd-losslessness",
        pass,
        "100 random round trips bit-identical, multisets equal, symbolic order ok".into(),
    );
}

/// Direct O(N⁴) double-sum DFT, the independent oracle.
fn dft2_double_sum(x: &Tensor4) -> ComplexTensor4 {
    let (b, c, h, w) = x.shape();
    let mut values = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for ci in 0..c {
            for u in 0..h {
                for v in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for m in 0..h {
                        for n in 0..w {
                            let angle = -2.0 * PI
                                * (u as f64 * m as f64 / h as f64
                                    + v as f64 * n as f64 / w as f64);
                            acc += Complex64::new(angle.cos(), angle.sin()) * x.get(bi, ci, m, n);
                        }
                    }
                    values.push(acc);
                }
            }
        }
    }
    ComplexTensor4::new(b, c, h, w, values).unwrap()
}

#[test]
fn criterion_04_dft_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pass = true;
    let mut worst_round = 0.0f64;
    let mut worst_parseval = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..20 {
        let x = Tensor4::random(1, 1, 8, 8, -1.0, 1.0, &mut rng).unwrap();
        let xf = dft2(&x);

        let back = idft2(&xf);
        let scale = x.max_abs();
        let round = x
            .values()
            .iter()
            .zip(back.real().unwrap().values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            .max(back.max_abs_imag())
            / scale;
        worst_round = worst_round.max(round);

        let spatial: f64 = x.values().iter().map(|v| v * v).sum();
        let spectral: f64 = xf.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / 64.0;
        worst_parseval = worst_parseval.max((spatial - spectral).abs() / spatial.abs());

        let oracle = dft2_double_sum(&x);
        let diff = xf
            .values()
            .iter()
            .zip(oracle.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        worst_oracle = worst_oracle.max(diff);
    }
    pass &= worst_round <= 1e-8 && worst_parseval <= 1e-6 && worst_oracle <= 1e-8;
    criterion(
        4,
        "dft-correctness",
        pass,
        format!(
            "roundtrip {worst_round:.2e} <= 1e-8 rel, parseval {worst_parseval:.2e} <= 1e-6 rel, oracle {worst_oracle:.2e} <= 1e-8"
        ),
    );
}

#[test]
fn criterion_05_fsca_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut pass = true;
    let mut worst_identity = 0.0f64;
    let mut worst_residue = 0.0f64;
    for _ in 0..50 {
        let c = rng.gen_range(1..5usize);
        let h = rng.gen_range(3..12usize);
        let w = rng.gen_range(3..12usize);
        let x = Tensor4::random(1, c, h, w, -1.0, 1.0, &mut rng).unwrap();
        let scale = x.max_abs();

        let p = FscaParams::pinned(c, 1.0, 1.0).unwrap();
        let y = fsca_forward(&x, &p).unwrap();
        let identity_err = x
            .values()
            .iter()
            .zip(y.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale;
        worst_identity = worst_identity.max(identity_err);

        // Imaginary residue after real per-channel spectrum scaling.
        let residue = idft2(&dft2(&x)).max_abs_imag() / scale;
        worst_residue = worst_residue.max(residue);
    }
    pass &= worst_identity <= 1e-8 && worst_residue <= 1e-8;
    criterion(
        5,
        "fsca-identity",
        pass,
        format!(
            "50 inputs: pinned-attention identity {worst_identity:.2e} <= 1e-8 rel, imaginary residue {worst_residue:.2e} <= 1e-8"
        ),
    );
}

/// Interior-point filter: away from clip corners, min/max ties and |·| kinks.
fn is_interior(bp: &BoxCwh, bt: &BoxCwh) -> bool {
    let tol = 1e-3;
    let v = iou(bp, bt);
    if v < tol || (v - 0.95).abs() < tol || v > 1.0 - tol {
        return false;
    }
    let dx = (bp.cx() - bt.cx()).abs();
    let dy = (bp.cy() - bt.cy()).abs();
    if dx < tol || dy < tol || (dx - dy).abs() < tol {
        return false;
    }
    if (bp.w() - bt.w()).abs() < tol || (bp.h() - bt.h()).abs() < tol {
        return false;
    }
    let (px1, py1, px2, py2) = bp.corners();
    let (tx1, ty1, tx2, ty2) = bt.corners();
    [px1 - tx1, py1 - ty1, px2 - tx2, py2 - ty2]
        .iter()
        .all(|gap| gap.abs() >= tol)
}

fn random_interior_pair(rng: &mut ChaCha8Rng) -> (BoxCwh, BoxCwh) {
    loop {
        let bt = BoxCwh::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.2..1.5),
            rng.gen_range(0.2..1.5),
        )
        .unwrap();
        let bp = BoxCwh::new(
            bt.cx() + rng.gen_range(-0.6..0.6),
            bt.cy() + rng.gen_range(-0.6..0.6),
            bt.w() * rng.gen_range(0.5..1.8),
            bt.h() * rng.gen_range(0.5..1.8),
        )
        .unwrap();
        if is_interior(&bp, &bt) {
            return (bp, bt);
        }
    }
}

#[test]
fn criterion_06_loss_gradient_correctness() {
    let start = Instant::now();
    let fcfg = FocalerConfig::default();
    let scfg = SiouConfig::default();
    let wcfg = WiseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut state = ema_update(WiseState::new(), 0.5);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (bp, bt) = random_interior_pair(&mut rng);
        let (_, grad, next) = fws_loss(&bp, &bt, state, &fcfg, &scfg, &wcfg);

        // Central finite differences of the γ-frozen loss.
        let l_iou = 1.0 - iou(&bp, &bt);
        let gamma = wise_gamma(l_iou / state.ema_mean(), &wcfg);
        let fields = [bp.cx(), bp.cy(), bp.w(), bp.h()];
        for i in 0..4 {
            let h = 1e-6 * fields[i].abs().max(1.0);
            let eval = |delta: f64| {
                let mut f = fields;
                f[i] += delta;
                let bx = BoxCwh::new(f[0], f[1], f[2], f[3]).unwrap();
                siou_core_loss(&bx, &bt, &fcfg, &scfg) * gamma
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((grad[i] - numeric).abs() / denom);
        }
        state = next;
    }
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        6,
        "loss-gradient-correctness",
        worst <= 1e-4 && elapsed < 10.0,
        format!("500 pairs: max relative error {worst:.2e} <= 1e-4, {elapsed:.1}s < 10s"),
    );
}

#[test]
fn criterion_07_gamma_non_monotonicity() {
    let cfg = WiseConfig::default();
    let mut best = (0.0f64, f64::MIN);
    for i in 0..=100_000 {
        let beta = i as f64 * 1e-4;
        let g = wise_gamma(beta, &cfg);
        if g > best.1 {
            best = (beta, g);
        }
    }
    let argmax_expected = 1.0 / 1.9f64.ln();
    let gamma_zero = wise_gamma(0.0, &cfg);
    let gamma_delta_err = (wise_gamma(cfg.delta, &cfg) - 1.0).abs();
    let pass = (best.0 - argmax_expected).abs() <= 0.01
        && gamma_zero == 0.0
        && gamma_delta_err <= 1e-12
        && wise_gamma(best.0 - 0.5, &cfg) < best.1
        && wise_gamma(best.0 + 0.5, &cfg) < best.1;
    criterion(
        7,
        "gamma-non-monotonicity",
        pass,
        format!(
            "argmax {:.4} within 0.01 of 1/ln(1.9) = {argmax_expected:.4}, gamma(0) = {gamma_zero}, |gamma(delta) - 1| = {gamma_delta_err:.1e} <= 1e-12",
            best.0
        ),
    );
}

#[test]
fn criterion_08_loss_invariances() {
    let fcfg = FocalerConfig::default();
    let scfg = SiouConfig::default();
    let wcfg = WiseConfig::default();
    let state = ema_update(WiseState::new(), 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_translation = 0.0f64;
    let mut worst_scale = 0.0f64;
    for _ in 0..200 {
        let (bp, bt) = random_interior_pair(&mut rng);
        let (base, _, _) = fws_loss(&bp, &bt, state, &fcfg, &scfg, &wcfg);

        let (tx, ty) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let shift = |b: &BoxCwh| BoxCwh::new(b.cx() + tx, b.cy() + ty, b.w(), b.h()).unwrap();
        let (translated, _, _) = fws_loss(&shift(&bp), &shift(&bt), state, &fcfg, &scfg, &wcfg);
        worst_translation = worst_translation.max((translated - base).abs());

        let s = (rng.gen_range(-2.0..2.0f64)).exp2().max(0.1);
        let grow = |b: &BoxCwh| {
            BoxCwh::new(b.cx() * s, b.cy() * s, b.w() * s, b.h() * s).unwrap()
        };
        let (scaled, _, _) = fws_loss(&grow(&bp), &grow(&bt), state, &fcfg, &scfg, &wcfg);
        worst_scale = worst_scale.max((scaled - base).abs());
    }

    let unit = BoxCwh::new(0.3, -0.2, 1.1, 0.8).unwrap();
    let (perfect, grad, _) = fws_loss(&unit, &unit, state, &fcfg, &scfg, &wcfg);
    let pass = worst_translation <= 1e-12
        && worst_scale <= 1e-9
        && perfect == 0.0
        && grad == [0.0; 4];
    criterion(
        8,
        "loss-invariances",
        pass,
        format!(
            "200 pairs: translation {worst_translation:.2e} <= 1e-12, scale {worst_scale:.2e} <= 1e-9, identical boxes -> loss 0 exactly"
        ),
    );
}

#[test]
fn criterion_09_regression_convergence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<_> = (0..100).map(|_| random_box_pair(&mut rng, 0.1)).collect();
    let cfg = RegressConfig {
        steps: 2000,
        lr: DEFAULT_DEMO_LR,
        ..Default::default()
    };
    let report = regress_demo(&pairs, &cfg, WiseState::new()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    criterion(
        9,
        "regression-convergence",
        report.final_mean_iou >= 0.9 && elapsed < 60.0,
        format!(
            "100 pairs, lr {DEFAULT_DEMO_LR}: mean IoU {:.4} >= 0.9 within 2000 steps, {elapsed:.1}s < 60s",
            report.final_mean_iou
        ),
    );
}

/// Best AP over all injective det→gt assignments (per group), the exhaustive
/// matching oracle for tiny instances.
fn exhaustive_best_ap(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> f64 {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let feasible: Vec<Vec<bool>> = order
        .iter()
        .map(|&di| {
            gts.iter()
                .map(|g| iou(&dets[di].bbox, &g.bbox) >= thr)
                .collect()
        })
        .collect();

    fn recurse(
        rank: usize,
        feasible: &[Vec<bool>],
        taken: &mut Vec<bool>,
        flags: &mut Vec<bool>,
        total_gt: usize,
        best: &mut f64,
    ) {
        if rank == feasible.len() {
            let ap = average_precision(&pr_curve(flags, total_gt));
            if ap > *best {
                *best = ap;
            }
            return;
        }
        flags.push(false);
        recurse(rank + 1, feasible, taken, flags, total_gt, best);
        flags.pop();
        for gi in 0..taken.len() {
            if !taken[gi] && feasible[rank][gi] {
                taken[gi] = true;
                flags.push(true);
                recurse(rank + 1, feasible, taken, flags, total_gt, best);
                flags.pop();
                taken[gi] = false;
            }
        }
    }

    let mut best = 0.0;
    recurse(
        0,
        &feasible,
        &mut vec![false; gts.len()],
        &mut Vec::new(),
        gts.len(),
        &mut best,
    );
    best
}

/// Instance with pairwise-disjoint ground truths: jittered hits plus noise.
fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let n_gt = rng.gen_range(0..=5usize);
    let mut gts: Vec<GroundTruth> = Vec::new();
    let mut guard = 0;
    while gts.len() < n_gt && guard < 200 {
        guard += 1;
        let b = BoxCwh::new(
            rng.gen_range(20.0..300.0),
            rng.gen_range(20.0..300.0),
            rng.gen_range(8.0..40.0),
            rng.gen_range(8.0..40.0),
        )
        .unwrap();
        if gts.iter().all(|g| iou(&g.bbox, &b) == 0.0) {
            gts.push(GroundTruth::new(0, 0, b));
        }
    }
    let mut dets = Vec::new();
    for g in &gts {
        if rng.gen_bool(0.8) {
            dets.push(
                Detection::new(
                    0,
                    0,
                    BoxCwh::new(
                        g.bbox.cx() + rng.gen_range(-3.0..3.0),
                        g.bbox.cy() + rng.gen_range(-3.0..3.0),
                        g.bbox.w() * rng.gen_range(0.8..1.25),
                        g.bbox.h() * rng.gen_range(0.8..1.25),
                    )
                    .unwrap(),
                    rng.gen_range(0.05..1.0),
                )
                .unwrap(),
            );
        }
    }
    let extra = rng.gen_range(0..=2usize);
    for _ in 0..extra {
        if dets.len() >= 5 {
            break;
        }
        dets.push(
            Detection::new(
                0,
                0,
                BoxCwh::new(
                    rng.gen_range(20.0..300.0),
                    rng.gen_range(20.0..300.0),
                    rng.gen_range(8.0..40.0),
                    rng.gen_range(8.0..40.0),
                )
                .unwrap(),
                rng.gen_range(0.05..1.0),
            )
            .unwrap(),
        );
    }
    dets.truncate(5);
    (dets, gts)
}

#[test]
fn criterion_10_metrics_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let (dets, gts) = random_instance(&mut rng);
        let det_refs: Vec<&Detection> = dets.iter().collect();
        let gt_refs: Vec<&GroundTruth> = gts.iter().collect();
        let outcome = match_detections(&det_refs, &gt_refs, 0.5, 300);
        let flags: Vec<bool> = outcome
            .flags
            .iter()
            .map(|(_, s)| *s == MatchState::Tp)
            .collect();
        let greedy = average_precision(&pr_curve(&flags, gts.len()));
        let oracle = exhaustive_best_ap(&dets, &gts, 0.5);
        worst = worst.max((greedy - oracle).abs());
    }

    // Perfect detector scores exactly 1.
    let gts: Vec<GroundTruth> = (0..4)
        .map(|i| {
            GroundTruth::new(
                0,
                i % 2,
                BoxCwh::new(60.0 * i as f64 + 30.0, 30.0, 14.0, 12.0).unwrap(),
            )
        })
        .collect();
    let dets: Vec<Detection> = gts
        .iter()
        .map(|g| Detection::new(g.image_id, g.class_id, g.bbox, 1.0).unwrap())
        .collect();
    let report = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
    let perfect = report.map50 == Some(1.0) && report.map50_95 == Some(1.0);

    // Single TP at recall 0.5, nothing after: AP = 51/101.
    let ap = average_precision(&pr_curve(&[true], 2));
    let interpolation_exact = (ap - 51.0 / 101.0).abs() <= 1e-15;

    criterion(
        10,
        "metrics-oracle-equivalence",
        worst <= 1e-9 && perfect && interpolation_exact,
        format!(
            "500 instances: max |greedy AP - exhaustive AP| = {worst:.2e} <= 1e-9, perfect detector mAP = 1, AP(1 TP @ recall 0.5) = 51/101"
        ),
    );
}

#[test]
fn criterion_11_generator_calibration() {
    let spec = SceneSpec::default();
    let mut annotations = Vec::new();
    for image_id in 0..1000 {
        let (anns, _) = generate_annotations(&spec, image_id).unwrap();
        annotations.extend(anns);
    }
    let stats = dataset_stats(&annotations).unwrap();
    let small_ok = (stats.small_fraction - 0.9451).abs() <= 0.02;
    let count_ok = (stats.mean_objects_per_image - 7.34).abs() <= 0.3;

    // Byte-identical regeneration: annotations across the whole set, plus
    // rendered PPM bytes for a handful of scenes.
    let mut second = Vec::new();
    for image_id in 0..1000 {
        let (anns, _) = generate_annotations(&spec, image_id).unwrap();
        second.extend(anns);
    }
    let mut bytes_ok = annotations == second;
    for image_id in 0..3 {
        let mut first_ppm = Vec::new();
        write_ppm(&generate_scene(&spec, image_id).unwrap().image, 0, &mut first_ppm).unwrap();
        let mut second_ppm = Vec::new();
        write_ppm(&generate_scene(&spec, image_id).unwrap().image, 0, &mut second_ppm).unwrap();
        bytes_ok &= first_ppm == second_ppm;
    }

    criterion(
        11,
        "generator-calibration",
        small_ok && count_ok && bytes_ok,
        format!(
            "1000 images: small fraction {:.4} within 0.9451±0.02, mean objects {:.3} within 7.34±0.3, regeneration byte-identical",
            stats.small_fraction, stats.mean_objects_per_image
        ),
    );
}

#[test]
fn criterion_12_pipeline_smoke() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        images: 3,
        seed: 12,
        jitter: 0.0,
        score_noise: 0.0,
        stack_input: 64,
        scene: SceneSpec::default(),
    };
    let report = run_pipeline(&cfg, Some(dir.path())).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let artifacts = dir.path().join("scene_0000.ppm").exists()
        && dir.path().join("featmap_0000_output.pgm").exists()
        && dir.path().join("eval-report.json").exists();
    criterion(
        12,
        "pipeline-smoke",
        report.map50 == Some(1.0) && artifacts && elapsed < 300.0,
        format!(
            "zero-jitter oracle mAP50 = {:?} (exactly 1.0), artifacts written, {elapsed:.1}s < 300s",
            report.map50
        ),
    );
}
