//! Command implementations: thin orchestration over the library plus file IO
//! and report printing.

use std::fs;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use detkit::attention::{csdmam_forward_traced, CsdmamParams};
use detkit::eeconv::{
    eeconv_forward_fused, fuse, run_fusion_trials, ConvBranchSet, EeconvMacs,
};
use detkit::error::{Error, Result};
use detkit::loss::{
    random_box_pair, regress_demo, wise_gamma, FocalerConfig, RegressConfig, SiouConfig,
    WiseConfig, WiseState,
};
use detkit::metrics::{evaluate, parse_gt_jsonl, parse_pred_jsonl, report_table, EvalConfig};
use detkit::pipeline::{run_pipeline, PipelineConfig};
use detkit::spd::spd_flop_report;
use detkit::synthgen::{
    channel_mean_pgm, dataset_stats, generate_scene, write_ppm, SceneSpec,
};
use detkit::tensor::{activation, batchnorm_infer, conv2d, Activation, Tensor4};

use crate::args::{
    parse_shape, BenchArgs, Command, ConfigOverlay, EvalArgs, FeatmapArgs, FuseCheckArgs,
    GammaCurveArgs, GenArgs, PipelineArgs, RegressArgs,
};
use crate::manifest::write_manifest;
use crate::Outcome;

pub fn run(command: Command, overlay: &ConfigOverlay) -> Result<Outcome> {
    match command {
        Command::Gen(args) => gen(args, overlay),
        Command::Eval(args) => eval(args, overlay),
        Command::FuseCheck(args) => fuse_check(args, overlay),
        Command::Bench(args) => bench(args, overlay),
        Command::Regress(args) => regress(args, overlay),
        Command::GammaCurve(args) => gamma_curve(args, overlay),
        Command::Featmap(args) => featmap(args, overlay),
        Command::Pipeline(args) => pipeline(args, overlay),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Malformed(e.to_string()))
}

fn gen(mut args: GenArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply_opt("out", &mut args.out)?;
    overlay.apply("images", &mut args.images)?;
    overlay.apply("seed", &mut args.seed)?;
    overlay.apply("image_size", &mut args.image_size)?;
    overlay.apply("classes", &mut args.classes)?;
    overlay.apply("mean_objects", &mut args.mean_objects)?;
    let out = args
        .out
        .clone()
        .ok_or_else(|| Error::Malformed("gen requires --out (or 'out' in the config)".into()))?;
    if args.images < 1 {
        return Err(Error::Contract("gen requires images >= 1".into()));
    }

    let spec = SceneSpec {
        image_size: args.image_size,
        classes: args.classes,
        objects_per_image_mean: args.mean_objects,
        seed: args.seed,
        ..Default::default()
    };
    spec.validate()?;

    let images_dir = out.join("images");
    fs::create_dir_all(&images_dir)?;
    let mut annotations = Vec::new();
    let mut skipped = 0usize;
    for image_id in 0..args.images as u64 {
        let scene = generate_scene(&spec, image_id)?;
        let mut file = fs::File::create(images_dir.join(format!("scene_{image_id:04}.ppm")))?;
        write_ppm(&scene.image, 0, &mut file)?;
        annotations.extend(scene.annotations);
        skipped += scene.skipped;
    }
    let mut ann_file = fs::File::create(out.join("annotations.jsonl"))?;
    detkit::metrics::write_gt_jsonl(&annotations, &mut ann_file)?;

    let stats = dataset_stats(&annotations)?;
    fs::write(out.join("stats.json"), to_json(&stats)?)?;
    // The manifest carries the full resolved scene spec, not just the flags.
    write_manifest(
        &out,
        "gen",
        &serde_json::json!({ "args": &args, "scene_spec": &spec }),
    )?;

    println!(
        "{}",
        to_json(&serde_json::json!({
            "images": args.images,
            "objects": stats.total_objects,
            "skipped": skipped,
            "small_fraction": stats.small_fraction,
            "mean_objects_per_image": stats.mean_objects_per_image,
            "out": out,
        }))?
    );
    Ok(Outcome::Success)
}

fn eval(mut args: EvalArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply_opt("gt", &mut args.gt)?;
    overlay.apply_opt("pred", &mut args.pred)?;
    overlay.apply_opt("iou_thr", &mut args.iou_thr)?;
    overlay.apply("max_det", &mut args.max_det)?;
    overlay.apply("score_cut", &mut args.score_cut)?;
    overlay.apply("format", &mut args.format)?;
    overlay.apply_opt("out", &mut args.out)?;

    let gt_path = args
        .gt
        .clone()
        .ok_or_else(|| Error::Malformed("eval requires --gt".into()))?;
    let pred_path = args
        .pred
        .clone()
        .ok_or_else(|| Error::Malformed("eval requires --pred".into()))?;

    let gts = parse_gt_jsonl(&fs::read(&gt_path)?)?;
    let dets = parse_pred_jsonl(&fs::read(&pred_path)?)?;

    let mut cfg = EvalConfig {
        max_detections: args.max_det,
        score_cut: args.score_cut,
        ..Default::default()
    };
    if let Some(list) = &args.iou_thr {
        cfg.iou_thresholds = list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("bad IoU threshold '{t}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
    }

    let report = evaluate(&dets, &gts, &cfg)?;
    let rendered = match args.format.as_str() {
        "json" => to_json(&report)?,
        "table" => report_table(&report),
        other => {
            return Err(Error::Malformed(format!(
                "unknown format '{other}', expected json or table"
            )))
        }
    };
    println!("{rendered}");

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval-report.json"), to_json(&report)?)?;
        write_manifest(out, "eval", &args)?;
    }
    Ok(Outcome::Success)
}

fn fuse_check(mut args: FuseCheckArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply("seed", &mut args.seed)?;
    overlay.apply("trials", &mut args.trials)?;
    overlay.apply("width", &mut args.width)?;
    overlay.apply("spatial", &mut args.spatial)?;
    overlay.apply("threshold", &mut args.threshold)?;
    overlay.apply("inject_corruption", &mut args.inject_corruption)?;
    overlay.apply_opt("out", &mut args.out)?;

    let report = run_fusion_trials(
        args.trials,
        args.width,
        args.spatial,
        args.threshold,
        args.seed,
        args.inject_corruption,
    )?;
    println!("{}", to_json(&report)?);
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("fuse-check.json"), to_json(&report)?)?;
        write_manifest(out, "fuse-check", &args)?;
    }
    if report.passed {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::CheckFailed(format!(
            "max deviation {:.3e} exceeds {:.3e}",
            report.max_deviation, report.threshold
        )))
    }
}

#[derive(serde::Serialize)]
struct BenchShapeReport {
    shape: String,
    macs: EeconvMacs,
    mac_ratio_train_over_fused: f64,
    median_fused_ns: u128,
    median_train_ns: u128,
    fused_not_slower: bool,
}

fn median_ns(samples: &mut Vec<u128>) -> u128 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

fn bench(mut args: BenchArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply("shapes", &mut args.shapes)?;
    overlay.apply("reps", &mut args.reps)?;
    overlay.apply("seed", &mut args.seed)?;
    overlay.apply_opt("out", &mut args.out)?;
    if args.reps < 1 {
        return Err(Error::Contract("bench requires reps >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut shape_reports = Vec::new();
    for token in args.shapes.split(',') {
        let shape = parse_shape(token.trim())?;
        let macs = detkit::eeconv::eeconv_macs(&shape);

        let branches = ConvBranchSet::random_trial(
            shape.out_channels,
            shape.in_channels,
            Activation::Relu,
            &mut rng,
        )?;
        let fused = fuse(&branches)?;
        let x = Tensor4::random(
            shape.batch,
            shape.in_channels,
            shape.height,
            shape.width,
            -1.0,
            1.0,
            &mut rng,
        )?;

        let mut fused_ns = Vec::with_capacity(args.reps);
        let mut train_ns = Vec::with_capacity(args.reps);
        for _ in 0..args.reps {
            let t0 = Instant::now();
            let y = eeconv_forward_fused(&x, &fused)?;
            fused_ns.push(t0.elapsed().as_nanos());
            std::hint::black_box(y);

            // Training composite evaluated the slow way: four separate
            // convolutions summed, then batch norm and activation.
            let t1 = Instant::now();
            let mut sum = Tensor4::zeros(shape.batch, shape.out_channels, shape.height, shape.width)?;
            for conv in branches.branch_convs()? {
                sum = sum.add(&conv2d(&x, &conv)?)?;
            }
            let y = activation(
                &batchnorm_infer(&sum, branches.bn())?,
                branches.activation(),
            );
            train_ns.push(t1.elapsed().as_nanos());
            std::hint::black_box(y);
        }
        let median_fused = median_ns(&mut fused_ns);
        let median_train = median_ns(&mut train_ns);
        shape_reports.push(BenchShapeReport {
            shape: token.trim().to_string(),
            macs,
            mac_ratio_train_over_fused: macs.train_composite as f64 / macs.fused as f64,
            median_fused_ns: median_fused,
            median_train_ns: median_train,
            fused_not_slower: median_fused <= median_train,
        });
    }

    // Space-to-depth cost comparison rides along for reference.
    let spd = spd_flop_report(1, 8, 16, 32, 32)?;
    let report = serde_json::json!({
        "shapes": shape_reports,
        "reps": args.reps,
        "spd_flops": spd,
    });
    println!("{}", to_json(&report)?);
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("bench.json"), to_json(&report)?)?;
        write_manifest(out, "bench", &args)?;
    }
    Ok(Outcome::Success)
}

fn regress(mut args: RegressArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply("pairs", &mut args.pairs)?;
    overlay.apply("seed", &mut args.seed)?;
    overlay.apply("lr", &mut args.lr)?;
    overlay.apply("steps", &mut args.steps)?;
    overlay.apply("alpha", &mut args.alpha)?;
    overlay.apply("delta", &mut args.delta)?;
    overlay.apply("d", &mut args.d)?;
    overlay.apply("u", &mut args.u)?;
    overlay.apply("theta", &mut args.theta)?;
    overlay.apply("min_iou", &mut args.min_iou)?;
    overlay.apply_opt("out", &mut args.out)?;
    if args.pairs < 1 {
        return Err(Error::Contract("regress requires pairs >= 1".into()));
    }

    let cfg = RegressConfig {
        steps: args.steps,
        lr: args.lr,
        focaler: FocalerConfig::new(args.d, args.u)?,
        siou: SiouConfig::new(args.theta, 1e-4, false)?,
        wise: WiseConfig::new(args.alpha, args.delta)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pairs: Vec<_> = (0..args.pairs)
        .map(|_| random_box_pair(&mut rng, args.min_iou))
        .collect();
    let report = regress_demo(&pairs, &cfg, WiseState::new())?;

    let mut csv = String::from("step,mean_loss,mean_iou,ema_mean,mean_gamma\n");
    for s in &report.trajectory {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.step, s.mean_loss, s.mean_iou, s.ema_mean, s.mean_gamma
        ));
    }

    let summary = serde_json::json!({
        "pairs": args.pairs,
        "steps": report.steps,
        "lr": report.lr,
        "final_mean_loss": report.final_mean_loss,
        "final_mean_iou": report.final_mean_iou,
        "diverged": report.diverged,
    });

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("trajectory.csv"), csv)?;
        fs::write(out.join("summary.json"), to_json(&summary)?)?;
        write_manifest(out, "regress", &args)?;
    } else {
        // Without an output directory the trajectory precedes the summary.
        print!("{csv}");
    }
    println!("{}", to_json(&summary)?);
    Ok(Outcome::Success)
}

fn gamma_curve(mut args: GammaCurveArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply("alpha", &mut args.alpha)?;
    overlay.apply("delta", &mut args.delta)?;
    overlay.apply("beta_max", &mut args.beta_max)?;
    overlay.apply("samples", &mut args.samples)?;
    overlay.apply_opt("out", &mut args.out)?;
    if args.samples < 2 {
        return Err(Error::Contract("gamma-curve requires samples >= 2".into()));
    }
    if args.beta_max <= 0.0 || !args.beta_max.is_finite() {
        return Err(Error::Contract("beta_max must be positive".into()));
    }

    let cfg = WiseConfig::new(args.alpha, args.delta)?;
    let mut csv = String::from("beta,gamma\n");
    for i in 0..args.samples {
        let beta = args.beta_max * i as f64 / (args.samples - 1) as f64;
        csv.push_str(&format!("{},{}\n", beta, wise_gamma(beta, &cfg)));
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("gamma-curve.csv"), &csv)?;
        write_manifest(out, "gamma-curve", &args)?;
    }
    print!("{csv}");
    Ok(Outcome::Success)
}

fn featmap(mut args: FeatmapArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply("seed", &mut args.seed)?;
    overlay.apply("channels", &mut args.channels)?;
    overlay.apply("size", &mut args.size)?;
    overlay.apply("k", &mut args.k)?;
    overlay.apply_opt("out", &mut args.out)?;
    let out = args
        .out
        .clone()
        .ok_or_else(|| Error::Malformed("featmap requires --out".into()))?;
    if args.channels < 2 {
        return Err(Error::Contract("featmap requires channels >= 2".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let params = CsdmamParams::random(args.channels, args.k, &mut rng)?;
    let x = Tensor4::random(1, args.channels, args.size, args.size, -1.0, 1.0, &mut rng)?;
    let trace = csdmam_forward_traced(&x, &params)?;

    fs::create_dir_all(&out)?;
    for (tap, tensor) in [
        ("input", &x),
        ("branch", &trace.branch_out),
        ("premerge", &trace.pre_merge),
        ("output", &trace.output),
    ] {
        fs::write(out.join(format!("{tap}.pgm")), channel_mean_pgm(tensor, 0)?)?;
    }
    write_manifest(&out, "featmap", &args)?;
    println!(
        "{}",
        to_json(&serde_json::json!({
            "taps": ["input", "branch", "premerge", "output"],
            "shape": trace.output.shape(),
            "out": out,
        }))?
    );
    Ok(Outcome::Success)
}

fn pipeline(mut args: PipelineArgs, overlay: &ConfigOverlay) -> Result<Outcome> {
    overlay.apply("seed", &mut args.seed)?;
    overlay.apply("images", &mut args.images)?;
    overlay.apply("jitter", &mut args.jitter)?;
    overlay.apply("score_noise", &mut args.score_noise)?;
    overlay.apply("image_size", &mut args.image_size)?;
    overlay.apply("stack_input", &mut args.stack_input)?;
    overlay.apply_opt("out", &mut args.out)?;

    let cfg = PipelineConfig {
        images: args.images,
        seed: args.seed,
        jitter: args.jitter,
        score_noise: args.score_noise,
        stack_input: args.stack_input,
        scene: SceneSpec {
            image_size: args.image_size,
            seed: args.seed,
            ..Default::default()
        },
    };
    let report = run_pipeline(&cfg, args.out.as_deref())?;
    println!("{}", to_json(&report)?);
    if let Some(out) = &args.out {
        write_manifest(out, "pipeline", &args)?;
    }
    let _ = std::io::stdout().flush();
    Ok(Outcome::Success)
}
