//! skywatch command line: synth, train-regressor, compensate,
//! train-detector, detect, eval. Every command writes a run manifest next to
//! its output. Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod manifest;

use manifest::Manifest;
use skywatch::cube_classifier::{train_adaboost, AdaBoostConfig, CubeClassifier, FeatureMode};
use skywatch::detector::{
    build_training_cubes, detect, read_detections_csv, write_detections_csv, DetectorConfig,
    TrainSetConfig,
};
use skywatch::evalkit::{
    avep_by_size, average_precision, pr_curve, read_ground_truth_csv, write_ground_truth_csv,
    write_pr_csv,
};
use skywatch::imagecore::{load_frame_sequence, save_frame_pgm, Frame};
use skywatch::motion_comp::{compensate_cube, CubeDims};
use skywatch::parallel::resolve_threads;
use skywatch::rng::Rng;
use skywatch::shift_regressor::{
    make_shift_samples, train_regressor, RegressorConfig, SampleParams, ShiftRegressor,
};
use skywatch::synthgen::{generate_sequence, SynthConfig};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "skywatch — small flying object detection in video

usage: skywatch <command> [args] [--flag=value ...]

commands:
  synth <config.cfg> <outdir>
      render a synthetic sequence: frames (PGM), gt.csv, manifest
      flags: --threads=N
  train-regressor <frames_dir> <gt.csv> <out.model>
      train the boosted-tree shift regressors from annotated boxes
      flags: --pattern=*.pgm --seed=0 --rounds=200 --depth=4 --shrinkage=0.1
             --min-leaf=5 --shifts-per-box=8 --max-shift=<patch/2>
             --apparent=40,40
  compensate <frames_dir> <gt.csv> <model> <report.txt>
      stabilize cubes anchored near ground truth; report centering errors
      flags: --pattern=*.pgm --eps=1.0 --max-iter=10 --seed=0 --shift=10
             --max-cubes=500
  train-detector <frames_dir> <gt.csv> <regressor.model> <out.model>
      train the AdaBoost cube classifier
      flags: --pattern=*.pgm --no-compensation --feature-mode=energy|3d-hog
             --rounds=100 --pool=2000 --negatives=600 --neg-max-iou=0.2
             --apparent-target=36 --jitter=4 --seed=0 --threads=N
             --scale-step=0.8 --min-side=40 --no-upsample
  detect <frames_dir> <regressor.model> <detector.model> <out.csv>
      run the multi-scale sliding-window detector
      flags: --pattern=*.pgm --no-compensation --threshold=0.5 --stride=8
             --scale-step=0.8 --min-side=40 --nms-overlap=0.3 --no-upsample
             --eps=1.0 --max-iter=10 --threads=N
  eval <detections.csv> <gt.csv>
      precision-recall evaluation; prints `AveP <value>`
      flags: --iou=0.5 --by-size[=e0,e1,...] --pr-out=curve.csv

SKYWATCH_THREADS is used when --threads is not given.
";

enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

impl From<skywatch::Error> for CliError {
    fn from(e: skywatch::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn usage_err(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Args {
    positional: Vec<String>,
    flags: HashMap<String, String>,
}

impl Args {
    fn parse(raw: &[String], allowed: &[&str]) -> CliResult<Self> {
        let mut positional = Vec::new();
        let mut flags = HashMap::new();
        for a in raw {
            if let Some(body) = a.strip_prefix("--") {
                let (key, value) = match body.split_once('=') {
                    Some((k, v)) => (k.to_owned(), v.to_owned()),
                    None => (body.to_owned(), "true".to_owned()),
                };
                if !allowed.contains(&key.as_str()) {
                    return Err(usage_err(format!("unknown flag --{}", key)));
                }
                flags.insert(key, value);
            } else {
                positional.push(a.clone());
            }
        }
        Ok(Args { positional, flags })
    }

    fn expect_positional(&self, n: usize, names: &str) -> CliResult<()> {
        if self.positional.len() != n {
            return Err(usage_err(format!(
                "expected {} arguments: {} (got {})",
                n,
                names,
                self.positional.len()
            )));
        }
        Ok(())
    }

    fn path(&self, i: usize) -> PathBuf {
        PathBuf::from(&self.positional[i])
    }

    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.flags.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| usage_err(format!("bad value '{}' for --{}", v, key))),
        }
    }

    fn get_opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.flags.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| usage_err(format!("bad value '{}' for --{}", v, key))),
        }
    }

    fn get_pair(&self, key: &str, default: (f64, f64)) -> CliResult<(f64, f64)> {
        match self.flags.get(key) {
            None => Ok(default),
            Some(v) => {
                let (a, b) = v
                    .split_once(',')
                    .ok_or_else(|| usage_err(format!("--{} expects lo,hi", key)))?;
                let lo = a
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| usage_err(format!("bad value '{}' for --{}", v, key)))?;
                let hi = b
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| usage_err(format!("bad value '{}' for --{}", v, key)))?;
                Ok((lo, hi))
            }
        }
    }

    fn has(&self, key: &str) -> bool {
        self.flags.contains_key(key)
    }

    fn threads(&self) -> CliResult<usize> {
        Ok(resolve_threads(self.get_opt::<usize>("threads")?))
    }
}

fn load_frames(dir: &Path, args: &Args) -> CliResult<Vec<Frame>> {
    let pattern = args.flags.get("pattern").cloned().unwrap_or_else(|| "*".to_owned());
    Ok(load_frame_sequence(dir, &pattern)?)
}

fn detector_config_from(args: &Args) -> CliResult<DetectorConfig> {
    let mut cfg = DetectorConfig {
        stride: args.get("stride", 8usize)?,
        scale_step: args.get("scale-step", 0.8f64)?,
        min_side: args.get("min-side", 40usize)?,
        threshold: args.get("threshold", 0.5f64)?,
        nms_overlap: args.get("nms-overlap", 0.3f64)?,
        compensation: !args.has("no-compensation"),
        upsample: !args.has("no-upsample"),
        eps: args.get("eps", 1.0f64)?,
        max_iter: args.get("max-iter", 10usize)?,
        threads: args.threads()?,
        ..DetectorConfig::default()
    };
    cfg.dims = CubeDims::default();
    Ok(cfg)
}

fn cmd_synth(args: &Args) -> CliResult<()> {
    args.expect_positional(2, "<config.cfg> <outdir>")?;
    let config_path = args.path(0);
    let outdir = args.path(1);
    let threads = args.threads()?;
    let config = SynthConfig::load(&config_path)?;
    let output = generate_sequence(&config, threads)?;
    std::fs::create_dir_all(&outdir)
        .map_err(|e| CliError::Runtime(format!("{}: {}", outdir.display(), e)))?;
    for frame in &output.frames {
        save_frame_pgm(frame, &outdir.join(format!("frame_{:05}.pgm", frame.index)))?;
    }
    let gt_path = outdir.join("gt.csv");
    write_ground_truth_csv(&gt_path, &output.ground_truth)?;
    let mut m = Manifest::new("synth");
    m.set("seed", config.seed);
    m.input_file("config", &config_path)?;
    for line in config.to_config_string().lines() {
        if let Some((k, v)) = line.split_once('=') {
            m.set(&format!("config.{}", k), v);
        }
    }
    m.set("frames_written", output.frames.len());
    m.output_file("gt", &gt_path)?;
    m.write(&outdir.join("manifest.txt"))?;
    println!(
        "synth: {} frames, {} ground-truth boxes -> {}",
        output.frames.len(),
        output.ground_truth.len(),
        outdir.display()
    );
    Ok(())
}

fn cmd_train_regressor(args: &Args) -> CliResult<()> {
    args.expect_positional(3, "<frames_dir> <gt.csv> <out.model>")?;
    let frames_dir = args.path(0);
    let gt_path = args.path(1);
    let out_path = args.path(2);
    let seed: u64 = args.get("seed", 0)?;
    let config = RegressorConfig {
        rounds: args.get("rounds", 200usize)?,
        max_depth: args.get("depth", 4usize)?,
        shrinkage: args.get("shrinkage", 0.1f64)?,
        min_leaf: args.get("min-leaf", 5usize)?,
    };
    let shifts_per_box: usize = args.get("shifts-per-box", 8)?;
    let params = SampleParams {
        max_shift: args.get_opt::<f64>("max-shift")?,
        apparent_size: args.get_pair("apparent", (40.0, 40.0))?,
        ..SampleParams::default()
    };
    let frames = load_frames(&frames_dir, args)?;
    let annotations = read_ground_truth_csv(&gt_path)?;
    let samples = make_shift_samples(&annotations, &frames, seed, shifts_per_box, &params)?;
    let (model, report) = train_regressor(&samples, &config)?;
    model.save(&out_path)?;
    let mut m = Manifest::new("train-regressor");
    m.set("seed", seed);
    m.set("config.rounds", config.rounds);
    m.set("config.max_depth", config.max_depth);
    m.set("config.shrinkage", config.shrinkage);
    m.set("config.min_leaf", config.min_leaf);
    m.set("config.shifts_per_box", shifts_per_box);
    m.set("samples", samples.len());
    m.input_dir("frames", &frames_dir)?;
    m.input_file("gt", &gt_path)?;
    m.output_file("model", &out_path)?;
    m.write(&out_path.with_extension("manifest.txt"))?;
    println!(
        "train-regressor: {} samples, train MSE h={:.4} v={:.4} -> {}",
        samples.len(),
        report.mse_horizontal.last().unwrap(),
        report.mse_vertical.last().unwrap(),
        out_path.display()
    );
    Ok(())
}

fn cmd_compensate(args: &Args) -> CliResult<()> {
    args.expect_positional(4, "<frames_dir> <gt.csv> <model> <report.txt>")?;
    let frames_dir = args.path(0);
    let gt_path = args.path(1);
    let model_path = args.path(2);
    let report_path = args.path(3);
    let eps: f64 = args.get("eps", 1.0)?;
    let max_iter: usize = args.get("max-iter", 10)?;
    let seed: u64 = args.get("seed", 0)?;
    let shift: f64 = args.get("shift", 10.0)?;
    let max_cubes: usize = args.get("max-cubes", 500)?;

    let frames = load_frames(&frames_dir, args)?;
    let gts = read_ground_truth_csv(&gt_path)?;
    let model = ShiftRegressor::load(&model_path)?;
    let dims = CubeDims::default();
    let mut rng = Rng::derive(seed, 0xC0DE);

    let mut lines = String::new();
    let mut n = 0usize;
    let mut converged_slices = 0usize;
    let mut total_slices = 0usize;
    let mut pre_sum = 0.0;
    let mut post_sum = 0.0;
    let mut reduced_2x = 0usize;
    for gt in &gts {
        if n >= max_cubes {
            break;
        }
        if gt.frame < dims.s_t - 1 || gt.frame >= frames.len() {
            continue;
        }
        // Shift by a distance of up to `shift`, uniform over the disc.
        let radius = shift * rng.next_f64().sqrt();
        let angle = rng.range_f64(0.0, std::f64::consts::TAU);
        let anchor = (gt.center.0 + radius * angle.sin(), gt.center.1 + radius * angle.cos());
        let cube = compensate_cube(&frames, anchor, gt.frame, dims, &model, eps, max_iter)?;
        let mut pre = 0.0;
        let mut post = 0.0;
        for (k, slice) in cube.slices.iter().enumerate() {
            let f = gt.frame + 1 + k - dims.s_t;
            // Nearest ground truth of the slice frame to this cube's anchor.
            let truth = gts
                .iter()
                .filter(|g| g.frame == f)
                .min_by(|a, b| {
                    let da = (a.center.0 - gt.center.0).powi(2)
                        + (a.center.1 - gt.center.1).powi(2);
                    let db = (b.center.0 - gt.center.0).powi(2)
                        + (b.center.1 - gt.center.1).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
                .map(|g| g.center)
                .unwrap_or(gt.center);
            pre += ((anchor.0 - truth.0).powi(2) + (anchor.1 - truth.1).powi(2)).sqrt();
            let c = slice.source_center;
            post += ((c.0 - truth.0).powi(2) + (c.1 - truth.1).powi(2)).sqrt();
        }
        pre /= dims.s_t as f64;
        post /= dims.s_t as f64;
        let conv = cube.converged.iter().filter(|c| **c).count();
        converged_slices += conv;
        total_slices += dims.s_t;
        pre_sum += pre;
        post_sum += post;
        if post * 2.0 <= pre {
            reduced_2x += 1;
        }
        writeln!(
            lines,
            "{},{:.3},{:.3},{:.4},{:.4},{}",
            gt.frame, anchor.1, anchor.0, pre, post, conv
        )
        .expect("string write");
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Runtime("no usable ground truth for compensation".into()));
    }
    let mut report = String::new();
    writeln!(report, "# skywatch compensate report").expect("string write");
    writeln!(report, "cubes={}", n).expect("string write");
    writeln!(report, "converged_slice_fraction={:.6}", converged_slices as f64 / total_slices as f64)
        .expect("string write");
    writeln!(report, "mean_pre_error={:.6}", pre_sum / n as f64).expect("string write");
    writeln!(report, "mean_post_error={:.6}", post_sum / n as f64).expect("string write");
    writeln!(report, "fraction_2x_reduction={:.6}", reduced_2x as f64 / n as f64)
        .expect("string write");
    writeln!(report, "frame,anchor_x,anchor_y,pre_error,post_error,converged_slices")
        .expect("string write");
    report.push_str(&lines);
    std::fs::write(&report_path, report)
        .map_err(|e| CliError::Runtime(format!("{}: {}", report_path.display(), e)))?;

    let mut m = Manifest::new("compensate");
    m.set("seed", seed);
    m.set("config.eps", eps);
    m.set("config.max_iter", max_iter);
    m.set("config.shift", shift);
    m.input_dir("frames", &frames_dir)?;
    m.input_file("gt", &gt_path)?;
    m.input_file("regressor", &model_path)?;
    m.output_file("report", &report_path)?;
    m.write(&report_path.with_extension("manifest.txt"))?;
    println!(
        "compensate: {} cubes, mean error {:.3} -> {:.3} px, 2x reduction on {:.1}%",
        n,
        pre_sum / n as f64,
        post_sum / n as f64,
        100.0 * reduced_2x as f64 / n as f64
    );
    Ok(())
}

fn cmd_train_detector(args: &Args) -> CliResult<()> {
    args.expect_positional(4, "<frames_dir> <gt.csv> <regressor.model> <out.model>")?;
    let frames_dir = args.path(0);
    let gt_path = args.path(1);
    let regressor_path = args.path(2);
    let out_path = args.path(3);
    let feature_mode = match args.flags.get("feature-mode").map(|s| s.as_str()) {
        None | Some("energy") => FeatureMode::GradientEnergy,
        Some("3d-hog") => FeatureMode::Hog3d,
        Some(other) => return Err(usage_err(format!("unknown feature mode '{}'", other))),
    };
    let det_cfg = detector_config_from(args)?;
    let train_cfg = TrainSetConfig {
        apparent_target: args.get("apparent-target", 36.0f64)?,
        positive_level_radius: args.get("level-radius", 1usize)?,
        positive_jitter: args.get("jitter", 4.0f64)?,
        negatives: args.get("negatives", 600usize)?,
        negative_max_iou: args.get("neg-max-iou", 0.2f64)?,
        seed: args.get("seed", 0u64)?,
    };
    let boost_cfg = AdaBoostConfig {
        rounds: args.get("rounds", 100usize)?,
        pool_size: args.get("pool", 2000usize)?,
        seed: args.get("seed", 0u64)?,
        feature_mode,
        threads: det_cfg.threads,
        ..AdaBoostConfig::default()
    };

    let frames = load_frames(&frames_dir, args)?;
    let gts = read_ground_truth_csv(&gt_path)?;
    let regressor = ShiftRegressor::load(&regressor_path)?;
    let (cubes, labels) =
        build_training_cubes(&frames, &gts, &regressor, &det_cfg, &train_cfg)?;
    let (model, report) = train_adaboost(&cubes, &labels, &boost_cfg)?;
    model.save(&out_path)?;

    let mut m = Manifest::new("train-detector");
    m.set("seed", boost_cfg.seed);
    m.set("config.rounds", boost_cfg.rounds);
    m.set("config.pool_size", boost_cfg.pool_size);
    m.set(
        "config.feature_mode",
        match feature_mode {
            FeatureMode::GradientEnergy => "energy",
            FeatureMode::Hog3d => "3d-hog",
        },
    );
    m.set("config.compensation", det_cfg.compensation);
    m.set("config.negatives", train_cfg.negatives);
    m.set("training_cubes", cubes.len());
    m.input_dir("frames", &frames_dir)?;
    m.input_file("gt", &gt_path)?;
    m.input_file("regressor", &regressor_path)?;
    m.output_file("model", &out_path)?;
    m.write(&out_path.with_extension("manifest.txt"))?;
    println!(
        "train-detector: {} cubes ({} positive), {} rounds, final training error {:.4} -> {}",
        cubes.len(),
        labels.iter().filter(|l| **l > 0).count(),
        report.weighted_errors.len(),
        report.training_errors.last().unwrap(),
        out_path.display()
    );
    Ok(())
}

fn cmd_detect(args: &Args) -> CliResult<()> {
    args.expect_positional(4, "<frames_dir> <regressor.model> <detector.model> <out.csv>")?;
    let frames_dir = args.path(0);
    let regressor_path = args.path(1);
    let detector_path = args.path(2);
    let out_path = args.path(3);
    let config = detector_config_from(args)?;
    let frames = load_frames(&frames_dir, args)?;
    let regressor = ShiftRegressor::load(&regressor_path)?;
    let classifier = CubeClassifier::load(&detector_path)?;
    let detections = detect(&frames, &regressor, &classifier, &config)?;
    write_detections_csv(&out_path, &detections)?;

    let mut m = Manifest::new("detect");
    m.set("config.threshold", config.threshold);
    m.set("config.stride", config.stride);
    m.set("config.scale_step", config.scale_step);
    m.set("config.min_side", config.min_side);
    m.set("config.nms_overlap", config.nms_overlap);
    m.set("config.compensation", config.compensation);
    m.set("config.upsample", config.upsample);
    m.set("detections", detections.len());
    m.input_dir("frames", &frames_dir)?;
    m.input_file("regressor", &regressor_path)?;
    m.input_file("detector", &detector_path)?;
    m.output_file("detections", &out_path)?;
    m.write(&out_path.with_extension("manifest.txt"))?;
    println!("detect: {} detections -> {}", detections.len(), out_path.display());
    Ok(())
}

fn cmd_eval(args: &Args) -> CliResult<()> {
    args.expect_positional(2, "<detections.csv> <gt.csv>")?;
    let det_path = args.path(0);
    let gt_path = args.path(1);
    let iou: f64 = args.get("iou", 0.5)?;
    let detections = read_detections_csv(&det_path)?;
    let gts = read_ground_truth_csv(&gt_path)?;
    let curve = pr_curve(&detections, &gts, iou)?;
    let ap = average_precision(&curve);
    println!("AveP {:.6}", ap);
    if let Some(spec) = args.flags.get("by-size") {
        let edges: Vec<f64> = if spec == "true" {
            vec![10.0, 35.0, 75.0, 100.0]
        } else {
            let parsed: Result<Vec<f64>, _> =
                spec.split(',').map(|s| s.trim().parse::<f64>()).collect();
            parsed.map_err(|_| usage_err(format!("bad value '{}' for --by-size", spec)))?
        };
        for bin in avep_by_size(&detections, &gts, &edges, iou)? {
            println!("AveP[{},{}) {:.6} n_gt={}", bin.lo, bin.hi, bin.avep, bin.n_ground_truth);
        }
    }
    if let Some(out) = args.flags.get("pr-out") {
        write_pr_csv(Path::new(out), &curve)?;
    }
    let mut m = Manifest::new("eval");
    m.set("config.iou", iou);
    m.set("avep", format!("{:.6}", ap));
    m.input_file("detections", &det_path)?;
    m.input_file("gt", &gt_path)?;
    m.write(&det_path.with_extension("eval.manifest.txt"))?;
    Ok(())
}

fn dispatch(command: &str, raw: &[String]) -> CliResult<()> {
    match command {
        "synth" => cmd_synth(&Args::parse(raw, &["threads"])?),
        "train-regressor" => cmd_train_regressor(&Args::parse(
            raw,
            &[
                "pattern",
                "seed",
                "rounds",
                "depth",
                "shrinkage",
                "min-leaf",
                "shifts-per-box",
                "max-shift",
                "apparent",
            ],
        )?),
        "compensate" => cmd_compensate(&Args::parse(
            raw,
            &["pattern", "eps", "max-iter", "seed", "shift", "max-cubes"],
        )?),
        "train-detector" => cmd_train_detector(&Args::parse(
            raw,
            &[
                "pattern",
                "no-compensation",
                "feature-mode",
                "rounds",
                "pool",
                "negatives",
                "neg-max-iou",
                "apparent-target",
                "level-radius",
                "jitter",
                "seed",
                "threads",
                "scale-step",
                "min-side",
                "no-upsample",
                "stride",
                "threshold",
                "nms-overlap",
                "eps",
                "max-iter",
            ],
        )?),
        "detect" => cmd_detect(&Args::parse(
            raw,
            &[
                "pattern",
                "no-compensation",
                "threshold",
                "stride",
                "scale-step",
                "min-side",
                "nms-overlap",
                "no-upsample",
                "eps",
                "max-iter",
                "threads",
            ],
        )?),
        "eval" => cmd_eval(&Args::parse(raw, &["iou", "by-size", "pr-out"])?),
        other => Err(usage_err(format!("unknown command '{}'", other))),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.is_empty() {
        eprintln!("error: missing command\n\n{}", USAGE);
        return ExitCode::from(2);
    }
    if argv[0] == "--help" || argv[0] == "-h" || argv[0] == "help" {
        print!("{}", USAGE);
        return ExitCode::SUCCESS;
    }
    match dispatch(&argv[0], &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {}\n\n{}", msg, USAGE);
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(1)
        }
    }
}
