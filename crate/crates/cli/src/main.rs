use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use mmod::dataset::{load_dataset, mirror_augment, save_dataset, LabeledImage};
use mmod::detector::{detect, sweep_thresholds, Model, ScanOptions, DEFAULT_MAX_CANDIDATES};
use mmod::features::{FeatureMapConfig, FeatureMapRegistry, GrayImage};
use mmod::geom::{LossWeights, OverlapRule, DEFAULT_OVERLAP};
use mmod::persistence::{load_model, save_model};
use mmod::synthetic::{square_corpus, SquaresConfig};
use mmod::trainer::{train, TrainParams};
use mmod::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mmod",
    version,
    about = "Train and run max-margin sliding-window detectors"
)]
struct Cli {
    /// Worker threads for scanning (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector from a labeled manifest.
    Train(TrainArgs),
    /// Run a model over images and print detections.
    Detect(DetectArgs),
    /// Sweep detection thresholds over a labeled manifest.
    Eval(EvalArgs),
    /// Write a generated corpus of bright squares with its manifest.
    Synth(SynthArgs),
    /// List the registered feature maps.
    Maps,
}

#[derive(Args)]
struct ScanArgs {
    /// Overlap ratio above which two boxes are considered the same object.
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    overlap: f64,
    /// Per-image cap on scored candidate windows.
    #[arg(long, default_value_t = DEFAULT_MAX_CANDIDATES)]
    max_candidates: usize,
}

impl ScanArgs {
    fn options(&self) -> Result<ScanOptions, Failure> {
        Ok(ScanOptions {
            overlap: OverlapRule::new(self.overlap).map_err(Failure::from)?,
            max_candidates: self.max_candidates,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "bovw")]
    feature_map: String,
    /// Detection window as WIDTHxHEIGHT.
    #[arg(long, default_value = "80x80", value_parser = parse_window)]
    window: (u32, u32),
    #[arg(long, default_value_t = 25.0)]
    c: f64,
    /// Stopping tolerance as a fraction of C.
    #[arg(long, default_value_t = 0.15)]
    eps_frac: f64,
    #[arg(long, default_value_t = 2.0)]
    l_miss: f64,
    #[arg(long, default_value_t = 1.0)]
    l_fa: f64,
    /// Add the horizontal mirror of every training image.
    #[arg(long)]
    mirror: bool,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    upsample: u32,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seed of the hash planes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Window step in level pixels.
    #[arg(long)]
    stride: Option<u32>,
    /// Cell side of the hog-filter map.
    #[arg(long)]
    cell_size: Option<u32>,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// Upper limit on the inner QP tolerance.
    #[arg(long, default_value_t = 0.01)]
    qp_tol: f64,
    #[command(flatten)]
    scan: ScanArgs,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    threshold: f64,
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Threshold range LO:HI:STEP, inclusive.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true, conflicts_with = "auto")]
    thresholds: Option<ThresholdRange>,
    /// Use the scores of the detections themselves as thresholds.
    #[arg(long)]
    auto: bool,
    /// CSV destination (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scan: ScanArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 40)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_window(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("bad width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("bad height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("window dimensions must be positive".into());
    }
    Ok((w, h))
}

#[derive(Clone)]
struct ThresholdRange(Vec<f64>);

fn parse_range(s: &str) -> Result<ThresholdRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(format!("expected LO:HI:STEP, got '{s}'"));
    };
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad number '{v}': {e}"))
    };
    let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
        return Err("range bounds must be finite".into());
    }
    if !(step > 0.0) {
        return Err("step must be positive".into());
    }
    if lo > hi {
        return Err(format!("empty threshold range {lo}:{hi}"));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err("threshold range has too many steps".into());
    }
    Ok(ThresholdRange(
        (0..=n).map(|k| lo + k as f64 * step).collect(),
    ))
}

struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl Failure {
    fn usage(err: anyhow::Error) -> Self {
        Self {
            code: EXIT_USAGE,
            err,
        }
    }

    fn data(err: anyhow::Error) -> Self {
        Self {
            code: EXIT_DATA,
            err,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Precondition(_) => EXIT_USAGE,
            Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
            _ => EXIT_DATA,
        };
        Self {
            code,
            err: e.into(),
        }
    }
}

fn print_config(title: &str, fields: &[(&str, String)]) {
    eprintln!("{title} configuration:");
    for (k, v) in fields {
        eprintln!("  {k} = {v}");
    }
}

fn scan_fields(opts: &ScanOptions) -> Vec<(&'static str, String)> {
    vec![
        ("overlap", opts.overlap.threshold.to_string()),
        ("max_candidates", opts.max_candidates.to_string()),
    ]
}

fn model_fields(cfg: &FeatureMapConfig) -> Vec<(&'static str, String)> {
    vec![
        ("feature_map", cfg.kind.name().to_string()),
        (
            "window",
            format!("{}x{}", cfg.window_width, cfg.window_height),
        ),
        ("dim", cfg.dim().to_string()),
        ("grid", format!("{}x{}", cfg.grid.0, cfg.grid.1)),
        ("hash_seed", cfg.hash_seed.to_string()),
        ("hash_planes", cfg.lsh_planes.len().to_string()),
        ("cell_size", cfg.cell_size.to_string()),
        (
            "pyramid_downsample",
            format!("{}/{}", cfg.pyramid_downsample.0, cfg.pyramid_downsample.1),
        ),
        ("min_pyramid_pixels", cfg.min_pyramid_pixels.to_string()),
        ("upsample", cfg.upsample_factor.to_string()),
        ("stride", cfg.stride.to_string()),
    ]
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let registry = FeatureMapRegistry::default();
    let (w, h) = args.window;
    let mut cfg = registry.default_config(&args.feature_map, w, h, args.seed)?;
    cfg.upsample_factor = args.upsample;
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    if let Some(c) = args.cell_size {
        cfg.cell_size = c;
    }
    cfg.validate()?;
    let params = TrainParams {
        c: args.c,
        eps: args.eps_frac * args.c,
        loss: LossWeights::new(args.l_miss, args.l_fa)?,
        eps_qp_floor: args.qp_tol,
        max_iters: args.max_iters,
        scan: args.scan.options()?,
        ..TrainParams::default()
    };
    params.validate()?;

    let mut fields = vec![
        ("manifest", args.manifest.display().to_string()),
        ("c", params.c.to_string()),
        ("eps_frac", args.eps_frac.to_string()),
        ("eps", params.eps.to_string()),
        ("l_miss", params.loss.l_miss.to_string()),
        ("l_fa", params.loss.l_fa.to_string()),
        ("mirror", args.mirror.to_string()),
        ("qp_tol", params.eps_qp_floor.to_string()),
        ("qp_tol_fraction", params.eps_qp_frac.to_string()),
        ("max_iters", params.max_iters.to_string()),
        ("plane_eviction_age", params.plane_eviction_age.to_string()),
        ("threads", rayon::current_num_threads().to_string()),
        ("out", args.out.display().to_string()),
    ];
    fields.extend(model_fields(&cfg));
    fields.extend(scan_fields(&params.scan));
    print_config("train", &fields);

    let mut dataset = load_dataset(&args.manifest, &params.scan.overlap)?;
    if args.mirror {
        dataset = mirror_augment(dataset);
    }
    info!("training on {} images", dataset.len());
    let (model, report) = train(&dataset, &cfg, &params)?;
    save_model(&model, &args.out)?;
    if let Some(path) = &args.report {
        let write = || -> io::Result<()> {
            let mut f = BufWriter::new(fs::File::create(path)?);
            report.write_csv(&mut f)?;
            f.flush()
        };
        write()
            .with_context(|| format!("writing report {}", path.display()))
            .map_err(Failure::data)?;
    }
    let last = report.records.last().expect("at least one iteration");
    eprintln!(
        "converged after {} iterations: J {} gap {} misses {} false alarms {}",
        report.records.len(),
        last.j,
        last.gap,
        last.misses,
        last.false_alarms
    );
    Ok(())
}

fn cmd_detect(args: &DetectArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let opts = args.scan.options()?;
    let mut fields = vec![
        ("model", args.model.display().to_string()),
        ("threshold", args.threshold.to_string()),
    ];
    fields.extend(model_fields(&model.feature_cfg));
    fields.extend(scan_fields(&opts));
    print_config("detect", &fields);

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut failed = 0;
    for path in &args.images {
        let dets =
            GrayImage::load(path).and_then(|img| detect(&img, &model, args.threshold, &opts));
        match dets {
            Ok(dets) => {
                for d in dets {
                    writeln!(
                        out,
                        "{} {} {} {} {} {}",
                        path.display(),
                        d.rect.left,
                        d.rect.top,
                        d.rect.width,
                        d.rect.height,
                        d.score
                    )
                    .map_err(|e| Failure::data(e.into()))?;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("error: {}: {e}", path.display());
            }
        }
    }
    out.flush().map_err(|e| Failure::data(e.into()))?;
    if failed > 0 {
        return Err(Failure::data(anyhow!(
            "{failed} image(s) could not be processed"
        )));
    }
    Ok(())
}

/// Thresholds just below each distinct detection score, capped at 200 values.
fn auto_thresholds(
    data: &[LabeledImage],
    model: &Model,
    opts: &ScanOptions,
) -> Result<Vec<f64>, Failure> {
    let mut scores = Vec::new();
    for li in data {
        for d in detect(&li.image, model, -1.0, opts)? {
            scores.push(d.score);
        }
    }
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    if scores.len() > 200 {
        let n = scores.len();
        scores = (0..200).map(|k| scores[k * (n - 1) / 199]).collect();
    }
    let mut t: Vec<f64> = vec![-1.0];
    t.extend(scores.iter().map(|s| s - 1e-12));
    t.sort_by(f64::total_cmp);
    t.dedup();
    Ok(t)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let opts = args.scan.options()?;
    let mut fields = vec![
        ("model", args.model.display().to_string()),
        ("manifest", args.manifest.display().to_string()),
        (
            "thresholds",
            match &args.thresholds {
                Some(ThresholdRange(t)) => {
                    format!("{} values from {} to {}", t.len(), t[0], t[t.len() - 1])
                }
                None => "auto".to_string(),
            },
        ),
    ];
    fields.extend(model_fields(&model.feature_cfg));
    fields.extend(scan_fields(&opts));
    print_config("eval", &fields);

    let data = load_dataset(&args.manifest, &opts.overlap)?;
    let thresholds = match (&args.thresholds, args.auto) {
        (Some(ThresholdRange(t)), _) => t.clone(),
        (None, true) => auto_thresholds(&data, &model, &opts)?,
        (None, false) => {
            return Err(Failure::usage(anyhow!(
                "one of --thresholds or --auto is required"
            )))
        }
    };
    let table = sweep_thresholds(&data, &model, &thresholds, &opts)?;

    let mut text = format!(
        "# total_windows={} total_truth={} images={}\nthreshold,true_positives,false_positives,missed,recall,fppw\n",
        table.total_windows,
        table.total_truth,
        data.len()
    );
    for r in &table.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{:e}\n",
            r.threshold, r.true_positives, r.false_positives, r.missed, r.recall, r.fppw
        ));
    }
    match &args.out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::data)?,
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::data(e.into()))?,
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let cfg = SquaresConfig::default();
    print_config(
        "synth",
        &[
            ("out_dir", args.out_dir.display().to_string()),
            ("count", args.count.to_string()),
            ("seed", args.seed.to_string()),
            ("image", format!("{}x{}", cfg.width, cfg.height)),
            (
                "square_side",
                format!("{}..={}", cfg.min_side, cfg.max_side),
            ),
        ],
    );
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(Failure::data)?;
    let data = square_corpus(&cfg, args.count, args.seed);
    save_dataset(&data, args.out_dir.join("manifest.jsonl"))?;
    println!("{}", args.out_dir.join("manifest.jsonl").display());
    Ok(())
}

fn cmd_maps() {
    let registry = FeatureMapRegistry::default();
    for name in registry.names() {
        let entry = registry.get(name).unwrap();
        println!("{name}\t{}", entry.description);
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.into()))?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Maps => {
            cmd_maps();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("80x80"), Ok((80, 80)));
        assert_eq!(parse_window("64X128"), Ok((64, 128)));
        assert!(parse_window("0x10").is_err());
        assert!(parse_window("80").is_err());
    }

    #[test]
    fn range_parsing() {
        assert_eq!(
            parse_range("-1:1:0.5").unwrap().0,
            vec![-1.0, -0.5, 0.0, 0.5, 1.0]
        );
        assert_eq!(parse_range("2:2:1").unwrap().0, vec![2.0]);
        assert!(parse_range("1:0:0.5").is_err());
        assert!(parse_range("0:1:0").is_err());
        assert!(parse_range("0:1").is_err());
    }
}
