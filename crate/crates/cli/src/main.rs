use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use binloop::dataset::ground_truth_pairs;
use binloop::evaluation::TimingSummary;
use binloop::pipeline::{
    binary_map_to_luma8, detections_csv, parse_detections_csv, saliency_debug, xi_throughput,
    DetectionRun, STAGE_LOAD, STAGE_RETRIEVAL, STAGE_SALIENCY, STAGE_TOTAL, STAGE_VERIFICATION,
};
use binloop::{run_detection, score, BinaryMap, Dataset, PipelineConfig};
use clap::{Args, Parser, Subcommand};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::ImageEncoder;

/// Loop-closure detection from binary salient-region maps.
#[derive(Parser, Debug)]
#[command(name = "binloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the detector over a sequence and write the detections CSV.
    Detect(Common),
    /// Score a detections CSV against the manifest's poses.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Detections file to score (defaults to `detections_out`).
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Dump the saliency map and binary content of one frame as PGM.
    SaliencyDebug {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frame: usize,
    },
    /// Time the pipeline stages and raw similarity throughput.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Minimum duration of the throughput measurement.
        #[arg(long, default_value_t = 1.0)]
        bench_seconds: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Dataset manifest; overrides the `manifest` key.
    manifest: Option<PathBuf>,
    /// Plain-text `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// One flag per config key; values given here win over the config file.
#[derive(Args, Debug)]
#[command(next_help_heading = "Config overrides")]
struct Overrides {
    #[arg(long)]
    avg_filter_n: Option<usize>,
    #[arg(long)]
    gaussian_sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    log_epsilon: Option<f64>,
    #[arg(long)]
    xi_min: Option<f64>,
    #[arg(long)]
    centroid_max: Option<f64>,
    #[arg(long)]
    temporal_gap: Option<u64>,
    #[arg(long)]
    max_candidates: Option<usize>,
    #[arg(long)]
    ratio: Option<f32>,
    #[arg(long)]
    min_matches: Option<usize>,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    hessian_threshold: Option<f64>,
    #[arg(long)]
    working_long_side: Option<usize>,
    #[arg(long)]
    d_gt: Option<f64>,
    #[arg(long)]
    min_gap: Option<usize>,
    #[arg(long)]
    frame_tol: Option<usize>,
    #[arg(long)]
    detections_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    timing_out: Option<PathBuf>,
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    #[arg(long)]
    db_out: Option<PathBuf>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        fn put<T: ToString>(
            out: &mut Vec<(&'static str, String)>,
            key: &'static str,
            v: &Option<T>,
        ) {
            if let Some(v) = v {
                out.push((key, v.to_string()));
            }
        }
        fn put_path(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<PathBuf>) {
            if let Some(v) = v {
                out.push((key, v.display().to_string()));
            }
        }
        let mut out = Vec::new();
        put(&mut out, "avg_filter_n", &self.avg_filter_n);
        put(&mut out, "gaussian_sigma", &self.gaussian_sigma);
        put(&mut out, "gamma", &self.gamma);
        put(&mut out, "log_epsilon", &self.log_epsilon);
        put(&mut out, "xi_min", &self.xi_min);
        put(&mut out, "centroid_max", &self.centroid_max);
        put(&mut out, "temporal_gap", &self.temporal_gap);
        put(&mut out, "max_candidates", &self.max_candidates);
        put(&mut out, "ratio", &self.ratio);
        put(&mut out, "min_matches", &self.min_matches);
        put(&mut out, "max_features", &self.max_features);
        put(&mut out, "hessian_threshold", &self.hessian_threshold);
        put(&mut out, "working_long_side", &self.working_long_side);
        put(&mut out, "d_gt", &self.d_gt);
        put(&mut out, "min_gap", &self.min_gap);
        put(&mut out, "frame_tol", &self.frame_tol);
        put_path(&mut out, "detections_out", &self.detections_out);
        put_path(&mut out, "report_out", &self.report_out);
        put_path(&mut out, "timing_out", &self.timing_out);
        put_path(&mut out, "debug_dir", &self.debug_dir);
        put_path(&mut out, "db_out", &self.db_out);
        out
    }
}

/// Failures split by exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config
                .apply_file(path)
                .map_err(|e| Failure::Usage(e.into()))?;
        }
        for (key, value) in self.overrides.pairs() {
            config
                .set(key, &value)
                .map_err(|e| Failure::Usage(e.into()))?;
        }
        if let Some(m) = &self.manifest {
            config.manifest = Some(m.clone());
        }
        config.validate().map_err(|e| Failure::Usage(e.into()))?;
        if config.manifest.is_none() {
            return Err(Failure::Usage(anyhow::anyhow!("no dataset manifest given")));
        }
        Ok(config)
    }
}

fn open_dataset(config: &PipelineConfig) -> Result<Dataset> {
    let path = config.manifest.as_ref().expect("checked by Common::config");
    Dataset::open(path).with_context(|| format!("opening dataset {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn detect_run(config: &PipelineConfig, dataset: &Dataset, verbose: bool) -> Result<DetectionRun> {
    let mut stderr = std::io::stderr();
    let run = run_detection(dataset, config, &config.extractor(), |t, n, accepted| {
        if !verbose {
            return;
        }
        for d in accepted {
            let _ = writeln!(
                stderr,
                "frame {t}: loop with {} (xi {:.3}, {} matches)",
                d.match_id, d.xi, d.match_count
            );
        }
        if (t + 1) % 100 == 0 || t + 1 == n {
            let _ = writeln!(stderr, "processed {}/{n} frames", t + 1);
        }
    })?;
    Ok(run)
}

fn print_timing(timing: &TimingSummary) {
    println!("{:<14} {:>8} {:>12}", "stage", "samples", "mean_ms");
    for stage in [
        STAGE_LOAD,
        STAGE_SALIENCY,
        STAGE_RETRIEVAL,
        STAGE_VERIFICATION,
        STAGE_TOTAL,
    ] {
        if let Some(s) = timing.stages.get(stage) {
            println!("{stage:<14} {:>8} {:>12.3}", s.samples, s.mean_ms());
        }
    }
}

fn cmd_detect(config: &PipelineConfig) -> Result<()> {
    let dataset = open_dataset(config)?;
    let run = detect_run(config, &dataset, true)?;
    write_file(&config.detections_out, &detections_csv(&run.detections))?;
    write_file(&config.timing_out, &run.timing.to_csv())?;
    if let Some(db) = &config.db_out {
        run.database
            .save(db)
            .with_context(|| format!("writing {}", db.display()))?;
    }
    println!(
        "{} detections over {} frames written to {}",
        run.detections.len(),
        run.frames,
        config.detections_out.display()
    );
    print_timing(&run.timing);
    Ok(())
}

fn cmd_eval(config: &PipelineConfig, detections: Option<&Path>) -> Result<()> {
    let dataset = open_dataset(config)?;
    let traj = dataset.trajectory()?;
    let path = detections.unwrap_or(&config.detections_out);
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = parse_detections_csv(&text, &path.display().to_string())?;
    let truth = ground_truth_pairs(&traj, config.d_gt, config.min_gap);
    let mut report = score(
        rows.iter().map(|r| (r.query_id, r.match_id)),
        &truth,
        config.frame_tol,
    );
    if let Ok(timing) = fs::read_to_string(&config.timing_out) {
        let timing = TimingSummary::parse_csv(&timing)
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("reading {}", config.timing_out.display()))?;
        report = report.with_timing(&timing, STAGE_TOTAL);
    }
    println!("{report}");
    write_file(&config.report_out, &report.to_csv())
}

fn write_pgm(path: &Path, img: &image::GrayImage) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::L8,
        )
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_saliency_debug(config: &PipelineConfig, frame: usize) -> Result<()> {
    let dataset = open_dataset(config)?;
    let (saliency, map) = saliency_debug(&dataset, config, frame)?;
    fs::create_dir_all(&config.debug_dir)
        .with_context(|| format!("creating {}", config.debug_dir.display()))?;
    let s_path = config
        .debug_dir
        .join(format!("frame_{frame:06}_saliency.pgm"));
    let b_path = config
        .debug_dir
        .join(format!("frame_{frame:06}_binary.pgm"));
    write_pgm(&s_path, &saliency.to_luma8())?;
    write_pgm(&b_path, &binary_map_to_luma8(&map))?;
    println!(
        "{} set bits of {} ({}x{})",
        map.popcount(),
        map.width() * map.height(),
        map.width(),
        map.height()
    );
    println!("{}\n{}", s_path.display(), b_path.display());
    Ok(())
}

fn cmd_bench(config: &PipelineConfig, seconds: f64) -> Result<()> {
    if !(seconds > 0.0 && seconds.is_finite()) {
        bail!("--bench-seconds must be positive");
    }
    let dataset = open_dataset(config)?;
    let run = detect_run(config, &dataset, false)?;
    println!("{} frames, {} detections", run.frames, run.detections.len());
    print_timing(&run.timing);

    let t = &run.timing;
    let stage_sum: f64 = [
        STAGE_LOAD,
        STAGE_SALIENCY,
        STAGE_RETRIEVAL,
        STAGE_VERIFICATION,
    ]
    .iter()
    .filter_map(|s| t.mean_ms(s))
    .sum();
    if let Some(total) = t.mean_ms(STAGE_TOTAL) {
        let ok = stage_sum <= total * 1.1;
        println!(
            "stage sum {stage_sum:.3} ms vs total {total:.3} ms: {}",
            if ok { "consistent" } else { "INCONSISTENT" }
        );
    }

    let maps: Vec<BinaryMap> = run.database.iter().map(|r| r.map().clone()).collect();
    if maps.len() < 2 {
        println!("xi throughput: needs at least two frames");
    } else {
        let rate = xi_throughput(&maps, Duration::from_secs_f64(seconds));
        println!(
            "xi throughput: {rate:.0} comparisons/s on {}x{} maps (single thread)",
            maps[0].width(),
            maps[0].height()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = match &cli.command {
        Command::Detect(common)
        | Command::Eval { common, .. }
        | Command::SaliencyDebug { common, .. }
        | Command::Bench { common, .. } => common,
    };
    let config = common.config()?;
    match &cli.command {
        Command::Detect(_) => cmd_detect(&config),
        Command::Eval { detections, .. } => cmd_eval(&config, detections.as_deref()),
        Command::SaliencyDebug { frame, .. } => cmd_saliency_debug(&config, *frame),
        Command::Bench { bench_seconds, .. } => cmd_bench(&config, *bench_seconds),
    }
    .map_err(Failure::Data)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
