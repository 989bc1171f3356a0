//! Command-line harness for the acoustic wall-mapping pipeline.
//!
//! Subcommands mirror the pipeline stages: `sim` writes a synthetic frame
//! dataset (JSONL), `estimate` turns a dataset into per-frame wall estimates
//! (CSV), `slam` folds estimates into a plane-landmark map (JSON), `eval`
//! scores estimates against ground truth (JSON), and `matrix` emits the
//! distance-frequency interference magnitudes the front end is built on
//! (CSV). All randomness derives from one seed; identical invocations
//! produce byte-identical outputs.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for data errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use echomap::{
    association_accuracy, evaluate, read_dataset, read_estimates, run_estimation, run_simulation,
    run_slam, write_map, write_metrics, ExperimentConfig, MapOutput, PipelineError, Scenario,
};

#[derive(Parser)]
#[command(
    name = "echomap",
    version,
    about = "Sound-based wall localization and mapping from speaker/microphone interference"
)]
struct Cli {
    /// TOML experiment configuration (overrides the built-in scenario presets).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the seed from the config or preset.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output path; standard output when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Use only the first K microphones (ablation).
    #[arg(long, global = true, value_name = "K")]
    mics: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the frame dataset (JSONL).
    Sim {
        /// Built-in scenario preset: stepper, flight, or multiwall.
        /// Mutually exclusive with --config.
        #[arg(long, value_name = "NAME")]
        scenario: Option<String>,
    },
    /// Run calibration, path-difference inference, and the particle filter
    /// over a dataset; write per-frame wall estimates (CSV).
    Estimate {
        /// Frame dataset (JSONL).
        dataset: PathBuf,
    },
    /// Fold per-frame wall estimates into the plane-landmark factor graph;
    /// write poses, planes, and association decisions (JSON).
    Slam {
        /// Frame dataset (JSONL).
        dataset: PathBuf,
        /// Estimate stream aligned to the dataset (CSV).
        estimates: PathBuf,
    },
    /// Score an estimate stream against the dataset's ground truth; write
    /// error statistics and baseline curves (JSON).
    Eval {
        /// Frame dataset with ground-truth sidecars (JSONL).
        dataset: PathBuf,
        /// Estimate stream aligned to the dataset (CSV).
        estimates: PathBuf,
        /// Map produced by `slam`; adds association accuracy to the report.
        #[arg(long, value_name = "PATH")]
        map: Option<PathBuf>,
    },
    /// Emit the noise-free distance-frequency interference magnitude matrix
    /// for the configured array (CSV; one row per microphone and distance).
    Matrix {
        /// Smallest wall distance in meters.
        #[arg(long, default_value_t = 0.07)]
        d_min: f64,
        /// Largest wall distance in meters.
        #[arg(long, default_value_t = 0.80)]
        d_max: f64,
        /// Distance increment in meters.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Sim { scenario } => {
            let cfg = sim_config(&cli, scenario.as_deref())?;
            let mut writer = out_writer(&cli.out)?;
            let stats = run_simulation(&cfg, &mut writer)?;
            flush(writer)?;
            eprintln!(
                "simulated {} frames of the {} scenario (seed {})",
                stats.frames, cfg.scenario, cfg.seed
            );
        }
        Command::Estimate { dataset } => {
            let cfg = base_config(&cli)?;
            let records = read_dataset(open_reader(dataset)?)?;
            let mut writer = out_writer(&cli.out)?;
            let stats = run_estimation(&records, &cfg, cli.mics, &mut writer)?;
            flush(writer)?;
            let mean_ms = if stats.frame_ms.is_empty() {
                0.0
            } else {
                stats.frame_ms.iter().sum::<f64>() / stats.frame_ms.len() as f64
            };
            eprintln!(
                "estimated {} frames ({:.2} ms/frame mean)",
                stats.frames, mean_ms
            );
        }
        Command::Slam { dataset, estimates } => {
            let cfg = base_config(&cli)?;
            let records = read_dataset(open_reader(dataset)?)?;
            let rows = read_estimates(open_reader(estimates)?)?;
            let result = run_slam(&records, &rows, &cfg)?;
            let mut writer = out_writer(&cli.out)?;
            write_map(&result.map, &mut writer)?;
            flush(writer)?;
            eprintln!(
                "mapped {} poses and {} planes ({} detections, final cost {:.3e})",
                result.map.poses.len(),
                result.map.planes.len(),
                result.map.associations.len(),
                result.map.final_cost
            );
        }
        Command::Eval {
            dataset,
            estimates,
            map,
        } => {
            let cfg = base_config(&cli)?;
            let records = read_dataset(open_reader(dataset)?)?;
            let rows = read_estimates(open_reader(estimates)?)?;
            let mut report = evaluate(&rows, &records, cfg.seed)?;
            if let Some(map_path) = map {
                let map: MapOutput = serde_json::from_str(&read_text(map_path, data_err)?)
                    .map_err(|e| PipelineError::Data(format!("parsing map JSON: {e}")))?;
                report.association_accuracy = association_accuracy(&map, &records)?;
            }
            let mut writer = out_writer(&cli.out)?;
            write_metrics(&report, &mut writer)?;
            flush(writer)?;
            eprintln!(
                "evaluated {} frames: median |d err| {:.1} mm, median |angle err| {:.1} deg",
                report.n_frames,
                report.median_d_error * 1e3,
                report.median_theta_error.to_degrees()
            );
        }
        Command::Matrix { d_min, d_max, step } => {
            let cfg = base_config(&cli)?;
            write_matrix(&cfg, *d_min, *d_max, *step, &cli.out)?;
        }
    }
    Ok(())
}

/// Base configuration: the `--config` file when given, the stepper preset
/// otherwise, with the `--seed` override applied.
fn base_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_toml(&read_text(path, config_err)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Configuration for `sim`: either a named preset or a config file.
fn sim_config(cli: &Cli, scenario: Option<&str>) -> Result<ExperimentConfig, PipelineError> {
    if cli.config.is_some() && scenario.is_some() {
        return Err(PipelineError::Config(
            "pass either --config or --scenario, not both".into(),
        ));
    }
    let mut cfg = match (&cli.config, scenario) {
        (Some(path), None) => ExperimentConfig::from_toml(&read_text(path, config_err)?)?,
        (None, Some(name)) => ExperimentConfig::preset(parse_scenario(name)?),
        (None, None) => ExperimentConfig::default(),
        (Some(_), Some(_)) => unreachable!(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_scenario(name: &str) -> Result<Scenario, PipelineError> {
    match name.to_ascii_lowercase().as_str() {
        "stepper" => Ok(Scenario::Stepper),
        "flight" => Ok(Scenario::Flight),
        "multiwall" => Ok(Scenario::Multiwall),
        "replay" => Ok(Scenario::Replay),
        other => Err(PipelineError::Config(format!(
            "unknown scenario '{other}' (expected stepper, flight, multiwall, or replay)"
        ))),
    }
}

/// Interference matrix as plot-ready CSV: header `mic,distance_m,<freqs...>`,
/// one row of per-frequency magnitudes per (microphone, wall distance).
fn write_matrix(
    cfg: &ExperimentConfig,
    d_min: f64,
    d_max: f64,
    step: f64,
    out: &Option<PathBuf>,
) -> Result<(), PipelineError> {
    cfg.validate()?;
    if !(step > 0.0) || !(d_min >= 0.0) || !(d_max > d_min) {
        return Err(PipelineError::Config(format!(
            "invalid distance grid: d_min {d_min}, d_max {d_max}, step {step}"
        )));
    }
    let mut distances = Vec::new();
    let mut d = d_min;
    while d <= d_max + 1e-12 {
        distances.push(d);
        d += step;
    }
    let sched = cfg.sweep_schedule()?;
    let mics = cfg.mic_geometry()?;
    let acoustics = cfg.acoustic_config()?;
    let matrix = echomap::make_interference_matrix(&distances, &sched, &mics, &acoustics)
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let mut writer = out_writer(out)?;
    let header: Vec<String> = std::iter::once("mic".to_string())
        .chain(std::iter::once("distance_m".to_string()))
        .chain(sched.freqs.iter().map(|f| format!("{f}")))
        .collect();
    writeln!(writer, "{}", header.join(",")).map_err(|e| PipelineError::Data(e.to_string()))?;
    for (m, rows) in matrix.iter().enumerate() {
        for (row, d) in rows.iter().zip(&distances) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(writer, "{m},{d},{}", cells.join(","))
                .map_err(|e| PipelineError::Data(e.to_string()))?;
        }
    }
    flush(writer)?;
    eprintln!(
        "wrote {} x {} interference magnitudes for {} microphones",
        distances.len(),
        sched.freqs.len(),
        mics.len()
    );
    Ok(())
}

fn config_err(msg: String) -> PipelineError {
    PipelineError::Config(msg)
}

fn data_err(msg: String) -> PipelineError {
    PipelineError::Data(msg)
}

fn read_text(path: &Path, wrap: fn(String) -> PipelineError) -> Result<String, PipelineError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| wrap(format!("reading {}: {e}", path.display())))?;
    Ok(text)
}

fn open_reader(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::Data(format!("opening {}: {e}", path.display())))
}

fn out_writer(out: &Option<PathBuf>) -> Result<Box<dyn Write>, PipelineError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
            PipelineError::Data(format!("creating {}: {e}", path.display()))
        })?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn flush(mut writer: Box<dyn Write>) -> Result<(), PipelineError> {
    writer
        .flush()
        .map_err(|e| PipelineError::Data(e.to_string()))
}
