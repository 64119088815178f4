use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use taskff::gpr::Hyperparameters;
use taskff::harness::experiments::{generalization_experiment, squat_experiment};
use taskff::harness::report::{write_report, ExperimentReport, GeneralizationSummary, ReportFile, REPORT_FILE};
use taskff::harness::svg::{render_svg, Figure};
use taskff::harness::verify::run_verify;
use taskff::harness::{ExperimentConfig, GainProfile, HarnessError};
use taskff::simulator::MismatchSpec;

#[derive(Parser)]
#[command(name = "taskff", version, about = "Learned task-space feedforward for a QP-controlled planar biped")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML), or a report.json whose config echo is re-run
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Squat frequency, Hz
    #[arg(long)]
    freq: Option<f64>,
    /// Plant mismatch (TOML)
    #[arg(long, value_name = "FILE")]
    mismatch: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Learning iterations at one amplitude, then a reduced-gain run
    Squat {
        #[command(flatten)]
        common: Common,
        /// Squat amplitude, m
        #[arg(long)]
        amp: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_parser = ["full", "reduced"])]
        gains: Option<String>,
    },
    /// Learn at several amplitudes, fit a GP and compare at a new one
    Generalize {
        #[command(flatten)]
        common: Common,
        /// Database amplitudes, m
        #[arg(long, value_delimiter = ',', default_value = "0.02,0.04,0.06,0.08")]
        amps: Vec<f64>,
        /// Query amplitude, m
        #[arg(long, default_value_t = 0.05)]
        query: f64,
        /// Kernel length scale, m
        #[arg(long)]
        length_scale: Option<f64>,
    },
    /// Dynamics, QP, contact, GPR and encoding self-checks
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a report directory as SVG
    Plot {
        /// report.json, or the directory holding it
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn base_config(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(p) if p.extension().is_some_and(|e| e == "json") => ReportFile::load(p)?.config,
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::squat(0.06, 0.25),
    };
    if let Some(f) = common.freq {
        config.task.frequency_hz = f;
    }
    if let Some(p) = &common.mismatch {
        config.mismatch = MismatchSpec::from_toml_str(&read(p)?)?;
    }
    if let Some(o) = &common.out {
        config.output_dir = o.clone();
    }
    Ok(config)
}

fn print_runs(report: &ExperimentReport) {
    for r in &report.runs {
        let m = &r.metrics;
        println!(
            "{:<4} gains={:<7} rms={:.3e} m max={:.3e} m fb_rms={:.3e} m/s^2 tau_rms={:.2} N m peak={:.2} N m",
            r.label,
            r.gains_profile.as_str(),
            m.tracking_rms_m,
            m.max_error_m,
            m.feedback_rms_mps2,
            m.torque_rms_nm,
            m.trial_peak_torque_nm
        );
    }
}

fn finish(report: &ExperimentReport, gen: Option<GeneralizationSummary>) -> Result<(), HarnessError> {
    let dir = &report.config.output_dir;
    write_report(report, dir, gen)?;
    render_svg(&Figure::from_report(report), &dir.join("plot.svg"))?;
    print_runs(report);
    println!("wrote {}", dir.join(REPORT_FILE).display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Squat {
            common,
            amp,
            iters,
            gains,
        } => {
            let mut config = base_config(&common)?;
            if let Some(a) = amp {
                config.task.amplitude_m = a;
            }
            if let Some(n) = iters {
                config.iterations = n;
            }
            if let Some(g) = gains {
                config.gains_profile = g.parse::<GainProfile>().map_err(HarnessError::Config)?;
            }
            let start = Instant::now();
            let report = squat_experiment(&config).map_err(|f| {
                if !f.report.runs.is_empty() {
                    let _ = write_report(&f.report, &config.output_dir, None);
                }
                f.error
            })?;
            finish(&report, None)?;
            log::info!("squat experiment took {:.1} s", start.elapsed().as_secs_f64());
            Ok(true)
        }
        Command::Generalize {
            common,
            amps,
            query,
            length_scale,
        } => {
            let mut config = base_config(&common)?;
            config.task.amplitude_m = query;
            let mut hyper = Hyperparameters::default();
            if let Some(l) = length_scale {
                hyper.length_scale = l;
            }
            let g = generalization_experiment(&config, &amps, query, &hyper)?;
            let dir = &g.report.config.output_dir;
            let db_dir = dir.join("database");
            g.database.save(&db_dir)?;
            let predicted = dir.join("predicted_ff.toml");
            fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            fs::write(&predicted, g.predicted.to_toml_string()).map_err(|source| HarnessError::Io {
                path: predicted.display().to_string(),
                source,
            })?;
            let summary = GeneralizationSummary {
                database_kappa_m: amps.clone(),
                query_m: query,
                hyperparameters: hyper,
                database_dir: "database".into(),
                predicted_signal: "predicted_ff.toml".into(),
            };
            finish(&g.report, Some(summary))?;
            Ok(true)
        }
        Command::Verify { seed } => {
            let start = Instant::now();
            let results = run_verify(seed);
            for r in &results {
                println!(
                    "{} {:<52} value={:.3e} tolerance={:.0e} {:.2} s",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.value,
                    r.tolerance,
                    r.seconds
                );
            }
            println!("{:.1} s total", start.elapsed().as_secs_f64());
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Plot { report, out } => {
            let file = if report.is_dir() { report.join(REPORT_FILE) } else { report };
            let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
            let loaded = ReportFile::load(&file)?;
            let traces = loaded.traces(&dir)?;
            let title = format!(
                "CoM squat {:.0} mm at {} Hz",
                loaded.config.task.amplitude_m * 1e3,
                loaded.config.task.frequency_hz
            );
            let out = out.unwrap_or_else(|| dir.join("plot.svg"));
            render_svg(&Figure::from_traces(&title, &traces), &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("taskff: error kind=verify message=\"one or more checks failed\"");
            ExitCode::FAILURE
        }
        Err(e) => {
            let message = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("taskff: error kind={} message=\"{message}\"", e.kind());
            ExitCode::FAILURE
        }
    }
}
