use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::FeedforwardSignal;
use crate::gpr::Hyperparameters;
use crate::ilc::{RecordedFeedback, Update};

use super::config::{ExperimentConfig, GainProfile};
use super::csv_log::{read_csv, write_csv, CsvTrace};
use super::trial::{Metrics, TrialLog};
use super::HarnessError;

/// One closed-loop trial of an experiment.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub iteration: usize,
    pub gains_profile: GainProfile,
    pub amplitude_m: f64,
    pub frequency_hz: f64,
    pub metrics: Metrics,
    /// Learned feedforward applied during this run.
    pub feedforward: Option<FeedforwardSignal>,
    /// Steady-state feedback of this run and the signal learned from it.
    pub recorded: Option<RecordedFeedback>,
    pub learned: Option<Update>,
    pub log: TrialLog,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub version: String,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            config,
            runs: Vec::new(),
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    pub fn run(&self, label: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.label == label)
    }
}

/// Serialized summary of a run; the log itself lives in `csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub label: String,
    pub iteration: usize,
    pub gains_profile: GainProfile,
    pub amplitude_m: f64,
    pub frequency_hz: f64,
    pub metrics: Metrics,
    pub csv: String,
    #[serde(default)]
    pub feedforward: Option<String>,
    #[serde(default)]
    pub fit_rms_mps2: Option<Vec<f64>>,
    #[serde(default)]
    pub recorded_peak_to_peak_mps2: Option<Vec<f64>>,
}

/// Summary of a generalization experiment at the query amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationSummary {
    pub database_kappa_m: Vec<f64>,
    pub query_m: f64,
    pub hyperparameters: Hyperparameters,
    pub database_dir: String,
    pub predicted_signal: String,
}

/// On-disk report: `report.json` next to one CSV per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub version: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
    #[serde(default)]
    pub generalization: Option<GeneralizationSummary>,
}

pub const REPORT_FILE: &str = "report.json";

impl ReportFile {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Traces of every run, read from the CSV files beside the report.
    pub fn traces(&self, dir: &Path) -> Result<Vec<(String, CsvTrace)>, HarnessError> {
        self.runs
            .iter()
            .map(|r| Ok((r.label.clone(), read_csv(&dir.join(&r.csv))?)))
            .collect()
    }
}

/// `ff_<task>_k<kappa>_w<omega>_i<iteration>.toml`
pub fn signal_file_name(task: &str, kappa: f64, omega: f64, iteration: usize) -> String {
    format!("ff_{task}_k{kappa:.4}_w{omega:.4}_i{iteration}.toml")
}

/// Writes CSV logs, learned signals and `report.json` into `dir`.
pub fn write_report(
    report: &ExperimentReport,
    dir: &Path,
    generalization: Option<GeneralizationSummary>,
) -> Result<ReportFile, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut runs = Vec::new();
    for (idx, r) in report.runs.iter().enumerate() {
        let csv = format!("run_{:02}.csv", idx + 1);
        write_csv(&r.log, &dir.join(&csv))?;
        let omega = std::f64::consts::TAU * r.frequency_hz;
        let feedforward = match &r.feedforward {
            Some(s) => {
                let name = format!("run_{:02}_ff.toml", idx + 1);
                fs::write(dir.join(&name), s.to_toml_string()).map_err(|e| HarnessError::io(&dir.join(&name), e))?;
                Some(name)
            }
            None => None,
        };
        if let Some(u) = &r.learned {
            let name = signal_file_name("squat", r.amplitude_m, omega, r.iteration);
            let path = dir.join(&name);
            fs::write(&path, u.signal.to_toml_string()).map_err(|e| HarnessError::io(&path, e))?;
        }
        runs.push(RunSummary {
            label: r.label.clone(),
            iteration: r.iteration,
            gains_profile: r.gains_profile,
            amplitude_m: r.amplitude_m,
            frequency_hz: r.frequency_hz,
            metrics: r.metrics,
            csv,
            feedforward,
            fit_rms_mps2: r.learned.as_ref().map(|u| u.fit_rms.clone()),
            recorded_peak_to_peak_mps2: r.recorded.as_ref().map(|x| x.peak_to_peak()),
        });
    }
    let file = ReportFile {
        version: report.version.clone(),
        config: report.config.clone(),
        runs,
        generalization,
    };
    let path = dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&file).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(file)
}
