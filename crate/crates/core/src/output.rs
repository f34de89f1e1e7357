//! CSV result tables and the run metadata file.
//!
//! One CSV per (policy, sweep), with a fixed column set that the plotting
//! scripts read. Files are written to a temporary name and renamed into
//! place; if any file of a run fails, everything written so far is removed.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{LayoutKind, RunConfig};
use crate::engine::{PointEstimate, SweepResult};
use crate::policy::PrecoderNorm;

pub const COLUMNS: [&str; 10] = [
    "sweep_param_name",
    "sweep_value",
    "policy",
    "policy_param",
    "p_d",
    "p_fa_window",
    "mean_snr_db",
    "mean_m",
    "n_trials",
    "seed",
];

/// Modelling choices behind the numbers of a run, for the metadata file.
pub fn deviation_flags(config: &RunConfig) -> Vec<&'static str> {
    let mut flags = vec![
        "target_phase_uniform_per_trial_rcs_deterministic",
        "snr_averaged_linear_then_db",
        "time_sharing_senses_on_pilots_only",
        "p_fa_window_from_paired_target_free_run",
        "p_d_column_is_mean_over_targets",
    ];
    if config.policies.precoder_norm == PrecoderNorm::Renormalized {
        flags.push("concurrent_precoder_renormalized_per_slot");
    }
    if config.detector.training_layout == LayoutKind::Beamspace {
        flags.push("cfar_training_in_beamspace");
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_param_name: String,
    pub sweep_value: f64,
    pub policy: String,
    pub policy_param: Option<f64>,
    pub p_d: f64,
    pub p_fa_window: f64,
    pub mean_snr_db: f64,
    pub mean_m: f64,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}")]
    Header { found: Vec<String> },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.display().to_string(), source }
}

pub fn rows(result: &SweepResult) -> Vec<ResultRow> {
    result
        .rows
        .iter()
        .map(|r| ResultRow {
            sweep_param_name: result.param.name().to_string(),
            sweep_value: r.value,
            policy: r.policy.name().to_string(),
            policy_param: r.policy.param(),
            p_d: r.estimate.p_d,
            p_fa_window: r.estimate.p_fa_window,
            mean_snr_db: r.estimate.mean_snr_db,
            mean_m: r.estimate.mean_m,
            n_trials: r.estimate.trials,
            seed: r.estimate.seed,
        })
        .collect()
}

pub fn to_csv(rows: &[ResultRow]) -> Result<Vec<u8>, OutputError> {
    // Header written by hand so an empty table still carries it.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| OutputError::Io { path: "<buffer>".into(), source: e.into_error() })
}

/// Parses a result table, rejecting unknown layouts.
pub fn parse_csv(data: &[u8]) -> Result<Vec<ResultRow>, OutputError> {
    let mut r = csv::Reader::from_reader(data);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(OutputError::Header { found: header });
    }
    r.deserialize().collect::<Result<_, _>>().map_err(OutputError::from)
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDiagnostics {
    pub file: String,
    pub rows: Vec<PointEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata<'a> {
    pub version: &'static str,
    pub command: &'a str,
    pub deviation_flags: Vec<&'static str>,
    pub snr_aggregation: &'static str,
    pub config: &'a RunConfig,
    pub files: Vec<FileDiagnostics>,
}

/// Pretty-printed metadata with a trailing newline.
pub fn metadata_json(meta: &RunMetadata<'_>) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(meta).expect("metadata serialises");
    v.push(b'\n');
    v
}

/// Collects the files of one run and commits them all or none.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> Result<Self, OutputError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes `name` atomically. On failure every file of the set is removed.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, OutputError> {
        let path = self.dir.join(name);
        match write_atomic(&path, bytes) {
            Ok(()) => {
                self.written.push(path.clone());
                Ok(path)
            }
            Err(e) => {
                self.abort();
                Err(e)
            }
        }
    }

    /// Removes every file written so far.
    pub fn abort(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    let tmp = PathBuf::from(tmp);
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(io_err(path))
}

/// File name for one sweep result, e.g. `rcs-sweep_time-sharing-beta-1.csv`.
pub fn file_name(command: &str, label: &str) -> String {
    let clean: String =
        label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
    format!("{command}_{clean}.csv")
}
