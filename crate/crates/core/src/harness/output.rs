use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Summary of one metric at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    /// Name of the swept variable.
    pub sweep: String,
    pub value: f64,
    pub metric: String,
    pub mean: f64,
    /// Standard error of the mean; zero for a single trial.
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

/// One per-trial sample behind a [`ResultRow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub experiment: String,
    pub sweep: String,
    pub value: f64,
    pub metric: String,
    pub trial: usize,
    pub seed: u64,
    pub sample: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(HarnessError::Config {
                field: "format".into(),
                reason: format!("unknown format `{other}` (expected csv or json)"),
            }),
        }
    }
}

/// `x` rounded to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Text form of `x` with 12 significant digits, without trailing zeros.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round_sig(x);
    let a = r.abs();
    if r == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

const HEADER: [&str; 8] = ["experiment", "sweep", "value", "metric", "mean", "stderr", "trials", "seed"];
const RAW_HEADER: [&str; 7] = ["experiment", "sweep", "value", "metric", "trial", "seed", "sample"];

fn json_number(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(round_sig(x)).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

pub fn write_rows<W: Write>(rows: &[ResultRow], format: OutputFormat, out: W) -> Result<(), HarnessError> {
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(HEADER)?;
            for r in rows {
                w.write_record([
                    r.experiment.clone(),
                    r.sweep.clone(),
                    format_sig(r.value),
                    r.metric.clone(),
                    format_sig(r.mean),
                    format_sig(r.stderr),
                    r.trials.to_string(),
                    r.seed.to_string(),
                ])?;
            }
            w.flush().map_err(csv::Error::from)?;
        }
        OutputFormat::Json => {
            let items: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "experiment": r.experiment,
                        "sweep": r.sweep,
                        "value": json_number(r.value),
                        "metric": r.metric,
                        "mean": json_number(r.mean),
                        "stderr": json_number(r.stderr),
                        "trials": r.trials,
                        "seed": r.seed,
                    })
                })
                .collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &items)?;
            writeln!(out).map_err(|source| HarnessError::Io {
                path: "<writer>".into(),
                source,
            })?;
        }
    }
    Ok(())
}

pub fn write_raw<W: Write>(records: &[RawRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_HEADER)?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.sweep.clone(),
            format_sig(r.value),
            r.metric.clone(),
            r.trial.to_string(),
            r.seed.to_string(),
            format_sig(r.sample),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `rows` to `path` as CSV or JSON.
pub fn emit(rows: &[ResultRow], format: OutputFormat, path: &Path) -> Result<(), HarnessError> {
    write_rows(rows, format, create(path)?)
}

/// Writes per-trial records as CSV.
pub fn emit_raw(records: &[RawRecord], path: &Path) -> Result<(), HarnessError> {
    write_raw(records, create(path)?)
}
