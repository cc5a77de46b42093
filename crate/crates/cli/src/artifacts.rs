//! Files a run reads and writes: datasets, metric reports, trial lists
//! and the run manifest.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flowlda::dataset::LabeledDataset;
use flowlda::dnf::DnfModel;
use flowlda::eval::TrialScoreSet;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::DataFormat;
use crate::error::{read_error, CliError, CliResult};

const DNFV1_MAGIC: &[u8; 4] = b"DNFV";

/// Reads a dataset, telling the two formats apart by their leading bytes.
pub fn read_dataset(path: &Path) -> CliResult<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| read_error(path, e.into()))?;
    let parsed = if bytes.starts_with(DNFV1_MAGIC) {
        LabeledDataset::read_dnfv1(bytes.as_slice())
    } else {
        LabeledDataset::read_csv(bytes.as_slice())
    };
    parsed.map_err(|e| read_error(path, e))
}

pub fn write_dataset(path: &Path, data: &LabeledDataset, format: DataFormat) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        DataFormat::Dnfv1 => data.write_dnfv1(&mut w),
        DataFormat::Csv => data.write_csv(&mut w),
    }
    .map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_model(path: &Path) -> CliResult<DnfModel> {
    flowlda::checkpoint::load(path).map_err(|e| read_error(path, e))
}

pub fn write_model(path: &Path, model: &DnfModel) -> CliResult<()> {
    flowlda::checkpoint::save(model, path).map_err(|e| CliError::io(path, e))
}

/// One flat metric document.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
    pub config: serde_json::Value,
    pub seed: u64,
}

/// Every numeric field of a serializable report as a metric named
/// `prefix` + field.
pub fn metrics_from_report<T: Serialize>(
    report: &T,
    prefix: &str,
    config: &serde_json::Value,
    seed: u64,
) -> Vec<Metric> {
    let value = serde_json::to_value(report).expect("reports are serializable");
    let mut out = Vec::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            if let Some(x) = v.as_f64() {
                out.push(Metric {
                    metric: format!("{prefix}{k}"),
                    value: x,
                    config: config.clone(),
                    seed,
                });
            }
        }
    }
    out
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Trial list as CSV `label_a,label_b,is_genuine,score`.
pub fn write_trials(path: &Path, labels: &[usize], pairs: &[(usize, usize, bool)], scores: &TrialScoreSet) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "label_a,label_b,is_genuine,score")?;
        let (mut g, mut i) = (0, 0);
        for &(a, b, genuine) in pairs {
            let score = if genuine {
                g += 1;
                scores.genuine[g - 1]
            } else {
                i += 1;
                scores.impostor[i - 1]
            };
            writeln!(w, "{},{},{},{score}", labels[a], labels[b], u8::from(genuine))?;
        }
        w.flush()
    };
    write().map_err(|e| CliError::io(path, e))
}

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| read_error(path, e.into()))?;
    Ok(content_hash(&bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub hash: String,
}

/// Record of what a run consumed and produced.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    /// Hash over the config (less the output directory) and all input
    /// hashes.
    pub input_hash: String,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, inputs: &[PathBuf], files: Vec<String>) -> CliResult<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputRecord {
                    path: p.display().to_string(),
                    hash: file_hash(p)?,
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mut hashed = config.clone();
        if let Some(map) = hashed.as_object_mut() {
            map.remove("out");
        }
        let mut all = serde_json::to_string(&hashed).expect("config is serializable");
        for rec in &inputs {
            all.push('\n');
            all.push_str(&rec.hash);
        }
        Ok(Manifest {
            command: command.to_string(),
            input_hash: content_hash(all.as_bytes()),
            config,
            seed,
            inputs,
            files,
        })
    }
}
