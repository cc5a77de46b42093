//! Experiment configuration: defaults, then a JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use flowlda::datasim::{EmbeddingSpec, SimulationSpec};
use flowlda::experiment::ModelKind;
use flowlda::flows::{BlockKind, FlowConfig};
use flowlda::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Dnfv1,
    Csv,
}

impl DataFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DataFormat::Dnfv1 => "dnfv1",
            DataFormat::Csv => "csv",
        }
    }
}

/// Which experiment `pipeline` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Warped 4-class simulation: DNF, subspace DNF and LDA.
    Simulation,
    /// Synthetic embeddings scored with PLDA and cosine.
    Verification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds every random stream of the run, including those in
    /// `simulation`, `embeddings` and `train`.
    pub seed: u64,
    pub out: PathBuf,
    /// Input dataset for `train`, `eval`, `reduce` and `figure`.
    pub data: Option<PathBuf>,
    /// Optional held-out dataset for checkpoint selection in `train`.
    pub heldout: Option<PathBuf>,
    /// Model checkpoint for `eval`, `reduce` and `figure`.
    pub checkpoint: Option<PathBuf>,
    pub model: ModelKind,
    /// Flow architecture; unset fields take the per-task default.
    pub block_type: Option<BlockKind>,
    pub blocks: Option<usize>,
    pub width: Option<usize>,
    /// Reduced dimension `p` for `train` and the simulation pipeline.
    pub class_dim: usize,
    /// Reduced dimension for the verification pipeline.
    pub verification_dim: usize,
    pub format: DataFormat,
    pub axes: [usize; 2],
    pub holdout_fraction: f64,
    pub task: Task,
    /// Training settings; unset means the per-task default.
    pub train: Option<TrainConfig>,
    pub simulation: SimulationSpec,
    pub embeddings: EmbeddingSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            heldout: None,
            checkpoint: None,
            model: ModelKind::DnfSubspace,
            block_type: None,
            blocks: None,
            width: None,
            class_dim: 2,
            verification_dim: 10,
            format: DataFormat::Dnfv1,
            axes: [0, 1],
            holdout_fraction: 0.2,
            task: Task::Simulation,
            train: None,
            simulation: SimulationSpec::default(),
            embeddings: EmbeddingSpec::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub block_type: Option<BlockKind>,
    pub blocks: Option<usize>,
    pub width: Option<usize>,
    pub class_dim: Option<usize>,
    pub format: Option<DataFormat>,
    pub axes: Option<[usize; 2]>,
    pub task: Option<Task>,
    pub epochs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::usage(format!("config file not found: {}", path.display())),
            _ => CliError::usage(format!("cannot read config {}: {e}", path.display())),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Defaults, overlaid by `file` when given, overlaid by `flags`.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> CliResult<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &Overrides) {
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = &f.out {
            self.out = v.clone();
        }
        if f.data.is_some() {
            self.data = f.data.clone();
        }
        if f.heldout.is_some() {
            self.heldout = f.heldout.clone();
        }
        if f.checkpoint.is_some() {
            self.checkpoint = f.checkpoint.clone();
        }
        if let Some(v) = f.model {
            self.model = v;
        }
        if f.block_type.is_some() {
            self.block_type = f.block_type;
        }
        if f.blocks.is_some() {
            self.blocks = f.blocks;
        }
        if f.width.is_some() {
            self.width = f.width;
        }
        if let Some(v) = f.class_dim {
            self.class_dim = v;
            self.verification_dim = v;
        }
        if let Some(v) = f.format {
            self.format = v;
        }
        if let Some(v) = f.axes {
            self.axes = v;
        }
        if let Some(v) = f.task {
            self.task = v;
        }
        if let Some(v) = f.epochs {
            let mut train = self.train.take().unwrap_or_else(|| self.task_train_default());
            train.epochs = v;
            self.train = Some(train);
        }
    }

    fn propagate_seed(&mut self) {
        self.simulation.seed = self.seed;
        self.embeddings.seed = self.seed;
        if let Some(t) = &mut self.train {
            t.seed = self.seed;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(CliError::usage("holdout_fraction must be in [0, 1)"));
        }
        if self.blocks == Some(0) {
            return Err(CliError::usage("--blocks must be >= 1"));
        }
        if self.width == Some(0) {
            return Err(CliError::usage("--width must be >= 1"));
        }
        if let Some(t) = &self.train {
            t.validate().map_err(|e| CliError::usage(format!("train config: {e}")))?;
        }
        self.simulation
            .validate()
            .map_err(|e| CliError::usage(format!("simulation config: {e}")))?;
        self.embeddings
            .validate()
            .map_err(|e| CliError::usage(format!("embeddings config: {e}")))?;
        Ok(())
    }

    fn task_train_default(&self) -> TrainConfig {
        match self.task {
            Task::Simulation => TrainConfig::default(),
            Task::Verification => TrainConfig::for_embeddings(),
        }
    }

    /// Effective training settings for the configured task.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_else(|| self.task_train_default());
        t.seed = self.seed;
        t
    }

    /// Flow architecture, filling unset fields from `default`.
    pub fn flow_config(&self, default: FlowConfig) -> FlowConfig {
        FlowConfig {
            kind: self.block_type.unwrap_or(default.kind),
            blocks: self.blocks.unwrap_or(default.blocks),
            hidden: self.width.unwrap_or(default.hidden),
        }
    }

    /// Architecture used by `train` on data of dimension `dim`.
    pub fn train_flow(&self, dim: usize) -> FlowConfig {
        let default = if self.model.is_linear() {
            FlowConfig::linear()
        } else {
            FlowConfig::maf(10, FlowConfig::default_hidden(dim))
        };
        self.flow_config(default)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always serializable")
    }
}

pub fn parse_axes(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|_| format!("bad axis '{a}'"))?,
            b.parse().map_err(|_| format!("bad axis '{b}'"))?,
        ]),
        _ => Err(format!("axes must look like '0,1', got '{s}'")),
    }
}

pub fn parse_block_type(s: &str) -> Result<BlockKind, String> {
    match s {
        "linear" => Ok(BlockKind::Linear),
        "coupling" => Ok(BlockKind::Coupling),
        "maf" => Ok(BlockKind::Maf),
        _ => Err(format!("unknown block type '{s}' (expected linear, coupling or maf)")),
    }
}

pub fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: flowlda::Error| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"seed": 5, "class_dim": 1, "blocks": 3, "train": {"epochs": 7}}"#).unwrap();
        let flags = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.class_dim, 1);
        assert_eq!(cfg.blocks, Some(3));
        assert_eq!(cfg.width, None);
        assert_eq!(cfg.train_config().epochs, 7);
        assert_eq!(cfg.train_config().seed, 9);
        assert_eq!(cfg.simulation.seed, 9);
        assert_eq!(cfg.holdout_fraction, 0.2);
    }

    #[test]
    fn epochs_flag_keeps_task_defaults() {
        let flags = Overrides {
            task: Some(Task::Verification),
            epochs: Some(3),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(None, &flags).unwrap();
        let t = cfg.train_config();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.batch_size, TrainConfig::for_embeddings().batch_size);
    }

    #[test]
    fn unknown_keys_and_missing_files_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"sed": 5}"#).unwrap();
        assert!(matches!(ExperimentConfig::resolve(Some(&path), &Overrides::default()), Err(CliError::Usage(_))));
        let missing = dir.path().join("nope.json");
        let err = ExperimentConfig::resolve(Some(&missing), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("nope.json"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            model: ModelKind::LdaMl,
            axes: [1, 2],
            ..ExperimentConfig::default()
        };
        let back: ExperimentConfig = serde_json::from_value(cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn small_parsers() {
        assert_eq!(parse_axes("0, 2").unwrap(), [0, 2]);
        assert!(parse_axes("0").is_err());
        assert_eq!(parse_block_type("maf").unwrap(), BlockKind::Maf);
        assert!(parse_block_type("spline").is_err());
        assert_eq!(parse_model("lda-ml").unwrap(), ModelKind::LdaMl);
    }
}
