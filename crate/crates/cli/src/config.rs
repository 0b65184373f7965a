//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mirrorflow::experiment::{Preset, Sweep};
use mirrorflow::variational::Grid;
use mirrorflow::{Dataset, InitSpec, Potential, Recording, Scope, StepMode, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Preset(String),
    Inline { points: Vec<[f64; 2]> },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Preset("fig1".into())
    }
}

impl DatasetSpec {
    pub fn dataset(&self) -> Result<Dataset<f64>> {
        match self {
            DatasetSpec::Preset(name) => Ok(name.parse::<Preset>()?.dataset()),
            DatasetSpec::Inline { points } => {
                let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                Ok(Dataset::univariate(&pts)?)
            }
        }
    }
}

/// Training options. `eta0` is optional: when absent each potential uses its reference step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub eta0: Option<f64>,
    pub max_steps: u64,
    pub loss_threshold: f64,
    pub step_mode: StepMode,
    pub scope: Scope,
    pub recording: Recording,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::<f64>::default();
        TrainSection {
            eta0: None,
            max_steps: d.max_steps,
            loss_threshold: d.loss_threshold,
            step_mode: d.step_mode,
            scope: d.scope,
            recording: d.recording,
        }
    }
}

impl TrainSection {
    pub fn base(&self) -> TrainConfig<f64> {
        TrainConfig {
            eta0: self.eta0.unwrap_or(1.0),
            max_steps: self.max_steps,
            loss_threshold: self.loss_threshold,
            step_mode: self.step_mode,
            scope: self.scope,
            recording: self.recording,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct VariationalSection {
    pub grid: Grid<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub widths: Vec<usize>,
    pub potentials: Vec<Potential<f64>>,
    pub init: InitSpec<f64>,
    pub train: TrainSection,
    pub variational: VariationalSection,
    pub seeds: Vec<u64>,
    pub outputs: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            widths: vec![30, 270, 2430],
            potentials: Potential::reference_set().to_vec(),
            init: InitSpec::zero_output(0),
            train: TrainSection::default(),
            variational: VariationalSection::default(),
            seeds: vec![0],
            outputs: PathBuf::from("out"),
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            anyhow::anyhow!(
                "invalid experiment config: {e}\nknown fields: dataset, widths, potentials, init, train, variational, seeds, outputs, workers"
            )
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            bail!("widths must list at least one width");
        }
        if self.widths.contains(&0) {
            bail!("widths must be >= 1");
        }
        if self.potentials.is_empty() {
            bail!("potentials must list at least one potential");
        }
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        if self.workers == 0 {
            bail!("workers must be >= 1");
        }
        self.sweep()?.validate()?;
        Ok(())
    }

    pub fn sweep(&self) -> Result<Sweep<f64>> {
        let mut s = Sweep::new(
            self.dataset.dataset()?,
            self.widths.clone(),
            self.potentials.clone(),
            self.seeds.clone(),
        );
        s.init = self.init;
        s.train = self.train.base();
        s.eta0_override = self.train.eta0;
        s.grid = self.variational.grid;
        s.workers = self.workers;
        Ok(s)
    }
}
