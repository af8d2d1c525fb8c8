//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::synthetic::SyntheticSpec;
use crate::wine::WineSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Synthetic,
    Wine,
    ObservabilityAnalysis,
    InputDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mhe,
    RegularizedMhe,
    Gd,
    Adam,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mhe => "mhe",
            Method::RegularizedMhe => "regularized-mhe",
            Method::Gd => "gd",
            Method::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "mhe" => Method::Mhe,
            "regularized-mhe" => Method::RegularizedMhe,
            "gd" => Method::Gd,
            "adam" => Method::Adam,
            other => bail!("unknown method {other:?}; expected mhe, regularized-mhe, gd or adam"),
        })
    }

    /// Comma separated list, e.g. `mhe,gd`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(Self::parse).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Optimizers {
    pub gd_lr: f64,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of the output residual in the regularized MHE cost.
    pub reg_lambda: f64,
}

impl Default for Optimizers {
    fn default() -> Self {
        Self {
            gd_lr: 0.1,
            adam_lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            reg_lambda: relu_mhe::mhe_train::DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Independent repeats of `benchmark`; repeat `r` uses seed `seed + r`.
    /// `train` runs repeat 0 only.
    pub repeats: usize,
    /// Defaults to 50 for synthetic and 150 for wine runs.
    pub epochs: Option<usize>,
    pub methods: Vec<Method>,
    pub optimizers: Optimizers,
    pub output: PathBuf,
    /// Fill the `wall_time` column. Off by default so that metric files are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
    /// Record every step instead of every epoch.
    pub record_every_step: bool,
    /// Estimation error that counts as converged in the summary.
    pub error_threshold: f64,
    /// Epochs at the end of a run over which the limsup error is taken.
    pub tail_epochs: usize,
    pub synthetic: SyntheticSpec,
    pub wine: WineSpec,
    /// Weights CSV for the analysis and input-design modes.
    pub weights: Option<PathBuf>,
    /// The last row of the weights file is the hidden bias.
    pub bias: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Synthetic,
            seed: 0,
            repeats: 30,
            epochs: None,
            methods: vec![Method::Mhe],
            optimizers: Optimizers::default(),
            output: PathBuf::from("out"),
            record_wall_time: false,
            record_every_step: true,
            error_threshold: 5e-3,
            tail_epochs: 50,
            synthetic: SyntheticSpec::default(),
            wine: WineSpec::default(),
            weights: None,
            bias: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing the experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        // relative dataset paths are resolved against the config file
        if cfg.wine.path.is_relative() && !cfg.wine.path.exists() {
            if let Some(dir) = path.parent() {
                let candidate = dir.join(&cfg.wine.path);
                if candidate.exists() {
                    cfg.wine.path = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.mode {
            Mode::Wine => 150,
            _ => 50,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.repeats > 0, "repeats must be positive");
        ensure!(!self.methods.is_empty(), "no training method selected");
        ensure!(self.error_threshold > 0.0, "error_threshold must be positive");
        let s = &self.synthetic;
        ensure!(
            s.batches > 0 && s.samples % s.batches == 0,
            "the schedule must partition the samples: {} samples into {} batches",
            s.samples,
            s.batches
        );
        if self.mode == Mode::Wine {
            ensure!(
                !self.methods.contains(&Method::Mhe),
                "the constrained MHE needs fixed output weights; use regularized-mhe for wine"
            );
            ensure!(self.wine.batch_size > 0, "batch_size must be positive");
        }
        if matches!(self.mode, Mode::ObservabilityAnalysis | Mode::InputDesign) {
            ensure!(self.weights.is_some(), "this mode needs a weights file");
        }
        Ok(())
    }
}
