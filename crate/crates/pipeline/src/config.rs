//! Experiment configuration: one JSON document, checked against the published
//! schema and then by [`ExperimentConfig::validate`].

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use cita::datagen::RKHS_DEFAULT_BANDWIDTH;
use cita::tarnet::{Architecture, IpmConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{PipelineError, Result};

pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Transfer,
    Symmetry,
    Correlation,
    Efficiency,
    Bundling,
    VerifyBounds,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Transfer => "transfer",
            ExperimentKind::Symmetry => "symmetry",
            ExperimentKind::Correlation => "correlation",
            ExperimentKind::Efficiency => "efficiency",
            ExperimentKind::Bundling => "bundling",
            ExperimentKind::VerifyBounds => "verify-bounds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.to_string())).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Heat,
    Movement,
    Rkhs,
    Ihdp,
}

impl FamilyKind {
    pub fn default_n(self) -> usize {
        match self {
            FamilyKind::Heat | FamilyKind::Movement => 4000,
            FamilyKind::Rkhs => 2000,
            FamilyKind::Ihdp => 747,
        }
    }
}

fn default_test_n() -> usize {
    1000
}

fn default_rkhs_tasks() -> usize {
    10
}

fn default_bandwidth() -> f64 {
    RKHS_DEFAULT_BANDWIDTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub family: FamilyKind,
    /// Training rows per task; defaults to the family's published size.
    #[serde(default)]
    pub n: Option<usize>,
    /// Held-out rows per task used for PEHE and counterfactual losses.
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    #[serde(default)]
    pub data_seed: u64,
    /// Setting indices to build; all settings when absent.
    #[serde(default)]
    pub tasks: Option<Vec<usize>>,
    #[serde(default = "default_rkhs_tasks")]
    pub rkhs_tasks: usize,
    #[serde(default = "default_bandwidth")]
    pub rkhs_bandwidth: f64,
    /// Real IHDP covariate CSV; the surrogate is used when absent.
    #[serde(default)]
    pub covariates: Option<PathBuf>,
}

impl FamilyConfig {
    pub fn of(family: FamilyKind) -> Self {
        FamilyConfig {
            family,
            n: None,
            test_n: default_test_n(),
            data_seed: 0,
            tasks: None,
            rkhs_tasks: default_rkhs_tasks(),
            rkhs_bandwidth: default_bandwidth(),
            covariates: None,
        }
    }

    pub fn train_n(&self) -> usize {
        self.n.unwrap_or(self.family.default_n())
    }
}

fn default_fine_tune_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub ipm: IpmConfig,
    pub standardize: bool,
    pub architecture: Architecture,
    /// Fine-tuning epochs as a fraction of `epochs`.
    #[serde(default = "default_fine_tune_fraction")]
    pub fine_tune_fraction: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            ipm: t.ipm,
            standardize: t.standardize,
            architecture: Architecture::default(),
            fine_tune_fraction: default_fine_tune_fraction(),
        }
    }
}

impl TrainSettings {
    pub fn config(&self, alpha: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            alpha,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            ipm: self.ipm,
            standardize: self.standardize,
            ..TrainConfig::default()
        }
    }

    pub fn fine_tune_epochs(&self) -> usize {
        ((self.epochs as f64 * self.fine_tune_fraction).ceil() as usize).max(1)
    }
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workdir: default_workdir(),
            out: default_out(),
        }
    }
}

fn default_alpha_grid() -> Vec<f64> {
    vec![1.0]
}

pub fn default_p_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub family: FamilyConfig,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Target training-subset sizes, ascending.
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    #[serde(default)]
    pub base_index: usize,
    #[serde(default)]
    pub target_index: usize,
    /// Candidate sources; every other task when absent.
    #[serde(default)]
    pub source_indices: Option<Vec<usize>>,
    /// Balancing weight of the source models; the first grid value when absent.
    #[serde(default)]
    pub source_alpha: Option<f64>,
    /// Numbers of sources in the bundled dataset, closest first; all sources when absent.
    #[serde(default)]
    pub bundle_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn compiled_schema() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(SCHEMA).expect("schema is valid JSON");
        jsonschema::validator_for(&schema).expect("schema compiles")
    })
}

impl ExperimentConfig {
    pub fn minimal(experiment: ExperimentKind, family: FamilyKind) -> Self {
        ExperimentConfig {
            experiment,
            family: FamilyConfig::of(family),
            alpha_grid: default_alpha_grid(),
            seeds: vec![0],
            sizes: Vec::new(),
            p_grid: default_p_grid(),
            base_index: 0,
            target_index: 0,
            source_indices: None,
            source_alpha: None,
            bundle_counts: None,
            train: TrainSettings::default(),
            paths: Paths::default(),
            workers: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| PipelineError::config(format!("not JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let problems: Vec<String> = compiled_schema()
            .iter_errors(&value)
            .map(|e| format!("{} at {}", e, e.instance_path()))
            .collect();
        if !problems.is_empty() {
            return Err(PipelineError::config(problems.join("; ")));
        }
        let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| PipelineError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Checks the constraints the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::config(m));
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alpha_grid must hold finite nonnegative values".into());
        }
        if let Some(a) = self.source_alpha {
            if !(a.is_finite() && a >= 0.0) {
                return bad("source_alpha must be finite and nonnegative".into());
            }
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sizes must be strictly ascending".into());
        }
        let n = self.family.train_n();
        if let Some(&s) = self.sizes.iter().find(|&&s| s < 2 || s > n) {
            return bad(format!("size {s} outside 2..={n} (training rows per task)"));
        }
        if self.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("p_grid values must lie in [0, 1]".into());
        }
        if matches!(
            self.experiment,
            ExperimentKind::Transfer | ExperimentKind::Efficiency | ExperimentKind::Bundling
        ) && self.sizes.is_empty()
        {
            return bad(format!("{} needs at least one target size", self.experiment.name()));
        }
        if self.train.fine_tune_fraction <= 0.0 || !self.train.fine_tune_fraction.is_finite() {
            return bad("fine_tune_fraction must be positive".into());
        }
        if self.family.test_n < 2 {
            return bad("test_n must be at least 2".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.train.config(self.alpha_grid[0], 0).validate().map_err(|e| PipelineError::config(e.to_string()))?;
        Ok(())
    }

    /// Short content hash of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        crate::short_hash(text.as_bytes())
    }

    pub fn source_alpha(&self) -> f64 {
        self.source_alpha.unwrap_or(self.alpha_grid[0])
    }
}
