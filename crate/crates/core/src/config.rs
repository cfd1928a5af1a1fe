//! Experiment configuration files.
//!
//! A single TOML file names the data source, the feature schema, the cost
//! model, the target set, the network and training settings and every search
//! parameter. Class labels, cost features and one-hot groups are resolved
//! when the file is loaded so that a bad reference fails before any work.
//! Decimal values go through the standard correctly rounded float parser.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actionability::{CostModel, CostSpec, FeatureSchema, PenaltyConfig};
use crate::baselines::{CwConfig, WachterConfig};
use crate::bench::{BenchConfig, SyntheticSpec};
use crate::dataset::Dataset;
use crate::error::{Result, TapError};
use crate::netcore::{Architecture, TrainConfig};
use crate::perturb::{log_grid, OptConfig, RepairConfig};
use crate::probspace::{Divergence, TargetSet};

/// Names of the configurations shipped with the crate.
pub const BUNDLED: [&str; 5] = ["adult", "law", "diabetes", "german", "synthetic"];

fn bundled_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "adult" => include_str!("../configs/adult.toml"),
        "law" => include_str!("../configs/law.toml"),
        "diabetes" => include_str!("../configs/diabetes.toml"),
        "german" => include_str!("../configs/german.toml"),
        "synthetic" => include_str!("../configs/synthetic.toml"),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    Csv {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default = "SyntheticSpec::canonical")]
        spec: SyntheticSpec,
        #[serde(default = "default_n")]
        n: usize,
        /// Symmetric bound of every feature of the derived schema.
        #[serde(default = "default_feature_bound")]
        feature_bound: f64,
    },
}

fn default_n() -> usize {
    4000
}

fn default_feature_bound() -> f64 {
    10.0
}

/// Target set written with class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub desirable: Vec<String>,
    #[serde(default)]
    pub undesirable: Vec<String>,
    #[serde(default)]
    pub p: f64,
    #[serde(default = "one")]
    pub q: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierSection {
    /// Defaults to the model architecture.
    pub arch: Option<Architecture>,
    /// Defaults to the model training settings.
    pub train: Option<TrainConfig>,
    pub max_pairs: usize,
    pub pair_balance: f64,
    pub rejection_rate: f64,
    pub calibration_pairs: usize,
}

impl Default for VerifierSection {
    fn default() -> Self {
        Self {
            arch: None,
            train: None,
            max_pairs: 40_000,
            pair_balance: 0.5,
            rejection_rate: 0.10,
            calibration_pairs: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub individuals: usize,
    pub lambdas: Vec<f64>,
    pub epsilon_budgets: Vec<f64>,
    pub delta_thresholds: Vec<f64>,
    /// Run the repair loop on rejected TAP candidates.
    pub repair: bool,
    pub wachter: WachterConfig,
    pub cw: CwConfig,
    pub cw_box_margin: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            individuals: b.individuals,
            lambdas: b.lambdas,
            epsilon_budgets: b.epsilon_budgets,
            delta_thresholds: b.delta_thresholds,
            repair: true,
            wachter: b.wachter,
            cw: b.cw,
            cw_box_margin: b.cw_box_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_divergence")]
    pub divergence: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    /// Required for CSV data; derived from the mixture for synthetic data.
    #[serde(default)]
    pub schema: Option<FeatureSchema>,
    /// Defaults to unit squared distance on every feature.
    #[serde(default)]
    pub cost: Option<CostSpec>,
    pub target: TargetSpec,
    #[serde(default)]
    pub model: Architecture,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub verifier: VerifierSection,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub opt: OptConfig,
    #[serde(default)]
    pub repair: RepairConfig,
    #[serde(default)]
    pub bench: BenchSection,
}

fn default_divergence() -> String {
    "kl".into()
}

impl ExperimentConfig {
    /// Parses and validates; relative CSV paths are taken against `base`.
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| TapError::Config(e.message().to_string()))?;
        if let (DataSource::Csv { path }, Some(base)) = (&mut cfg.data, base) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TapError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    /// One of [`BUNDLED`].
    pub fn bundled(name: &str) -> Result<Self> {
        let text = bundled_text(name).ok_or_else(|| TapError::Config(format!("no bundled config '{name}'")))?;
        Self::from_toml_str(text, None)
    }

    pub fn bundled_source(name: &str) -> Option<&'static str> {
        bundled_text(name)
    }

    fn validate(&self) -> Result<()> {
        let schema = self.schema()?;
        self.cost_model_for(&schema)?;
        self.target_set_for(&schema)?;
        self.divergence()?;
        self.train.validate()?;
        if let Some(t) = &self.verifier.train {
            t.validate()?;
        }
        self.opt.validate()?;
        let rate = self.verifier.rejection_rate;
        if !(rate > 0.0 && rate < 1.0) {
            return Err(TapError::Config(format!("rejection_rate must lie in (0, 1), got {rate}")));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        match (&self.schema, &self.data) {
            (Some(s), _) => Ok(s.clone()),
            (None, DataSource::Synthetic { spec, feature_bound, .. }) => spec.schema(*feature_bound),
            (None, DataSource::Csv { .. }) => Err(TapError::Config("CSV data needs a [schema] section".into())),
        }
    }

    fn cost_spec(&self, schema: &FeatureSchema) -> CostSpec {
        self.cost.clone().unwrap_or_else(|| CostSpec {
            quadratic: schema
                .features()
                .iter()
                .map(|f| crate::actionability::WeightedTerm {
                    feature: f.name.clone(),
                    weight: 1.0,
                })
                .collect(),
            ..CostSpec::default()
        })
    }

    fn cost_model_for(&self, schema: &FeatureSchema) -> Result<CostModel> {
        CostModel::new(&self.cost_spec(schema), schema)
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        self.cost_model_for(&self.schema()?)
    }

    fn target_set_for(&self, schema: &FeatureSchema) -> Result<TargetSet> {
        let idx = |labels: &[String]| -> Result<Vec<usize>> { labels.iter().map(|l| schema.class_index(l)).collect() };
        TargetSet::new(
            schema.class_labels().len(),
            idx(&self.target.desirable)?,
            idx(&self.target.undesirable)?,
            self.target.p,
            self.target.q,
        )
    }

    pub fn target_set(&self) -> Result<TargetSet> {
        self.target_set_for(&self.schema()?)
    }

    pub fn divergence(&self) -> Result<Divergence> {
        Divergence::by_name(&self.divergence)
    }

    pub fn verifier_arch(&self) -> Architecture {
        self.verifier.arch.clone().unwrap_or_else(|| self.model.clone())
    }

    pub fn verifier_train(&self) -> TrainConfig {
        self.verifier.train.clone().unwrap_or_else(|| self.train.clone())
    }

    /// The model training settings with the seed taken from `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed: crate::rng::sub_seed(seed, "train"),
            ..self.train.clone()
        }
    }

    /// Reads the CSV or samples the mixture.
    pub fn load_data(&self, seed: u64) -> Result<Dataset> {
        match &self.data {
            DataSource::Csv { path } => {
                let schema = self.schema()?;
                let cols: Vec<String> = schema.features().iter().map(|f| f.name.clone()).collect();
                Dataset::from_csv(path, &cols, schema.label_column(), schema.class_labels())
            }
            DataSource::Synthetic { spec, n, .. } => spec.sample(*n, crate::rng::sub_seed(seed, "data")),
        }
    }

    /// Benchmark settings; needs synthetic data and a single desirable class.
    pub fn bench_config(&self, seed: u64) -> Result<BenchConfig> {
        let DataSource::Synthetic { spec, n, feature_bound } = &self.data else {
            return Err(TapError::Config("the benchmark needs synthetic data".into()));
        };
        let schema = self.schema()?;
        let [desirable] = self.target.desirable.as_slice() else {
            return Err(TapError::Config("the benchmark needs exactly one desirable class".into()));
        };
        if !self.target.undesirable.is_empty() {
            return Err(TapError::Config("the benchmark does not take undesirable classes".into()));
        }
        let b = &self.bench;
        Ok(BenchConfig {
            spec: spec.clone(),
            n: *n,
            model_train: self.train.clone(),
            model_arch: self.model.clone(),
            verifier_train: self.verifier_train(),
            verifier_arch: self.verifier_arch(),
            max_pairs: self.verifier.max_pairs,
            pair_balance: self.verifier.pair_balance,
            calibration_pairs: self.verifier.calibration_pairs,
            rejection_rate: self.verifier.rejection_rate,
            individuals: b.individuals,
            desirable_class: schema.class_index(desirable)?,
            p: self.target.p,
            lambdas: b.lambdas.clone(),
            opt: self.opt.clone(),
            penalty: self.penalty,
            repair: b.repair.then(|| self.repair.clone()),
            wachter: b.wachter.clone(),
            cw: b.cw.clone(),
            cw_box_margin: b.cw_box_margin,
            epsilon_budgets: b.epsilon_budgets.clone(),
            delta_thresholds: b.delta_thresholds.clone(),
            feature_bound: *feature_bound,
            seed,
        })
    }
}

/// The λ grid of the sweep command: 20 log-spaced values in `[1e-2, 1e2]`.
pub fn sweep_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 20)
}
