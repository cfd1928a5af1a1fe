//! Synthetic ground-truth benchmark.
//!
//! Data come from a Gaussian mixture whose Bayes posterior is known exactly,
//! so every perturbation can be scored both against the trained model and
//! against the true class probabilities. The harness trains the model and
//! the verifier, runs each method on test individuals outside the target
//! set and aggregates success rates over (δ threshold, ε budget) cells.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actionability::{CostModel, CostSpec, Feature, FeatureSchema, PenaltyConfig, WeightedTerm};
use crate::baselines::{cw_l2, mad_weights, wachter_counterfactual, CwConfig, InputBox, Method, WachterConfig};
use crate::dataset::{Dataset, Split};
use crate::error::{Result, TapError};
use crate::netcore::{train_on_splits, Architecture, DenseClassifier, TrainConfig};
use crate::perturb::{frontier_sweep, log_grid, repair_on_rejection, OptConfig, PerturbContext, RepairConfig, VerifyContext};
use crate::probspace::{self, Divergence, ProbVector, TargetSet};
use crate::rng::{stream, sub_seed};
use crate::verify::{self, build_pair_dataset, calibrate_gamma, train_verifier, GammaCalibration, Verifier};

pub mod plots;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub mean: Vec<f64>,
    /// Diagonal of the covariance.
    pub variance: Vec<f64>,
    pub prior: f64,
}

/// A mixture of axis-aligned Gaussians, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDef", into = "SpecDef")]
pub struct SyntheticSpec {
    components: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
struct SpecDef {
    components: Vec<Component>,
}

impl TryFrom<SpecDef> for SyntheticSpec {
    type Error = TapError;

    fn try_from(d: SpecDef) -> Result<Self> {
        SyntheticSpec::new(d.components)
    }
}

impl From<SyntheticSpec> for SpecDef {
    fn from(s: SyntheticSpec) -> Self {
        SpecDef { components: s.components }
    }
}

impl SyntheticSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let bad = |m: String| Err(TapError::Config(m));
        let Some(first) = components.first() else {
            return bad("synthetic spec needs at least one component".into());
        };
        let d = first.mean.len();
        if d == 0 {
            return bad("synthetic spec needs at least one dimension".into());
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.variance.len() != d {
                return bad(format!("component {i} has inconsistent dimension"));
            }
            if c.variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return bad(format!("component {i} has a non-positive variance"));
            }
            if !(c.prior > 0.0) {
                return bad(format!("component {i} has a non-positive prior"));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return bad(format!("component {i} has a non-finite mean"));
            }
        }
        let total: f64 = components.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("priors sum to {total}, expected 1"));
        }
        Ok(Self { components })
    }

    /// Two classes in `d >= 2` dimensions with means `-/+ (s, s, 0, ...)`,
    /// unit variances and equal priors.
    pub fn two_gaussians(d: usize, s: f64) -> Result<Self> {
        if d < 2 {
            return Err(TapError::Config("two_gaussians needs d >= 2".into()));
        }
        let mut mean = vec![0.0; d];
        mean[0] = s;
        mean[1] = s;
        let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
        Self::new(vec![
            Component { mean: neg, variance: vec![1.0; d], prior: 0.5 },
            Component { mean, variance: vec![1.0; d], prior: 0.5 },
        ])
    }

    /// The canonical benchmark: `d = 4`, means `-/+ (1.5, 1.5, 0, 0)`.
    pub fn canonical() -> Self {
        Self::two_gaussians(4, 1.5).expect("valid constants")
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn num_classes(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// `n` i.i.d. draws: class by prior, features by that class's Gaussian.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let k = self.num_classes();
        if n < k {
            return Err(TapError::Config(format!("need n >= k, got n = {n}, k = {k}")));
        }
        let mut rng = stream(seed, "synthetic");
        let d = self.dim();
        let mut flat = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut c = k - 1;
            let mut acc = 0.0;
            for (i, comp) in self.components.iter().enumerate() {
                acc += comp.prior;
                if u < acc {
                    c = i;
                    break;
                }
            }
            let comp = &self.components[c];
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                flat.push(comp.mean[j] + comp.variance[j].sqrt() * z);
            }
            y.push(c);
        }
        let x = ndarray::Array2::from_shape_vec((n, d), flat).map_err(|e| TapError::Data(e.to_string()))?;
        Dataset::new(x, y, k)
    }

    /// Bayes posterior `P(C = c | x)`.
    pub fn true_posterior(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.dim() {
            return Err(TapError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let mut lp = c.prior.ln();
                for ((xj, m), v) in x.iter().zip(&c.mean).zip(&c.variance) {
                    let z = xj - m;
                    lp -= 0.5 * (z * z / v + v.ln());
                }
                lp
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        ProbVector::new(w.iter().map(|v| v / total).collect())
    }
}

/// Settings of one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub spec: SyntheticSpec,
    pub n: usize,
    pub model_train: TrainConfig,
    pub model_arch: Architecture,
    pub verifier_train: TrainConfig,
    pub verifier_arch: Architecture,
    pub max_pairs: usize,
    pub pair_balance: f64,
    pub calibration_pairs: usize,
    pub rejection_rate: f64,
    /// Upper limit on individuals taken from the test split.
    pub individuals: usize,
    pub desirable_class: usize,
    pub p: f64,
    pub lambdas: Vec<f64>,
    pub opt: OptConfig,
    pub penalty: PenaltyConfig,
    /// Re-runs rejected TAP candidates with adjusted parameters; `None`
    /// keeps the plain sweep.
    pub repair: Option<RepairConfig>,
    pub wachter: WachterConfig,
    pub cw: CwConfig,
    pub cw_box_margin: f64,
    pub epsilon_budgets: Vec<f64>,
    pub delta_thresholds: Vec<f64>,
    pub feature_bound: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::canonical(),
            n: 4000,
            model_train: TrainConfig::default(),
            model_arch: Architecture::default(),
            verifier_train: TrainConfig {
                max_epochs: 30,
                ..TrainConfig::default()
            },
            verifier_arch: Architecture::default(),
            max_pairs: 40_000,
            pair_balance: 0.5,
            calibration_pairs: 20_000,
            rejection_rate: 0.10,
            individuals: 60,
            desirable_class: 1,
            p: 0.8,
            lambdas: log_grid(1e-4, 1e2, 20),
            opt: OptConfig::default(),
            penalty: PenaltyConfig::default(),
            repair: Some(RepairConfig::default()),
            wachter: WachterConfig::default(),
            cw: CwConfig::default(),
            cw_box_margin: 0.1,
            epsilon_budgets: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0, f64::INFINITY],
            delta_thresholds: vec![0.0, 0.1, 0.5],
            feature_bound: 10.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// All-numeric mutable schema with symmetric bounds, one column per
    /// dimension, named `x0, x1, ...`.
    pub fn schema(&self, bound: f64) -> Result<FeatureSchema> {
        let features = (0..self.dim())
            .map(|j| Feature::numeric(&format!("x{j}"), -bound, bound))
            .collect();
        let labels = (0..self.num_classes()).map(|c| format!("class{c}")).collect();
        FeatureSchema::new(features, "label".into(), labels)
    }

    /// Unit-weight squared distance on every feature.
    pub fn squared_cost(&self) -> CostSpec {
        CostSpec {
            quadratic: (0..self.dim())
                .map(|j| WeightedTerm {
                    feature: format!("x{j}"),
                    weight: 1.0,
                })
                .collect(),
            ..CostSpec::default()
        }
    }
}

/// Models and data shared by the methods of one run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub split: Split,
    pub model: DenseClassifier,
    pub verifier: Verifier,
    pub calibration: GammaCalibration,
}

/// Samples the benchmark data, trains `M` and `V` and calibrates `gamma`.
pub fn train_models(cfg: &BenchConfig) -> Result<Trained> {
    let data = cfg.spec.sample(cfg.n, sub_seed(cfg.seed, "data"))?;
    let split = data.split(cfg.model_train.split, &mut stream(cfg.seed, "split"))?;
    let train_cfg = TrainConfig {
        seed: sub_seed(cfg.seed, "train"),
        ..cfg.model_train.clone()
    };
    let model = train_on_splits(&split.train, Some(&split.validation), &train_cfg, &cfg.model_arch)?;
    let pairs = build_pair_dataset(&split.train, cfg.max_pairs, cfg.pair_balance, &mut stream(cfg.seed, "pairs"))?;
    let verifier_cfg = TrainConfig {
        seed: sub_seed(cfg.seed, "verifier"),
        ..cfg.verifier_train.clone()
    };
    let verifier = train_verifier(&pairs, &verifier_cfg, &cfg.verifier_arch)?;
    let calibration = calibrate_gamma(
        &model,
        &verifier,
        &split.test,
        cfg.rejection_rate,
        cfg.calibration_pairs,
        sub_seed(cfg.seed, "calibration"),
    )?;
    Ok(Trained {
        split,
        model,
        verifier,
        calibration,
    })
}

/// One evaluated point of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub individual_id: usize,
    pub method: Method,
    /// λ for TAP and Wachter, c for CW; infinite for the origin.
    pub lambda: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Distance of the true posterior to the target set.
    pub true_delta: f64,
    pub discrepancy: f64,
    pub verified: bool,
    pub iterations: usize,
    /// Goal reached: argmax flip for the baselines, always true for TAP.
    pub success: bool,
    pub true_gain: f64,
    pub x_perturbed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub method: Method,
    pub delta_threshold: f64,
    pub epsilon_budget: f64,
    pub individuals: usize,
    pub success_rate_pre_verification: f64,
    pub success_rate_post_verification: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessTable {
    pub rows: Vec<SuccessRow>,
}

impl SuccessTable {
    pub fn get(&self, method: Method, delta_threshold: f64, epsilon_budget: f64) -> Option<&SuccessRow> {
        self.rows.iter().find(|r| {
            r.method == method && r.delta_threshold == delta_threshold && r.epsilon_budget == epsilon_budget
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub table: SuccessTable,
    pub rows: Vec<FrontierRow>,
    pub individuals: Vec<usize>,
    /// Per-individual failures that were skipped.
    pub failures: Vec<String>,
}

impl BenchOutput {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &FrontierRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Test-split rows whose prediction is not yet in the target set.
pub fn select_individuals(model: &DenseClassifier, test: &Dataset, target: &TargetSet, limit: usize) -> Result<Vec<usize>> {
    let probs = model.predict_proba_batch(test.features())?;
    Ok((0..test.len())
        .filter(|&i| !target.contains(probs.row(i).as_slice().unwrap(), 0.0))
        .take(limit)
        .collect())
}

/// Aggregates per-individual rows into success rates.
///
/// An individual counts as a success in a cell when some row of the method
/// has `epsilon <= budget`, `delta <= threshold` and reached its goal; the
/// post-verification rate also requires the row to be verified.
pub fn aggregate(
    rows: &[FrontierRow],
    individuals: &[usize],
    methods: &[Method],
    delta_thresholds: &[f64],
    epsilon_budgets: &[f64],
) -> SuccessTable {
    let mut table = SuccessTable::default();
    let n = individuals.len();
    if n == 0 {
        return table;
    }
    for &method in methods {
        for &t in delta_thresholds {
            for &b in epsilon_budgets {
                let (mut pre, mut post) = (0usize, 0usize);
                for &id in individuals {
                    let hits = rows.iter().filter(|r| {
                        r.individual_id == id && r.method == method && r.success && r.epsilon <= b && r.delta <= t
                    });
                    let (mut any, mut any_verified) = (false, false);
                    for r in hits {
                        any = true;
                        any_verified |= r.verified;
                    }
                    pre += usize::from(any);
                    post += usize::from(any_verified);
                }
                let rate = |c: usize| c as f64 / n as f64;
                table.rows.push(SuccessRow {
                    method,
                    delta_threshold: t,
                    epsilon_budget: b,
                    individuals: n,
                    success_rate_pre_verification: rate(pre),
                    success_rate_post_verification: rate(post),
                });
            }
        }
    }
    table
}

fn desirable_mass(p: &ProbVector, target: &TargetSet) -> f64 {
    target.desirable().iter().map(|&i| p[i]).sum()
}

/// Runs TAP (frontier sweep plus origin), the counterfactual baseline and
/// CW on each selected individual and aggregates success rates.
pub fn run_benchmark(cfg: &BenchConfig, trained: &Trained, methods: &[Method]) -> Result<BenchOutput> {
    let spec = &cfg.spec;
    let schema = spec.schema(cfg.feature_bound)?;
    let cost = CostModel::new(&spec.squared_cost(), &schema)?;
    let target = TargetSet::at_least(spec.num_classes(), cfg.desirable_class, cfg.p)?;
    let ctx = PerturbContext {
        model: &trained.model,
        target: target.clone(),
        divergence: Divergence::kl(),
        cost: &cost,
        schema: &schema,
        penalty: cfg.penalty,
    };
    let test = &trained.split.test;
    let individuals = select_individuals(&trained.model, test, &target, cfg.individuals)?;
    let mad = mad_weights(&trained.split.train);
    let cw_box = InputBox::from_data(&trained.split.train, Some(&schema), cfg.cw_box_margin);

    let vctx = VerifyContext {
        verifier: &trained.verifier,
        calibration: &trained.calibration,
    };
    let opt = OptConfig {
        seed: sub_seed(cfg.seed, "opt"),
        ..cfg.opt.clone()
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &id in &individuals {
        let x = test.row_vec(id);
        let base = desirable_mass(&spec.true_posterior(&x)?, &target);
        let mut push = |method: Method, lambda: f64, xt: &[f64], epsilon: f64, delta: f64, iterations: usize, success: bool| -> Result<()> {
            let v = verify::verify(&trained.model, &trained.verifier, &trained.calibration, &x, xt)?;
            let truth = spec.true_posterior(xt)?;
            rows.push(FrontierRow {
                individual_id: id,
                method,
                lambda,
                epsilon,
                delta,
                true_delta: probspace::target_distance(&truth, &target, &ctx.divergence)?,
                discrepancy: v.discrepancy,
                verified: v.accepted,
                iterations,
                success,
                true_gain: desirable_mass(&truth, &target) - base,
                x_perturbed: xt.to_vec(),
            });
            Ok(())
        };
        for &method in methods {
            match method {
                Method::Tap => {
                    let origin = ctx.origin(&x)?;
                    push(Method::Tap, origin.lambda_used, &x, origin.epsilon, origin.delta, 0, true)?;
                    let frontier = frontier_sweep(&ctx, &x, &opt, &cfg.lambdas)?;
                    for f in &frontier.failures {
                        failures.push(format!("individual {id}, tap lambda {}: {}", f.lambda, f.error));
                    }
                    for mut c in frontier.candidates {
                        push(Method::Tap, c.lambda_used, &c.x_perturbed, c.epsilon, c.delta, c.iterations, true)?;
                        let Some(rc) = &cfg.repair else { continue };
                        if c.is_origin() {
                            continue;
                        }
                        c.verify_with(&trained.model, &trained.verifier, &trained.calibration)?;
                        if c.verified == Some(true) {
                            continue;
                        }
                        let oc = opt.with_lambda(c.lambda_used);
                        match repair_on_rejection(&ctx, &vctx, &c, &oc, rc) {
                            Ok(outcome) => {
                                for a in outcome.attempts {
                                    let r = a.candidate;
                                    push(Method::Tap, r.lambda_used, &r.x_perturbed, r.epsilon, r.delta, r.iterations, true)?;
                                }
                            }
                            Err(e) => failures.push(format!("individual {id}, tap repair: {e}")),
                        }
                    }
                }
                Method::Wachter => {
                    match wachter_counterfactual(&ctx, &x, cfg.desirable_class, &mad, &cfg.wachter) {
                        Ok(r) => push(Method::Wachter, r.weight, &r.x_perturbed, r.epsilon, r.delta, r.iterations, r.success)?,
                        Err(e) => failures.push(format!("individual {id}, wachter: {e}")),
                    }
                }
                Method::Cw => {
                    if trained.model.predict_class(&x)? == cfg.desirable_class {
                        continue;
                    }
                    match cw_l2(&ctx, &x, cfg.desirable_class, &cw_box, &cfg.cw) {
                        Ok(r) => push(Method::Cw, r.weight, &r.x_perturbed, r.epsilon, r.delta, r.iterations, r.success)?,
                        Err(e) => failures.push(format!("individual {id}, cw: {e}")),
                    }
                }
            }
        }
    }
    let table = aggregate(&rows, &individuals, methods, &cfg.delta_thresholds, &cfg.epsilon_budgets);
    Ok(BenchOutput {
        table,
        rows,
        individuals,
        failures,
    })
}

/// Mean gain in true desirable-class probability per method.
pub fn true_improvement_report(
    candidates: &[(Method, Vec<f64>, Vec<f64>)],
    spec: &SyntheticSpec,
    target: &TargetSet,
) -> Result<Vec<(Method, f64, usize)>> {
    let mut sums: std::collections::BTreeMap<Method, (f64, usize)> = std::collections::BTreeMap::new();
    for (method, x, xt) in candidates {
        let gain = desirable_mass(&spec.true_posterior(xt)?, target) - desirable_mass(&spec.true_posterior(x)?, target);
        let e = sums.entry(*method).or_insert((0.0, 0));
        e.0 += gain;
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(m, (s, n))| (m, s / n as f64, n))
        .collect())
}

/// Candidates scored by [`true_improvement_report`]: every successful
/// baseline row, and per individual the verified non-origin TAP row with the
/// smallest δ (ties broken by ε).
pub fn improvement_candidates(out: &BenchOutput, test: &Dataset) -> Vec<(Method, Vec<f64>, Vec<f64>)> {
    let mut candidates = Vec::new();
    for r in out.rows.iter().filter(|r| r.method != Method::Tap && r.success) {
        candidates.push((r.method, test.row_vec(r.individual_id), r.x_perturbed.clone()));
    }
    for &id in &out.individuals {
        let best = out
            .rows_for(Method::Tap)
            .filter(|r| r.individual_id == id && r.verified && r.epsilon > 0.0)
            .min_by(|a, b| a.delta.total_cmp(&b.delta).then(a.epsilon.total_cmp(&b.epsilon)));
        if let Some(b) = best {
            candidates.push((Method::Tap, test.row_vec(id), b.x_perturbed.clone()));
        }
    }
    candidates
}

#[derive(Serialize)]
struct FrontierCsvRow<'a> {
    individual_id: usize,
    method: &'a str,
    lambda: f64,
    epsilon: f64,
    delta: f64,
    true_delta: f64,
    discrepancy: f64,
    verified: bool,
    iterations: usize,
    success: bool,
    true_gain: f64,
}

/// Frontier rows as CSV, one line per evaluated point.
pub fn write_frontier_csv<W: std::io::Write>(w: W, rows: &[FrontierRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(FrontierCsvRow {
            individual_id: r.individual_id,
            method: r.method.as_str(),
            lambda: r.lambda,
            epsilon: r.epsilon,
            delta: r.delta,
            true_delta: r.true_delta,
            discrepancy: r.discrepancy,
            verified: r.verified,
            iterations: r.iterations,
            success: r.success,
            true_gain: r.true_gain,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Success table as CSV.
pub fn write_success_csv<W: std::io::Write>(w: W, table: &SuccessTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in &table.rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
