//! Penalty-based search for actionable perturbations.
//!
//! For an individual `x` the search minimizes
//!
//! ```text
//! d_Y(M(x~), T) + lambda * d_X(x, x~) + b(x~) + p(x~)
//! ```
//!
//! with ADAM over a displacement expressed in the model's standardized
//! units, keeps immutable coordinates fixed, and projects the result onto the
//! coherent space once at the end. `lambda` trades cost against closeness to
//! the target set; sweeping it traces the cost/benefit frontier.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::actionability::{self, ActionableBox, CostModel, FeatureSchema, PenaltyConfig};
use crate::error::{Result, TapError};
use crate::netcore::{Adam, DenseClassifier};
use crate::probspace::{self, Divergence, TargetSet};
use crate::rng::stream;
use crate::verify::{self, GammaCalibration, Verifier};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    /// ADAM step size in standardized feature units.
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Relative objective change regarded as stalled.
    pub convergence_tol: f64,
    /// Consecutive stalled iterations that end the run.
    pub convergence_window: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            max_iters: 500,
            convergence_tol: 1e-6,
            convergence_window: 10,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_iters == 0 || !(self.lambda >= 0.0) {
            return Err(TapError::Config(
                "optimizer needs learning_rate > 0, max_iters >= 1 and lambda >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }
}

/// Everything the search needs besides the individual.
#[derive(Debug, Clone)]
pub struct PerturbContext<'a> {
    pub model: &'a DenseClassifier,
    pub target: TargetSet,
    pub divergence: Divergence,
    pub cost: &'a CostModel,
    pub schema: &'a FeatureSchema,
    pub penalty: PenaltyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapCandidate {
    pub x_original: Vec<f64>,
    pub x_perturbed: Vec<f64>,
    /// `d_X(x, x~)`
    pub epsilon: f64,
    /// `d_Y(M(x~), T)`
    pub delta: f64,
    /// Infinite for the unmodified origin.
    pub lambda_used: f64,
    pub discrepancy: Option<f64>,
    pub verified: Option<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value per iteration.
    pub trace: Vec<f64>,
}

impl TapCandidate {
    pub fn is_origin(&self) -> bool {
        self.x_perturbed == self.x_original
    }

    /// Attaches `Delta` and the verdict.
    pub fn verify_with(&mut self, model: &DenseClassifier, verifier: &Verifier, cal: &GammaCalibration) -> Result<()> {
        let v = verify::verify(model, verifier, cal, &self.x_original, &self.x_perturbed)?;
        self.discrepancy = Some(v.discrepancy);
        self.verified = Some(v.accepted);
        Ok(())
    }
}

impl<'a> PerturbContext<'a> {
    fn check(&self, x: &[f64]) -> Result<()> {
        let d = self.model.num_inputs();
        if x.len() != d || self.schema.dim() != d || self.cost.dim() != d {
            return Err(TapError::DimensionMismatch { expected: d, got: x.len() });
        }
        if self.target.num_classes() != self.model.num_classes() {
            return Err(TapError::DimensionMismatch {
                expected: self.model.num_classes(),
                got: self.target.num_classes(),
            });
        }
        Ok(())
    }

    /// `d_Y(M(x~), T)`
    pub fn delta(&self, xt: &[f64], target: &TargetSet) -> Result<f64> {
        probspace::target_distance(&self.model.predict_proba(xt)?, target, &self.divergence)
    }

    /// Candidate for `x~ = x` with nothing changed.
    pub fn origin(&self, x: &[f64]) -> Result<TapCandidate> {
        self.check(x)?;
        let delta = self.delta(x, &self.target)?;
        Ok(TapCandidate {
            x_original: x.to_vec(),
            x_perturbed: x.to_vec(),
            epsilon: self.cost.cost(x, x)?,
            delta,
            lambda_used: f64::INFINITY,
            discrepancy: None,
            verified: None,
            iterations: 0,
            converged: true,
            trace: vec![delta],
        })
    }

    /// Objective value and its gradient in raw units.
    fn objective(&self, x: &[f64], xt: &[f64], target: &TargetSet, lambda: f64, bx: &ActionableBox) -> Result<(f64, Vec<f64>)> {
        let probs = self.model.predict_proba(xt)?;
        let dy = probspace::target_distance(&probs, target, &self.divergence)?;
        let gy = probspace::target_distance_grad(&probs, target, &self.divergence)?;
        let mut grad = if gy.iter().all(|&g| g == 0.0) {
            vec![0.0; xt.len()]
        } else {
            self.model.input_gradient(xt, &gy)?
        };
        let mut value = dy;
        if lambda > 0.0 {
            value += lambda * self.cost.cost(x, xt)?;
            for (g, c) in grad.iter_mut().zip(self.cost.cost_grad(x, xt)?) {
                *g += lambda * c;
            }
        }
        let (b, gb) = actionability::penalty_actionable(xt, bx, &self.penalty);
        let (p, gp) = actionability::penalty_coherence(xt, self.schema, &self.penalty);
        value += b + p;
        for i in 0..grad.len() {
            grad[i] += gb[i] + gp[i];
        }
        Ok((value, grad))
    }

    /// Runs the search from `x + std * start`, where `start` is a
    /// displacement in standardized units.
    fn run(&self, x: &[f64], target: &TargetSet, oc: &OptConfig, start: Vec<f64>) -> Result<TapCandidate> {
        self.check(x)?;
        oc.validate()?;
        let bx = self.schema.actionable_box(x)?;
        let std = &self.model.standardizer().std;
        let frozen: Vec<bool> = (0..x.len()).map(|i| bx.is_frozen(i)).collect();
        let mut s = start;
        for (si, &f) in s.iter_mut().zip(&frozen) {
            if f {
                *si = 0.0;
            }
        }
        let to_raw = |s: &[f64]| -> Vec<f64> {
            (0..x.len())
                .map(|i| if frozen[i] { x[i] } else { x[i] + std[i] * s[i] })
                .collect()
        };

        let mut adam = Adam::new(s.len(), oc.learning_rate);
        let mut trace = Vec::with_capacity(oc.max_iters.min(1024));
        let mut stalled = 0;
        let mut converged = false;
        let mut prev: Option<f64> = None;
        let mut iterations = 0;
        for _ in 0..oc.max_iters {
            iterations += 1;
            let xt = to_raw(&s);
            let (value, grad_raw) = self.objective(x, &xt, target, oc.lambda, &bx)?;
            trace.push(value);
            if !value.is_finite() || grad_raw.iter().any(|g| !g.is_finite()) {
                return Err(TapError::Diverged {
                    iterations,
                    last_objective: value,
                    trace,
                });
            }
            if let Some(p) = prev {
                let rel = (value - p).abs() / p.abs().max(1e-12);
                if rel < oc.convergence_tol {
                    stalled += 1;
                    if stalled >= oc.convergence_window {
                        converged = true;
                        break;
                    }
                } else {
                    stalled = 0;
                }
            }
            prev = Some(value);
            let grad: Vec<f64> = (0..s.len())
                .map(|i| if frozen[i] { 0.0 } else { grad_raw[i] * std[i] })
                .collect();
            adam.step(&mut s, &grad);
        }

        let xt = actionability::cond(&to_raw(&s), self.schema, &bx);
        let eps = self.cost.cost(x, &xt)?;
        let delta = self.delta(&xt, target)?;
        // The coherent end point competes with the untouched origin on the
        // surrogate objective; the origin wins ties.
        let origin_delta = self.delta(x, target)?;
        let (xt, eps, delta) = if origin_delta <= delta + oc.lambda * eps {
            (x.to_vec(), self.cost.cost(x, x)?, origin_delta)
        } else {
            (xt, eps, delta)
        };
        Ok(TapCandidate {
            x_original: x.to_vec(),
            x_perturbed: xt,
            epsilon: eps,
            delta,
            lambda_used: oc.lambda,
            discrepancy: None,
            verified: None,
            iterations,
            converged,
            trace,
        })
    }
}

/// One search run at `oc.lambda`; verification is left pending.
pub fn generate_candidate(ctx: &PerturbContext, x: &[f64], oc: &OptConfig) -> Result<TapCandidate> {
    ctx.run(x, &ctx.target, oc, vec![0.0; x.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    EpsilonMax(f64),
    DeltaMax(f64),
}

impl Budget {
    fn admits(&self, c: &TapCandidate) -> bool {
        match *self {
            Budget::EpsilonMax(b) => c.epsilon <= b,
            Budget::DeltaMax(b) => c.delta <= b,
        }
    }

    /// Whether `a` is preferable to `b` among admissible candidates.
    fn better(&self, a: &TapCandidate, b: &TapCandidate) -> bool {
        let key = |c: &TapCandidate| match self {
            Budget::EpsilonMax(_) => (c.delta, c.epsilon),
            Budget::DeltaMax(_) => (c.epsilon, c.delta),
        };
        key(a) < key(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    /// The best admissible candidate, or the closest attempt when `met` is
    /// false.
    pub candidate: TapCandidate,
    pub met: bool,
    pub trials: usize,
}

/// Maximum number of λ values tried by [`meet_budget`].
pub const BUDGET_TRIALS: usize = 20;

/// Geometric λ search for a candidate within a cost or distance budget.
///
/// Starting from `oc.lambda`, λ is doubled while the bound is violated
/// (more weight on cost lowers ε; for a δ bound λ is halved instead) and
/// moved the other way while it holds, stopping when admissibility flips or
/// after [`BUDGET_TRIALS`] runs. The unmodified origin takes part as a
/// zero-cost candidate. Among admissible candidates the smallest δ wins for
/// an ε bound and the smallest ε for a δ bound.
pub fn meet_budget(ctx: &PerturbContext, x: &[f64], oc: &OptConfig, budget: Budget) -> Result<BudgetOutcome> {
    oc.validate()?;
    let origin = ctx.origin(x)?;
    let mut best: Option<TapCandidate> = budget.admits(&origin).then(|| origin.clone());
    let mut closest = origin;
    let done = |b: &Option<TapCandidate>| match (budget, b) {
        (Budget::DeltaMax(_), Some(c)) => c.epsilon <= 0.0,
        (Budget::EpsilonMax(_), Some(c)) => c.delta <= 0.0,
        _ => false,
    };
    let mut trials = 0;
    if !done(&best) {
        let mut lambda = oc.lambda.max(f64::MIN_POSITIVE);
        let mut first_ok: Option<bool> = None;
        while trials < BUDGET_TRIALS {
            trials += 1;
            let cand = generate_candidate(ctx, x, &oc.with_lambda(lambda))?;
            let ok = budget.admits(&cand);
            let gap = |c: &TapCandidate| match budget {
                Budget::EpsilonMax(b) => c.epsilon - b,
                Budget::DeltaMax(b) => c.delta - b,
            };
            if gap(&cand) < gap(&closest) {
                closest = cand.clone();
            }
            if ok && best.as_ref().is_none_or(|b| budget.better(&cand, b)) {
                best = Some(cand);
            }
            match first_ok {
                None => first_ok = Some(ok),
                Some(f) if f != ok => break,
                _ => {}
            }
            let raise = match budget {
                Budget::EpsilonMax(_) => !ok,
                Budget::DeltaMax(_) => ok,
            };
            lambda = if raise { lambda * 2.0 } else { lambda / 2.0 };
        }
    }
    Ok(match best {
        Some(candidate) => BudgetOutcome { candidate, met: true, trials },
        None => BudgetOutcome { candidate: closest, met: false, trials },
    })
}

/// `count` log-spaced values covering `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Twenty log-spaced λ values in `[1e-2, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub lambda: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    /// Sorted by ε ascending, ties by λ descending.
    pub candidates: Vec<TapCandidate>,
    pub failures: Vec<SweepFailure>,
}

/// One candidate per λ; failed runs are recorded and skipped.
pub fn frontier_sweep(ctx: &PerturbContext, x: &[f64], oc: &OptConfig, lambdas: &[f64]) -> Result<Frontier> {
    if lambdas.is_empty() {
        return Err(TapError::Config("frontier sweep needs at least one lambda".into()));
    }
    let mut candidates = Vec::with_capacity(lambdas.len());
    let mut failures = Vec::new();
    for &lambda in lambdas {
        match generate_candidate(ctx, x, &oc.with_lambda(lambda)) {
            Ok(c) => candidates.push(c),
            Err(e @ (TapError::Diverged { .. } | TapError::NonFinite(_))) => failures.push(SweepFailure {
                lambda,
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    candidates.sort_by(|a, b| {
        a.epsilon
            .total_cmp(&b.epsilon)
            .then(b.lambda_used.total_cmp(&a.lambda_used))
    });
    Ok(Frontier { candidates, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairStrategy {
    HalveLambda,
    ShrinkTarget,
    RandomRestart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairConfig {
    pub order: Vec<RepairStrategy>,
    pub attempts_per_strategy: usize,
    pub shrink_step: f64,
    /// Ceiling on a shrunk `p` and floor on a shrunk `q`; the distance to
    /// `{S_W >= 1}` is infinite for KL whenever any mass sits elsewhere.
    pub max_p: f64,
    pub min_q: f64,
    /// Standard deviation of restart noise in standardized units.
    pub restart_sigma: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            order: vec![
                RepairStrategy::HalveLambda,
                RepairStrategy::ShrinkTarget,
                RepairStrategy::RandomRestart,
            ],
            attempts_per_strategy: 2,
            shrink_step: 0.05,
            max_p: 0.99,
            min_q: 0.01,
            restart_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairAttempt {
    pub strategy: RepairStrategy,
    pub attempt: usize,
    pub candidate: TapCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    /// First verified candidate, or the failure with the smallest Δ.
    pub candidate: TapCandidate,
    pub repaired: bool,
    pub attempts: Vec<RepairAttempt>,
}

/// Verification pieces used by the repair loop.
#[derive(Debug, Clone, Copy)]
pub struct VerifyContext<'a> {
    pub verifier: &'a Verifier,
    pub calibration: &'a GammaCalibration,
}

/// Re-runs a rejected search with adjusted parameters.
///
/// Each strategy starts from the original λ and target set: halving λ
/// (`λ/2`, `λ/4`), shrinking the target set (`p + 0.05 k`, `q - 0.05 k`)
/// and restarting from Gaussian noise around `x` on the mutable features.
/// Every regenerated candidate reports δ against the original target set and
/// is verified. An already verified candidate is returned as is.
pub fn repair_on_rejection(
    ctx: &PerturbContext,
    vctx: &VerifyContext,
    candidate: &TapCandidate,
    oc: &OptConfig,
    rc: &RepairConfig,
) -> Result<RepairOutcome> {
    if candidate.verified == Some(true) {
        return Ok(RepairOutcome {
            candidate: candidate.clone(),
            repaired: true,
            attempts: Vec::new(),
        });
    }
    let x = &candidate.x_original;
    let mut current = candidate.clone();
    if current.discrepancy.is_none() {
        current.verify_with(ctx.model, vctx.verifier, vctx.calibration)?;
    }
    let mut best = current;
    let mut attempts = Vec::new();
    let mut noise_rng = stream(oc.seed, "restarts");
    let lambda0 = candidate.lambda_used;
    let bx = ctx.schema.actionable_box(x)?;

    for &strategy in &rc.order {
        for attempt in 1..=rc.attempts_per_strategy {
            let (target, lambda, start) = match strategy {
                RepairStrategy::HalveLambda => {
                    let l = if lambda0.is_finite() { lambda0 } else { oc.lambda };
                    (ctx.target.clone(), l / 2f64.powi(attempt as i32), vec![0.0; x.len()])
                }
                RepairStrategy::ShrinkTarget => (
                    ctx.target.shrink(rc.shrink_step * attempt as f64, rc.max_p, rc.min_q)?,
                    lambda0,
                    vec![0.0; x.len()],
                ),
                RepairStrategy::RandomRestart => {
                    let start = if rc.restart_sigma > 0.0 {
                        let normal = Normal::new(0.0, rc.restart_sigma)
                            .map_err(|e| TapError::Config(e.to_string()))?;
                        (0..x.len())
                            .map(|i| if bx.is_frozen(i) { 0.0 } else { normal.sample(&mut noise_rng) })
                            .collect()
                    } else {
                        vec![0.0; x.len()]
                    };
                    (ctx.target.clone(), lambda0, start)
                }
            };
            let lambda = if lambda.is_finite() { lambda } else { oc.lambda };
            let mut cand = ctx.run(x, &target, &oc.with_lambda(lambda), start)?;
            cand.delta = ctx.delta(&cand.x_perturbed, &ctx.target)?;
            cand.verify_with(ctx.model, vctx.verifier, vctx.calibration)?;
            let accepted = cand.verified == Some(true);
            attempts.push(RepairAttempt {
                strategy,
                attempt,
                candidate: cand.clone(),
            });
            if accepted {
                return Ok(RepairOutcome {
                    candidate: cand,
                    repaired: true,
                    attempts,
                });
            }
            if cand.discrepancy < best.discrepancy {
                best = cand;
            }
        }
    }
    Ok(RepairOutcome {
        candidate: best,
        repaired: false,
        attempts,
    })
}
