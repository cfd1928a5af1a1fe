//! Comparison methods: a Wachter-style counterfactual search and the
//! Carlini-Wagner ℓ2 attack.
//!
//! Both are priced with the same cost model and target set as the
//! perturbation search so their ε and δ are directly comparable.

use serde::{Deserialize, Serialize};

use crate::actionability::{self, FeatureSchema};
use crate::dataset::Dataset;
use crate::error::{Result, TapError};
use crate::netcore::{Adam, DenseClassifier};
use crate::perturb::PerturbContext;
use crate::verify::{GammaCalibration, Verifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tap,
    Wachter,
    Cw,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Tap => "tap",
            Method::Wachter => "wachter",
            Method::Cw => "cw",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: Method,
    pub x_original: Vec<f64>,
    pub x_perturbed: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub discrepancy: Option<f64>,
    pub verified: Option<bool>,
    /// Whether the method reached its goal (argmax equals the desired class).
    pub success: bool,
    /// λ for Wachter, c for CW.
    pub weight: f64,
    pub iterations: usize,
}

impl BaselineResult {
    fn priced(
        ctx: &PerturbContext,
        method: Method,
        x: &[f64],
        xt: Vec<f64>,
        desired: usize,
        weight: f64,
        iterations: usize,
    ) -> Result<Self> {
        let success = ctx.model.predict_class(&xt)? == desired;
        Ok(Self {
            method,
            x_original: x.to_vec(),
            epsilon: ctx.cost.cost(x, &xt)?,
            delta: ctx.delta(&xt, &ctx.target)?,
            x_perturbed: xt,
            discrepancy: None,
            verified: None,
            success,
            weight,
            iterations,
        })
    }

    pub fn verify_with(&mut self, model: &DenseClassifier, verifier: &Verifier, cal: &GammaCalibration) -> Result<()> {
        let v = crate::verify::verify(model, verifier, cal, &self.x_original, &self.x_perturbed)?;
        self.discrepancy = Some(v.discrepancy);
        self.verified = Some(v.accepted);
        Ok(())
    }
}

/// Median absolute deviation per feature, with 1 for constant features.
pub fn mad_weights(data: &Dataset) -> Vec<f64> {
    let median = |v: &mut Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    data.features()
        .columns()
        .into_iter()
        .map(|col| {
            let mut v = col.to_vec();
            let m = median(&mut v);
            let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
            let mad = median(&mut dev);
            if mad > 0.0 {
                mad
            } else {
                1.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WachterConfig {
    /// Distance weight of the first round.
    pub lambda_start: f64,
    /// Factor applied to λ after a round that does not reach the class.
    pub lambda_decay: f64,
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_iters: usize,
}

impl Default for WachterConfig {
    fn default() -> Self {
        Self {
            lambda_start: 1.0,
            lambda_decay: 0.5,
            rounds: 12,
            learning_rate: 0.02,
            max_iters: 300,
        }
    }
}

/// Minimizes `(M_w(x~) - 1)^2 + λ sum_i |x~_i - x_i| / MAD_i` inside the
/// actionable box, then applies `cond`.
///
/// Rounds start at `lambda_start` and shrink λ by `lambda_decay` (which
/// raises the relative weight of the prediction term) until the conditioned
/// point is classified `w`; the first such point is returned. Without
/// success the last attempt is returned with `success = false`.
pub fn wachter_counterfactual(
    ctx: &PerturbContext,
    x: &[f64],
    desired: usize,
    mad: &[f64],
    cfg: &WachterConfig,
) -> Result<BaselineResult> {
    let model = ctx.model;
    if desired >= model.num_classes() {
        return Err(TapError::Precondition(format!("class {desired} out of range")));
    }
    if mad.len() != x.len() {
        return Err(TapError::DimensionMismatch { expected: x.len(), got: mad.len() });
    }
    if model.predict_class(x)? == desired {
        return BaselineResult::priced(ctx, Method::Wachter, x, x.to_vec(), desired, 0.0, 0);
    }
    let schema: &FeatureSchema = ctx.schema;
    let bx = schema.actionable_box(x)?;
    let std = &model.standardizer().std;
    let frozen: Vec<bool> = (0..x.len()).map(|i| bx.is_frozen(i)).collect();
    let mut lambda = cfg.lambda_start;
    let mut last = None;
    let mut total_iters = 0;
    for _ in 0..cfg.rounds.max(1) {
        let mut s = vec![0.0; x.len()];
        let mut adam = Adam::new(s.len(), cfg.learning_rate);
        for _ in 0..cfg.max_iters {
            total_iters += 1;
            let xt: Vec<f64> = (0..x.len()).map(|i| x[i] + std[i] * s[i]).collect();
            let probs = model.predict_proba(&xt)?;
            let mut upstream = vec![0.0; model.num_classes()];
            upstream[desired] = 2.0 * (probs[desired] - 1.0);
            let mut g = model.input_gradient(&xt, &upstream)?;
            let (_, gb) = actionability::penalty_actionable(&xt, &bx, &ctx.penalty);
            let (_, gp) = actionability::penalty_coherence(&xt, schema, &ctx.penalty);
            for i in 0..g.len() {
                let d = xt[i] - x[i];
                let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                g[i] += lambda * sign / mad[i] + gb[i] + gp[i];
            }
            let gs: Vec<f64> = (0..g.len())
                .map(|i| if frozen[i] { 0.0 } else { g[i] * std[i] })
                .collect();
            if gs.iter().any(|v| !v.is_finite()) {
                return Err(TapError::NonFinite("counterfactual gradient".into()));
            }
            adam.step(&mut s, &gs);
        }
        let xt: Vec<f64> = (0..x.len()).map(|i| x[i] + std[i] * s[i]).collect();
        let xt = actionability::cond(&xt, schema, &bx);
        let result = BaselineResult::priced(ctx, Method::Wachter, x, xt, desired, lambda, total_iters)?;
        if result.success {
            return Ok(result);
        }
        last = Some(result);
        lambda *= cfg.lambda_decay;
    }
    Ok(last.expect("at least one round"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CwConfig {
    pub binary_steps: usize,
    pub c_min: f64,
    pub c_max: f64,
    pub kappa: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            binary_steps: 9,
            c_min: 1e-3,
            c_max: 1e3,
            kappa: 0.0,
            learning_rate: 0.01,
            max_iters: 500,
        }
    }
}

/// Box used by the attack's tanh change of variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    /// Per-feature data range widened by `margin` times its width on each
    /// side, intersected with finite schema bounds.
    pub fn from_data(data: &Dataset, schema: Option<&FeatureSchema>, margin: f64) -> Self {
        let mut lower = Vec::with_capacity(data.dim());
        let mut upper = Vec::with_capacity(data.dim());
        for (j, col) in data.features().columns().into_iter().enumerate() {
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w = (hi - lo).max(1e-9);
            let (mut l, mut u) = (lo - margin * w, hi + margin * w);
            if let Some(s) = schema {
                let f = &s.features()[j];
                if f.lower.is_finite() {
                    l = l.max(f.lower);
                }
                if f.upper.is_finite() {
                    u = u.min(f.upper);
                }
            }
            lower.push(l);
            upper.push(u);
        }
        Self { lower, upper }
    }
}

/// Carlini-Wagner ℓ2 attack towards class `target` in raw input units.
///
/// Minimizes `||x~ - x||^2 + c max(max_{j != t} Z_j - Z_t, -kappa)` over a
/// tanh-parameterized point of `bx`, with a binary search over `c` (grown
/// tenfold from `c_min` until an adversarial point is found, then bisected). The smallest-distortion success is returned. The point
/// is neither restricted to the actionable set nor made coherent.
pub fn cw_l2(ctx: &PerturbContext, x: &[f64], target: usize, bx: &InputBox, cfg: &CwConfig) -> Result<BaselineResult> {
    let model = ctx.model;
    let k = model.num_classes();
    if target >= k {
        return Err(TapError::Precondition(format!("class {target} out of range")));
    }
    if model.predict_class(x)? == target {
        return Err(TapError::Precondition(
            "attack target equals the current prediction".into(),
        ));
    }
    let d = x.len();
    if bx.lower.len() != d || bx.upper.len() != d {
        return Err(TapError::DimensionMismatch { expected: d, got: bx.lower.len() });
    }
    let half: Vec<f64> = (0..d).map(|i| 0.5 * (bx.upper[i] - bx.lower[i])).collect();
    let to_x = |w: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| bx.lower[i] + half[i] * (w[i].tanh() + 1.0))
            .collect()
    };
    let w0: Vec<f64> = (0..d)
        .map(|i| {
            let u = if half[i] > 0.0 { (x[i] - bx.lower[i]) / half[i] - 1.0 } else { 0.0 };
            u.clamp(-1.0 + 1e-9, 1.0 - 1e-9).atanh()
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut c = cfg.c_min;
    let mut iterations = 0;
    for _ in 0..cfg.binary_steps {
        let mut w = w0.clone();
        let mut adam = Adam::new(d, cfg.learning_rate);
        let mut found: Option<(f64, Vec<f64>)> = None;
        for _ in 0..cfg.max_iters {
            iterations += 1;
            let xt = to_x(&w);
            let z = model.logits(&xt)?;
            let (j_star, other) = z
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != target)
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            let margin = other - z[target];
            let dist: f64 = xt.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if margin < 0.0 && model.predict_class(&xt)? == target && found.as_ref().is_none_or(|f| dist < f.0) {
                found = Some((dist, xt.clone()));
            }
            let mut g: Vec<f64> = xt.iter().zip(x).map(|(a, b)| 2.0 * (a - b)).collect();
            if margin > -cfg.kappa {
                let mut up = vec![0.0; k];
                up[j_star] = c;
                up[target] = -c;
                let gl = model.logit_input_gradient(&xt, &up)?;
                for i in 0..d {
                    g[i] += gl[i];
                }
            }
            let gw: Vec<f64> = (0..d)
                .map(|i| g[i] * half[i] * (1.0 - w[i].tanh().powi(2)))
                .collect();
            adam.step(&mut w, &gw);
        }
        if let Some((dist, xt)) = found {
            if best.as_ref().is_none_or(|b| dist < b.0) {
                best = Some((dist, xt, c));
            }
            hi = hi.min(c);
        } else {
            lo = lo.max(c);
        }
        let next = if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            c * 10.0
        };
        let next = next.clamp(cfg.c_min, cfg.c_max);
        if next == c {
            break;
        }
        c = next;
    }
    match best {
        Some((_, xt, c)) => BaselineResult::priced(ctx, Method::Cw, x, xt, target, c, iterations),
        None => {
            let mut r = BaselineResult::priced(ctx, Method::Cw, x, x.to_vec(), target, c, iterations)?;
            r.success = false;
            Ok(r)
        }
    }
}
