//! Target sets on the probability simplex and the closed-form f-divergence
//! distance to them.
//!
//! A target set is described by a set of desirable classes `W` whose total
//! mass must be at least `p` and a set of undesirable classes `U` whose total
//! mass must be at most `q`. The remaining classes form the neutral set `N`.
//!
//! For any f-divergence with twice differentiable `f`, the distance
//! `inf_{z in T} D(y || z)` has a piecewise closed form over four regions of
//! the simplex:
//!
//! | region | condition | distance |
//! |--------|-----------|----------|
//! | A | `S_W >= p`, `S_U <= q` | `0` |
//! | B | `S_W < p`, `S_U (1-p) <= (1-S_W) q` | `p f(S_W/p) + (1-p) f((1-S_W)/(1-p))` |
//! | C | `S_U > q`, `S_W (1-q) >= (1-S_U) p` | `q f(S_U/q) + (1-q) f((1-S_U)/(1-q))` |
//! | D | otherwise | `p f(S_W/p) + q f(S_U/q) + (1-p-q) f((1-S_W-S_U)/(1-p-q))` |
//!
//! The distance is continuously differentiable in `y`. Everything here is
//! evaluated with the neutral mass written as `1 - S_W - S_U`, which is the
//! parameterization the gradient formulas refer to: neutral coordinates carry
//! zero partial derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};

/// Lower clamp applied to group masses before they enter `f'`.
pub const RATIO_FLOOR: f64 = 1e-12;

const SUM_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(TapError::InvalidProbVector("empty vector".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(TapError::InvalidProbVector(format!(
                    "component {i} = {v} is outside [0, 1]"
                )));
            }
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(TapError::InvalidProbVector(format!(
                "components sum to {total}"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest component; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// `sum_i self_i * other_i`
    pub fn inner(&self, other: &ProbVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = TapError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Partition cell of the simplex relative to a target set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    A,
    B,
    C,
    D,
}

/// `{z : sum_{W} z >= p, sum_{U} z <= q}`, stored in normalized form.
///
/// Normalization rules: `p = 0` empties `W`, `q >= 1` empties `U`, and when
/// `W` and `U` cover every class the two constraints collapse onto the tighter
/// one so that `q = 1 - p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    num_classes: usize,
    desirable: Vec<usize>,
    undesirable: Vec<usize>,
    neutral: Vec<usize>,
    p: f64,
    q: f64,
}

impl TargetSet {
    /// Class indices are zero based.
    pub fn new(
        num_classes: usize,
        desirable: Vec<usize>,
        undesirable: Vec<usize>,
        p: f64,
        q: f64,
    ) -> Result<Self> {
        let bad = |msg: String| Err(TapError::InvalidTargetSet(msg));
        if num_classes < 1 {
            return bad("at least one class is required".into());
        }
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
            return bad(format!("thresholds must lie in [0, 1] (p = {p}, q = {q})"));
        }
        let mut desirable = desirable;
        let mut undesirable = undesirable;
        desirable.sort_unstable();
        desirable.dedup();
        undesirable.sort_unstable();
        undesirable.dedup();
        if let Some(&i) = desirable.iter().chain(&undesirable).find(|&&i| i >= num_classes) {
            return bad(format!("class index {i} out of range for {num_classes} classes"));
        }
        if desirable.iter().any(|i| undesirable.contains(i)) {
            return bad("desirable and undesirable classes overlap".into());
        }
        if desirable.is_empty() && undesirable.is_empty() {
            return bad("at least one of the desirable or undesirable sets must be nonempty".into());
        }

        let (mut p, mut q) = (p, q);
        if p <= 0.0 {
            desirable.clear();
            p = 0.0;
        }
        if q >= 1.0 {
            undesirable.clear();
            q = 1.0;
        }
        let neutral: Vec<usize> = (0..num_classes)
            .filter(|i| !desirable.contains(i) && !undesirable.contains(i))
            .collect();

        if !desirable.is_empty() && !undesirable.is_empty() {
            if neutral.is_empty() {
                p = p.max(1.0 - q);
                q = 1.0 - p;
            } else if p + q > 1.0 + 1e-12 {
                return bad(format!(
                    "p + q = {} exceeds 1 while neutral classes exist",
                    p + q
                ));
            }
        }
        if desirable.is_empty() {
            p = 0.0;
        }
        if undesirable.is_empty() {
            q = 1.0;
        }

        Ok(Self {
            num_classes,
            desirable,
            undesirable,
            neutral,
            p,
            q,
        })
    }

    /// `{z : z_w >= p}`
    pub fn at_least(num_classes: usize, class: usize, p: f64) -> Result<Self> {
        Self::new(num_classes, vec![class], vec![], p, 1.0)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn desirable(&self) -> &[usize] {
        &self.desirable
    }

    pub fn undesirable(&self) -> &[usize] {
        &self.undesirable
    }

    pub fn neutral(&self) -> &[usize] {
        &self.neutral
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Masses `(S_W, S_U)` of `y` on the desirable and undesirable classes.
    pub fn sums(&self, y: &[f64]) -> (f64, f64) {
        let s_w = self.desirable.iter().map(|&i| y[i]).sum();
        let s_u = self.undesirable.iter().map(|&i| y[i]).sum();
        (s_w, s_u)
    }

    /// Membership with an absolute tolerance on both constraints.
    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        let (s_w, s_u) = self.sums(y);
        s_w >= self.p - tol && s_u <= self.q + tol
    }

    /// Raise `p` and lower `q` by `step`, capped at `max_p` / `min_q`.
    pub fn shrink(&self, step: f64, max_p: f64, min_q: f64) -> Result<Self> {
        let p = if self.desirable.is_empty() {
            0.0
        } else {
            (self.p + step).min(max_p).max(self.p)
        };
        let q = if self.undesirable.is_empty() {
            1.0
        } else {
            (self.q - step).max(min_q).min(self.q)
        };
        Self::new(
            self.num_classes,
            self.desirable.clone(),
            self.undesirable.clone(),
            p,
            q,
        )
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.num_classes {
            return Err(TapError::DimensionMismatch {
                expected: self.num_classes,
                got: y.len(),
            });
        }
        Ok(())
    }
}

/// An f-divergence `D(y || z) = sum_i z_i f(y_i / z_i)`.
#[derive(Debug, Clone, Copy)]
pub struct Divergence {
    name: &'static str,
    f: fn(f64) -> f64,
    f_prime: fn(f64) -> f64,
    f_at_zero: f64,
    recession: f64,
}

fn kl_f(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

fn kl_f_prime(t: f64) -> f64 {
    t.ln() + 1.0
}

fn chi2_f(t: f64) -> f64 {
    (t - 1.0) * (t - 1.0)
}

fn chi2_f_prime(t: f64) -> f64 {
    2.0 * (t - 1.0)
}

impl Divergence {
    /// Builds a divergence from a generator and its derivative, checking
    /// `f(1) = 0` and convexity on the grid `{0.01, 0.02, ..., 10}`.
    ///
    /// `lim_{t -> 0+} f(t)` is read off `f(0)` when finite. The recession
    /// slope `lim f(t)/t` is taken as infinite.
    pub fn new(name: &'static str, f: fn(f64) -> f64, f_prime: fn(f64) -> f64) -> Result<Self> {
        let at_one = f(1.0);
        if !(at_one.abs() <= 1e-12) {
            return Err(TapError::InvalidDivergence(format!(
                "{name}: f(1) = {at_one}, expected 0"
            )));
        }
        let h = 0.01;
        for i in 2..1000 {
            let t = i as f64 * h;
            let second = f(t + h) - 2.0 * f(t) + f(t - h);
            if !(second >= -1e-12) {
                return Err(TapError::InvalidDivergence(format!(
                    "{name}: f is not convex near t = {t}"
                )));
            }
        }
        let zero = f(0.0);
        let f_at_zero = if zero.is_finite() {
            zero
        } else {
            f(f64::MIN_POSITIVE)
        };
        Ok(Self {
            name,
            f,
            f_prime,
            f_at_zero,
            recession: f64::INFINITY,
        })
    }

    /// `f(t) = t ln t`
    pub fn kl() -> Self {
        Self {
            name: "kl",
            f: kl_f,
            f_prime: kl_f_prime,
            f_at_zero: 0.0,
            recession: f64::INFINITY,
        }
    }

    /// `f(t) = (t - 1)^2`
    pub fn chi_square() -> Self {
        Self {
            name: "chi-square",
            f: chi2_f,
            f_prime: chi2_f_prime,
            f_at_zero: 1.0,
            recession: f64::INFINITY,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "kl" | "kullback-leibler" => Ok(Self::kl()),
            "chi-square" | "chi2" | "chi_square" => Ok(Self::chi_square()),
            other => Err(TapError::InvalidDivergence(format!(
                "unknown divergence '{other}' (expected 'kl' or 'chi-square')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// `f(t)` with the `t -> 0+` limit at and below zero.
    pub fn f(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.f_at_zero
        } else {
            (self.f)(t)
        }
    }

    pub fn f_prime(&self, t: f64) -> f64 {
        (self.f_prime)(t)
    }

    /// Perspective `m f(a / m)` with the conventions `0 f(0/0) = 0` and
    /// `0 f(a/0) = a lim_{t->inf} f(t)/t`.
    pub fn perspective(&self, mass: f64, amount: f64) -> f64 {
        let amount = amount.max(0.0);
        if mass <= 0.0 {
            if amount <= 0.0 {
                0.0
            } else {
                amount * self.recession
            }
        } else {
            mass * self.f(amount / mass)
        }
    }

    /// `D(y || z)` between two vectors of equal length.
    pub fn divergence(&self, y: &[f64], z: &[f64]) -> f64 {
        y.iter()
            .zip(z)
            .map(|(&yi, &zi)| self.perspective(zi, yi))
            .sum()
    }
}

impl PartialEq for Divergence {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

fn region_of(s_w: f64, s_u: f64, t: &TargetSet) -> Region {
    let (p, q) = (t.p, t.q);
    if s_w >= p && s_u <= q {
        return Region::A;
    }
    if t.neutral.is_empty() && !t.desirable.is_empty() && !t.undesirable.is_empty() {
        return if s_w < p { Region::B } else { Region::C };
    }
    if s_w < p && s_u * (1.0 - p) <= (1.0 - s_w) * q {
        Region::B
    } else if s_u > q && s_w * (1.0 - q) >= (1.0 - s_u) * p {
        Region::C
    } else {
        Region::D
    }
}

/// Region of `y` with respect to `t`.
pub fn classify_region(y: &ProbVector, t: &TargetSet) -> Result<Region> {
    classify_region_raw(y.values(), t)
}

/// [`classify_region`] on an arbitrary vector (no simplex check).
pub fn classify_region_raw(y: &[f64], t: &TargetSet) -> Result<Region> {
    t.check_dim(y)?;
    let (s_w, s_u) = t.sums(y);
    Ok(region_of(s_w, s_u, t))
}

/// `d_Y(y, T) = inf_{z in T} D(y || z)` in closed form.
pub fn target_distance(y: &ProbVector, t: &TargetSet, div: &Divergence) -> Result<f64> {
    target_distance_raw(y.values(), t, div)
}

/// [`target_distance`] on an arbitrary vector; used by finite-difference
/// checks and by optimizers that step off the simplex.
pub fn target_distance_raw(y: &[f64], t: &TargetSet, div: &Divergence) -> Result<f64> {
    t.check_dim(y)?;
    let (s_w, s_u) = t.sums(y);
    let (p, q) = (t.p, t.q);
    let value = match region_of(s_w, s_u, t) {
        Region::A => 0.0,
        Region::B => div.perspective(p, s_w) + div.perspective(1.0 - p, 1.0 - s_w),
        Region::C => div.perspective(q, s_u) + div.perspective(1.0 - q, 1.0 - s_u),
        Region::D => {
            div.perspective(p, s_w)
                + div.perspective(q, s_u)
                + div.perspective(1.0 - p - q, 1.0 - s_w - s_u)
        }
    };
    Ok(value)
}

/// Gradient of [`target_distance`] with respect to `y`.
pub fn target_distance_grad(y: &ProbVector, t: &TargetSet, div: &Divergence) -> Result<Vec<f64>> {
    target_distance_grad_raw(y.values(), t, div)
}

pub fn target_distance_grad_raw(y: &[f64], t: &TargetSet, div: &Divergence) -> Result<Vec<f64>> {
    t.check_dim(y)?;
    let (s_w, s_u) = t.sums(y);
    let (p, q) = (t.p, t.q);
    let floor = |v: f64| v.max(RATIO_FLOOR);
    let fp = |a: f64, m: f64| div.f_prime(floor(a) / m);

    let (dw, du) = match region_of(s_w, s_u, t) {
        Region::A => (0.0, 0.0),
        Region::B => (fp(s_w, p) - fp(1.0 - s_w, 1.0 - p), 0.0),
        Region::C => (0.0, fp(s_u, q) - fp(1.0 - s_u, 1.0 - q)),
        Region::D => {
            let rest = fp(1.0 - s_w - s_u, 1.0 - p - q);
            (fp(s_w, p) - rest, fp(s_u, q) - rest)
        }
    };
    let mut grad = vec![0.0; y.len()];
    for &i in &t.desirable {
        grad[i] = dw;
    }
    for &i in &t.undesirable {
        grad[i] = du;
    }
    Ok(grad)
}

/// Writes `mass` onto `group`, proportionally to `y` or uniformly when `y`
/// carries no mass there.
fn scale_group(y: &[f64], group: &[usize], mass: f64, out: &mut [f64]) {
    if group.is_empty() {
        return;
    }
    let total: f64 = group.iter().map(|&i| y[i]).sum();
    if total > 0.0 {
        let c = mass / total;
        for &i in group {
            out[i] = c * y[i];
        }
    } else {
        let share = mass / group.len() as f64;
        for &i in group {
            out[i] = share;
        }
    }
}

/// The minimizer `z*` of `D(y || z)` over `T`.
///
/// Within each of `W`, `U` and `N` the ratios `y_i / z_i` are constant, so
/// `z*` is `y` rescaled group-wise by the region's constants.
pub fn project_to_target(y: &ProbVector, t: &TargetSet, _div: &Divergence) -> Result<ProbVector> {
    t.check_dim(y.values())?;
    let yv = y.values();
    let (s_w, s_u) = t.sums(yv);
    let region = region_of(s_w, s_u, t);
    if region == Region::A {
        return Ok(y.clone());
    }
    let (p, q) = (t.p, t.q);
    let mut z = vec![0.0; yv.len()];
    let others = |excluded: &[usize]| -> Vec<usize> {
        (0..yv.len()).filter(|i| !excluded.contains(i)).collect()
    };
    match region {
        Region::A => unreachable!(),
        Region::B => {
            scale_group(yv, &t.desirable, p, &mut z);
            scale_group(yv, &others(&t.desirable), 1.0 - p, &mut z);
        }
        Region::C => {
            scale_group(yv, &t.undesirable, q, &mut z);
            scale_group(yv, &others(&t.undesirable), 1.0 - q, &mut z);
        }
        Region::D => {
            scale_group(yv, &t.desirable, p, &mut z);
            scale_group(yv, &t.undesirable, q, &mut z);
            scale_group(yv, &t.neutral, (1.0 - p - q).max(0.0), &mut z);
        }
    }
    // Rescaling can leave the total a few ulps away from one.
    let total: f64 = z.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(TapError::InvalidProbVector(format!(
            "projection lost mass (total {total})"
        )));
    }
    for v in z.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    ProbVector::new(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn binary_target() -> TargetSet {
        TargetSet::at_least(2, 0, 0.8).unwrap()
    }

    fn three_class_target() -> TargetSet {
        TargetSet::new(3, vec![0], vec![1], 0.6, 0.2).unwrap()
    }

    #[test]
    fn prob_vector_rejects_bad_inputs() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.25; 4]).is_ok());
    }

    #[test]
    fn regions_of_spec_examples() {
        let t = binary_target();
        assert_eq!(classify_region(&pv(&[0.9, 0.1]), &t).unwrap(), Region::A);
        assert_eq!(classify_region(&pv(&[0.8, 0.2]), &t).unwrap(), Region::A);
        assert_eq!(classify_region(&pv(&[0.5, 0.5]), &t).unwrap(), Region::B);
        let t3 = three_class_target();
        assert_eq!(classify_region(&pv(&[0.2, 0.5, 0.3]), &t3).unwrap(), Region::D);
    }

    #[test]
    fn empty_sets_restrict_regions() {
        let only_u = TargetSet::new(3, vec![], vec![2], 0.0, 0.1).unwrap();
        let only_w = TargetSet::new(3, vec![0], vec![], 0.7, 1.0).unwrap();
        let mut rng_state = 7u64;
        for _ in 0..500 {
            let mut v = [0.0; 3];
            for x in v.iter_mut() {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *x = ((rng_state >> 11) as f64 / (1u64 << 53) as f64) + 1e-3;
            }
            let s: f64 = v.iter().sum();
            let y = pv(&[v[0] / s, v[1] / s, 1.0 - v[0] / s - v[1] / s]);
            let r = classify_region(&y, &only_u).unwrap();
            assert!(r == Region::A || r == Region::C);
            let r = classify_region(&y, &only_w).unwrap();
            assert!(r == Region::A || r == Region::B);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let t = binary_target();
        let err = classify_region(&pv(&[0.2, 0.3, 0.5]), &t).unwrap_err();
        assert!(matches!(err, TapError::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn binary_distance_matches_formula() {
        let d = target_distance(&pv(&[0.5, 0.5]), &binary_target(), &Divergence::kl()).unwrap();
        assert_abs_diff_eq!(d, 0.5 * (0.5f64 / 0.8).ln() + 0.5 * (0.5f64 / 0.2).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(d, 0.22314355131420976, epsilon = 1e-12);
    }

    #[test]
    fn binary_gradient_value() {
        let g = target_distance_grad(&pv(&[0.5, 0.5]), &binary_target(), &Divergence::kl()).unwrap();
        assert_abs_diff_eq!(g[0], 0.25f64.ln(), epsilon = 1e-12);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn zero_inside_target() {
        let t = three_class_target();
        let y = pv(&[0.7, 0.1, 0.2]);
        assert_eq!(target_distance(&y, &t, &Divergence::kl()).unwrap(), 0.0);
        assert!(target_distance_grad(&y, &t, &Divergence::kl()).unwrap().iter().all(|&g| g == 0.0));
        assert_eq!(project_to_target(&y, &t, &Divergence::kl()).unwrap(), y);
    }

    #[test]
    fn binary_projection() {
        let z = project_to_target(&pv(&[0.5, 0.5]), &binary_target(), &Divergence::kl()).unwrap();
        assert_abs_diff_eq!(z[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(z[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn region_d_projection_hits_both_constraints() {
        let t = three_class_target();
        let y = pv(&[0.2, 0.5, 0.3]);
        for div in [Divergence::kl(), Divergence::chi_square()] {
            let z = project_to_target(&y, &t, &div).unwrap();
            let (s_w, s_u) = t.sums(z.values());
            assert_abs_diff_eq!(s_w, 0.6, epsilon = 1e-12);
            assert_abs_diff_eq!(s_u, 0.2, epsilon = 1e-12);
            let d = target_distance(&y, &t, &div).unwrap();
            assert_abs_diff_eq!(div.divergence(y.values(), z.values()), d, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_spreads_mass_onto_empty_groups() {
        let t = TargetSet::new(4, vec![0, 1], vec![], 0.5, 1.0).unwrap();
        let y = pv(&[0.0, 0.0, 0.4, 0.6]);
        let div = Divergence::kl();
        let z = project_to_target(&y, &t, &div).unwrap();
        assert_abs_diff_eq!(z[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(z[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(div.divergence(y.values(), z.values()), target_distance(&y, &t, &div).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn target_set_validation() {
        assert!(TargetSet::new(3, vec![0], vec![0], 0.5, 0.2).is_err());
        assert!(TargetSet::new(3, vec![], vec![], 0.5, 0.2).is_err());
        assert!(TargetSet::new(3, vec![5], vec![], 0.5, 1.0).is_err());
        assert!(TargetSet::new(3, vec![0], vec![1], 0.7, 0.5).is_err());
        assert!(TargetSet::new(3, vec![0], vec![], 1.5, 1.0).is_err());
    }

    #[test]
    fn degenerate_thresholds_normalize() {
        let t = TargetSet::new(3, vec![0], vec![1], 0.0, 0.3).unwrap();
        assert!(t.desirable().is_empty());
        let t = TargetSet::new(3, vec![0], vec![1], 0.4, 1.0).unwrap();
        assert!(t.undesirable().is_empty());
        // complementary constraints collapse onto the tighter one
        let t = TargetSet::new(2, vec![0], vec![1], 0.6, 0.3).unwrap();
        assert_abs_diff_eq!(t.p(), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(t.q(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn custom_divergence_checks() {
        fn not_zero_at_one(t: f64) -> f64 {
            t * t
        }
        fn concave(t: f64) -> f64 {
            -(t - 1.0) * (t - 1.0)
        }
        fn hellinger(t: f64) -> f64 {
            (t.sqrt() - 1.0).powi(2)
        }
        fn hellinger_prime(t: f64) -> f64 {
            1.0 - 1.0 / t.sqrt()
        }
        assert!(Divergence::new("bad", not_zero_at_one, |t| 2.0 * t).is_err());
        assert!(Divergence::new("concave", concave, |t| -2.0 * (t - 1.0)).is_err());
        let h = Divergence::new("hellinger", hellinger, hellinger_prime).unwrap();
        assert_eq!(h.f(0.0), 1.0);
    }

    #[test]
    fn kl_zero_limit() {
        let kl = Divergence::kl();
        assert_eq!(kl.f(0.0), 0.0);
        assert_eq!(kl.perspective(0.0, 0.0), 0.0);
        assert_eq!(kl.perspective(0.0, 0.3), f64::INFINITY);
        assert_abs_diff_eq!(kl.divergence(&[0.0, 1.0], &[0.5, 0.5]), 2f64.ln(), epsilon = 1e-15);
    }
}
