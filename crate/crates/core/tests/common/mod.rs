//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls the closed forms under test: divergences are written
//! out directly, the k = 2 distance is found on a grid refined by
//! golden-section search, and larger simplices use projected gradient descent
//! with an exact active-set projection onto `simplex ∩ T`.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use tap_core::probspace::TargetSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Which generator an oracle evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gen {
    Kl,
    Chi2,
}

/// `D(y || z)` written out per generator; infinite when `z_i = 0 < y_i`.
pub fn div(g: Gen, y: &[f64], z: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&yi, &zi) in y.iter().zip(z) {
        total += match g {
            Gen::Kl => {
                if yi == 0.0 {
                    0.0
                } else if zi <= 0.0 {
                    f64::INFINITY
                } else {
                    yi * (yi / zi).ln()
                }
            }
            Gen::Chi2 => {
                if zi <= 0.0 {
                    if yi == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (yi - zi) * (yi - zi) / zi
                }
            }
        };
    }
    total
}

fn div_grad(g: Gen, y: &[f64], z: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(z)
        .map(|(&yi, &zi)| match g {
            Gen::Kl => -yi / zi,
            Gen::Chi2 => 1.0 - yi * yi / (zi * zi),
        })
        .collect()
}

/// The raw constraint description of a target set as the tests draw it.
#[derive(Debug, Clone)]
pub struct RawTarget {
    pub k: usize,
    pub w: Vec<usize>,
    pub u: Vec<usize>,
    pub p: f64,
    pub q: f64,
}

impl RawTarget {
    pub fn build(&self) -> TargetSet {
        TargetSet::new(self.k, self.w.clone(), self.u.clone(), self.p, self.q).unwrap()
    }

    pub fn feasible(&self, z: &[f64], tol: f64) -> bool {
        let sw: f64 = self.w.iter().map(|&i| z[i]).sum();
        let su: f64 = self.u.iter().map(|&i| z[i]).sum();
        (self.w.is_empty() || sw >= self.p - tol) && (self.u.is_empty() || su <= self.q + tol)
    }

    pub fn neutral(&self) -> Vec<usize> {
        (0..self.k).filter(|i| !self.w.contains(i) && !self.u.contains(i)).collect()
    }
}

/// A random target set: each class lands in W, U or N with equal odds, at
/// least one of W and U is nonempty, and `p + q <= 1` whenever N is not
/// empty.
pub fn random_target<R: Rng>(rng: &mut R, k: usize) -> RawTarget {
    loop {
        let mut w = Vec::new();
        let mut u = Vec::new();
        for i in 0..k {
            match rng.random_range(0..3) {
                0 => w.push(i),
                1 => u.push(i),
                _ => {}
            }
        }
        if w.is_empty() && u.is_empty() || w.len() == k {
            continue;
        }
        let p = rng.random_range(0.05..0.95);
        let mut q = rng.random_range(0.05..0.95);
        let has_n = w.len() + u.len() < k;
        if has_n && !w.is_empty() && !u.is_empty() && p + q > 1.0 {
            q = (1.0 - p) * rng.random_range(0.1..1.0);
        }
        if !u.is_empty() && u.len() == k {
            continue;
        }
        return RawTarget { k, w, u, p, q };
    }
}

/// A random point of the simplex with every coordinate at least `floor`.
pub fn random_simplex<R: Rng>(rng: &mut R, k: usize, floor: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut y: Vec<f64> = e.iter().map(|v| floor + (1.0 - k as f64 * floor) * v / s).collect();
    let last: f64 = y[..k - 1].iter().sum();
    y[k - 1] = 1.0 - last;
    y
}

/// Minimum of `D(y || z)` over `z = (1 - t, t)` in `T`: a 1e-3 grid over
/// the feasible interval, then golden-section refinement around the best
/// grid point (the objective is convex in `t`).
pub fn oracle_k2(g: Gen, y: &[f64], t: &RawTarget) -> f64 {
    let point = |s: f64| [1.0 - s, s];
    let mut cands: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    cands.extend([t.p, 1.0 - t.p, t.q, 1.0 - t.q]);
    let feas: Vec<f64> = cands.into_iter().filter(|&s| (0.0..=1.0).contains(&s) && t.feasible(&point(s), 1e-15)).collect();
    let lo = feas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = feas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let f = |s: f64| div(g, y, &point(s.clamp(lo, hi)));
    let mut best = lo;
    for &s in &feas {
        if f(s) < f(best) {
            best = s;
        }
    }
    let (mut a, mut b) = ((best - 1e-3).max(lo), (best + 1e-3).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    f(best).min(f(0.5 * (a + b))).min(f(lo)).min(f(hi))
}

/// Solves a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot = &top[col];
        for (r, row) in rest.iter_mut().enumerate() {
            let m = row[col] / pivot[col];
            for (v, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *v -= m * p;
            }
            b[col + 1 + r] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Euclidean projection onto `simplex ∩ T`.
pub fn project(x: &[f64], t: &RawTarget) -> Vec<f64> {
    project_scaled(x, t, &vec![1.0; x.len()])
}

/// Projection onto `simplex ∩ T` in the metric `diag(1 / hinv)`, by
/// enumerating active sets: for each subset of inequality constraints held
/// at equality, project onto the affine hull and keep the closest feasible
/// result.
pub fn project_scaled(x: &[f64], t: &RawTarget, hinv: &[f64]) -> Vec<f64> {
    let k = x.len();
    // Rows a with bound b meaning a.z >= b.
    let mut ineq: Vec<(Vec<f64>, f64)> = (0..k)
        .map(|i| {
            let mut a = vec![0.0; k];
            a[i] = 1.0;
            (a, 0.0)
        })
        .collect();
    if !t.w.is_empty() {
        let mut a = vec![0.0; k];
        for &i in &t.w {
            a[i] = 1.0;
        }
        ineq.push((a, t.p));
    }
    if !t.u.is_empty() {
        let mut a = vec![0.0; k];
        for &i in &t.u {
            a[i] = -1.0;
        }
        ineq.push((a, -t.q));
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() < 1e-15 && ineq.iter().all(|(a, b)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() >= *b) {
        return x.to_vec();
    }
    let m = ineq.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let mut rows = vec![(vec![1.0; k], 1.0)];
        for (j, c) in ineq.iter().enumerate() {
            if mask & (1 << j) != 0 {
                rows.push(c.clone());
            }
        }
        if rows.len() > k {
            continue;
        }
        // z = x - H^-1 A^T mu with A H^-1 A^T mu = A x - b.
        let r = rows.len();
        let gram: Vec<Vec<f64>> = (0..r)
            .map(|i| {
                (0..r)
                    .map(|j| (0..k).map(|c| rows[i].0[c] * hinv[c] * rows[j].0[c]).sum())
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = rows.iter().map(|(a, b)| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() - b).collect();
        let Some(mu) = solve(gram, rhs) else { continue };
        let mut z = x.to_vec();
        for (i, (a, _)) in rows.iter().enumerate() {
            for c in 0..k {
                z[c] -= mu[i] * hinv[c] * a[c];
            }
        }
        if ineq.iter().all(|(a, b)| a.iter().zip(&z).map(|(ai, zi)| ai * zi).sum::<f64>() >= b - 1e-9) {
            let dist: f64 = (0..k).map(|c| (z[c] - x[c]) * (z[c] - x[c]) / hinv[c]).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, z));
            }
        }
    }
    let mut z = best.expect("simplex ∩ T is nonempty").1;
    for v in z.iter_mut() {
        *v = v.max(0.0);
    }
    z
}

/// A strictly positive point of `simplex ∩ T` built from group masses.
fn interior_start(t: &RawTarget) -> Vec<f64> {
    let n = t.neutral();
    let (mut a, mut b) = (0.0, 0.0);
    match (t.w.is_empty(), t.u.is_empty(), n.is_empty()) {
        (false, false, false) => {
            a = t.p + (1.0 - t.p - t.q) / 2.0;
            b = t.q / 2.0;
        }
        (false, false, true) => {
            a = (t.p.max(1.0 - t.q) + 1.0) / 2.0;
            b = 1.0 - a;
        }
        (false, true, _) => a = (t.p + 1.0) / 2.0,
        (true, false, _) => b = t.q / 2.0,
        (true, true, _) => unreachable!(),
    }
    let c = 1.0 - a - b;
    let mut z = vec![0.0; t.k];
    for (group, mass) in [(&t.w, a), (&t.u, b), (&n, c)] {
        for &i in group.iter() {
            z[i] = mass / group.len() as f64;
        }
    }
    z
}

/// `min_{z in simplex ∩ T} D(y || z)` by projected descent scaled with the
/// diagonal Hessian, with Armijo backtracking and a fraction-to-boundary
/// rule, started from a strictly interior feasible point.
pub fn oracle_pgd(g: Gen, y: &[f64], t: &RawTarget) -> f64 {
    let mut z = interior_start(t);
    let mut fz = div(g, y, &z);
    for _ in 0..2000 {
        let grad = div_grad(g, y, &z);
        let hinv: Vec<f64> = y
            .iter()
            .zip(&z)
            .map(|(&yi, &zi)| {
                let h = match g {
                    Gen::Kl => yi / (zi * zi),
                    Gen::Chi2 => 2.0 * yi * yi / (zi * zi * zi),
                };
                1.0 / h.max(1e-2)
            })
            .collect();
        let newton: Vec<f64> = (0..z.len()).map(|i| z[i] - hinv[i] * grad[i]).collect();
        let target = project_scaled(&newton, t, &hinv);
        let dir: Vec<f64> = target.iter().zip(&z).map(|(a, b)| a - b).collect();
        let slope: f64 = grad.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if dir.iter().all(|d| d.abs() < 1e-14) || slope >= 0.0 {
            break;
        }
        // Each step keeps at least a tenth of every coordinate so the
        // iterates stay interior, where the scaling is well defined.
        let mut s = dir
            .iter()
            .zip(&z)
            .filter(|(d, _)| **d < 0.0)
            .fold(1.0f64, |m, (d, zi)| m.min(0.9 * zi / -d));
        let mut accepted = false;
        for _ in 0..60 {
            let zn: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            let fzn = div(g, y, &zn);
            if fzn.is_finite() && fzn <= fz + 1e-4 * s * slope {
                z = zn;
                fz = fzn;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    fz
}

/// Central finite-difference gradient.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let v = x[i];
        xp[i] = v + h;
        let up = f(&xp);
        xp[i] = v - h;
        let down = f(&xp);
        xp[i] = v;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Largest componentwise difference relative to the larger gradient's
/// sup norm (floored at `floor`).
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = a.iter().chain(b).fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// `(n, k, d, B, delta, explicit_term, complexity_base)` evaluated with
/// 50-digit arithmetic.
#[allow(clippy::excessive_precision)]
pub const PAC_REFERENCE: [(u64, u64, u64, f64, f64, f64, f64); 20] = [
    (49, 4, 43, 13.654, 0.2743, 16.244079066437725392, 0.94774349776337859458),
    (9840061, 9, 55, 10.575, 0.2656, 0.00011661427649474401683, 0.77661268858468257779),
    (1031110, 2, 44, 0.164, 0.4464, 3.3054931077089708852e-6, 0.74161001703621529908),
    (6875967, 9, 43, 12.866, 0.3171, 0.00019392276164459531465, 0.72976660113479761077),
    (7232372, 8, 41, 8.471, 0.0311, 0.00016223760184983178622, 0.71569354672291609649),
    (474287, 5, 31, 4.543, 0.2553, 0.00058307008691687012329, 0.69095487421283249391),
    (33, 4, 50, 17.155, 0.2701, 34.783999829244347554, 0.96505390236232675468),
    (58, 3, 53, 8.114, 0.2377, 5.6544370214166399673, 0.94715472173243338822),
    (44, 6, 11, 15.271, 0.3157, 56.304413495777943802, 0.90154847587252430985),
    (901236, 3, 57, 1.416, 0.4901, 0.000047429910170610556632, 0.80149300228183200045),
    (1098311, 7, 25, 14.322, 0.3464, 0.0010256081294857977951, 0.6196911526974432309),
    (8509499, 4, 8, 14.23, 0.1556, 0.000090699557598618629685, 0.16181528817695066308),
    (7386219, 5, 5, 2.594, 0.3678, 0.000019389197347896061456, 0.058359251325021554023),
    (3488529, 9, 53, 9.525, 0.3245, 0.00028119465447801638842, 0.78443793714422064009),
    (1071865, 2, 26, 15.813, 0.0211, 0.00053413948467276905869, 0.6020736810225988535),
    (7020514, 6, 59, 1.777, 0.371, 0.000016726245592184542597, 0.78913057787382122779),
    (8964974, 8, 42, 10.619, 0.4314, 0.000099583224591467062562, 0.71773693818803435947),
    (41, 5, 14, 16.855, 0.4881, 33.157478154040810831, 0.88986212079092881144),
    (6850258, 7, 4, 18.981, 0.1073, 0.00028148889329932500416, 0.031794219353817014369),
    (9637003, 5, 47, 4.645, 0.0928, 0.00003583290072934203043, 0.73498284706013723246),
];

/// A scaled-down benchmark that trains in a few seconds.
pub fn small_bench_config(seed: u64) -> tap_core::bench::BenchConfig {
    use tap_core::netcore::{Architecture, TrainConfig};
    tap_core::bench::BenchConfig {
        n: 1000,
        model_arch: Architecture {
            hidden: vec![24, 24],
            dropout: 0.0,
        },
        model_train: TrainConfig {
            max_epochs: 40,
            ..TrainConfig::default()
        },
        verifier_arch: Architecture {
            hidden: vec![24, 24],
            dropout: 0.0,
        },
        verifier_train: TrainConfig {
            max_epochs: 10,
            ..TrainConfig::default()
        },
        max_pairs: 6000,
        calibration_pairs: 3000,
        individuals: 8,
        lambdas: tap_core::perturb::log_grid(1e-3, 1e2, 6),
        seed,
        ..tap_core::bench::BenchConfig::default()
    }
}

/// Trained models for [`small_bench_config`] with seed 0, built once.
pub fn small_trained() -> &'static (tap_core::bench::BenchConfig, tap_core::bench::Trained) {
    static CELL: std::sync::OnceLock<(tap_core::bench::BenchConfig, tap_core::bench::Trained)> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = small_bench_config(0);
        let trained = tap_core::bench::train_models(&cfg).unwrap();
        (cfg, trained)
    })
}

/// A schema mixing every feature kind, an immutable feature and both
/// direction restrictions.
pub fn mixed_schema() -> tap_core::actionability::FeatureSchema {
    use tap_core::actionability::{Direction, Feature, FeatureSchema};
    FeatureSchema::new(
        vec![
            Feature::numeric("hours", 0.0, 99.0),
            Feature::integer("age", 17.0, 90.0).immutable(),
            Feature::integer("years", 0.0, 40.0).with_direction(Direction::Increase),
            Feature::boolean("phone"),
            Feature::one_hot("edu_a", "edu", "a"),
            Feature::one_hot("edu_b", "edu", "b"),
            Feature::one_hot("edu_c", "edu", "c"),
            Feature::one_hot("r_x", "region", "x"),
            Feature::one_hot("r_y", "region", "y"),
            Feature::numeric("debt", 0.0, 1e4).with_direction(Direction::Decrease),
        ],
        "label".into(),
        vec!["no".into(), "yes".into()],
    )
    .unwrap()
}

/// A random coherent point of [`mixed_schema`].
pub fn mixed_origin<R: Rng>(rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; 10];
    x[0] = rng.random_range(0.0..99.0);
    x[1] = rng.random_range(17..=90) as f64;
    x[2] = rng.random_range(0..=40) as f64;
    x[3] = rng.random_range(0..=1) as f64;
    x[4 + rng.random_range(0..3)] = 1.0;
    x[7 + rng.random_range(0..2)] = 1.0;
    x[9] = rng.random_range(0.0..1e4);
    x
}

/// A relaxed candidate around `x`: every coordinate jittered, often past
/// the box.
pub fn mixed_relaxed<R: Rng>(rng: &mut R, x: &[f64]) -> Vec<f64> {
    let scale = [30.0, 5.0, 8.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 3000.0];
    x.iter()
        .zip(scale)
        .map(|(v, s)| v + rng.random_range(-1.5..1.5) * s)
        .collect()
}

/// A tiny synthetic experiment for exercising the command line.
pub const SMALL_CONFIG: &str = r#"
seed = 3
divergence = "kl"

[data]
source = "synthetic"
n = 600
feature_bound = 10.0

[[data.spec.components]]
mean = [-1.5, -1.5, 0.0, 0.0]
variance = [1.0, 1.0, 1.0, 1.0]
prior = 0.5

[[data.spec.components]]
mean = [1.5, 1.5, 0.0, 0.0]
variance = [1.0, 1.0, 1.0, 1.0]
prior = 0.5

[target]
desirable = ["class1"]
p = 0.8

[model]
hidden = [16, 16]

[train]
max_epochs = 15
split = [0.6, 0.2, 0.2]

[verifier]
max_pairs = 3000
calibration_pairs = 1000

[verifier.train]
max_epochs = 5

[opt]
max_iters = 200

[bench]
individuals = 3
lambdas = [0.01, 1.0, 100.0]
epsilon_budgets = [1.0, inf]
delta_thresholds = [0.1, 0.5]
"#;
