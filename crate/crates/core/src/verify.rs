//! Pairwise verification of perturbations.
//!
//! A verifier `V` is a classifier over concatenated input pairs whose "same"
//! output estimates the probability that both inputs share a class. For an
//! honest classifier `M` that probability should match `sum_i M_i(x) M_i(x~)`;
//! the discrepancy
//!
//! ```text
//! Delta(x, x~) = | V(x, x~) - sum_i M_i(x) M_i(x~) |
//! ```
//!
//! is large when `M` was pushed somewhere it does not generalize. A
//! perturbation is accepted iff `Delta < gamma`, with `gamma` calibrated on
//! genuine different-class pairs so that a chosen fraction of them would be
//! rejected.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bench::SyntheticSpec;
use crate::dataset::Dataset;
use crate::error::{Result, TapError};
use crate::netcore::{self, Architecture, DenseClassifier, TrainConfig};
use crate::rng::stream;

/// Index of the "same class" output of a verifier network.
pub const SAME: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

/// Labeled ordered pairs over the rows of a source dataset.
#[derive(Debug, Clone)]
pub struct PairDataset {
    source: Dataset,
    pairs: Vec<Pair>,
}

impl PairDataset {
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn source(&self) -> &Dataset {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(same, different)` counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let same = self.pairs.iter().filter(|p| p.same).count();
        (same, self.pairs.len() - same)
    }

    /// Concatenated `(x_a, x_b)` rows with label 1 for same-class pairs.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let x = concat_rows(self.source.features(), self.source.features(), self.pairs.iter().map(|p| (p.a, p.b)));
        let y = self.pairs.iter().map(|p| usize::from(p.same)).collect();
        Dataset::new(x, y, 2)
    }
}

fn concat_rows(
    left: &Array2<f64>,
    right: &Array2<f64>,
    idx: impl ExactSizeIterator<Item = (usize, usize)>,
) -> Array2<f64> {
    let (da, db) = (left.ncols(), right.ncols());
    let n = idx.len();
    let mut out = Array2::zeros((n, da + db));
    for (r, (a, b)) in idx.enumerate() {
        let mut row = out.row_mut(r);
        for j in 0..da {
            row[j] = left[[a, j]];
        }
        for j in 0..db {
            row[da + j] = right[[b, j]];
        }
    }
    out
}

fn class_members(data: &Dataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); data.num_classes()];
    for (i, &c) in data.labels().iter().enumerate() {
        members[c].push(i);
    }
    members
}

/// Draws `want` distinct ordered pairs of one kind.
///
/// `count` is the number of such pairs available and `draw` samples one
/// uniformly. Enumeration is used when most of them are wanted.
fn sample_kind<R: Rng>(
    want: usize,
    count: usize,
    enumerate: impl Fn() -> Vec<(usize, usize)>,
    draw: impl Fn(&mut R) -> (usize, usize),
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let want = want.min(count);
    if want * 2 >= count {
        let mut all = enumerate();
        all.shuffle(rng);
        all.truncate(want);
        return all;
    }
    let mut seen = HashSet::with_capacity(want * 2);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let p = draw(rng);
        if seen.insert(p) {
            out.push(p);
        }
    }
    out
}

fn same_pairs_all(members: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for m in members {
        for &a in m {
            for &b in m {
                if a != b {
                    out.push((a, b));
                }
            }
        }
    }
    out
}

fn diff_pairs_all(data: &Dataset) -> Vec<(usize, usize)> {
    let y = data.labels();
    let mut out = Vec::new();
    for a in 0..y.len() {
        for b in 0..y.len() {
            if y[a] != y[b] {
                out.push((a, b));
            }
        }
    }
    out
}

/// Picks an index proportionally to `weights`.
fn weighted_index<R: Rng>(weights: &[usize], total: usize, rng: &mut R) -> usize {
    let mut r = rng.random_range(0..total);
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

fn sample_diff_pairs<R: Rng>(data: &Dataset, members: &[Vec<usize>], want: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let n = data.len();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let count: usize = sizes.iter().map(|&c| c * (n - c)).sum();
    let labels = data.labels();
    sample_kind(
        want,
        count,
        || diff_pairs_all(data),
        |r: &mut R| loop {
            let a = r.random_range(0..n);
            let b = r.random_range(0..n);
            if labels[a] != labels[b] {
                break (a, b);
            }
        },
        rng,
    )
}

/// Builds ordered labeled pairs from `data`.
///
/// When all `n (n - 1)` ordered pairs fit in `max_pairs` they are
/// enumerated; otherwise `max_pairs` distinct pairs are sampled with a
/// `balance` fraction of same-class pairs (as far as the data allows).
pub fn build_pair_dataset<R: Rng>(data: &Dataset, max_pairs: usize, balance: f64, rng: &mut R) -> Result<PairDataset> {
    let n = data.len();
    if n < 2 {
        return Err(TapError::Data("pair building needs at least two points".into()));
    }
    let members = class_members(data);
    if members.iter().filter(|m| !m.is_empty()).count() < 2 {
        return Err(TapError::Data("pair building needs at least two classes".into()));
    }
    if !(0.0..=1.0).contains(&balance) {
        return Err(TapError::Config(format!("balance {balance} outside [0, 1]")));
    }
    let labels = data.labels();
    let mut raw: Vec<(usize, usize)>;
    if n * (n - 1) <= max_pairs {
        raw = (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
    } else {
        let same_sizes: Vec<usize> = members.iter().map(|m| m.len() * m.len().saturating_sub(1)).collect();
        let same_count: usize = same_sizes.iter().sum();
        let diff_count = n * (n - 1) - same_count;
        let mut want_same = ((balance * max_pairs as f64).round() as usize).min(same_count);
        let want_diff = (max_pairs - want_same).min(diff_count);
        want_same = (max_pairs - want_diff).min(same_count);
        raw = if want_same > 0 {
            sample_kind(
                want_same,
                same_count,
                || same_pairs_all(&members),
                |r: &mut R| {
                    let c = weighted_index(&same_sizes, same_count, r);
                    let m = &members[c];
                    let a = r.random_range(0..m.len());
                    let mut b = r.random_range(0..m.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    (m[a], m[b])
                },
                rng,
            )
        } else {
            Vec::new()
        };
        raw.extend(sample_diff_pairs(data, &members, want_diff, rng));
        raw.shuffle(rng);
    }
    let pairs = raw
        .into_iter()
        .map(|(a, b)| Pair { a, b, same: labels[a] == labels[b] })
        .collect();
    Ok(PairDataset {
        source: data.clone(),
        pairs,
    })
}

/// A trained pair classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Verifier {
    net: DenseClassifier,
}

impl Verifier {
    pub fn new(net: DenseClassifier) -> Result<Self> {
        if net.num_classes() != 2 || !net.num_inputs().is_multiple_of(2) {
            return Err(TapError::Config(format!(
                "a verifier needs an even input width and two outputs, got {:?}",
                net.layer_dims()
            )));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &DenseClassifier {
        &self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.num_inputs() / 2
    }

    /// `V(x_a, x_b)`, the "same class" probability.
    pub fn same_prob(&self, xa: &[f64], xb: &[f64]) -> Result<f64> {
        if xa.len() != self.input_dim() || xb.len() != self.input_dim() {
            return Err(TapError::DimensionMismatch {
                expected: self.input_dim(),
                got: xa.len().max(xb.len()),
            });
        }
        let mut x = xa.to_vec();
        x.extend_from_slice(xb);
        Ok(self.net.predict_proba(&x)?[SAME])
    }

    /// `V` for many pairs `(left[a], right[b])`.
    pub fn same_prob_batch(&self, left: &Array2<f64>, right: &Array2<f64>, idx: &[(usize, usize)]) -> Result<Vec<f64>> {
        let x = concat_rows(left, right, idx.iter().copied());
        let p = self.net.predict_proba_batch(&x)?;
        Ok(p.column(SAME).to_vec())
    }
}

/// Trains `V` on concatenated pairs with the classifier pipeline.
pub fn train_verifier(pairs: &PairDataset, cfg: &TrainConfig, arch: &Architecture) -> Result<Verifier> {
    let (same, diff) = pairs.label_counts();
    if same == 0 || diff == 0 {
        return Err(TapError::Data(
            "pair labels are 100% one class; the verifier needs both".into(),
        ));
    }
    let ds = pairs.to_dataset()?;
    Verifier::new(netcore::train_classifier(&ds, cfg, arch)?)
}

/// `| V(x, x~) - sum_i M_i(x) M_i(x~) |`
pub fn discrepancy(model: &DenseClassifier, verifier: &Verifier, x: &[f64], xt: &[f64]) -> Result<f64> {
    let inner = model.predict_proba(x)?.inner(&model.predict_proba(xt)?);
    Ok((verifier.same_prob(x, xt)? - inner).abs())
}

/// Discrepancies for many pairs of rows `(left[a], right[b])`.
pub fn discrepancy_batch(
    model: &DenseClassifier,
    verifier: &Verifier,
    left: &Array2<f64>,
    right: &Array2<f64>,
    idx: &[(usize, usize)],
) -> Result<Vec<f64>> {
    let pl = model.predict_proba_batch(left)?;
    let pr = model.predict_proba_batch(right)?;
    let v = verifier.same_prob_batch(left, right, idx)?;
    Ok(idx
        .iter()
        .zip(v)
        .map(|(&(a, b), v)| {
            let inner: f64 = pl.row(a).iter().zip(pr.row(b)).map(|(p, q)| p * q).sum();
            (v - inner).abs()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCalibration {
    pub gamma: f64,
    pub rate: f64,
    pub sample_size: usize,
    pub seed: u64,
    /// Content hash of the split the pairs were drawn from.
    pub source_hash: String,
}

impl GammaCalibration {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Smallest sample value with at most `ceil(rate * N)` values strictly
/// above it.
pub fn rejection_quantile(values: &[f64], rate: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(TapError::Data("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(TapError::Config(format!("rejection rate {rate} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = ((rate * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n - 1);
    Ok(v[n - 1 - m].max(0.0))
}

/// Minimum number of different-class pairs calibration accepts.
pub const MIN_CALIBRATION_PAIRS: usize = 100;

/// Draws up to `num_pairs` distinct ordered different-class pairs from
/// `data`.
pub fn sample_different_class_pairs<R: Rng>(data: &Dataset, num_pairs: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let members = class_members(data);
    sample_diff_pairs(data, &members, num_pairs, rng)
}

/// Sets `gamma` so that a fraction `rate` of different-class pairs from
/// `data` would be rejected.
pub fn calibrate_gamma(
    model: &DenseClassifier,
    verifier: &Verifier,
    data: &Dataset,
    rate: f64,
    num_pairs: usize,
    seed: u64,
) -> Result<GammaCalibration> {
    let n = data.len();
    let available: usize = data.class_counts().iter().map(|&c| c * (n - c)).sum();
    if available < MIN_CALIBRATION_PAIRS || num_pairs < MIN_CALIBRATION_PAIRS {
        return Err(TapError::Data(format!(
            "calibration needs at least {MIN_CALIBRATION_PAIRS} different-class pairs, {} available",
            available.min(num_pairs)
        )));
    }
    let idx = sample_different_class_pairs(data, num_pairs, &mut stream(seed, "calibration"));
    let deltas = discrepancy_batch(model, verifier, data.features(), data.features(), &idx)?;
    Ok(GammaCalibration {
        gamma: rejection_quantile(&deltas, rate)?,
        rate,
        sample_size: idx.len(),
        seed,
        source_hash: data.content_hash(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub discrepancy: f64,
}

/// Accepts iff `Delta(x, x~) < gamma`.
pub fn verify(
    model: &DenseClassifier,
    verifier: &Verifier,
    cal: &GammaCalibration,
    x: &[f64],
    xt: &[f64],
) -> Result<Verdict> {
    let d = discrepancy(model, verifier, x, xt)?;
    Ok(Verdict {
        accepted: d < cal.gamma,
        discrepancy: d,
    })
}

/// Terms of the generalization bound for a verifier trained on `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacTerms {
    /// Argument of the big-O complexity term, `(k / sqrt(n^2 - k^2 n))^(1/d)`.
    pub complexity_base: f64,
    /// `12 k B / sqrt(n^2 - k^2 n) * sqrt(ln(2/delta) / 2)`
    pub explicit_term: f64,
}

pub fn pac_gap_terms(n: u64, k: u64, d: u64, b_ell: f64, delta: f64) -> Result<PacTerms> {
    if k == 0 || n <= k * k {
        return Err(TapError::Domain(format!("need n > k^2 (n = {n}, k = {k})")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TapError::Domain(format!("confidence delta = {delta} outside (0, 1)")));
    }
    if d == 0 {
        return Err(TapError::Domain("dimension d must be at least 1".into()));
    }
    if !(b_ell > 0.0) || !b_ell.is_finite() {
        return Err(TapError::Domain(format!("loss bound {b_ell} must be positive")));
    }
    // n (n - k^2) is an exact integer product for any realistic n.
    let root = ((n as f64) * ((n - k * k) as f64)).sqrt();
    let kf = k as f64;
    Ok(PacTerms {
        complexity_base: (kf / root).powf(1.0 / d as f64),
        explicit_term: 12.0 * kf * b_ell / root * ((2.0 / delta).ln() / 2.0).sqrt(),
    })
}

/// Loss bound used by the gap experiment.
pub const GAP_LOSS_BOUND: f64 = 10.0;

/// Cross entropy of a "same" probability against a pair label, clipped at
/// [`GAP_LOSS_BOUND`].
pub fn clipped_pair_loss(same: bool, v: f64) -> f64 {
    let p = if same { v } else { 1.0 - v };
    (-p.ln()).min(GAP_LOSS_BOUND)
}

/// Two-part empirical risk: the mean over ordered class pairs `i != j` of
/// the mean different-class loss, plus the mean over classes of the mean
/// same-class loss.
pub fn two_part_risk(verifier: &Verifier, data: &Dataset, pairs: &[(usize, usize)]) -> Result<f64> {
    let k = data.num_classes();
    let v = verifier.same_prob_batch(data.features(), data.features(), pairs)?;
    let y = data.labels();
    let mut sums = vec![0.0; k * k];
    let mut counts = vec![0usize; k * k];
    for (&(a, b), v) in pairs.iter().zip(v) {
        let cell = y[a] * k + y[b];
        sums[cell] += clipped_pair_loss(y[a] == y[b], v);
        counts[cell] += 1;
    }
    let mean = |cells: Vec<usize>| -> f64 {
        let used: Vec<f64> = cells
            .into_iter()
            .filter(|&c| counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .collect();
        if used.is_empty() {
            0.0
        } else {
            used.iter().sum::<f64>() / used.len() as f64
        }
    };
    let diff = mean((0..k * k).filter(|c| c / k != c % k).collect());
    let same = mean((0..k).map(|i| i * k + i).collect());
    Ok(diff + same)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub train: TrainConfig,
    pub arch: Architecture,
    pub max_pairs: usize,
    pub test_points: usize,
    pub test_pairs: usize,
    pub confidence: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: usize,
    pub train_risk: f64,
    pub test_risk: f64,
    pub gap: f64,
    pub explicit_bound_term: f64,
}

/// For each `n`, trains a verifier on pairs from `n` synthetic points (fixed
/// epoch budget, no early stopping) and compares its two-part risk on the
/// training pairs with the risk on a large held-out pair sample.
pub fn measure_generalization_gap(spec: &SyntheticSpec, ns: &[usize], cfg: &GapConfig) -> Result<Vec<GapRow>> {
    let k = spec.num_classes();
    let held_out = spec.sample(cfg.test_points, crate::rng::sub_seed(cfg.seed, "gap-test"))?;
    let test_pairs = build_pair_dataset(&held_out, cfg.test_pairs, 0.5, &mut stream(cfg.seed, "gap-test-pairs"))?;
    let test_idx: Vec<(usize, usize)> = test_pairs.pairs().iter().map(|p| (p.a, p.b)).collect();

    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if n <= k * k {
            return Err(TapError::Domain(format!("gap experiment needs n > k^2, got n = {n}")));
        }
        let name = format!("gap-train-{n}");
        let train = spec.sample(n, crate::rng::sub_seed(cfg.seed, &name))?;
        let pairs = build_pair_dataset(&train, cfg.max_pairs, 0.5, &mut stream(cfg.seed, &format!("{name}-pairs")))?;
        let ds = pairs.to_dataset()?;
        let verifier = Verifier::new(netcore::train_on_splits(&ds, None, &cfg.train, &cfg.arch)?)?;
        let train_idx: Vec<(usize, usize)> = pairs.pairs().iter().map(|p| (p.a, p.b)).collect();
        let train_risk = two_part_risk(&verifier, &train, &train_idx)?;
        let test_risk = two_part_risk(&verifier, &held_out, &test_idx)?;
        let pac = pac_gap_terms(n as u64, k as u64, spec.dim() as u64, GAP_LOSS_BOUND, cfg.confidence)?;
        rows.push(GapRow {
            n,
            train_risk,
            test_risk,
            gap: test_risk - train_risk,
            explicit_bound_term: pac.explicit_term,
        });
    }
    Ok(rows)
}
