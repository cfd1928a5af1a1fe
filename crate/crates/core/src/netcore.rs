//! Dense ReLU classifiers with a softmax head.
//!
//! Networks standardize their raw inputs with train-split statistics, train
//! with ADAM on mini-batch cross entropy and keep the weights of the epoch
//! with the best validation loss. Besides prediction they expose the
//! vector-Jacobian product with respect to the raw input, which is what the
//! perturbation search and the attacks need.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, TapError};
use crate::probspace::ProbVector;
use crate::rng::stream;

const MODEL_FORMAT: &str = "tap-dense-classifier/1";

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Features with zero variance get `std = 1`.
    pub fn fit(x: &Array2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `fan_in x fan_out`
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Accuracy and loss figures recorded at the end of training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseClassifier {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    dropout_rate: f64,
    standardizer: Standardizer,
    seed: u64,
    report: TrainReport,
}

/// Hidden widths and dropout; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![60, 60, 60],
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            split: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TapError::Config(
                "learning_rate, batch_size and max_epochs must be positive".into(),
            ));
        }
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|&f| !(f > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(TapError::Config(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        Ok(())
    }
}

/// ADAM over a flat parameter slice.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self::with_moments(n, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
}

/// Mean cross entropy of row-wise logits against labels.
fn cross_entropy(logits: &Array2<f64>, y: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(y) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    total / y.len().max(1) as f64
}

impl DenseClassifier {
    /// All weights and biases zero; predictions are uniform.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[0], w[1])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            dropout_rate: 0.0,
            standardizer: Standardizer::identity(layer_dims[0]),
            seed: 0,
            report: TrainReport::default(),
        })
    }

    /// He-uniform initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    pub fn random(layer_dims: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        Self::check_dims(layer_dims)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(TapError::Config(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let mut rng = stream(seed, "init");
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-limit..limit)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            dropout_rate,
            standardizer: Standardizer::identity(layer_dims[0]),
            seed,
            report: TrainReport::default(),
        })
    }

    fn check_dims(layer_dims: &[usize]) -> Result<()> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(TapError::Config(format!(
                "layer dims {layer_dims:?} need an input and an output width, all positive"
            )));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_inputs(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) -> Result<()> {
        if s.mean.len() != self.num_inputs() || s.std.len() != self.num_inputs() {
            return Err(TapError::DimensionMismatch {
                expected: self.num_inputs(),
                got: s.mean.len(),
            });
        }
        self.standardizer = s;
        Ok(())
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.num_inputs() {
            return Err(TapError::DimensionMismatch {
                expected: self.num_inputs(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TapError::NonFinite("classifier input".into()));
        }
        Ok(())
    }

    /// Forward pass on a standardized input, keeping every pre-activation.
    fn forward_cached(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = s.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.b.to_vec();
            for (i, &ai) in a.iter().enumerate() {
                if ai != 0.0 {
                    for (zj, wij) in z.iter_mut().zip(layer.w.row(i)) {
                        *zj += ai * wij;
                    }
                }
            }
            a = if li + 1 < self.layers.len() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        pre
    }

    /// Pre-softmax outputs for a raw input.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let s = self.standardizer.transform(x);
        Ok(self.forward_cached(&s).pop().unwrap())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(probvector_from_softmax(z))
    }

    /// Logits for every row of a raw matrix.
    pub fn logits_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.num_inputs() {
            return Err(TapError::DimensionMismatch {
                expected: self.num_inputs(),
                got: x.ncols(),
            });
        }
        let mut a = self.standardizer.transform_matrix(x);
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            if li + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Class probabilities for every row of a raw matrix.
    pub fn predict_proba_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut z = self.logits_batch(x)?;
        softmax_rows(&mut z);
        Ok(z)
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(self.predict_proba(x)?.argmax())
    }

    /// `J^T upstream` where `J` is the Jacobian of the logits at raw `x`.
    pub fn logit_input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.num_classes() {
            return Err(TapError::DimensionMismatch {
                expected: self.num_classes(),
                got: upstream.len(),
            });
        }
        let s = self.standardizer.transform(x);
        let pre = self.forward_cached(&s);
        Ok(self.backprop_to_input(&pre, upstream.to_vec()))
    }

    /// `J^T upstream` where `J` is the Jacobian of [`predict_proba`] at raw
    /// `x`. The ReLU subgradient at zero is zero.
    ///
    /// [`predict_proba`]: DenseClassifier::predict_proba
    pub fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if upstream.len() != self.num_classes() {
            return Err(TapError::DimensionMismatch {
                expected: self.num_classes(),
                got: upstream.len(),
            });
        }
        let s = self.standardizer.transform(x);
        let pre = self.forward_cached(&s);
        let mut probs = pre.last().unwrap().clone();
        softmax_in_place(&mut probs);
        let dot: f64 = probs.iter().zip(upstream).map(|(p, u)| p * u).sum();
        let g_logits = probs
            .iter()
            .zip(upstream)
            .map(|(p, u)| p * (u - dot))
            .collect();
        Ok(self.backprop_to_input(&pre, g_logits))
    }

    fn backprop_to_input(&self, pre: &[Vec<f64>], mut g: Vec<f64>) -> Vec<f64> {
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let mut g_in = vec![0.0; layer.w.nrows()];
            for (i, gi) in g_in.iter_mut().enumerate() {
                *gi = layer.w.row(i).iter().zip(&g).map(|(w, gj)| w * gj).sum();
            }
            if li > 0 {
                for (gi, &z) in g_in.iter_mut().zip(&pre[li - 1]) {
                    if z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g = g_in;
        }
        g.iter()
            .zip(&self.standardizer.std)
            .map(|(gi, s)| gi / s)
            .collect()
    }

    /// Fraction of rows whose argmax matches the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let probs = self.predict_proba_batch(data.features())?;
        let correct = probs
            .rows()
            .into_iter()
            .zip(data.labels())
            .filter(|(row, &label)| argmax(row.as_slice().unwrap()) == label)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mean cross entropy on `data`.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let logits = self.logits_batch(data.features())?;
        Ok(cross_entropy(&logits, data.labels()))
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            layer_dims: self.layer_dims.clone(),
            weights: self.layers.iter().map(|l| l.w.iter().cloned().collect()).collect(),
            biases: self.layers.iter().map(|l| l.b.to_vec()).collect(),
            dropout_rate: self.dropout_rate,
            standardizer: self.standardizer.clone(),
            seed: self.seed,
            report: self.report.clone(),
        }
    }

    fn from_file(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(TapError::ModelFile(format!("unknown format '{}'", f.format)));
        }
        Self::check_dims(&f.layer_dims)?;
        let n_layers = f.layer_dims.len() - 1;
        if f.weights.len() != n_layers || f.biases.len() != n_layers {
            return Err(TapError::ModelFile("layer count does not match layer_dims".into()));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (i, (w, b)) in f.weights.into_iter().zip(f.biases).enumerate() {
            let (fan_in, fan_out) = (f.layer_dims[i], f.layer_dims[i + 1]);
            let w = Array2::from_shape_vec((fan_in, fan_out), w)
                .map_err(|e| TapError::ModelFile(format!("layer {i} weights: {e}")))?;
            if b.len() != fan_out {
                return Err(TapError::ModelFile(format!("layer {i} bias length")));
            }
            layers.push(Layer { w, b: Array1::from(b) });
        }
        let d = f.layer_dims[0];
        if f.standardizer.mean.len() != d || f.standardizer.std.len() != d {
            return Err(TapError::ModelFile("standardizer width".into()));
        }
        Ok(Self {
            layer_dims: f.layer_dims,
            layers,
            dropout_rate: f.dropout_rate,
            standardizer: f.standardizer,
            seed: f.seed,
            report: f.report,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TapError::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    layer_dims: Vec<usize>,
    /// Row-major `fan_in x fan_out` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    dropout_rate: f64,
    standardizer: Standardizer,
    seed: u64,
    report: TrainReport,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Wraps a softmax output, nudging away rounding drift in the total.
pub(crate) fn probvector_from_softmax(mut p: Vec<f64>) -> ProbVector {
    for v in p.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    ProbVector::new(p).expect("softmax output is a probability vector")
}

struct Grads {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
}

impl DenseClassifier {
    /// Mini-batch gradient of mean cross entropy on standardized inputs.
    fn batch_grads<R: Rng>(
        &self,
        s: &Array2<f64>,
        y: &[usize],
        dropout: Option<&mut R>,
    ) -> Grads {
        let n_layers = self.layers.len();
        let mut acts = Vec::with_capacity(n_layers);
        let mut masks: Vec<Option<Array2<f64>>> = Vec::with_capacity(n_layers);
        let mut a = s.clone();
        let mut rng = dropout;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            acts.push(a);
            if li + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
                let mask = match rng.as_deref_mut() {
                    Some(r) if self.dropout_rate > 0.0 => {
                        let keep = 1.0 - self.dropout_rate;
                        let m = Array2::from_shape_fn(z.dim(), |_| {
                            if r.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        z *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
            }
            a = z;
        }
        softmax_rows(&mut a);
        let n = y.len() as f64;
        for (i, &label) in y.iter().enumerate() {
            a[[i, label]] -= 1.0;
        }
        a /= n;

        let mut gw = vec![Array2::zeros((0, 0)); n_layers];
        let mut gb = vec![Array1::zeros(0); n_layers];
        let mut g = a;
        for li in (0..n_layers).rev() {
            gw[li] = acts[li].t().dot(&g);
            gb[li] = g.sum_axis(Axis(0));
            if li > 0 {
                let mut g_prev = g.dot(&self.layers[li].w.t());
                let prev_act = &acts[li];
                g_prev.zip_mut_with(prev_act, |gv, &av| {
                    if av <= 0.0 {
                        *gv = 0.0;
                    }
                });
                if let Some(m) = &masks[li - 1] {
                    g_prev *= m;
                }
                g = g_prev;
            }
        }
        Grads { w: gw, b: gb }
    }
}

/// Trains on `train`, keeping the weights with the lowest validation loss
/// when a validation set is given and the final weights otherwise.
pub fn train_on_splits(
    train: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
    arch: &Architecture,
) -> Result<DenseClassifier> {
    cfg.validate()?;
    let k = train.num_classes();
    if train.is_empty() {
        return Err(TapError::Data("empty training split".into()));
    }
    if k < 2 {
        return Err(TapError::EmptyClass(1));
    }
    if let Some(missing) = train.class_counts().iter().position(|&c| c == 0) {
        return Err(TapError::EmptyClass(missing));
    }

    let mut dims = vec![train.dim()];
    dims.extend_from_slice(&arch.hidden);
    dims.push(k);
    let mut model = DenseClassifier::random(&dims, arch.dropout, cfg.seed)?;
    model.standardizer = Standardizer::fit(train.features());

    let s_train = model.standardizer.transform_matrix(train.features());
    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut dropout_rng = stream(cfg.seed, "dropout");
    let adam = |n| Adam::with_moments(n, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut opt_w: Vec<Adam> = model.layers.iter().map(|l| adam(l.w.len())).collect();
    let mut opt_b: Vec<Adam> = model.layers.iter().map(|l| adam(l.b.len())).collect();

    let mut best: Option<(f64, usize, Vec<Layer>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = s_train.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            let grads = model.batch_grads(&xb, &yb, Some(&mut dropout_rng));
            for li in 0..model.layers.len() {
                let layer = &mut model.layers[li];
                opt_w[li].step(
                    layer.w.as_slice_mut().expect("standard layout"),
                    grads.w[li].as_slice().expect("standard layout"),
                );
                opt_b[li].step(
                    layer.b.as_slice_mut().expect("standard layout"),
                    grads.b[li].as_slice().expect("standard layout"),
                );
            }
        }
        let loss = match validation {
            Some(v) if !v.is_empty() => model.loss(v)?,
            _ => continue,
        };
        if !loss.is_finite() {
            return Err(TapError::NonFinite(format!("validation loss at epoch {epochs_run}")));
        }
        match &best {
            Some((b, _, _)) if loss >= *b => {
                since_best += 1;
                if since_best >= cfg.patience.max(1) {
                    break;
                }
            }
            _ => {
                best = Some((loss, epoch + 1, model.layers.clone()));
                since_best = 0;
            }
        }
    }
    if let Some((loss, epoch, layers)) = best {
        model.layers = layers;
        model.report.best_validation_loss = loss;
        model.report.best_epoch = epoch;
    } else {
        model.report.best_epoch = epochs_run;
        model.report.best_validation_loss = f64::NAN;
    }
    model.report.epochs_run = epochs_run;
    model.report.train_accuracy = model.accuracy(train)?;
    if let Some(v) = validation {
        model.report.validation_accuracy = model.accuracy(v)?;
    }
    Ok(model)
}

/// Splits `data` by `cfg.split`, trains with early stopping on the
/// validation part and records test accuracy.
pub fn train_classifier(data: &Dataset, cfg: &TrainConfig, arch: &Architecture) -> Result<DenseClassifier> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TapError::Data("empty dataset".into()));
    }
    let split = data.split(cfg.split, &mut stream(cfg.seed, "split"))?;
    let mut model = train_on_splits(&split.train, Some(&split.validation), cfg, arch)?;
    model.report.test_accuracy = model.accuracy(&split.test)?;
    Ok(model)
}

/// Compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Expected calibration error from per-point confidences and correctness.
///
/// A confidence `c` falls in bin `ceil(c * bins) - 1` (clamped to the valid
/// range). The result is `sum_b |sum correct_b - sum conf_b| / N`, which is
/// the weighted accuracy/confidence gap written so that sums stay exact for
/// the usual hand-made examples.
pub fn ece_from_predictions(confidences: &[f64], correct: &[bool], bins: usize) -> Result<f64> {
    if confidences.is_empty() {
        return Err(TapError::Data("ECE of an empty sample".into()));
    }
    if confidences.len() != correct.len() {
        return Err(TapError::DimensionMismatch {
            expected: confidences.len(),
            got: correct.len(),
        });
    }
    if bins == 0 {
        return Err(TapError::Config("ECE needs at least one bin".into()));
    }
    let mut conf_sum = vec![NeumaierSum::default(); bins];
    let mut hits = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * bins as f64).ceil() as i64 - 1).clamp(0, bins as i64 - 1) as usize;
        conf_sum[b].add(c);
        if ok {
            hits[b] += 1;
        }
    }
    let mut total = NeumaierSum::default();
    for b in 0..bins {
        total.add((hits[b] as f64 - conf_sum[b].value()).abs());
    }
    Ok(total.value() / confidences.len() as f64)
}

/// Expected calibration error of `model` on `data`.
pub fn ece(model: &DenseClassifier, data: &Dataset, bins: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(TapError::Data("ECE of an empty dataset".into()));
    }
    let probs = model.predict_proba_batch(data.features())?;
    let mut conf = Vec::with_capacity(data.len());
    let mut correct = Vec::with_capacity(data.len());
    for (row, &label) in probs.rows().into_iter().zip(data.labels()) {
        let row = row.as_slice().unwrap();
        let k = argmax(row);
        conf.push(row[k]);
        correct.push(k == label);
    }
    ece_from_predictions(&conf, &correct, bins)
}

pub const DEFAULT_ECE_BINS: usize = 15;
