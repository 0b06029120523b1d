//! MLP head that fuses the narrative cosine with the four entity cosines.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, NormalizedLabel};
use crate::encoder::{narrative_similarity, EmbeddingProvider};
use crate::entities::{feature_vector, EntityFeatureVector, EntityProfile};
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, Moments};

pub const INPUTS: usize = 5;
pub const DEFAULT_HIDDEN: usize = 32;
const CHECKPOINT_MAGIC: &[u8; 4] = b"NSFM";
const CHECKPOINT_VERSION: u8 = 1;

/// Inputs in fixed order: narrative, geo, org, date, qty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureRow {
    pub narrative: f64,
    pub geo: f64,
    pub org: f64,
    pub date: f64,
    pub qty: f64,
}

impl FeatureRow {
    pub fn new(narrative: f64, entities: EntityFeatureVector) -> Self {
        FeatureRow {
            narrative,
            geo: entities.geo,
            org: entities.org,
            date: entities.date,
            qty: entities.qty,
        }
    }

    pub fn to_array(self) -> [f64; INPUTS] {
        [self.narrative, self.geo, self.org, self.date, self.qty]
    }

    pub fn from_array(x: [f64; INPUTS]) -> Self {
        FeatureRow {
            narrative: x[0],
            geo: x[1],
            org: x[2],
            date: x[3],
            qty: x[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `sigmoid(w2 . act(W1 x + b1) + b2)`.
///
/// Parameters live in one flat vector: `W1` row-major as `hidden x 5`, then
/// `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMLP {
    hidden: usize,
    activation: Activation,
    params: Vec<f64>,
}

impl FusionMLP {
    pub fn zeros(hidden: usize, activation: Activation) -> Self {
        FusionMLP {
            hidden,
            activation,
            params: vec![0.0; hidden * INPUTS + 2 * hidden + 1],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn init(hidden: usize, activation: Activation, seed: u64) -> Self {
        let mut mlp = FusionMLP::zeros(hidden, activation);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b_in = 1.0 / (INPUTS as f64).sqrt();
        let b_hidden = 1.0 / (hidden as f64).sqrt();
        let n_first = hidden * INPUTS + hidden;
        for (i, p) in mlp.params.iter_mut().enumerate() {
            let bound = if i < n_first { b_in } else { b_hidden };
            *p = rng.random_range(-bound..=bound);
        }
        mlp
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn b1_offset(&self) -> usize {
        self.hidden * INPUTS
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.hidden
    }

    pub fn w1_mut(&mut self, hidden_unit: usize, input: usize) -> &mut f64 {
        &mut self.params[hidden_unit * INPUTS + input]
    }

    pub fn b1_mut(&mut self, hidden_unit: usize) -> &mut f64 {
        let o = self.b1_offset();
        &mut self.params[o + hidden_unit]
    }

    pub fn w2_mut(&mut self, hidden_unit: usize) -> &mut f64 {
        let o = self.w2_offset();
        &mut self.params[o + hidden_unit]
    }

    pub fn b2_mut(&mut self) -> &mut f64 {
        let o = self.b2_offset();
        &mut self.params[o]
    }

    fn hidden_layer(&self, x: &[f64; INPUTS]) -> (Vec<f64>, Vec<f64>) {
        let b1 = &self.params[self.b1_offset()..self.w2_offset()];
        let (mut z, mut a) = (Vec::with_capacity(self.hidden), Vec::with_capacity(self.hidden));
        for (h, bias) in b1.iter().enumerate() {
            let w = &self.params[h * INPUTS..(h + 1) * INPUTS];
            let zh = bias + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
            z.push(zh);
            a.push(self.activation.apply(zh));
        }
        (z, a)
    }

    fn output_logit(&self, a: &[f64]) -> f64 {
        let w2 = &self.params[self.w2_offset()..self.b2_offset()];
        self.params[self.b2_offset()] + w2.iter().zip(a).map(|(w, a)| w * a).sum::<f64>()
    }

    pub fn forward(&self, row: &FeatureRow) -> f64 {
        let (_, a) = self.hidden_layer(&row.to_array());
        sigmoid(self.output_logit(&a))
    }

    /// Squared error against `label` and its gradient w.r.t. all parameters.
    pub fn loss_and_gradient(&self, row: &FeatureRow, label: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.accumulate(row, label, 1.0, &mut grad);
        (loss, grad)
    }

    fn accumulate(&self, row: &FeatureRow, label: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let x = row.to_array();
        let (z, a) = self.hidden_layer(&x);
        let y = sigmoid(self.output_logit(&a));
        let err = y - label;
        let d_logit = 2.0 * err * y * (1.0 - y) * scale;
        let (b1o, w2o, b2o) = (self.b1_offset(), self.w2_offset(), self.b2_offset());
        grad[b2o] += d_logit;
        for h in 0..self.hidden {
            grad[w2o + h] += d_logit * a[h];
            let dz = d_logit * self.params[w2o + h] * self.activation.derivative(z[h], a[h]);
            grad[b1o + h] += dz;
            for (i, xi) in x.iter().enumerate() {
                grad[h * INPUTS + i] += dz * xi;
            }
        }
        err * err
    }

    pub fn mse(&self, rows: &[(FeatureRow, NormalizedLabel)]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter()
            .map(|(r, l)| (self.forward(r) - l.value()).powi(2))
            .sum::<f64>()
            / rows.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.push(self.activation.code());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err("not a fusion checkpoint".into());
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {}", bytes[4]));
        }
        let activation = Activation::from_code(bytes[5]).ok_or("unknown activation code")?;
        let hidden = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let mut mlp = FusionMLP::zeros(hidden, activation);
        let body = &bytes[10..];
        if body.len() != mlp.params.len() * 8 {
            return Err(format!("expected {} parameters", mlp.params.len()));
        }
        for (p, chunk) in mlp.params.iter_mut().zip(body.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(mlp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        FusionMLP::from_bytes(&bytes).map_err(|d| Error::format("fusion checkpoint", path, d))
    }
}

/// Max relative error between the analytic gradient and central differences
/// over every parameter.
pub fn fusion_gradient_check(mlp: &FusionMLP, row: &FeatureRow, label: f64, h: f64) -> f64 {
    let (_, analytic) = mlp.loss_and_gradient(row, label);
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for (i, exact) in analytic.iter().enumerate() {
        let original = probe.params[i];
        probe.params[i] = original + h;
        let plus = probe.loss_and_gradient(row, label).0;
        probe.params[i] = original - h;
        let minus = probe.loss_and_gradient(row, label).0;
        probe.params[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((exact - numeric).abs() / exact.abs().max(numeric.abs()).max(1e-8));
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainConfig {
    pub hidden: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            hidden: DEFAULT_HIDDEN,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainReport {
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Fits the MLP to the labels by Adam on squared error. With validation rows,
/// the parameters of the best validation epoch are returned and training
/// stops after `patience` epochs without improvement.
pub fn train_fusion(
    rows: &[(FeatureRow, NormalizedLabel)],
    cfg: &FusionTrainConfig,
    validation: Option<&[(FeatureRow, NormalizedLabel)]>,
) -> Result<(FusionMLP, FusionTrainReport)> {
    if rows.is_empty() {
        return Err(Error::Empty("fusion training rows"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) || cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::domain("fusion config", format!("{cfg:?}")));
    }
    let validation = validation.filter(|v| !v.is_empty());
    let mut mlp = FusionMLP::init(cfg.hidden, cfg.activation, cfg.seed);
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut moments = Moments::zeros(mlp.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut report = FusionTrainReport::default();
    let mut best: Option<(f64, FusionMLP)> = None;
    let mut step = 0u64;
    let mut grad = vec![0.0; mlp.params.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (row, label) = &rows[i];
                total += mlp.accumulate(row, label.value(), scale, &mut grad);
            }
            step += 1;
            moments.update(&adam, step, &mut mlp.params, &grad);
        }
        report.epoch_losses.push(total / rows.len() as f64);

        if let Some(val) = validation {
            let loss = mlp.mse(val);
            report.validation_losses.push(loss);
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, mlp.clone()));
                report.best_epoch = epoch;
            } else if epoch - report.best_epoch >= cfg.patience {
                break;
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    let mlp = best.map(|(_, m)| m).unwrap_or(mlp);
    Ok((mlp, report))
}

/// Seeded holdout mask over `len` rows: `round(fraction * len)` entries are
/// `true` (validation), the rest `false`.
pub fn validation_mask(len: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let n_val = ((fraction.clamp(0.0, 1.0) * len as f64).round() as usize).min(len);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; len];
    for &i in &idx[..n_val] {
        mask[i] = true;
    }
    mask
}

/// Seeded assignment of `len` rows to `folds` folds of near-equal size.
pub fn fold_assignment(len: usize, folds: usize, seed: u64) -> Vec<usize> {
    let folds = folds.max(1);
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; len];
    for (pos, &i) in idx.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

/// Everything needed to turn a document pair into a [`FeatureRow`].
pub struct FeatureSource<'a> {
    pub provider: &'a EmbeddingProvider,
    pub docs: &'a BTreeMap<String, Document>,
    /// Documents without a profile count as having no entities.
    pub profiles: &'a BTreeMap<String, EntityProfile>,
}

impl FeatureSource<'_> {
    fn doc(&self, id: &str) -> Result<&Document> {
        self.docs.get(id).ok_or_else(|| Error::UnknownDocument(id.to_owned()))
    }

    pub fn narrative(&self, doc_a: &str, doc_b: &str) -> Result<f64> {
        let ea = self.provider.embed(self.doc(doc_a)?)?;
        let eb = self.provider.embed(self.doc(doc_b)?)?;
        narrative_similarity(&ea, &eb)
    }

    pub fn feature_row(&self, doc_a: &str, doc_b: &str) -> Result<FeatureRow> {
        let narrative = self.narrative(doc_a, doc_b)?;
        let empty = EntityProfile::default();
        let pa = self.profiles.get(doc_a).unwrap_or(&empty);
        let pb = self.profiles.get(doc_b).unwrap_or(&empty);
        Ok(FeatureRow::new(narrative, feature_vector(pa, pb)))
    }
}

pub fn predict_pair(mlp: &FusionMLP, source: &FeatureSource<'_>, doc_a: &str, doc_b: &str) -> Result<f64> {
    Ok(mlp.forward(&source.feature_row(doc_a, doc_b)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDumpRow {
    pub pair_id: String,
    pub narrative: f64,
    pub geo: f64,
    pub org: f64,
    pub date: f64,
    pub qty: f64,
    pub label: Option<f64>,
    pub prediction: f64,
}

/// Writes `pair_id,narrative,geo,org,date,qty,label,prediction`.
pub fn write_feature_dump(path: &Path, rows: &[FeatureDumpRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
