use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, norm, DocFeatures, HashedEncoder, PreparedDocument};
use crate::corpus::NormalizedLabel;
use crate::error::{Error, Result};
use crate::optim::{adam_step_corrected, AdamConfig, BiasCorrection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiameseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SiameseTrainConfig {
    /// 4 epochs, batch size 8, learning rate 2e-5. The rate is the
    /// Transformer fine-tuning value; the hashed encoder usually wants ~1e-3.
    fn default() -> Self {
        SiameseTrainConfig {
            epochs: 4,
            batch_size: 8,
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl SiameseTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("siamese config", "epochs and batch_size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("siamese config", format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SiameseExample<'a> {
    pub a: &'a PreparedDocument,
    pub b: &'a PreparedDocument,
    pub label: NormalizedLabel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-pair loss of each epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Row index → gradient of that embedding row.
pub type SparseGradient = HashMap<u32, Vec<f64>>;

struct PairTerms {
    cos: f64,
    du: Vec<f64>,
    dv: Vec<f64>,
}

/// cos(u, v) and its gradients w.r.t. u and v. A zero vector gives cos 0 and
/// zero gradients.
fn cosine_terms(u: &[f64], v: &[f64]) -> PairTerms {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return PairTerms {
            cos: 0.0,
            du: vec![0.0; u.len()],
            dv: vec![0.0; v.len()],
        };
    }
    let cos = dot(u, v) / (nu * nv);
    let du = u.iter().zip(v).map(|(&ui, &vi)| vi / (nu * nv) - cos * ui / (nu * nu)).collect();
    let dv = u.iter().zip(v).map(|(&ui, &vi)| ui / (nu * nv) - cos * vi / (nv * nv)).collect();
    PairTerms { cos, du, dv }
}

fn accumulate(
    encoder: &HashedEncoder,
    fa: &DocFeatures,
    fb: &DocFeatures,
    label: f64,
    scale: f64,
    grad: &mut SparseGradient,
) -> f64 {
    let u = encoder.embed_features(fa).0;
    let v = encoder.embed_features(fb).0;
    let t = cosine_terms(&u, &v);
    let err = t.cos - label;
    let g = 2.0 * err * scale;
    let dim = encoder.dim();
    for (features, d) in [(fa, &t.du), (fb, &t.dv)] {
        for &(r, w) in features.entries() {
            let row = grad.entry(r).or_insert_with(|| vec![0.0; dim]);
            for (acc, di) in row.iter_mut().zip(d.iter()) {
                *acc += g * w * di;
            }
        }
    }
    err * err
}

/// Loss `(cos(enc(a), enc(b)) - label)^2` and its gradient w.r.t. every
/// embedding row the pair touches.
pub fn loss_and_gradient(
    encoder: &HashedEncoder,
    a: &DocFeatures,
    b: &DocFeatures,
    label: f64,
) -> (f64, SparseGradient) {
    let mut grad = SparseGradient::new();
    let loss = accumulate(encoder, a, b, label, 1.0, &mut grad);
    (loss, grad)
}

/// Training pair with features remapped to dense row slots.
struct DenseExample {
    a: Vec<(usize, f64)>,
    b: Vec<(usize, f64)>,
    label: f64,
}

/// Dense copy of the rows touched by the training set, with Adam moments and
/// a reusable gradient buffer.
struct DenseTable {
    dim: usize,
    rows: Vec<u32>,
    values: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    grad: Vec<f64>,
    touched: Vec<bool>,
    pending: Vec<usize>,
}

impl DenseTable {
    fn slot(&self, i: usize) -> std::ops::Range<usize> {
        i * self.dim..(i + 1) * self.dim
    }

    fn embed(&self, entries: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, w) in entries {
            for (o, x) in out.iter_mut().zip(&self.values[self.slot(i)]) {
                *o += w * x;
            }
        }
        out
    }

    fn accumulate(&mut self, ex: &DenseExample, scale: f64) -> f64 {
        let u = self.embed(&ex.a);
        let v = self.embed(&ex.b);
        let t = cosine_terms(&u, &v);
        let err = t.cos - ex.label;
        let g = 2.0 * err * scale;
        for (entries, d) in [(&ex.a, &t.du), (&ex.b, &t.dv)] {
            for &(i, w) in entries {
                if !self.touched[i] {
                    self.touched[i] = true;
                    self.pending.push(i);
                }
                let range = self.slot(i);
                for (acc, di) in self.grad[range].iter_mut().zip(d.iter()) {
                    *acc += g * w * di;
                }
            }
        }
        err * err
    }

    fn step(&mut self, adam: &AdamConfig, t: u64) {
        let bc = BiasCorrection::at(adam, t);
        let mut pending = std::mem::take(&mut self.pending);
        for &i in &pending {
            let range = self.slot(i);
            adam_step_corrected(
                adam,
                bc,
                &mut self.values[range.clone()],
                &self.grad[range.clone()],
                &mut self.m[range.clone()],
                &mut self.v[range.clone()],
            );
            self.grad[range].iter_mut().for_each(|g| *g = 0.0);
            self.touched[i] = false;
        }
        pending.clear();
        self.pending = pending;
    }
}

/// Trains the shared embedding table with Adam on the MSE between the label
/// and the cosine of the two embeddings.
///
/// Adam moments are kept per touched row and advanced only when that row
/// receives a gradient, with bias correction from the global step count.
pub fn train_siamese(
    encoder: &mut HashedEncoder,
    examples: &[SiameseExample<'_>],
    cfg: &SiameseTrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Empty("siamese training pairs"));
    }
    let dim = encoder.dim();
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut rows: Vec<u32> = Vec::new();
    let mut remap = |features: DocFeatures| -> Vec<(usize, f64)> {
        features
            .entries()
            .iter()
            .map(|&(r, w)| {
                let i = *index.entry(r).or_insert_with(|| {
                    rows.push(r);
                    rows.len() - 1
                });
                (i, w)
            })
            .collect()
    };
    let dense: Vec<DenseExample> = examples
        .iter()
        .map(|ex| DenseExample {
            a: remap(encoder.features(ex.a)),
            b: remap(encoder.features(ex.b)),
            label: ex.label.value(),
        })
        .collect();

    let mut values = Vec::with_capacity(rows.len() * dim);
    for &r in &rows {
        values.extend_from_slice(&encoder.row(r));
    }
    let n = rows.len() * dim;
    let mut table = DenseTable {
        dim,
        rows,
        values,
        m: vec![0.0; n],
        v: vec![0.0; n],
        grad: vec![0.0; n],
        touched: vec![false; n / dim.max(1)],
        pending: Vec::new(),
    };

    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dense.len()).collect();
    let mut report = TrainReport::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss += table.accumulate(&dense[i], scale);
            }
            report.steps += 1;
            table.step(&adam, report.steps);
        }
        report.epoch_losses.push(epoch_loss / dense.len() as f64);
    }
    for (i, &r) in table.rows.iter().enumerate() {
        encoder.row_mut(r).copy_from_slice(&table.values[table.slot(i)]);
    }
    Ok(report)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Maximum relative error between the analytic gradient of the MSE-cosine loss
/// and central finite differences with step `h`, over up to `samples`
/// randomly chosen coordinates of the rows the pair touches plus one row it
/// does not touch.
pub fn gradient_check(
    encoder: &HashedEncoder,
    a: &PreparedDocument,
    b: &PreparedDocument,
    label: f64,
    h: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let fa = encoder.features(a);
    let fb = encoder.features(b);
    let (_, grad) = loss_and_gradient(encoder, &fa, &fb, label);
    gradient_check_against(encoder, &fa, &fb, label, h, samples, seed, &grad)
}

/// Like [`gradient_check`] but compares the finite differences with a
/// caller-supplied gradient.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_against(
    encoder: &HashedEncoder,
    fa: &DocFeatures,
    fb: &DocFeatures,
    label: f64,
    h: f64,
    samples: usize,
    seed: u64,
    analytic: &SparseGradient,
) -> f64 {
    let mut touched: Vec<u32> = fa.entries().iter().chain(fb.entries()).map(|(r, _)| *r).collect();
    touched.sort_unstable();
    touched.dedup();
    let untouched = (0..encoder.config().buckets).find(|r| touched.binary_search(r).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<(u32, usize)> = Vec::new();
    if !touched.is_empty() {
        for _ in 0..samples {
            let r = touched[rng.random_range(0..touched.len())];
            coords.push((r, rng.random_range(0..encoder.dim())));
        }
    }
    if let Some(r) = untouched {
        coords.push((r, 0));
    }

    let mut probe = encoder.clone();
    let mut worst: f64 = 0.0;
    for (r, k) in coords {
        let original = probe.row(r)[k];
        probe.row_mut(r)[k] = original + h;
        let plus = loss_and_gradient(&probe, fa, fb, label).0;
        probe.row_mut(r)[k] = original - h;
        let minus = loss_and_gradient(&probe, fa, fb, label).0;
        probe.row_mut(r)[k] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let exact = analytic.get(&r).map_or(0.0, |g| g[k]);
        worst = worst.max(relative_error(exact, numeric));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::FeatureConfig;

    fn encoder(buckets: u32, dim: usize, seed: u64) -> HashedEncoder {
        HashedEncoder::new(FeatureConfig {
            buckets,
            dim,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn prepared(s: &str) -> PreparedDocument {
        PreparedDocument {
            tokens: s.split_whitespace().map(str::to_owned).collect(),
        }
    }

    #[test]
    fn two_bucket_gradient_matches_hand_derivation() {
        // u = E0 = (1, 0), v = E1 = (1, 1), label 1, cos = 1/sqrt(2).
        let mut enc = encoder(2, 2, 0);
        enc.set_row(0, vec![1.0, 0.0]).unwrap();
        enc.set_row(1, vec![1.0, 1.0]).unwrap();
        let fa = DocFeatures::from_weights([(0, 1.0)]);
        let fb = DocFeatures::from_weights([(1, 1.0)]);
        let (loss, grad) = loss_and_gradient(&enc, &fa, &fb, 1.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((loss - (s - 1.0).powi(2)).abs() < 1e-15);
        let g0 = &grad[&0];
        let g1 = &grad[&1];
        assert!(g0[0].abs() < 1e-15);
        assert!((g0[1] - (1.0 - 2f64.sqrt())).abs() < 1e-15);
        assert!((g1[0] - (0.5 - s)).abs() < 1e-15);
        assert!((g1[1] + (0.5 - s)).abs() < 1e-15);
    }

    #[test]
    fn gradient_check_passes_and_detects_sign_flip() {
        let enc = encoder(64, 8, 11);
        let a = prepared("storm hits coastal town");
        let b = prepared("coastal storm damage");
        assert!(gradient_check(&enc, &a, &b, 0.3, 1e-5, 40, 1) < 1e-4);

        let fa = enc.features(&a);
        let fb = enc.features(&b);
        let (_, mut grad) = loss_and_gradient(&enc, &fa, &fb, 0.3);
        for g in grad.values_mut() {
            g.iter_mut().for_each(|x| *x = -*x);
        }
        assert!(gradient_check_against(&enc, &fa, &fb, 0.3, 1e-5, 40, 1, &grad) > 1e-2);
    }

    #[test]
    fn untouched_coordinate_has_zero_gradient() {
        let enc = encoder(4096, 4, 2);
        let fa = enc.features(&prepared("x"));
        let fb = enc.features(&prepared("y"));
        let (_, grad) = loss_and_gradient(&enc, &fa, &fb, 0.5);
        let untouched = (0..4096).find(|r| !grad.contains_key(r)).unwrap();
        // samples = 0 checks only the untouched row.
        assert_eq!(gradient_check_against(&enc, &fa, &fb, 0.5, 1e-5, 0, 0, &grad), 0.0);
        assert!(!grad.contains_key(&untouched));
    }

    fn toy_examples() -> Vec<(PreparedDocument, PreparedDocument, NormalizedLabel)> {
        let topics = [
            "flood river rain water levee",
            "election vote ballot party poll",
            "football match goal league striker",
        ];
        let mut out = Vec::new();
        for (i, ta) in topics.iter().enumerate() {
            for (j, tb) in topics.iter().enumerate() {
                let label = if i == j { 1.0 } else { 0.0 };
                out.push((prepared(ta), prepared(&format!("{tb} news today")), NormalizedLabel::new(label).unwrap()));
            }
        }
        out
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data = toy_examples();
        let examples: Vec<_> = data.iter().map(|(a, b, l)| SiameseExample { a, b, label: *l }).collect();
        let cfg = SiameseTrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 5,
            ..Default::default()
        };
        let mut e1 = encoder(512, 16, 9);
        let r1 = train_siamese(&mut e1, &examples, &cfg).unwrap();
        assert!(r1.epoch_losses.last().unwrap() < &r1.epoch_losses[0]);
        let mut e2 = encoder(512, 16, 9);
        let r2 = train_siamese(&mut e2, &examples, &cfg).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(e1.to_bytes(), e2.to_bytes());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = toy_examples();
        let examples: Vec<_> = data.iter().map(|(a, b, l)| SiameseExample { a, b, label: *l }).collect();
        let cfg = SiameseTrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let fresh = encoder(512, 16, 9);
        let mut trained = fresh.clone();
        let report = train_siamese(&mut trained, &examples, &cfg).unwrap();
        assert!(trained.rows_equal(&fresh));
        assert!(report.epoch_losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn identical_pairs_and_bad_config() {
        let d = prepared("same text here");
        let examples = vec![
            SiameseExample {
                a: &d,
                b: &d,
                label: NormalizedLabel::new(1.0).unwrap()
            };
            5
        ];
        let mut enc = encoder(128, 4, 1);
        let report = train_siamese(&mut enc, &examples, &SiameseTrainConfig::default()).unwrap();
        assert!(report.epoch_losses.iter().all(|l| l.abs() < 1e-20));

        let bad = SiameseTrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(train_siamese(&mut enc, &examples, &bad).is_err());
        assert!(train_siamese(&mut enc, &[], &SiameseTrainConfig::default()).is_err());
    }

    #[test]
    fn siamese_similarity_is_symmetric() {
        let enc = encoder(256, 8, 4);
        let a = enc.encode(&prepared("alpha beta gamma"));
        let b = enc.encode(&prepared("beta delta"));
        assert_eq!(
            crate::encoder::narrative_similarity(&a, &b).unwrap(),
            crate::encoder::narrative_similarity(&b, &a).unwrap()
        );
    }
}
