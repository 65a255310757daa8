//! Framework-free reference classifier with explicit backpropagation:
//! mean-pooled embeddings, one ReLU layer, and a softmax output layer.
//!
//! Parameters are grouped into three modules (`embedding`, `dense1`,
//! `dense2`), the unit of sensitivity scoring and freezing.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TokenizedDoc};
use crate::error::{Error, Result};
use crate::io;
use crate::sensitivity::FreezeMask;
use crate::TokenId;

pub const MODULE_NAMES: [&str; 3] = ["embedding", "dense1", "dense2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Module {
    Embedding,
    Dense1,
    Dense2,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Embedding, Module::Dense1, Module::Dense2];

    pub fn name(self) -> &'static str {
        MODULE_NAMES[self.index()]
    }

    pub fn index(self) -> usize {
        match self {
            Module::Embedding => 0,
            Module::Dense1 => 1,
            Module::Dense2 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub base_vocab_size: usize,
    /// Base plus task tokens.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ModelDims {
    pub fn new(base_vocab_size: usize) -> Self {
        ModelDims {
            base_vocab_size,
            vocab_size: base_vocab_size,
            embed_dim: 16,
            hidden_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyClassifier {
    dims: ModelDims,
    classes: Vec<Label>,
    /// `vocab_size x embed_dim`, row-major.
    pub embedding: Vec<f64>,
    /// `embed_dim x hidden_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden_dim x classes`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Output vector that stands for `module` in dispersion measurement.
    pub fn module_output(&self, module: Module) -> &[f64] {
        match module {
            Module::Embedding => &self.pooled,
            Module::Dense1 => &self.hidden,
            Module::Dense2 => &self.logits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(m: &TinyClassifier) -> Self {
        Gradients {
            embedding: vec![0.0; m.embedding.len()],
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: vec![0.0; m.b2.len()],
        }
    }

    pub fn module(&self, module: Module) -> Vec<&[f64]> {
        match module {
            Module::Embedding => vec![&self.embedding],
            Module::Dense1 => vec![&self.w1, &self.b1],
            Module::Dense2 => vec![&self.w2, &self.b2],
        }
    }

    /// L2 norm over all parameters of `module`.
    pub fn module_norm(&self, module: Module) -> f64 {
        self.module(module)
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("valid stddev");
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl TinyClassifier {
    /// All-zero parameters; predicts the uniform distribution.
    pub fn zeros(dims: ModelDims, classes: Vec<Label>) -> Self {
        let c = classes.len();
        TinyClassifier {
            embedding: vec![0.0; dims.vocab_size * dims.embed_dim],
            w1: vec![0.0; dims.embed_dim * dims.hidden_dim],
            b1: vec![0.0; dims.hidden_dim],
            w2: vec![0.0; dims.hidden_dim * c],
            b2: vec![0.0; c],
            dims,
            classes,
        }
    }

    /// Seeded Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn random(dims: ModelDims, classes: Vec<Label>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(dims, classes);
        m.embedding = normal_vec(&mut rng, m.embedding.len(), 1.0);
        m.w1 = normal_vec(&mut rng, m.w1.len(), (1.0 / dims.embed_dim as f64).sqrt());
        m.w2 = normal_vec(&mut rng, m.w2.len(), (1.0 / dims.hidden_dim as f64).sqrt());
        m
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn classes(&self) -> &[Label] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &Label) -> Result<usize> {
        self.classes
            .binary_search(label)
            .map_err(|_| Error::Label(label.to_string()))
    }

    pub fn module_param_count(&self, module: Module) -> usize {
        match module {
            Module::Embedding => self.embedding.len(),
            Module::Dense1 => self.w1.len() + self.b1.len(),
            Module::Dense2 => self.w2.len() + self.b2.len(),
        }
    }

    pub fn total_params(&self) -> usize {
        Module::ALL.iter().map(|&m| self.module_param_count(m)).sum()
    }

    /// Parameters in the embedding rows of task tokens.
    pub fn new_token_params(&self) -> usize {
        (self.dims.vocab_size - self.dims.base_vocab_size) * self.dims.embed_dim
    }

    /// Every parameter array, named, in a fixed order.
    pub fn parameters(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("embedding", &self.embedding),
            ("dense1.weight", &self.w1),
            ("dense1.bias", &self.b1),
            ("dense2.weight", &self.w2),
            ("dense2.bias", &self.b2),
        ]
    }

    pub fn parameters_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    /// Appends `count` task-token rows drawn from `N(0, stddev^2)`.
    pub fn extend_vocab(&mut self, count: usize, stddev: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = normal_vec(&mut rng, count * self.dims.embed_dim, stddev);
        self.embedding.extend(rows);
        self.dims.vocab_size += count;
    }

    pub fn trace(&self, ids: &[TokenId]) -> Result<ForwardTrace> {
        let d = self.dims.embed_dim;
        let h = self.dims.hidden_dim;
        let c = self.num_classes();
        if ids.is_empty() {
            return Err(Error::Config("empty input sequence".into()));
        }
        let mut pooled = vec![0.0; d];
        for &id in ids {
            let id = id as usize;
            if id >= self.dims.vocab_size {
                return Err(Error::IdRange {
                    id: id as u64,
                    expected: format!("< {}", self.dims.vocab_size),
                });
            }
            for (p, e) in pooled.iter_mut().zip(&self.embedding[id * d..(id + 1) * d]) {
                *p += e;
            }
        }
        let n = ids.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);

        let mut hidden = self.b1.clone();
        for (i, &x) in pooled.iter().enumerate() {
            for (hj, w) in hidden.iter_mut().zip(&self.w1[i * h..(i + 1) * h]) {
                *hj += x * w;
            }
        }
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));

        let mut logits = self.b2.clone();
        for (j, &a) in hidden.iter().enumerate() {
            for (lk, w) in logits.iter_mut().zip(&self.w2[j * c..(j + 1) * c]) {
                *lk += a * w;
            }
        }
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            pooled,
            hidden,
            logits,
            probs,
        })
    }

    /// Class probabilities for a token sequence.
    pub fn forward(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.trace(ids)?.probs)
    }

    pub fn predict(&self, ids: &[TokenId]) -> Result<usize> {
        let probs = self.forward(ids)?;
        Ok(argmax(&probs))
    }

    /// Adds the gradient of `weight * -log p(target | ids)` into `grads` and
    /// returns the unweighted loss.
    fn accumulate(&self, ids: &[TokenId], target: usize, weight: f64, grads: &mut Gradients) -> Result<f64> {
        let d = self.dims.embed_dim;
        let h = self.dims.hidden_dim;
        let c = self.num_classes();
        let t = self.trace(ids)?;
        let loss = log_sum_exp(&t.logits) - t.logits[target];

        let mut dz2 = t.probs.clone();
        dz2[target] -= 1.0;
        dz2.iter_mut().for_each(|g| *g *= weight);

        let mut dz1 = vec![0.0; h];
        for j in 0..h {
            let row = &self.w2[j * c..(j + 1) * c];
            let grow = &mut grads.w2[j * c..(j + 1) * c];
            for k in 0..c {
                grow[k] += t.hidden[j] * dz2[k];
            }
            if t.hidden[j] > 0.0 {
                dz1[j] = row.iter().zip(&dz2).map(|(w, g)| w * g).sum();
            }
        }
        for (gb, g) in grads.b2.iter_mut().zip(&dz2) {
            *gb += g;
        }

        let mut dpool = vec![0.0; d];
        for i in 0..d {
            let row = &self.w1[i * h..(i + 1) * h];
            let grow = &mut grads.w1[i * h..(i + 1) * h];
            for j in 0..h {
                grow[j] += t.pooled[i] * dz1[j];
            }
            dpool[i] = row.iter().zip(&dz1).map(|(w, g)| w * g).sum();
        }
        for (gb, g) in grads.b1.iter_mut().zip(&dz1) {
            *gb += g;
        }

        let n = ids.len() as f64;
        for &id in ids {
            let id = id as usize;
            for (ge, g) in grads.embedding[id * d..(id + 1) * d].iter_mut().zip(&dpool) {
                *ge += g / n;
            }
        }
        Ok(loss)
    }

    /// Mean negative log-likelihood over `batch` with analytic gradients.
    pub fn loss_and_grads(&self, batch: &[&TokenizedDoc]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let weight = 1.0 / batch.len() as f64;
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        for doc in batch {
            let target = self.class_index(&doc.label)?;
            total += self.accumulate(&doc.ids, target, weight, &mut grads)?;
        }
        let loss = total * weight;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok((loss, grads))
    }

    /// Mean loss without gradients.
    pub fn loss(&self, data: &[TokenizedDoc]) -> Result<f64> {
        let mut total = 0.0;
        for doc in data {
            let target = self.class_index(&doc.label)?;
            let t = self.trace(&doc.ids)?;
            total += log_sum_exp(&t.logits) - t.logits[target];
        }
        let loss = total / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok(loss)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Sorted distinct labels of a dataset.
pub fn label_set(data: &[TokenizedDoc]) -> Vec<Label> {
    let mut labels: Vec<Label> = data.iter().map(|d| d.label.clone()).collect();
    labels.sort();
    labels.dedup();
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub new_token_init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            new_token_init_std: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epoch_loss: Vec<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub trainable_fraction: f64,
}

/// Unweighted mean of per-class F1 over `classes` classes. A class with no
/// true positives scores 0, including classes absent from both sides.
pub fn macro_f1(predicted: &[usize], truth: &[usize], classes: usize) -> f64 {
    if classes == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let sum: f64 = (0..classes)
        .map(|k| {
            if tp[k] == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / (2 * tp[k] + fp[k] + fn_[k]) as f64
            }
        })
        .sum();
    sum / classes as f64
}

pub fn evaluate(model: &TinyClassifier, data: &[TokenizedDoc]) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let pairs = data
        .par_iter()
        .map(|d| Ok((model.predict(&d.ids)?, model.class_index(&d.label)?)))
        .collect::<Result<Vec<(usize, usize)>>>()?;
    let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(EvalMetrics {
        accuracy: correct as f64 / data.len() as f64,
        macro_f1: macro_f1(&pred, &truth, model.num_classes()),
        examples: data.len(),
    })
}

fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Gradient descent restricted to the modules the mask marks trainable.
/// Task-token embedding rows are always updated. Frozen parameters are
/// never written.
pub fn sparse_finetune(
    model: &TinyClassifier,
    data: &[TokenizedDoc],
    mask: &FreezeMask,
    cfg: &TrainConfig,
) -> Result<(TinyClassifier, TrainMetrics)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    mask.check_modules(&MODULE_NAMES)?;
    let trainable = |m: Module| mask.trainable[m.index()];

    let mut model = model.clone();
    let d = model.dims.embed_dim;
    let new_rows_from = model.dims.base_vocab_size * d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TokenizedDoc> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, g) = model.loss_and_grads(&batch)?;
            total += loss * batch.len() as f64;
            let lr = cfg.learning_rate;
            if trainable(Module::Embedding) {
                sgd_step(&mut model.embedding, &g.embedding, lr);
            } else {
                sgd_step(&mut model.embedding[new_rows_from..], &g.embedding[new_rows_from..], lr);
            }
            if trainable(Module::Dense1) {
                sgd_step(&mut model.w1, &g.w1, lr);
                sgd_step(&mut model.b1, &g.b1, lr);
            }
            if trainable(Module::Dense2) {
                sgd_step(&mut model.w2, &g.w2, lr);
                sgd_step(&mut model.b2, &g.b2, lr);
            }
        }
        epoch_loss.push(total / data.len() as f64);
    }
    let eval = evaluate(&model, data)?;
    Ok((
        model,
        TrainMetrics {
            epoch_loss,
            accuracy: eval.accuracy,
            macro_f1: eval.macro_f1,
            trainable_fraction: mask.achieved_fraction,
        },
    ))
}

/// Stand-in for pretrained weights: a seeded random model trained briefly on
/// a generic synthetic task over the base vocabulary. Each document draws
/// tokens uniformly and is labeled by the residue class (token id mod the
/// number of classes) that occurs most often.
pub fn pretrained(dims: ModelDims, classes: Vec<Label>, seed: u64) -> Result<TinyClassifier> {
    let base = TinyClassifier::random(
        ModelDims {
            vocab_size: dims.base_vocab_size,
            ..dims
        },
        classes.clone(),
        seed,
    );
    let c = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0001);
    let docs: Vec<TokenizedDoc> = (0..256)
        .map(|_| {
            let ids: Vec<TokenId> = (0..8)
                .map(|_| rng.random_range(0..dims.base_vocab_size) as TokenId)
                .collect();
            let mut counts = vec![0usize; c];
            for &id in &ids {
                counts[id as usize % c] += 1;
            }
            let winner = (0..c).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap();
            TokenizedDoc {
                ids,
                label: classes[winner].clone(),
            }
        })
        .collect();
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 3,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    let (mut model, _) = sparse_finetune(&base, &docs, &FreezeMask::all_trainable(), &cfg)?;
    let extra = dims.vocab_size - dims.base_vocab_size;
    model.extend_vocab(extra, cfg.new_token_init_std, seed ^ 0x7e57_0000_0000_0002);
    Ok(model)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    base_vocab_size: usize,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    classes: Vec<Label>,
    embedding: Vec<f64>,
    dense1_weight: Vec<f64>,
    dense1_bias: Vec<f64>,
    dense2_weight: Vec<f64>,
    dense2_bias: Vec<f64>,
    mask: Option<FreezeMask>,
}

const MODEL_FORMAT: &str = "adapt-tiny-classifier";
const MODEL_VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &TinyClassifier, mask: Option<&FreezeMask>) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        base_vocab_size: model.dims.base_vocab_size,
        vocab_size: model.dims.vocab_size,
        embed_dim: model.dims.embed_dim,
        hidden_dim: model.dims.hidden_dim,
        classes: model.classes.clone(),
        embedding: model.embedding.clone(),
        dense1_weight: model.w1.clone(),
        dense1_bias: model.b1.clone(),
        dense2_weight: model.w2.clone(),
        dense2_bias: model.b2.clone(),
        mask: mask.cloned(),
    };
    io::write_json(path, &file)
}

pub fn load_model(path: &Path) -> Result<(TinyClassifier, Option<FreezeMask>)> {
    let f: ModelFile = io::read_json(path)?;
    if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
        return Err(Error::parse(1, "format", format!("unsupported model format {} v{}", f.format, f.version)));
    }
    let c = f.classes.len();
    let expect = [
        ("embedding", f.embedding.len(), f.vocab_size * f.embed_dim),
        ("dense1_weight", f.dense1_weight.len(), f.embed_dim * f.hidden_dim),
        ("dense1_bias", f.dense1_bias.len(), f.hidden_dim),
        ("dense2_weight", f.dense2_weight.len(), f.hidden_dim * c),
        ("dense2_bias", f.dense2_bias.len(), c),
    ];
    for (name, got, want) in expect {
        if got != want {
            return Err(Error::parse(0, name, format!("expected {want} values, found {got}")));
        }
    }
    if f.base_vocab_size > f.vocab_size || c == 0 {
        return Err(Error::parse(0, "dims", "inconsistent model dimensions"));
    }
    let model = TinyClassifier {
        dims: ModelDims {
            base_vocab_size: f.base_vocab_size,
            vocab_size: f.vocab_size,
            embed_dim: f.embed_dim,
            hidden_dim: f.hidden_dim,
        },
        classes: f.classes,
        embedding: f.embedding,
        w1: f.dense1_weight,
        b1: f.dense1_bias,
        w2: f.dense2_weight,
        b2: f.dense2_bias,
    };
    Ok((model, f.mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: i64) -> Vec<Label> {
        (0..n).map(Label::Int).collect()
    }

    fn doc(ids: &[TokenId], label: i64) -> TokenizedDoc {
        TokenizedDoc::new(ids.to_vec(), label)
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = TinyClassifier::zeros(ModelDims::new(5), labels(4));
        let p = m.forward(&[1, 2]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn probabilities_sum_to_one_and_ignore_order() {
        let m = TinyClassifier::random(ModelDims::new(10), labels(3), 7);
        let a = m.forward(&[1, 4, 9, 4]).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let b = m.forward(&[4, 9, 4, 1]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_id() {
        let m = TinyClassifier::zeros(ModelDims::new(5), labels(2));
        assert!(matches!(m.forward(&[5]), Err(Error::IdRange { id: 5, .. })));
    }

    #[test]
    fn uniform_loss_is_ln2() {
        let m = TinyClassifier::zeros(ModelDims::new(5), labels(2));
        let d = doc(&[1], 0);
        let (loss, _) = m.loss_and_grads(&[&d]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((loss - 0.6931472).abs() < 1e-7);
    }

    #[test]
    fn duplicated_batch_same_loss() {
        let m = TinyClassifier::random(ModelDims::new(6), labels(2), 3);
        let a = doc(&[1, 2], 0);
        let b = doc(&[3, 4, 5], 1);
        let (l1, g1) = m.loss_and_grads(&[&a, &b]).unwrap();
        let (l2, g2) = m.loss_and_grads(&[&a, &b, &a, &b]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (x, y) in g1.w1.iter().zip(&g2.w1) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_label() {
        let m = TinyClassifier::zeros(ModelDims::new(5), labels(2));
        let d = doc(&[1], 7);
        assert!(matches!(m.loss_and_grads(&[&d]), Err(Error::Label(_))));
        assert!(matches!(evaluate(&m, &[d]), Err(Error::Label(_))));
    }

    #[test]
    fn f1_of_constant_predictor() {
        // Balanced two-class set, always predicting class 0:
        // class 0: P = 1/2, R = 1, F1 = 2/3; class 1: F1 = 0.
        let truth = [0, 0, 1, 1];
        let pred = [0, 0, 0, 0];
        assert!((macro_f1(&pred, &truth, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&truth, &truth, 2), 1.0);
        // Absent third class counts with F1 = 0.
        assert!((macro_f1(&truth, &truth, 3) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_learning_rate() {
        let m = TinyClassifier::zeros(ModelDims::new(5), labels(2));
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let err = sparse_finetune(&m, &[doc(&[1], 0)], &FreezeMask::all_trainable(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn full_freeze_is_identity() {
        let m = TinyClassifier::random(ModelDims::new(8), labels(2), 1);
        let data = vec![doc(&[1, 2], 0), doc(&[3, 4], 1)];
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (trained, metrics) = sparse_finetune(&m, &data, &FreezeMask::all_frozen(), &cfg).unwrap();
        assert_eq!(trained, m);
        assert_eq!(metrics.epoch_loss.len(), 5);
    }

    #[test]
    fn new_rows_train_under_frozen_embedding() {
        let mut m = TinyClassifier::random(ModelDims::new(8), labels(2), 1);
        m.extend_vocab(2, 0.02, 9);
        let data = vec![doc(&[1, 8], 0), doc(&[3, 9], 1)];
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (trained, _) = sparse_finetune(&m, &data, &FreezeMask::all_frozen(), &cfg).unwrap();
        let d = m.dims().embed_dim;
        assert_eq!(trained.embedding[..8 * d], m.embedding[..8 * d]);
        assert_ne!(trained.embedding[8 * d..], m.embedding[8 * d..]);
        assert_eq!(trained.w1, m.w1);
        assert_eq!(trained.w2, m.w2);
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = TinyClassifier::random(ModelDims::new(7), vec!["neg".into(), "pos".into()], 11);
        m.extend_vocab(3, 0.02, 5);
        let mask = FreezeMask::all_trainable();
        save_model(&path, &m, Some(&mask)).unwrap();
        let (back, back_mask) = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_mask, Some(mask));
        let bytes = std::fs::read(&path).unwrap();
        save_model(&path, &back, back_mask.as_ref()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn pretraining_is_seeded() {
        let dims = ModelDims {
            vocab_size: 12,
            ..ModelDims::new(10)
        };
        let a = pretrained(dims, labels(2), 4).unwrap();
        let b = pretrained(dims, labels(2), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims().vocab_size, 12);
        assert_ne!(a, pretrained(dims, labels(2), 5).unwrap());
    }
}
