//! Feature-hashed logistic regression.
//!
//! Features are unigram and adjacent-bigram counts hashed with FNV-1a 64 into
//! `dim` buckets and L2-normalized. Training is plain SGD over a seeded
//! shuffle, so a fixed seed gives a bit-identical model.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{fnv1a64, token_norms};

pub const DEFAULT_DIM: usize = 1000;
pub const HASH_ID: &str = "fnv1a64";
pub const FEATURE_ID: &str = "unigram+bigram/l2";

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i as usize]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

fn bucket(key: &str, dim: usize) -> u32 {
    (fnv1a64(key.as_bytes()) % dim as u64) as u32
}

/// Hashes unigrams and adjacent bigrams (joined by a space) into `dim`
/// buckets, accumulates counts and L2-normalizes.
pub fn hash_features<S: AsRef<str>>(tokens: &[S], dim: usize) -> SparseVector {
    assert!(dim >= 1, "feature dimension must be positive");
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for t in tokens {
        *counts.entry(bucket(t.as_ref(), dim)).or_default() += 1.0;
    }
    for w in tokens.windows(2) {
        let key = format!("{} {}", w[0].as_ref(), w[1].as_ref());
        *counts.entry(bucket(&key, dim)).or_default() += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    SparseVector {
        entries: counts.into_iter().map(|(i, c)| (i, c / norm)).collect(),
    }
}

pub fn text_features(text: &str, dim: usize) -> SparseVector {
    hash_features(&token_norms(text), dim)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Log loss of one example given its logit.
pub fn logistic_loss(logit: f64, label: f64) -> f64 {
    softplus(logit) - label * logit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub positive_class: String,
    pub hash: String,
    pub features: String,
    pub examples: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedLinearModel {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

const MAGIC: &[u8; 8] = b"HLMODEL1";

impl HashedLinearModel {
    pub fn zeros(dim: usize) -> Self {
        HashedLinearModel {
            dim,
            weights: vec![0.0; dim],
            bias: 0.0,
            meta: TrainingMeta {
                epochs: 0,
                learning_rate: 0.0,
                seed: 0,
                positive_class: String::new(),
                hash: HASH_ID.into(),
                features: FEATURE_ID.into(),
                examples: 0,
                final_loss: 0.0,
            },
        }
    }

    pub fn logit(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn predict_features(&self, x: &SparseVector) -> f64 {
        sigmoid(self.logit(x))
    }

    /// `sigmoid(w·x + b)` for the hashed features of `text`.
    pub fn predict_proba(&self, text: &str) -> f64 {
        self.predict_features(&text_features(text, self.dim))
    }

    pub fn predict_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        self.predict_features(&hash_features(tokens, self.dim))
    }

    /// Loss of one example and its gradient: sparse over the weights, plus
    /// the bias component.
    pub fn loss_and_gradient(&self, x: &SparseVector, label: f64) -> (f64, Vec<(u32, f64)>, f64) {
        let z = self.logit(x);
        let residual = sigmoid(z) - label;
        let grad = x.entries.iter().map(|&(i, v)| (i, residual * v)).collect();
        (logistic_loss(z, label), grad, residual)
    }

    /// Binary layout, little-endian throughout:
    ///
    /// ```text
    /// magic    8 bytes  "HLMODEL1"
    /// dim      u64
    /// weights  dim × f64
    /// bias     f64
    /// meta_len u64
    /// meta     meta_len bytes of UTF-8 JSON (TrainingMeta)
    /// ```
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta)?;
        out.write_all(MAGIC)?;
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        for w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        out.write_all(&self.bias.to_le_bytes())?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(8 * (self.dim + 4) + 256);
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a hashed linear model file".into()));
        }
        let dim = read_u64(&mut input)? as usize;
        if dim == 0 || dim > (1 << 28) {
            return Err(Error::Format(format!("implausible model dimension {dim}")));
        }
        let mut weights = Vec::with_capacity(dim);
        for _ in 0..dim {
            weights.push(read_f64(&mut input)?);
        }
        let bias = read_f64(&mut input)?;
        let meta_len = read_u64(&mut input)? as usize;
        let mut meta = vec![0u8; meta_len];
        input.read_exact(&mut meta)?;
        let meta: TrainingMeta = serde_json::from_slice(&meta)?;
        if !weights.iter().all(|w| w.is_finite()) || !bias.is_finite() {
            return Err(Error::Format("model contains non-finite weights".into()));
        }
        Ok(HashedLinearModel {
            dim,
            weights,
            bias,
            meta,
        })
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub positive_class: String,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dim: DEFAULT_DIM,
            epochs: 10,
            learning_rate: 0.5,
            seed: 0,
            positive_class: "positive".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: HashedLinearModel,
    /// Mean training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

fn mean_loss(model: &HashedLinearModel, data: &[(SparseVector, f64)]) -> f64 {
    data.iter().map(|(x, y)| logistic_loss(model.logit(x), *y)).sum::<f64>() / data.len() as f64
}

/// Logistic regression by SGD. Each epoch visits every example once in an
/// order drawn from a ChaCha8 stream seeded with `params.seed`.
pub fn train_linear<S: AsRef<str>>(positives: &[S], negatives: &[S], params: &TrainParams) -> Result<TrainOutcome> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Training(format!(
            "both classes need examples (positive: {}, negative: {})",
            positives.len(),
            negatives.len()
        )));
    }
    if params.dim == 0 {
        return Err(Error::Training("feature dimension must be positive".into()));
    }
    let data: Vec<(SparseVector, f64)> = positives
        .iter()
        .map(|t| (text_features(t.as_ref(), params.dim), 1.0))
        .chain(negatives.iter().map(|t| (text_features(t.as_ref(), params.dim), 0.0)))
        .collect();
    train_on_features(&data, params)
}

/// Same as [`train_linear`] over precomputed feature vectors with 0/1 labels.
pub fn train_on_features(data: &[(SparseVector, f64)], params: &TrainParams) -> Result<TrainOutcome> {
    let mut model = HashedLinearModel::zeros(params.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let residual = model.predict_features(x) - y;
            for &(j, v) in &x.entries {
                model.weights[j as usize] -= params.learning_rate * residual * v;
            }
            model.bias -= params.learning_rate * residual;
        }
        let loss = mean_loss(&model, data);
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became {loss} at epoch {} (lr {}, {} examples, bias {})",
                epoch + 1,
                params.learning_rate,
                data.len(),
                model.bias
            )));
        }
        epoch_losses.push(loss);
    }
    model.meta = TrainingMeta {
        epochs: params.epochs,
        learning_rate: params.learning_rate,
        seed: params.seed,
        positive_class: params.positive_class.clone(),
        hash: HASH_ID.into(),
        features: FEATURE_ID.into(),
        examples: data.len(),
        final_loss: epoch_losses.last().copied().unwrap_or_else(|| mean_loss(&model, data)),
    };
    Ok(TrainOutcome { model, epoch_losses })
}

/// Reads `label TAB text` training lines (`1`/`0`, or `pos`/`neg`).
pub fn parse_labeled(text: &str) -> Result<(Vec<String>, Vec<String>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("training line {}: missing tab", n + 1)))?;
        match label.trim() {
            "1" | "pos" | "positive" => pos.push(body.to_owned()),
            "0" | "neg" | "negative" => neg.push(body.to_owned()),
            other => {
                return Err(Error::Format(format!(
                    "training line {}: unknown label {other:?}",
                    n + 1
                )))
            }
        }
    }
    Ok((pos, neg))
}
