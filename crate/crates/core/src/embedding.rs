//! Hashed character n-gram features and a contrastively trained linear
//! projection on top of them.
//!
//! The featurizer is frozen; only the projection `W` (d_out × 2^15) is
//! learned, with an InfoNCE objective over (question, positive, negatives)
//! triples mined from chunked papers.

use crate::corpus::Chunk;
use crate::llm::{Backend, BackendError, ChatRequest, PromptLibrary};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Number of hash buckets.
pub const FEATURE_DIM: usize = 1 << 15;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const MODEL_MAGIC: &str = "LITPILOT-PROJ";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text yields no n-gram features")]
    EmptyInput,
    #[error("projection maps the input to the zero vector")]
    DegenerateProjection,
    #[error("chunk id {0:?} cannot be resolved to text")]
    UnresolvedChunk(String),
    #[error("corpus too small: {0}")]
    InsufficientCorpus(String),
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("identity projections cannot be serialized")]
    NotSerializable,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Sparse non-negative feature weights, sorted by bucket index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }
}

/// Character 2- and 3-grams of the lowercased, whitespace-normalized text,
/// hashed with FNV-1a (64-bit) into 2^15 buckets and counted.
pub fn featurize(text: &str) -> FeatureVector {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    let chars: Vec<char> = normalized.chars().collect();
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut buf = String::new();
    for n in [2usize, 3] {
        for window in chars.windows(n) {
            buf.clear();
            buf.extend(window);
            let bucket = (fnv1a64(buf.as_bytes()) % FEATURE_DIM as u64) as u32;
            *counts.entry(bucket).or_default() += 1.0;
        }
    }
    FeatureVector {
        entries: counts.into_iter().collect(),
    }
}

/// Unit-norm dense embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`; `None` for zero or non-finite input.
    pub fn from_unnormalized(values: &[f64]) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Wraps stored values as-is (used when loading a persisted index).
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        cosine_f32(&self.0, &other.0)
    }
}

pub fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    /// Row-major d_out × FEATURE_DIM.
    Dense(Vec<f64>),
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    d_out: usize,
    tau: f64,
    seed: u64,
    weights: Weights,
}

impl ProjectionModel {
    /// Glorot-uniform initialization, `a = sqrt(6 / (2^15 + d_out))`.
    pub fn init(d_out: usize, tau: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(d_out, tau, seed, &mut rng)
    }

    fn init_with(d_out: usize, tau: f64, seed: u64, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (FEATURE_DIM + d_out) as f64).sqrt();
        let weights = (0..d_out * FEATURE_DIM).map(|_| rng.random_range(-a..a)).collect();
        Self {
            d_out,
            tau,
            seed,
            weights: Weights::Dense(weights),
        }
    }

    /// `W = I` with `d_out = 2^15`; embeddings equal normalized features.
    pub fn identity(tau: f64) -> Self {
        Self {
            d_out: FEATURE_DIM,
            tau,
            seed: 0,
            weights: Weights::Identity,
        }
    }

    pub fn from_dense(d_out: usize, tau: f64, seed: u64, weights: Vec<f64>) -> Result<Self, EmbedError> {
        if weights.len() != d_out * FEATURE_DIM {
            return Err(EmbedError::MalformedModel(format!(
                "expected {} weights, got {}",
                d_out * FEATURE_DIM,
                weights.len()
            )));
        }
        if tau.is_nan() || tau <= 0.0 || weights.iter().any(|w| !w.is_finite()) {
            return Err(EmbedError::MalformedModel("non-positive tau or non-finite weight".into()));
        }
        Ok(Self {
            d_out,
            tau,
            seed,
            weights: Weights::Dense(weights),
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        match &self.weights {
            Weights::Dense(w) => w[row * FEATURE_DIM + col],
            Weights::Identity => f64::from(u8::from(row == col)),
        }
    }

    /// Dense weights, row-major. `None` for the identity projection.
    pub fn dense_weights(&self) -> Option<&[f64]> {
        match &self.weights {
            Weights::Dense(w) => Some(w),
            Weights::Identity => None,
        }
    }

    pub fn set_weight(&mut self, row: usize, col: usize, value: f64) {
        if let Weights::Dense(w) = &mut self.weights {
            w[row * FEATURE_DIM + col] = value;
        }
    }

    /// `W · f` before normalization.
    pub fn project(&self, features: &FeatureVector) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        match &self.weights {
            Weights::Dense(w) => {
                for (row, slot) in out.iter_mut().enumerate() {
                    let base = row * FEATURE_DIM;
                    *slot = features
                        .entries
                        .iter()
                        .map(|&(i, x)| w[base + i as usize] * x)
                        .sum();
                }
            }
            Weights::Identity => {
                for &(i, x) in &features.entries {
                    out[i as usize] = x;
                }
            }
        }
        out
    }

    fn apply_gradient(&mut self, grad: &Gradient, step: f64) {
        if let Weights::Dense(w) = &mut self.weights {
            for (&col, column) in &grad.columns {
                for (row, g) in column.iter().enumerate() {
                    w[row * FEATURE_DIM + col as usize] -= step * g;
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }

    /// Header line then row-major little-endian f32 weights.
    pub fn write_to(&self, out: &mut dyn Write) -> Result<(), EmbedError> {
        let Weights::Dense(w) = &self.weights else {
            return Err(EmbedError::NotSerializable);
        };
        writeln!(out, "{MODEL_MAGIC} v1 d_out={} tau={} seed={}", self.d_out, self.tau, self.seed)?;
        let mut bytes = Vec::with_capacity(w.len() * 4);
        for &v in w {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file)
    }

    pub fn read_from(input: &mut dyn BufRead) -> Result<Self, EmbedError> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let malformed = |m: &str| EmbedError::MalformedModel(m.to_string());
        let mut parts = header.trim_end().split(' ');
        if parts.next() != Some(MODEL_MAGIC) || parts.next() != Some("v1") {
            return Err(malformed("bad magic or version"));
        }
        let mut field = |name: &str| -> Result<String, EmbedError> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(name))
                .and_then(|p| p.strip_prefix('='))
                .map(String::from)
                .ok_or_else(|| malformed(&format!("missing {name}")))
        };
        let d_out: usize = field("d_out")?.parse().map_err(|_| malformed("d_out"))?;
        let tau: f64 = field("tau")?.parse().map_err(|_| malformed("tau"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| malformed("seed"))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != d_out * FEATURE_DIM * 4 {
            return Err(malformed("weight payload has the wrong length"));
        }
        let weights = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        Self::from_dense(d_out, tau, seed, weights)
    }
}

pub fn embed(text: &str, model: &ProjectionModel) -> Result<EmbeddingVector, EmbedError> {
    embed_features(&featurize(text), model)
}

pub fn embed_features(features: &FeatureVector, model: &ProjectionModel) -> Result<EmbeddingVector, EmbedError> {
    if features.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    EmbeddingVector::from_unnormalized(&model.project(features)).ok_or(EmbedError::DegenerateProjection)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub question: String,
    pub positive_chunk: String,
    pub negative_chunks: Vec<String>,
}

/// Maps chunk ids to their text.
pub trait TextResolver {
    fn resolve(&self, chunk_id: &str) -> Option<&str>;
}

impl TextResolver for HashMap<String, String> {
    fn resolve(&self, chunk_id: &str) -> Option<&str> {
        self.get(chunk_id).map(String::as_str)
    }
}

impl TextResolver for BTreeMap<String, String> {
    fn resolve(&self, chunk_id: &str) -> Option<&str> {
        self.get(chunk_id).map(String::as_str)
    }
}

/// Gradient with respect to `W`, stored by touched column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    d_out: usize,
    columns: BTreeMap<u32, Vec<f64>>,
}

impl Gradient {
    fn new(d_out: usize) -> Self {
        Self {
            d_out,
            columns: BTreeMap::new(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns.get(&(col as u32)).map_or(0.0, |c| c[row])
    }

    /// Column indices with any non-zero entry.
    pub fn touched_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.columns.keys().map(|&c| c as usize)
    }

    pub fn is_finite(&self) -> bool {
        self.columns.values().flatten().all(|g| g.is_finite())
    }

    fn add_outer(&mut self, du: &[f64], features: &FeatureVector) {
        for &(col, x) in &features.entries {
            let column = self.columns.entry(col).or_insert_with(|| vec![0.0; self.d_out]);
            for (slot, d) in column.iter_mut().zip(du) {
                *slot += d * x;
            }
        }
    }

    fn accumulate(&mut self, other: &Gradient) {
        for (&col, src) in &other.columns {
            let column = self.columns.entry(col).or_insert_with(|| vec![0.0; self.d_out]);
            for (slot, g) in column.iter_mut().zip(src) {
                *slot += g;
            }
        }
    }

    /// Dense row-major copy, `d_out × 2^15`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.d_out * FEATURE_DIM];
        for (&col, column) in &self.columns {
            for (row, g) in column.iter().enumerate() {
                dense[row * FEATURE_DIM + col as usize] = *g;
            }
        }
        dense
    }
}

struct Projected {
    unit: Vec<f64>,
    norm: f64,
}

fn project_unit(model: &ProjectionModel, f: &FeatureVector) -> Result<Projected, EmbedError> {
    if f.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    let u = model.project(f);
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(EmbedError::DegenerateProjection);
    }
    Ok(Projected {
        unit: u.iter().map(|x| x / norm).collect(),
        norm,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backpropagates `dL/dv` through `v = u / |u|`.
fn through_normalization(dv: &[f64], p: &Projected) -> Vec<f64> {
    let radial = dot(dv, &p.unit);
    dv.iter()
        .zip(&p.unit)
        .map(|(d, v)| (d - radial * v) / p.norm)
        .collect()
}

/// InfoNCE loss and its exact gradient for pre-featurized texts.
///
/// `candidates[0]` is the positive; the rest are negatives.
pub fn info_nce_features(
    model: &ProjectionModel,
    question: &FeatureVector,
    candidates: &[&FeatureVector],
) -> Result<(f64, Gradient), EmbedError> {
    let q = project_unit(model, question)?;
    let cands = candidates
        .iter()
        .map(|f| project_unit(model, f))
        .collect::<Result<Vec<_>, _>>()?;
    let tau = model.tau;
    let sims: Vec<f64> = cands.iter().map(|c| dot(&q.unit, &c.unit)).collect();

    // Logits shifted by the positive's: loss = ln(sum_j exp((s_j - s_p)/tau)).
    let shifted: Vec<f64> = sims.iter().map(|s| (s - sims[0]) / tau).collect();
    let m = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = shifted.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = m + total.ln();

    let mut grad = Gradient::new(model.d_out);
    let mut dv_q = vec![0.0; model.d_out];
    for (j, c) in cands.iter().enumerate() {
        let g = (exps[j] / total - if j == 0 { 1.0 } else { 0.0 }) / tau;
        for (slot, v) in dv_q.iter_mut().zip(&c.unit) {
            *slot += g * v;
        }
        let dv_c: Vec<f64> = q.unit.iter().map(|v| g * v).collect();
        grad.add_outer(&through_normalization(&dv_c, c), candidates[j]);
    }
    grad.add_outer(&through_normalization(&dv_q, &q), question);
    Ok((loss.max(0.0), grad))
}

/// InfoNCE over cosine similarities with temperature `model.tau()`.
pub fn info_nce(
    model: &ProjectionModel,
    triple: &TrainingTriple,
    texts: &dyn TextResolver,
) -> Result<(f64, Gradient), EmbedError> {
    let resolve = |id: &str| {
        texts
            .resolve(id)
            .map(featurize)
            .ok_or_else(|| EmbedError::UnresolvedChunk(id.to_string()))
    };
    let q = featurize(&triple.question);
    let mut feats = vec![resolve(&triple.positive_chunk)?];
    for n in &triple.negative_chunks {
        feats.push(resolve(n)?);
    }
    let refs: Vec<&FeatureVector> = feats.iter().collect();
    info_nce_features(model, &q, &refs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub d_out: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            d_out: 256,
            tau: 0.05,
            learning_rate: 0.1,
            epochs: 10,
            batch: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss over all triples before the first update.
    pub initial_loss: f64,
    /// Mean loss of each epoch, measured on each batch before its update.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over all triples with the returned model.
    pub final_loss: f64,
}

struct FeaturizedTriple {
    question: FeatureVector,
    candidates: Vec<FeatureVector>,
}

fn mean_loss(model: &ProjectionModel, data: &[FeaturizedTriple]) -> Result<f64, EmbedError> {
    let mut total = 0.0;
    for t in data {
        let refs: Vec<&FeatureVector> = t.candidates.iter().collect();
        total += info_nce_features(model, &t.question, &refs)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch gradient descent on the mean InfoNCE loss. Single-threaded so
/// a fixed seed reproduces the parameter trajectory bit for bit.
pub fn train_projection(
    triples: &[TrainingTriple],
    texts: &dyn TextResolver,
    hp: &TrainParams,
) -> Result<(ProjectionModel, TrainLog), EmbedError> {
    if triples.is_empty() {
        return Err(EmbedError::InvalidHyperparameters("no training triples".into()));
    }
    if hp.d_out == 0 || hp.batch == 0 || hp.tau.is_nan() || hp.tau <= 0.0 || hp.learning_rate.is_nan() || hp.learning_rate <= 0.0 {
        return Err(EmbedError::InvalidHyperparameters(format!("{hp:?}")));
    }
    let mut cache: HashMap<String, FeatureVector> = HashMap::new();
    let mut feature_of = |id: &str| -> Result<FeatureVector, EmbedError> {
        if let Some(f) = cache.get(id) {
            return Ok(f.clone());
        }
        let f = featurize(texts.resolve(id).ok_or_else(|| EmbedError::UnresolvedChunk(id.to_string()))?);
        cache.insert(id.to_string(), f.clone());
        Ok(f)
    };
    let mut data = Vec::with_capacity(triples.len());
    for t in triples {
        let mut candidates = vec![feature_of(&t.positive_chunk)?];
        for n in &t.negative_chunks {
            candidates.push(feature_of(n)?);
        }
        data.push(FeaturizedTriple {
            question: featurize(&t.question),
            candidates,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = ProjectionModel::init_with(hp.d_out, hp.tau, hp.seed, &mut rng);
    let initial_loss = mean_loss(&model, &data)?;
    if !initial_loss.is_finite() {
        return Err(EmbedError::NonFiniteLoss { epoch: 0 });
    }
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(hp.batch) {
            let mut sum = Gradient::new(hp.d_out);
            for &i in batch {
                let refs: Vec<&FeatureVector> = data[i].candidates.iter().collect();
                let (loss, grad) = info_nce_features(&model, &data[i].question, &refs)?;
                if !loss.is_finite() || !grad.is_finite() {
                    return Err(EmbedError::NonFiniteLoss { epoch });
                }
                epoch_total += loss;
                sum.accumulate(&grad);
            }
            model.apply_gradient(&sum, hp.learning_rate / batch.len() as f64);
        }
        epoch_losses.push(epoch_total / data.len() as f64);
    }
    let final_loss = mean_loss(&model, &data)?;
    if !final_loss.is_finite() {
        return Err(EmbedError::NonFiniteLoss { epoch: hp.epochs });
    }
    Ok((
        model,
        TrainLog {
            initial_loss,
            epoch_losses,
            final_loss,
        },
    ))
}

/// Prompts the backend for one question per chunk and pairs it with
/// `negatives_per` chunks drawn uniformly from other documents.
pub fn mine_triples(
    corpus: &[Chunk],
    backend: &dyn Backend,
    prompts: &PromptLibrary,
    negatives_per: usize,
    seed: u64,
) -> Result<Vec<TrainingTriple>, EmbedError> {
    if negatives_per == 0 {
        return Err(EmbedError::InsufficientCorpus("negatives_per must be at least 1".into()));
    }
    let mut per_doc: BTreeMap<&str, usize> = BTreeMap::new();
    for c in corpus {
        *per_doc.entry(c.doc_id.as_str()).or_default() += 1;
    }
    if per_doc.len() < 2 || corpus.len() < negatives_per + 1 {
        return Err(EmbedError::InsufficientCorpus(format!(
            "{} chunks from {} documents",
            corpus.len(),
            per_doc.len()
        )));
    }
    if let Some((doc, n)) = per_doc.iter().find(|&(_, &n)| corpus.len() - n < negatives_per) {
        return Err(EmbedError::InsufficientCorpus(format!(
            "document {doc} has only {} chunks outside it",
            corpus.len() - n
        )));
    }

    let template = prompts.get("triple_question").map_err(BackendError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for chunk in corpus {
        let others: Vec<&Chunk> = corpus.iter().filter(|c| c.doc_id != chunk.doc_id).collect();
        let picked = sample(&mut rng, others.len(), negatives_per);
        let negative_chunks: Vec<String> = picked.iter().map(|i| others[i].chunk_id.clone()).collect();

        let prompt = template
            .render([("passage", chunk.text.as_str())])
            .map_err(BackendError::from)?;
        let reply = backend.complete(&ChatRequest::user(prompt))?;
        let question = reply.content.trim();
        if question.is_empty() {
            continue;
        }
        triples.push(TrainingTriple {
            question: question.to_string(),
            positive_chunk: chunk.chunk_id.clone(),
            negative_chunks,
        });
    }
    Ok(triples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_has_no_features() {
        assert!(featurize("").is_empty());
        assert!(featurize("   ").is_empty());
        assert!(featurize("x").is_empty());
    }

    #[test]
    fn featurize_normalizes_case_and_space() {
        assert_eq!(featurize("Hello   World"), featurize("hello world"));
    }

    #[test]
    fn embed_rejects_empty_input() {
        let m = ProjectionModel::init(4, 0.05, 1);
        assert!(matches!(embed("", &m), Err(EmbedError::EmptyInput)));
    }

    #[test]
    fn zero_projection_is_degenerate() {
        let m = ProjectionModel::from_dense(2, 0.05, 0, vec![0.0; 2 * FEATURE_DIM]).unwrap();
        assert!(matches!(embed("abc", &m), Err(EmbedError::DegenerateProjection)));
    }

    #[test]
    fn model_file_round_trip() {
        let m = ProjectionModel::init(3, 0.05, 9);
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&bytes[..header_end], b"LITPILOT-PROJ v1 d_out=3 tau=0.05 seed=9");
        assert_eq!(bytes.len(), header_end + 1 + 3 * FEATURE_DIM * 4);
        let loaded = ProjectionModel::read_from(&mut &bytes[..]).unwrap();
        assert_eq!(loaded.d_out(), 3);
        assert_eq!(loaded.tau(), 0.05);
        for col in [0, 17, FEATURE_DIM - 1] {
            assert_eq!(loaded.weight(2, col), f64::from(m.weight(2, col) as f32));
        }
    }

    #[test]
    fn truncated_model_file_is_rejected() {
        let bad = b"LITPILOT-PROJ v1 d_out=1 tau=0.05 seed=0\n\x00\x00";
        assert!(matches!(
            ProjectionModel::read_from(&mut &bad[..]),
            Err(EmbedError::MalformedModel(_))
        ));
    }

    #[test]
    fn identity_model_cannot_be_saved() {
        let mut sink = Vec::new();
        assert!(matches!(
            ProjectionModel::identity(0.05).write_to(&mut sink),
            Err(EmbedError::NotSerializable)
        ));
    }
}
