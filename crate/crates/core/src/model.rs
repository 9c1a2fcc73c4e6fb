//! Pluggable toxicity regressors over hashed text features.
//!
//! Two model kinds share one linear form: a context-aware scorer whose input
//! is the pair (self text, walk context) and a context-free baseline that
//! looks at the toot text alone. Features are signed-hashed unigrams and
//! bigrams; the context block is the discount-weighted sum of the walked
//! toots' feature vectors. Parameters serialize to a small versioned binary
//! format with a CRC32 trailer — that byte layout is the model-exchange wire
//! format between instances.

use crate::util::fnv1a;
use crate::walks::ContextSample;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Default feature-space dimensionality per block.
pub const DEFAULT_DIM: u32 = 1 << 16;

/// Current parameter-file format version.
pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"FMOD";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty sample stream")]
    EmptySampleStream,
    #[error("dimension mismatch: params have D={params}, features have D={features}")]
    DimensionMismatch { params: u32, features: u32 },
    #[error("model kind mismatch: context_free params given non-empty context features")]
    KindMismatch,
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes: not a model parameter file")]
    BadMagic,
    #[error("unsupported format version {found} (reader supports {supported})")]
    Version { found: u32, supported: u32 },
    #[error("unknown model kind byte {0}")]
    UnknownKind(u8),
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
}

/// Sparse feature vector of fixed dimensionality. Entries are sorted by
/// index with duplicates summed; zero entries are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    dim: u32,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn zero(dim: u32) -> Self {
        FeatureVector {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(dim: u32, mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|(i, _)| *i);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            debug_assert!(i < dim);
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|(_, v)| *v != 0.0);
        FeatureVector {
            dim,
            entries: merged,
        }
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> FeatureVector {
        FeatureVector {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, v)| (i, v * factor)).collect(),
        }
    }

    fn dot(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, v)| v * dense[i as usize])
            .sum()
    }
}

/// Discount-weighted sparse sum of feature vectors.
pub fn weighted_sum(parts: &[(&FeatureVector, f64)], dim: u32) -> FeatureVector {
    let mut entries = Vec::new();
    for (vec, weight) in parts {
        debug_assert_eq!(vec.dim(), dim);
        for &(i, v) in vec.entries() {
            entries.push((i, v * weight));
        }
    }
    FeatureVector::from_entries(dim, entries)
}

/// Hashes lowercased unigrams and bigrams of whitespace-split tokens into
/// `dim` buckets with a ±1 sign bit, then L2-normalises. Deterministic for a
/// fixed text; the empty text maps to the zero vector.
pub fn hash_text(text: &str, dim: u32) -> FeatureVector {
    let lowered = text.to_lowercase();
    let tokens: Vec<&str> = lowered.split_whitespace().collect();
    let mut entries = Vec::with_capacity(tokens.len() * 2);
    let mut push = |term_hash: u64| {
        let index = (term_hash % dim as u64) as u32;
        let sign = if (term_hash >> 63) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        entries.push((index, sign));
    };
    for token in &tokens {
        push(fnv1a(token.as_bytes()));
    }
    for pair in tokens.windows(2) {
        let mut buf = Vec::with_capacity(pair[0].len() + pair[1].len() + 1);
        buf.extend_from_slice(pair[0].as_bytes());
        buf.push(0x1f);
        buf.extend_from_slice(pair[1].as_bytes());
        push(fnv1a(&buf));
    }
    let vec = FeatureVector::from_entries(dim, entries);
    let norm = vec.l2_norm();
    if norm > 0.0 {
        vec.scaled(1.0 / norm)
    } else {
        vec
    }
}

/// The model input: the toot's own hashed text plus the weighted sum of its
/// walked context.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub self_block: FeatureVector,
    pub context_block: FeatureVector,
}

impl FeaturePair {
    pub fn dim(&self) -> u32 {
        self.self_block.dim()
    }

    pub fn context_free(self_block: FeatureVector) -> Self {
        let dim = self_block.dim();
        FeaturePair {
            self_block,
            context_block: FeatureVector::zero(dim),
        }
    }
}

/// Featurizes a toot given its text and optional walk context: the context
/// block is the weight-scaled sum over visited context toots (the start
/// excluded); absent context yields a zero context block.
pub fn featurize(text: &str, context: &[(&str, f64)], dim: u32) -> FeaturePair {
    let self_block = hash_text(text, dim);
    let hashed: Vec<(FeatureVector, f64)> = context
        .iter()
        .map(|(t, w)| (hash_text(t, dim), *w))
        .collect();
    let parts: Vec<(&FeatureVector, f64)> = hashed.iter().map(|(v, w)| (v, *w)).collect();
    FeaturePair {
        self_block,
        context_block: weighted_sum(&parts, dim),
    }
}

/// Resolves a [`ContextSample`] into (text, weight) context terms via a text
/// lookup, excluding the start toot.
pub fn context_terms<'a>(
    sample: &ContextSample,
    lookup: impl Fn(&crate::corpus::TootUrl) -> Option<&'a str>,
) -> Vec<(&'a str, f64)> {
    sample
        .context_entries()
        .filter_map(|(url, w)| lookup(url).map(|text| (text, w)))
        .collect()
}

/// Whether a scorer consumes walked context or only the toot text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    ContextAware,
    ContextFree,
}

impl ModelKind {
    fn to_byte(self) -> u8 {
        match self {
            ModelKind::ContextAware => 0,
            ModelKind::ContextFree => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, FormatError> {
        match b {
            0 => Ok(ModelKind::ContextAware),
            1 => Ok(ModelKind::ContextFree),
            other => Err(FormatError::UnknownKind(other)),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::ContextAware => f.write_str("context_aware"),
            ModelKind::ContextFree => f.write_str("context_free"),
        }
    }
}

/// Flat parameter vector of the toxicity regressor: one weight block for the
/// self text, one for the context, plus a bias. Context-free models carry an
/// all-zero context block. The training-provenance string is metadata only
/// and is not part of the serialized exchange format.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    kind: ModelKind,
    dim: u32,
    self_weights: Vec<f64>,
    context_weights: Vec<f64>,
    bias: f64,
    provenance: String,
    format_version: u32,
}

impl ScorerParams {
    pub fn zeros(kind: ModelKind, dim: u32, provenance: impl Into<String>) -> Self {
        ScorerParams {
            kind,
            dim,
            self_weights: vec![0.0; dim as usize],
            context_weights: vec![0.0; dim as usize],
            bias: 0.0,
            provenance: provenance.into(),
            format_version: FORMAT_VERSION,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    /// Linear score before clamping. Training minimises MSE on this value.
    pub fn raw_score(&self, features: &FeaturePair) -> Result<f64, ModelError> {
        if features.dim() != self.dim {
            return Err(ModelError::DimensionMismatch {
                params: self.dim,
                features: features.dim(),
            });
        }
        Ok(features.self_block.dot(&self.self_weights)
            + features.context_block.dot(&self.context_weights)
            + self.bias)
    }

    /// Predicted toxicity score, clamped to [0, 1].
    pub fn predict(&self, features: &FeaturePair) -> Result<f64, ModelError> {
        Ok(self.raw_score(features)?.clamp(0.0, 1.0))
    }

    /// Writes the parameter file: magic `FMOD`, format version (u32 LE),
    /// model kind (u8), D (u32 LE), the self and context weight blocks and
    /// the bias as little-endian f64, then a CRC32 of all preceding bytes.
    pub fn save<W: Write>(&self, out: &mut W) -> Result<(), FormatError> {
        let mut hasher = crc32fast::Hasher::new();
        let mut write = |out: &mut W, bytes: &[u8]| -> Result<(), FormatError> {
            hasher.update(bytes);
            out.write_all(bytes)?;
            Ok(())
        };
        write(out, MAGIC)?;
        write(out, &self.format_version.to_le_bytes())?;
        write(out, &[self.kind.to_byte()])?;
        write(out, &self.dim.to_le_bytes())?;
        for w in &self.self_weights {
            write(out, &w.to_le_bytes())?;
        }
        for w in &self.context_weights {
            write(out, &w.to_le_bytes())?;
        }
        write(out, &self.bias.to_le_bytes())?;
        let crc = hasher.finalize();
        out.write_all(&crc.to_le_bytes())?;
        Ok(())
    }

    pub fn save_path(&self, path: &Path) -> Result<(), FormatError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut file)
    }

    /// Reads a parameter file, validating magic, version, kind and checksum.
    pub fn load<R: Read>(input: &mut R) -> Result<Self, FormatError> {
        let mut hasher = crc32fast::Hasher::new();
        let mut read_exact = |input: &mut R, buf: &mut [u8]| -> Result<(), FormatError> {
            input.read_exact(buf).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    FormatError::Truncated
                } else {
                    FormatError::Io(e)
                }
            })?;
            hasher.update(buf);
            Ok(())
        };

        let mut magic = [0u8; 4];
        read_exact(input, &mut magic)?;
        if &magic != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let mut u32_buf = [0u8; 4];
        read_exact(input, &mut u32_buf)?;
        let version = u32::from_le_bytes(u32_buf);
        if version != FORMAT_VERSION {
            return Err(FormatError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let mut kind_buf = [0u8; 1];
        read_exact(input, &mut kind_buf)?;
        let kind = ModelKind::from_byte(kind_buf[0])?;
        read_exact(input, &mut u32_buf)?;
        let dim = u32::from_le_bytes(u32_buf);

        let mut read_block = |input: &mut R| -> Result<Vec<f64>, FormatError> {
            let mut block = Vec::with_capacity(dim as usize);
            let mut f64_buf = [0u8; 8];
            for _ in 0..dim {
                read_exact(input, &mut f64_buf)?;
                block.push(f64::from_le_bytes(f64_buf));
            }
            Ok(block)
        };
        let self_weights = read_block(input)?;
        let context_weights = read_block(input)?;
        let mut f64_buf = [0u8; 8];
        read_exact(input, &mut f64_buf)?;
        let bias = f64::from_le_bytes(f64_buf);

        let computed = hasher.finalize();
        let mut crc_buf = [0u8; 4];
        input.read_exact(&mut crc_buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                FormatError::Truncated
            } else {
                FormatError::Io(e)
            }
        })?;
        let stored = u32::from_le_bytes(crc_buf);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(ScorerParams {
            kind,
            dim,
            self_weights,
            context_weights,
            bias,
            provenance: "loaded".into(),
            format_version: version,
        })
    }

    pub fn load_path(path: &Path) -> Result<Self, FormatError> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(&mut file)
    }
}

/// Training hyperparameters. The learning rate halves each epoch down to a
/// floor (default half the initial rate) so long runs keep making progress.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    /// Lower bound of the decayed learning rate.
    pub lr_floor: f64,
    pub l2: f64,
    /// Train fraction of the 80:20 split.
    pub split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 0.05,
            lr_floor: 0.025,
            l2: 1e-6,
            split: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for the given epoch: halved per epoch, floored.
    pub fn lr_at(&self, epoch: u32) -> f64 {
        (self.learning_rate * 0.5f64.powi(epoch as i32)).max(self.lr_floor)
    }
}

/// One training sample: features plus a target score in [0, 1].
pub type TrainSample = (FeaturePair, f64);

/// Trains a scorer from zero parameters by stochastic gradient descent on
/// the mean squared error, passing over the samples in their given (canonical)
/// order once per epoch. Deterministic given (samples, config).
pub fn train(
    kind: ModelKind,
    dim: u32,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<ScorerParams, ModelError> {
    let params = ScorerParams::zeros(kind, dim, "trained");
    fine_tune(&params, samples, config)
}

/// Continues SGD from existing parameters; `epochs = 0` returns the params
/// unchanged. Errors if context-free params are given context features.
pub fn fine_tune(
    params: &ScorerParams,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<ScorerParams, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptySampleStream);
    }
    for (features, target) in samples {
        debug_assert!((0.0..=1.0).contains(target));
        if features.dim() != params.dim {
            return Err(ModelError::DimensionMismatch {
                params: params.dim,
                features: features.dim(),
            });
        }
        if params.kind == ModelKind::ContextFree && !features.context_block.is_zero() {
            return Err(ModelError::KindMismatch);
        }
    }
    let mut out = params.clone();
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        for (features, target) in samples {
            sgd_step(&mut out, features, *target, lr, config.l2);
        }
    }
    Ok(out)
}

/// One SGD step on the squared error of a single sample:
/// w ← w − lr·(2(ŷ − y)x + 2·l2·w), touching only the sample's nonzero
/// coordinates for the data term.
fn sgd_step(params: &mut ScorerParams, features: &FeaturePair, target: f64, lr: f64, l2: f64) {
    let err = params.raw_score(features).expect("dims checked") - target;
    let g = 2.0 * err;
    for &(i, v) in features.self_block.entries() {
        let w = &mut params.self_weights[i as usize];
        *w -= lr * (g * v + 2.0 * l2 * *w);
    }
    if params.kind == ModelKind::ContextAware {
        for &(i, v) in features.context_block.entries() {
            let w = &mut params.context_weights[i as usize];
            *w -= lr * (g * v + 2.0 * l2 * *w);
        }
    }
    params.bias -= lr * g;
}

/// Mean squared error of the raw (unclamped) linear score over samples, plus
/// the l2 penalty on the weights. This is the objective the analytic
/// gradient refers to.
pub fn mse_loss(params: &ScorerParams, samples: &[TrainSample], l2: f64) -> f64 {
    let n = samples.len() as f64;
    let data: f64 = samples
        .iter()
        .map(|(f, y)| {
            let e = params.raw_score(f).expect("dims checked") - y;
            e * e
        })
        .sum();
    let reg: f64 = params
        .self_weights
        .iter()
        .chain(params.context_weights.iter())
        .map(|w| w * w)
        .sum();
    data / n + l2 * reg
}

/// Analytic gradient of [`mse_loss`] with respect to (self weights, context
/// weights, bias).
pub fn mse_gradient(
    params: &ScorerParams,
    samples: &[TrainSample],
    l2: f64,
) -> (Vec<f64>, Vec<f64>, f64) {
    let n = samples.len() as f64;
    let mut g_self = vec![0.0; params.dim as usize];
    let mut g_ctx = vec![0.0; params.dim as usize];
    let mut g_bias = 0.0;
    for (features, target) in samples {
        let e = params.raw_score(features).expect("dims checked") - target;
        let coeff = 2.0 * e / n;
        for &(i, v) in features.self_block.entries() {
            g_self[i as usize] += coeff * v;
        }
        for &(i, v) in features.context_block.entries() {
            g_ctx[i as usize] += coeff * v;
        }
        g_bias += coeff;
    }
    for (g, w) in g_self.iter_mut().zip(params.self_weights.iter()) {
        *g += 2.0 * l2 * w;
    }
    for (g, w) in g_ctx.iter_mut().zip(params.context_weights.iter()) {
        *g += 2.0 * l2 * w;
    }
    (g_self, g_ctx, g_bias)
}

/// Test-support: builds params with explicit weights.
pub fn params_from_parts(
    kind: ModelKind,
    dim: u32,
    self_weights: Vec<f64>,
    context_weights: Vec<f64>,
    bias: f64,
) -> ScorerParams {
    assert_eq!(self_weights.len(), dim as usize);
    assert_eq!(context_weights.len(), dim as usize);
    ScorerParams {
        kind,
        dim,
        self_weights,
        context_weights,
        bias,
        provenance: "constructed".into(),
        format_version: FORMAT_VERSION,
    }
}
