//! Turns each modality's raw features into a set of `d`-wide tokens.
//!
//! * clinical: key embedding + learnable value embedding, one token per record
//! * radiology: projected slice descriptor + sinusoidal slice position
//! * pathology: projected patch descriptor, no position
//! * genomic: gene embedding + learnable expression embedding
//!
//! Key and gene embeddings come from an [`EmbeddingProvider`]; the default
//! [`HashEmbedding`] derives a fixed unit vector from a seeded hash of the
//! string.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::Linear;
use crate::data::{check_unique, Modality, Patch, PATHOLOGY_DIM, RADIOLOGY_DIM};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Rng, Tape, Tensor, Var};

/// Deterministic map from a string key to a `d`-vector.
pub trait EmbeddingProvider {
    fn name(&self) -> &str;
    fn embed(&self, key: &str, d: usize) -> Vec<f64>;
}

/// Seeded-hash stand-in for pretrained word/gene vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct HashEmbedding {
    pub name: String,
    pub seed: u64,
}

impl HashEmbedding {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        HashEmbedding {
            name: name.into(),
            seed,
        }
    }
}

impl EmbeddingProvider for HashEmbedding {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed(&self, key: &str, d: usize) -> Vec<f64> {
        hash_embedding(key, self.seed, d)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit-norm Gaussian direction seeded by `(seed, key)`.
pub fn hash_embedding(key: &str, seed: u64, d: usize) -> Vec<f64> {
    let mut rng = Rng::stream(seed, fnv1a(key.as_bytes()));
    let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

/// Transformer sinusoidal encoding: `pe[2j] = sin(i/10000^(2j/d))`,
/// `pe[2j+1] = cos(·)`.
pub fn sinusoidal_position(i: usize, d: usize) -> Result<Vec<f64>> {
    if d % 2 != 0 {
        return Err(Error::arg(format!("positional width {d} must be even")));
    }
    let mut pe = alloc::vec![0.0; d];
    for j in 0..d / 2 {
        let freq = libm::pow(10000.0, (2 * j) as f64 / d as f64);
        let angle = i as f64 / freq;
        pe[2 * j] = libm::sin(angle);
        pe[2 * j + 1] = libm::cos(angle);
    }
    Ok(pe)
}

/// `d`-wide tokens for one modality, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TokenSet {
    pub modality: Modality,
    pub tokens: Var,
    pub ordered: bool,
}

/// Learnable scalar → `d` map (linear with bias, zero-initialized).
#[derive(Clone, Copy, Debug)]
pub struct ValueEmbedder {
    pub linear: Linear,
}

impl ValueEmbedder {
    pub fn init(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(ValueEmbedder {
            linear: Linear::zeros(store, name, 1, d)?,
        })
    }

    /// `values` is a `k × 1` column.
    pub fn forward(&self, tape: &mut Tape<'_>, values: Var) -> Result<Var> {
        self.linear.forward(tape, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

/// Two-layer projection stack `in → hidden → d`.
#[derive(Clone, Copy, Debug)]
pub struct Projector {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
    pub input_dim: usize,
}

impl Projector {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        d: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Projector {
            fc1: Linear::init(store, &format!("{name}.fc1"), input_dim, hidden, true, rng)?,
            fc2: Linear::init(store, &format!("{name}.fc2"), hidden, d, true, rng)?,
            activation: Activation::Gelu,
            input_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (_, c) = tape.dims(x);
        if c != self.input_dim {
            return Err(Error::mismatch("projector input", &[c], &[self.input_dim]));
        }
        let h = self.fc1.forward(tape, x)?;
        let h = match self.activation {
            Activation::Gelu => tape.gelu(h)?,
            Activation::Identity => h,
        };
        self.fc2.forward(tape, h)
    }
}

fn key_matrix(keys: &[&str], provider: &dyn EmbeddingProvider, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(keys.len() * d);
    for k in keys {
        let e = provider.embed(k, d);
        if e.len() != d {
            return Err(Error::mismatch("embedding provider", &[e.len()], &[d]));
        }
        data.extend(e);
    }
    Tensor::matrix(keys.len(), d, data)
}

/// Key/value records (clinical) or gene/expression pairs (genomic) as tokens:
/// `provider(key) + embedder(value)`. `values` is the `k × 1` column of
/// record values already on the tape, so callers may differentiate through
/// it.
pub fn tokenize_keyed(
    tape: &mut Tape<'_>,
    modality: Modality,
    keys: &[&str],
    values: Var,
    provider: &dyn EmbeddingProvider,
    embedder: &ValueEmbedder,
    d: usize,
) -> Result<TokenSet> {
    if keys.is_empty() {
        return Err(Error::MissingModality(modality));
    }
    check_unique(keys.iter().copied())?;
    if tape.dims(values) != (keys.len(), 1) {
        return Err(Error::mismatch("record values", tape.value(values).shape(), &[keys.len(), 1]));
    }
    let key_emb = tape.constant(key_matrix(keys, provider, d)?);
    let val_emb = embedder.forward(tape, values)?;
    let tokens = tape.add(key_emb, val_emb)?;
    Ok(TokenSet {
        modality,
        tokens,
        ordered: false,
    })
}

/// Clinical records; values recorded as constants.
pub fn tokenize_clinical(
    tape: &mut Tape<'_>,
    records: &[(String, f64)],
    provider: &dyn EmbeddingProvider,
    embedder: &ValueEmbedder,
    d: usize,
) -> Result<TokenSet> {
    keyed_from_pairs(tape, Modality::Clinical, records, provider, embedder, d)
}

/// Genomic profile; values recorded as constants.
pub fn tokenize_genomic(
    tape: &mut Tape<'_>,
    genes: &[(String, f64)],
    provider: &dyn EmbeddingProvider,
    embedder: &ValueEmbedder,
    d: usize,
) -> Result<TokenSet> {
    keyed_from_pairs(tape, Modality::Genomic, genes, provider, embedder, d)
}

fn keyed_from_pairs(
    tape: &mut Tape<'_>,
    modality: Modality,
    pairs: &[(String, f64)],
    provider: &dyn EmbeddingProvider,
    embedder: &ValueEmbedder,
    d: usize,
) -> Result<TokenSet> {
    if pairs.is_empty() {
        return Err(Error::MissingModality(modality));
    }
    let keys: Vec<&str> = pairs.iter().map(|(k, _)| k.as_str()).collect();
    let values = tape.constant(Tensor::column(pairs.iter().map(|(_, v)| *v).collect()));
    tokenize_keyed(tape, modality, &keys, values, provider, embedder, d)
}

/// Whether radiology tokens receive the sinusoidal slice position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positions {
    Sinusoidal,
    Disabled,
}

/// Ordered slices: `projector(slice_i) + pos(i)`.
pub fn tokenize_radiology(
    tape: &mut Tape<'_>,
    slices: &[Vec<f64>],
    projector: &Projector,
    positions: Positions,
    d: usize,
) -> Result<TokenSet> {
    if slices.is_empty() {
        return Err(Error::MissingModality(Modality::Radiology));
    }
    let feats = stack(slices, RADIOLOGY_DIM, "radiology slice")?;
    let x = tape.constant(feats);
    let proj = projector.forward(tape, x)?;
    let tokens = match positions {
        Positions::Sinusoidal => {
            let mut data = Vec::with_capacity(slices.len() * d);
            for i in 0..slices.len() {
                data.extend(sinusoidal_position(i, d)?);
            }
            let pe = tape.constant(Tensor::matrix(slices.len(), d, data)?);
            tape.add(proj, pe)?
        }
        Positions::Disabled => proj,
    };
    Ok(TokenSet {
        modality: Modality::Radiology,
        tokens,
        ordered: true,
    })
}

/// Unordered patches: `projector(patch_i)`.
pub fn tokenize_pathology(
    tape: &mut Tape<'_>,
    patches: &[Patch],
    projector: &Projector,
) -> Result<TokenSet> {
    if patches.is_empty() {
        return Err(Error::MissingModality(Modality::Pathology));
    }
    let rows: Vec<&[f64]> = patches.iter().map(|p| p.features.as_slice()).collect();
    let feats = stack(&rows, PATHOLOGY_DIM, "pathology patch")?;
    let x = tape.constant(feats);
    let tokens = projector.forward(tape, x)?;
    Ok(TokenSet {
        modality: Modality::Pathology,
        tokens,
        ordered: false,
    })
}

fn stack<R: AsRef<[f64]>>(rows: &[R], width: usize, what: &'static str) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::mismatch(what, &[r.len()], &[width]));
        }
        data.extend_from_slice(r);
    }
    Tensor::matrix(rows.len(), width, data)
}
