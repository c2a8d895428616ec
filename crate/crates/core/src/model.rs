//! The full network: per-modality class tokens, `L` rounds of unimodal
//! self-attention followed by class-token cross-modal attention, and a linear
//! head over the concatenated class tokens.
//!
//! A modality that is absent keeps only its class token. Its unimodal block
//! then runs over a single row, where self-attention has weight one and the
//! block reduces to a per-token linear/FFN map. The placeholder still queries
//! the other modalities in every cross-modal stage.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{
    exact_mha, transformer_block, AttnKind, AttnMap, BlockParams, FfnParams, LayerNormParams,
    Linear, MhaParams,
};
use crate::data::{Availability, CaseRecord, Modality, PATHOLOGY_DIM, RADIOLOGY_DIM};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softmax, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::tokenizer::{
    tokenize_keyed, tokenize_pathology, tokenize_radiology, HashEmbedding, Positions, Projector,
    TokenSet, ValueEmbedder,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Response,
    Survival,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Response => "response",
            Task::Survival => "survival",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Nyström landmarks; engaged for pathology/genomic sequences longer than
    /// `2 * landmarks`.
    pub landmarks: usize,
    pub pinv_iters: usize,
    pub task: Task,
    pub n_bins: usize,
    pub radiology_hidden: usize,
    pub pathology_hidden: usize,
    /// Seed of the hashed key and gene embeddings.
    pub embedding_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 200,
            layers: 2,
            heads: 4,
            d_ff: 400,
            landmarks: 64,
            pinv_iters: 6,
            task: Task::Response,
            n_bins: 4,
            radiology_hidden: 256,
            pathology_hidden: 256,
            embedding_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn output_dim(&self) -> usize {
        match self.task {
            Task::Response => 2,
            Task::Survival => self.n_bins,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::arg("at least one layer"));
        }
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::arg("token width must be positive and even"));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::arg("token width must divide into heads"));
        }
        if self.d_ff == 0 || self.landmarks == 0 || self.pinv_iters == 0 {
            return Err(Error::arg("d_ff, landmarks and pinv_iters must be positive"));
        }
        if self.task == Task::Survival && self.n_bins == 0 {
            return Err(Error::arg("survival needs at least one bin"));
        }
        Ok(())
    }
}

/// Cross-modal block: `class + MHA(LN_q(class), LN_kv(context))`, then a
/// pre-norm FFN residual.
#[derive(Clone, Copy, Debug)]
pub struct CrossParams {
    pub ln_query: LayerNormParams,
    pub ln_context: LayerNormParams,
    pub attn: MhaParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

impl CrossParams {
    fn init(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(CrossParams {
            ln_query: LayerNormParams::init(store, &format!("{name}.ln_query"), cfg.d)?,
            ln_context: LayerNormParams::init(store, &format!("{name}.ln_context"), cfg.d)?,
            attn: MhaParams::init(store, &format!("{name}.attn"), cfg.d, cfg.heads, rng)?,
            ln2: LayerNormParams::init(store, &format!("{name}.ln2"), cfg.d)?,
            ffn: FfnParams::init(store, &format!("{name}.ffn"), cfg.d, cfg.d_ff, rng)?,
        })
    }
}

/// Cross-modal attention weights of one class-token query.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention {
    pub layer: usize,
    pub query: Modality,
    /// `(modality, first column, token count)` blocks of the context.
    pub segments: Vec<(Modality, usize, usize)>,
    pub map: AttnMap,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub logits: Var,
    pub fused: Var,
    pub cross: Vec<CrossAttention>,
}

/// Tokens of every modality present in a case.
#[derive(Clone, Copy, Debug, Default)]
pub struct Tokens {
    pub sets: [Option<TokenSet>; 4],
    /// `k × 1` clinical values column when clinical records were tokenized.
    pub clinical_values: Option<Var>,
}

impl Tokens {
    pub fn availability(&self) -> Availability {
        Availability::from_modalities(
            Modality::ALL
                .into_iter()
                .filter(|m| self.sets[m.index()].is_some()),
        )
    }
}

/// Network output plus captured intermediates.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub task: Task,
    pub logits: Vec<f64>,
    /// Concatenated class tokens in C, R, P, G order.
    pub fused: Vec<f64>,
    pub cross: Vec<CrossAttention>,
}

impl Prediction {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&Tensor::row(self.logits.clone()), 1, 1.0)
            .map(Tensor::into_data)
            .unwrap_or_default()
    }

    pub fn hazard_curve(&self) -> HazardCurve {
        predict_survival(&self.logits)
    }

    /// P(good responder) for response; risk for survival.
    pub fn score(&self) -> f64 {
        match self.task {
            Task::Response => self.probabilities()[1],
            Task::Survival => self.hazard_curve().risk,
        }
    }
}

/// Per-bin hazards and the implied survival curve.
#[derive(Clone, Debug, PartialEq)]
pub struct HazardCurve {
    pub hazards: Vec<f64>,
    /// `S_t = ∏_{u ≤ t} (1 − h_u)`
    pub survival: Vec<f64>,
    /// `−Σ_t S_t`; larger means earlier expected event.
    pub risk: f64,
}

pub fn predict_survival(logits: &[f64]) -> HazardCurve {
    let hazards: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut s = 1.0;
    let survival: Vec<f64> = hazards
        .iter()
        .map(|h| {
            s *= 1.0 - h;
            s
        })
        .collect();
    let risk = -survival.iter().sum::<f64>();
    HazardCurve {
        hazards,
        survival,
        risk,
    }
}

/// Differentiable `−Σ_t ∏_{u≤t} σ(−z_u)` for a `1 × n` logit row.
pub fn risk_var(tape: &mut Tape<'_>, logits: Var) -> Result<Var> {
    let neg = tape.scale(logits, -1.0)?;
    let keep = tape.sigmoid(neg)?;
    let ln = tape.ln_clamped(keep, 1e-300)?;
    let cum = tape.cumsum_cols(ln)?;
    let surv = tape.exp(cum)?;
    let total = tape.sum(surv)?;
    tape.scale(total, -1.0)
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    class_tokens: [ParamId; 4],
    clinical_values: ValueEmbedder,
    genomic_values: ValueEmbedder,
    radiology: Projector,
    pathology: Projector,
    uni: Vec<[BlockParams; 4]>,
    cross: Vec<[CrossParams; 4]>,
    head: Linear,
    clinical_keys: HashEmbedding,
    gene_keys: HashEmbedding,
    pub positions: Positions,
}

impl Model {
    /// Builds the parameter tree with seeded initialization. Parameter names
    /// and order depend only on the config.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let cfg = &config;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let mut class_tokens = Vec::with_capacity(4);
        for m in Modality::ALL {
            class_tokens.push(store.add_normal(
                format!("class.{}", m.name()),
                &[1, cfg.d],
                0.02,
                &mut rng,
            )?);
        }
        let clinical_values = ValueEmbedder::init(&mut store, "tokenizer.clinical.value", cfg.d)?;
        let genomic_values = ValueEmbedder::init(&mut store, "tokenizer.genomic.expression", cfg.d)?;
        let radiology = Projector::init(
            &mut store,
            "tokenizer.radiology",
            RADIOLOGY_DIM,
            cfg.radiology_hidden,
            cfg.d,
            &mut rng,
        )?;
        let pathology = Projector::init(
            &mut store,
            "tokenizer.pathology",
            PATHOLOGY_DIM,
            cfg.pathology_hidden,
            cfg.d,
            &mut rng,
        )?;
        let mut uni = Vec::with_capacity(cfg.layers);
        let mut cross = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut u = Vec::with_capacity(4);
            for m in Modality::ALL {
                u.push(BlockParams::init(
                    &mut store,
                    &format!("layer{l}.uni.{}", m.name()),
                    cfg.d,
                    cfg.heads,
                    cfg.d_ff,
                    &mut rng,
                )?);
            }
            let mut c = Vec::with_capacity(4);
            for m in Modality::ALL {
                c.push(CrossParams::init(
                    &mut store,
                    &format!("layer{l}.cross.{}", m.name()),
                    cfg,
                    &mut rng,
                )?);
            }
            uni.push([u[0], u[1], u[2], u[3]]);
            cross.push([c[0], c[1], c[2], c[3]]);
        }
        let head = Linear::init(&mut store, "head", 4 * cfg.d, cfg.output_dim(), true, &mut rng)?;
        let model = Model {
            class_tokens: [class_tokens[0], class_tokens[1], class_tokens[2], class_tokens[3]],
            clinical_values,
            genomic_values,
            radiology,
            pathology,
            uni,
            cross,
            head,
            clinical_keys: HashEmbedding::new("hash-clinical", cfg.embedding_seed),
            gene_keys: HashEmbedding::new("hash-gene", cfg.embedding_seed.wrapping_add(1)),
            positions: Positions::Sinusoidal,
            config,
        };
        Ok((model, store))
    }

    pub fn head(&self) -> Linear {
        self.head
    }

    pub fn class_token(&self, m: Modality) -> ParamId {
        self.class_tokens[m.index()]
    }

    pub fn radiology_projector_mut(&mut self) -> &mut Projector {
        &mut self.radiology
    }

    pub fn pathology_projector_mut(&mut self) -> &mut Projector {
        &mut self.pathology
    }

    pub fn pathology_projector(&self) -> &Projector {
        &self.pathology
    }

    pub fn value_embedder(&self, m: Modality) -> Option<&ValueEmbedder> {
        match m {
            Modality::Clinical => Some(&self.clinical_values),
            Modality::Genomic => Some(&self.genomic_values),
            _ => None,
        }
    }

    pub fn unimodal_params(&self, layer: usize, m: Modality) -> &BlockParams {
        &self.uni[layer][m.index()]
    }

    pub fn cross_params(&self, layer: usize, m: Modality) -> &CrossParams {
        &self.cross[layer][m.index()]
    }

    /// Tokenizes the modalities of `case` that fall inside `keep`.
    pub fn tokenize(&self, tape: &mut Tape<'_>, case: &CaseRecord, keep: Availability) -> Result<Tokens> {
        self.tokenize_inner(tape, case, keep, None)
    }

    /// As `tokenize`, with the clinical values supplied as a tape column
    /// (so gradients with respect to record values can be taken).
    pub fn tokenize_with_clinical(
        &self,
        tape: &mut Tape<'_>,
        case: &CaseRecord,
        keep: Availability,
        clinical_values: Var,
    ) -> Result<Tokens> {
        self.tokenize_inner(tape, case, keep, Some(clinical_values))
    }

    fn tokenize_inner(
        &self,
        tape: &mut Tape<'_>,
        case: &CaseRecord,
        keep: Availability,
        clinical_values: Option<Var>,
    ) -> Result<Tokens> {
        let d = self.config.d;
        let avail = case.availability().intersect(keep);
        let mut out = Tokens::default();
        if avail.contains(Modality::Clinical) {
            let keys: Vec<&str> = case.clinical.iter().map(|(k, _)| k.as_str()).collect();
            let values = match clinical_values {
                Some(v) => v,
                None => tape.constant(Tensor::column(case.clinical.iter().map(|r| r.1).collect())),
            };
            out.sets[0] = Some(tokenize_keyed(
                tape,
                Modality::Clinical,
                &keys,
                values,
                &self.clinical_keys,
                &self.clinical_values,
                d,
            )?);
            out.clinical_values = Some(values);
        }
        if avail.contains(Modality::Radiology) {
            out.sets[1] = Some(tokenize_radiology(
                tape,
                &case.radiology,
                &self.radiology,
                self.positions,
                d,
            )?);
        }
        if avail.contains(Modality::Pathology) {
            out.sets[2] = Some(tokenize_pathology(tape, &case.pathology, &self.pathology)?);
        }
        if avail.contains(Modality::Genomic) {
            let keys: Vec<&str> = case.genomic.iter().map(|(k, _)| k.as_str()).collect();
            let values = tape.constant(Tensor::column(case.genomic.iter().map(|r| r.1).collect()));
            out.sets[3] = Some(tokenize_keyed(
                tape,
                Modality::Genomic,
                &keys,
                values,
                &self.gene_keys,
                &self.genomic_values,
                d,
            )?);
        }
        Ok(out)
    }

    fn attn_kind(&self, m: Modality, seq_len: usize) -> AttnKind {
        let long = matches!(m, Modality::Pathology | Modality::Genomic)
            && seq_len > 2 * self.config.landmarks;
        if long {
            AttnKind::Nystrom {
                landmarks: self.config.landmarks,
                pinv_iters: self.config.pinv_iters,
            }
        } else {
            AttnKind::Exact
        }
    }

    /// Self-attention over `[class ‖ tokens]`, or over `[class]` alone when
    /// the modality is absent.
    pub fn unimodal_stage(
        &self,
        tape: &mut Tape<'_>,
        layer: usize,
        modality: Modality,
        class: Var,
        tokens: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let p = &self.uni[layer][modality.index()];
        match tokens {
            None => {
                let y = transformer_block(tape, class, p, AttnKind::Exact)?;
                Ok((y, None))
            }
            Some(t) => {
                let n = tape.dims(t).0;
                let x = tape.concat_rows(&[class, t])?;
                let y = transformer_block(tape, x, p, self.attn_kind(modality, n + 1))?;
                let c = tape.slice_rows(y, 0, 1)?;
                let rest = tape.slice_rows(y, 1, n)?;
                Ok((c, Some(rest)))
            }
        }
    }

    /// The class token of `modality` attends to `context` (the other
    /// modalities' tokens). With no context only the FFN residual applies.
    pub fn cross_modal_stage(
        &self,
        tape: &mut Tape<'_>,
        layer: usize,
        modality: Modality,
        class: Var,
        context: Option<Var>,
        capture: bool,
    ) -> Result<(Var, Option<AttnMap>)> {
        let p = &self.cross[layer][modality.index()];
        let (x, map) = match context {
            Some(ctx) => {
                let q = p.ln_query.forward(tape, class)?;
                let kv = p.ln_context.forward(tape, ctx)?;
                let (a, map) = exact_mha(tape, q, kv, &p.attn, capture)?;
                (tape.add(class, a)?, map)
            }
            None => (class, None),
        };
        let h = p.ln2.forward(tape, x)?;
        let f = p.ffn.forward(tape, h)?;
        Ok((tape.add(x, f)?, map))
    }

    /// Concatenates the four class tokens and applies the linear head.
    pub fn fuse_and_head(&self, tape: &mut Tape<'_>, classes: &[Var; 4]) -> Result<(Var, Var)> {
        let fused = tape.concat_cols(classes)?;
        let logits = self.head.forward(tape, fused)?;
        Ok((fused, logits))
    }

    /// Runs all stages on the token sets selected by `keep`.
    pub fn forward_tokens(
        &self,
        tape: &mut Tape<'_>,
        tokens: &Tokens,
        keep: Availability,
        capture: bool,
    ) -> Result<ForwardOut> {
        let mut toks: [Option<Var>; 4] = [None; 4];
        for m in Modality::ALL {
            if keep.contains(m) {
                toks[m.index()] = tokens.sets[m.index()].map(|t| t.tokens);
            }
        }
        if toks.iter().all(Option::is_none) {
            return Err(Error::NoModality);
        }
        let mut classes = self.class_tokens.map(|id| tape.param(id));
        let mut cross_maps = Vec::new();
        for layer in 0..self.config.layers {
            for m in Modality::ALL {
                let i = m.index();
                let (c, t) = self.unimodal_stage(tape, layer, m, classes[i], toks[i])?;
                classes[i] = c;
                toks[i] = t;
            }
            let mut next = classes;
            for m in Modality::ALL {
                let mut parts = Vec::new();
                let mut segments = Vec::new();
                let mut offset = 0;
                for o in Modality::ALL {
                    if o == m {
                        continue;
                    }
                    if let Some(t) = toks[o.index()] {
                        let n = tape.dims(t).0;
                        segments.push((o, offset, n));
                        offset += n;
                        parts.push(t);
                    }
                }
                let context = match parts.len() {
                    0 => None,
                    1 => Some(parts[0]),
                    _ => Some(tape.concat_rows(&parts)?),
                };
                let (c, map) =
                    self.cross_modal_stage(tape, layer, m, classes[m.index()], context, capture)?;
                next[m.index()] = c;
                if let Some(map) = map {
                    cross_maps.push(CrossAttention {
                        layer,
                        query: m,
                        segments,
                        map,
                    });
                }
            }
            classes = next;
        }
        let (fused, logits) = self.fuse_and_head(tape, &classes)?;
        Ok(ForwardOut {
            logits,
            fused,
            cross: cross_maps,
        })
    }

    /// Tokenizes and runs the case restricted to `keep`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        case: &CaseRecord,
        keep: Availability,
        capture: bool,
    ) -> Result<ForwardOut> {
        let tokens = self.tokenize(tape, case, keep)?;
        self.forward_tokens(tape, &tokens, keep, capture)
    }

    /// Inference on every available modality, with attention capture.
    pub fn predict(&self, params: &ParamStore, case: &CaseRecord) -> Result<Prediction> {
        self.predict_subset(params, case, Availability::all())
    }

    pub fn predict_subset(
        &self,
        params: &ParamStore,
        case: &CaseRecord,
        keep: Availability,
    ) -> Result<Prediction> {
        let mut tape = Tape::with_params(params);
        let out = self.forward(&mut tape, case, keep, true)?;
        Ok(Prediction {
            task: self.config.task,
            logits: tape.value(out.logits).data().to_vec(),
            fused: tape.value(out.fused).data().to_vec(),
            cross: out.cross,
        })
    }
}
