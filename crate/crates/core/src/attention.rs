//! Exact and Nyström multi-head attention plus the pre-norm transformer block.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{segment_bounds, ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// Dense layer `x·W + b` with `W: fan_in × fan_out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in, rng)?;
        let b = if bias {
            Some(store.add_uniform(format!("{name}.b"), &[1, fan_out], fan_in, rng)?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    pub fn zeros(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = store.add_const(format!("{name}.w"), &[fan_in, fan_out], 0.0)?;
        let b = Some(store.add_const(format!("{name}.b"), &[1, fan_out], 0.0)?);
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn init(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.add_const(format!("{name}.gain"), &[1, d], 1.0)?,
            bias: store.add_const(format!("{name}.bias"), &[1, d], 0.0)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// `d → d_ff → d` with GELU.
#[derive(Clone, Copy, Debug)]
pub struct FfnParams {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FfnParams {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, d_ff: usize, rng: &mut Rng) -> Result<Self> {
        if d_ff == 0 {
            return Err(Error::arg("d_ff must be positive"));
        }
        Ok(FfnParams {
            fc1: Linear::init(store, &format!("{name}.fc1"), d, d_ff, true, rng)?,
            fc2: Linear::init(store, &format!("{name}.fc2"), d_ff, d, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = tape.gelu(h)?;
        self.fc2.forward(tape, h)
    }
}

/// Projection weights for `heads`-way attention over width `d`.
#[derive(Clone, Copy, Debug)]
pub struct MhaParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
}

impl MhaParams {
    pub fn init(store: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::arg(format!("width {d} not divisible by {heads} heads")));
        }
        let mut w = |suffix: &str| store.add_uniform(format!("{name}.{suffix}"), &[d, d], d, rng);
        Ok(MhaParams {
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            wo: w("wo")?,
            heads,
        })
    }
}

/// Pre-norm block: `x + MHA(LN₁(x))`, then `+ FFN(LN₂(·))`.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub ln1: LayerNormParams,
    pub attn: MhaParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

impl BlockParams {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(BlockParams {
            ln1: LayerNormParams::init(store, &format!("{name}.ln1"), d)?,
            attn: MhaParams::init(store, &format!("{name}.attn"), d, heads, rng)?,
            ln2: LayerNormParams::init(store, &format!("{name}.ln2"), d)?,
            ffn: FfnParams::init(store, &format!("{name}.ffn"), d, d_ff, rng)?,
        })
    }
}

/// Per-head attention weights, each `n_q × n_k` and row-stochastic.
#[derive(Clone, Debug, PartialEq)]
pub struct AttnMap {
    pub heads: Vec<Tensor>,
}

impl AttnMap {
    /// Mean over heads.
    pub fn mean(&self) -> Tensor {
        let mut acc = self.heads[0].clone();
        for h in &self.heads[1..] {
            for (a, b) in acc.data_mut().iter_mut().zip(h.data()) {
                *a += b;
            }
        }
        let k = self.heads.len() as f64;
        acc.map(|v| v / k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnKind {
    Exact,
    Nystrom { landmarks: usize, pinv_iters: usize },
}

struct Projected {
    q: Var,
    k: Var,
    v: Var,
    head_dim: usize,
}

fn project(tape: &mut Tape<'_>, queries: Var, context: Var, p: &MhaParams) -> Result<Projected> {
    let (_, dq) = tape.dims(queries);
    let (_, dk) = tape.dims(context);
    let d = tape.dims_param(p.wq)?;
    if dq != d || dk != d {
        return Err(Error::mismatch("mha input width", &[dq, dk], &[d, d]));
    }
    let wq = tape.param(p.wq);
    let wk = tape.param(p.wk);
    let wv = tape.param(p.wv);
    Ok(Projected {
        q: tape.matmul(queries, wq)?,
        k: tape.matmul(context, wk)?,
        v: tape.matmul(context, wv)?,
        head_dim: d / p.heads,
    })
}

impl Tape<'_> {
    fn dims_param(&self, id: ParamId) -> Result<usize> {
        let store = self
            .store()
            .ok_or_else(|| Error::UnknownParam(String::from("attention weights")))?;
        Ok(store.value(id).rows())
    }
}

fn merge_heads(tape: &mut Tape<'_>, heads: &[Var], p: &MhaParams) -> Result<Var> {
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(heads)?
    };
    let wo = tape.param(p.wo);
    tape.matmul(cat, wo)
}

/// Full softmax attention of `queries` over `context`.
pub fn exact_mha(
    tape: &mut Tape<'_>,
    queries: Var,
    context: Var,
    p: &MhaParams,
    capture: bool,
) -> Result<(Var, Option<AttnMap>)> {
    let pr = project(tape, queries, context, p)?;
    let scale = 1.0 / libm::sqrt(pr.head_dim as f64);
    let mut outs = Vec::with_capacity(p.heads);
    let mut maps = Vec::new();
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (pr.q, pr.k, pr.v)
        } else {
            let off = h * pr.head_dim;
            (
                tape.slice_cols(pr.q, off, pr.head_dim)?,
                tape.slice_cols(pr.k, off, pr.head_dim)?,
                tape.slice_cols(pr.v, off, pr.head_dim)?,
            )
        };
        let s = tape.matmul_t(qh, false, kh, true)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax(s, 1.0)?;
        if capture {
            maps.push(tape.value(a).clone());
        }
        outs.push(tape.matmul(a, vh)?);
    }
    let out = merge_heads(tape, &outs, p)?;
    Ok((out, capture.then_some(AttnMap { heads: maps })))
}

/// Newton–Schulz pseudoinverse recorded on the tape:
/// `Z ← Z(13I − AZ(15I − AZ(7I − AZ)))/4`, starting from `Aᵀ/(‖A‖₁‖A‖∞)`.
pub fn iterative_pinv_var(tape: &mut Tape<'_>, a: Var, iters: usize) -> Result<Var> {
    let (r, c) = tape.dims(a);
    if r != c {
        return Err(Error::mismatch("iterative_pinv", &[r, c], &[r, r]));
    }
    if iters == 0 {
        return Err(Error::arg("iterative_pinv needs at least one iteration"));
    }
    let mut z = tape.pinv_init(a)?;
    for _ in 0..iters {
        let az = tape.matmul(a, z)?;
        let neg = tape.scale(az, -1.0)?;
        let t = tape.shift_diag(neg, 7.0)?;
        let t = tape.matmul(az, t)?;
        let t = tape.scale(t, -1.0)?;
        let t = tape.shift_diag(t, 15.0)?;
        let t = tape.matmul(az, t)?;
        let t = tape.scale(t, -1.0)?;
        let t = tape.shift_diag(t, 13.0)?;
        let zt = tape.matmul(z, t)?;
        z = tape.scale(zt, 0.25)?;
    }
    Ok(z)
}

pub fn iterative_pinv(a: &Tensor, iters: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let z = iterative_pinv_var(&mut tape, av, iters)?;
    Ok(tape.value(z).clone())
}

/// Every Newton–Schulz iterate `Z_0 … Z_iters`, for convergence diagnostics.
pub fn pinv_iterates(a: &Tensor, iters: usize) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let mut out = Vec::with_capacity(iters + 1);
    let z0 = tape.pinv_init(av)?;
    out.push(tape.value(z0).clone());
    for j in 1..=iters {
        let z = iterative_pinv_var(&mut tape, av, j)?;
        out.push(tape.value(z).clone());
    }
    Ok(out)
}

/// Nyström self-attention with `landmarks` segment-mean landmarks.
/// Captured maps are the per-head approximations `k₁ · pinv(k₂) · k₃`.
pub fn nystrom_mha(
    tape: &mut Tape<'_>,
    tokens: Var,
    p: &MhaParams,
    landmarks: usize,
    pinv_iters: usize,
    capture: bool,
) -> Result<(Var, Option<AttnMap>)> {
    let (n, _) = tape.dims(tokens);
    if landmarks == 0 || landmarks > n {
        return Err(Error::arg(format!("{landmarks} landmarks for {n} tokens")));
    }
    let pr = project(tape, tokens, tokens, p)?;
    let scale = 1.0 / libm::sqrt(pr.head_dim as f64);
    let mut outs = Vec::with_capacity(p.heads);
    let mut maps = Vec::new();
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (pr.q, pr.k, pr.v)
        } else {
            let off = h * pr.head_dim;
            (
                tape.slice_cols(pr.q, off, pr.head_dim)?,
                tape.slice_cols(pr.k, off, pr.head_dim)?,
                tape.slice_cols(pr.v, off, pr.head_dim)?,
            )
        };
        let ql = tape.segment_means(qh, landmarks)?;
        let kl = tape.segment_means(kh, landmarks)?;
        let s1 = tape.matmul_t(qh, false, kl, true)?;
        let s1 = tape.scale(s1, scale)?;
        let k1 = tape.softmax(s1, 1.0)?;
        let s2 = tape.matmul_t(ql, false, kl, true)?;
        let s2 = tape.scale(s2, scale)?;
        let k2 = tape.softmax(s2, 1.0)?;
        let s3 = tape.matmul_t(ql, false, kh, true)?;
        let s3 = tape.scale(s3, scale)?;
        let k3 = tape.softmax(s3, 1.0)?;
        let z = iterative_pinv_var(tape, k2, pinv_iters)?;
        let k3v = tape.matmul(k3, vh)?;
        let zk3v = tape.matmul(z, k3v)?;
        outs.push(tape.matmul(k1, zk3v)?);
        if capture {
            let m = tape.value(k1).matmul(tape.value(z))?.matmul(tape.value(k3))?;
            maps.push(m);
        }
    }
    let out = merge_heads(tape, &outs, p)?;
    Ok((out, capture.then_some(AttnMap { heads: maps })))
}

/// Landmark row ranges used by `nystrom_mha` for `n` tokens.
pub fn landmark_segments(n: usize, landmarks: usize) -> Vec<(usize, usize)> {
    segment_bounds(n, landmarks)
}

/// Pre-norm residual transformer block over `x` (row 0 conventionally the
/// class token).
pub fn transformer_block(
    tape: &mut Tape<'_>,
    x: Var,
    p: &BlockParams,
    kind: AttnKind,
) -> Result<Var> {
    let h = p.ln1.forward(tape, x)?;
    let (a, _) = match kind {
        AttnKind::Exact => exact_mha(tape, h, h, &p.attn, false)?,
        AttnKind::Nystrom {
            landmarks,
            pinv_iters,
        } => nystrom_mha(tape, h, &p.attn, landmarks, pinv_iters, false)?,
    };
    let x = tape.add(x, a)?;
    let h = p.ln2.forward(tape, x)?;
    let f = p.ffn.forward(tape, h)?;
    tape.add(x, f)
}
