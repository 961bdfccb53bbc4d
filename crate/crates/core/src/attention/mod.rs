//! Attention building blocks: masks, positional encoding, limited-range
//! self-attention, windowing cross-attention over max-pooled window prompts,
//! and window weighing.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AttentionMask, ParamStore, Tape, Tensor, Var};

/// Window geometry: each window spans `range` steps and consecutive windows
/// start `step` steps apart. `self_range` bounds the self-attention band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub range: usize,
    pub step: usize,
    pub self_range: usize,
}

impl WindowSpec {
    pub fn new(range: usize, step: usize, self_range: usize) -> Result<Self> {
        if range == 0 {
            return Err(Error::Config("window range must be at least 1".into()));
        }
        if step == 0 {
            return Err(Error::Config("window step must be at least 1".into()));
        }
        Ok(Self {
            range,
            step,
            self_range,
        })
    }

    /// `ceil(len / step)`: every step is covered by at least one window.
    pub fn num_windows(&self, len: usize) -> usize {
        len.div_ceil(self.step)
    }

    /// Steps covered by window `i` in a sequence of `len` steps.
    pub fn window(&self, i: usize, len: usize) -> Range<usize> {
        let start = (self.step * i).min(len);
        start..(self.step * i + self.range).min(len)
    }
}

/// `L × L` mask with `true` exactly where `|i − j| ≤ self_range`.
pub fn build_self_mask(len: usize, self_range: usize) -> AttentionMask {
    AttentionMask::from_row_ranges(len, len, |i| i.saturating_sub(self_range)..i + self_range + 1)
}

/// `L_w × L` mask; row `i` is true for `s·i ≤ j < min(s·i + r, L)`.
pub fn build_window_mask(len: usize, spec: &WindowSpec) -> AttentionMask {
    AttentionMask::from_row_ranges(spec.num_windows(len), len, |i| spec.window(i, len))
}

/// Windows that still contain at least one permitted step.
pub fn alive_windows(mask: &AttentionMask) -> Vec<bool> {
    (0..mask.rows()).map(|i| !mask.row_is_empty(i)).collect()
}

/// Sinusoidal position table, `L × D`.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {dim}"
        )));
    }
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[pos * dim + 2 * i] = angle.sin();
            data[pos * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(len, dim, data)
}

/// Glorot-uniform `fan_in × fan_out` matrix.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::matrix(fan_in, fan_out, data)
        .expect("length matches shape")
        .with_grad()
}

pub fn zeros_param(len: usize) -> Tensor {
    Tensor::zeros(vec![len]).with_grad()
}

/// Registry indices of an affine map `x·W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearLayout {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl LinearLayout {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), glorot(rng, fan_in, fan_out));
        let bias = bias.then(|| store.register(format!("{name}.bias"), zeros_param(fan_out)));
        Self { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, vars[self.weight])?;
        match self.bias {
            Some(b) => tape.add_row(y, vars[b]),
            None => Ok(y),
        }
    }
}

/// Registry indices of a layer normalization's gain and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormLayout {
    pub gain: usize,
    pub bias: usize,
}

impl NormLayout {
    pub fn register(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.register(
            format!("{name}.gain"),
            Tensor::vector(vec![1.0; dim]).with_grad(),
        );
        let bias = store.register(format!("{name}.bias"), zeros_param(dim));
        Self { gain, bias }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, vars[self.gain], vars[self.bias])
    }
}

/// Query, key, value and output projections of one multi-head attention
/// layer, bound to a tape. Each projection is `D × D` with a bias; head `h`
/// reads columns `h·D/H .. (h+1)·D/H`.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadParams {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub heads: usize,
}

/// Registry indices of a [`MultiHeadParams`] block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiHeadLayout {
    pub query: LinearLayout,
    pub key: LinearLayout,
    pub value: LinearLayout,
    pub output: LinearLayout,
    pub heads: usize,
}

impl MultiHeadLayout {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide model width {dim}"
            )));
        }
        let mut lin = |part: &str| {
            LinearLayout::register(store, &format!("{name}.{part}"), dim, dim, true, rng)
        };
        Ok(Self {
            query: lin("query"),
            key: lin("key"),
            value: lin("value"),
            output: lin("output"),
            heads,
        })
    }

    pub fn bind(&self, vars: &[Var]) -> MultiHeadParams {
        let b = |l: &LinearLayout| vars[l.bias.expect("attention projections carry biases")];
        MultiHeadParams {
            w_q: vars[self.query.weight],
            b_q: b(&self.query),
            w_k: vars[self.key.weight],
            b_k: b(&self.key),
            w_v: vars[self.value.weight],
            b_v: b(&self.value),
            w_o: vars[self.output.weight],
            b_o: b(&self.output),
            heads: self.heads,
        }
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Multi-head attention of `queries` over `keys_values` under `mask`,
/// followed by the output projection. Returns the projected output and the
/// raw attention node, whose weights are readable via
/// [`Tape::attention_weights`].
pub fn multi_head_attention(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    params: &MultiHeadParams,
    mask: Arc<AttentionMask>,
) -> Result<(Var, Var)> {
    let q = affine(tape, queries, params.w_q, params.b_q)?;
    let k = affine(tape, keys_values, params.w_k, params.b_k)?;
    let v = affine(tape, keys_values, params.w_v, params.b_v)?;
    let att = tape.attention(q, k, v, params.heads, mask)?;
    let out = affine(tape, att, params.w_o, params.b_o)?;
    Ok((out, att))
}

/// Limited-range self-attention of `x` (`L × D`) under `range_mask ∧ pad`,
/// where `pad` is the `1 × L` mask of real steps.
pub fn self_attention(
    tape: &mut Tape,
    x: Var,
    params: &MultiHeadParams,
    range_mask: &AttentionMask,
    pad: &AttentionMask,
) -> Result<Var> {
    let mask = Arc::new(range_mask.restrict_keys(pad)?);
    multi_head_attention(tape, x, x, params, mask).map(|(out, _)| out)
}

/// Window prompts: the per-dimension maximum of `x` over the real steps of
/// each window. Windows without real steps get a zero prompt.
pub fn window_prompts(
    tape: &mut Tape,
    x: Var,
    spec: &WindowSpec,
    pad: &AttentionMask,
) -> Result<Var> {
    let len = tape.shape(x).first().copied().unwrap_or(0);
    let mask = build_window_mask(len, spec).restrict_keys(pad)?;
    tape.row_max(x, &mask)
}

/// Output of [`windowing_attention`].
#[derive(Clone, Copy, Debug)]
pub struct WindowAttention {
    /// `L_w × D` window embeddings.
    pub embeddings: Var,
    /// Attention node carrying the `L_w × L` weights.
    pub attention: Var,
}

/// Cross-attention from window prompts to the steps of `x`, restricted to
/// each window's real steps.
pub fn windowing_attention(
    tape: &mut Tape,
    x: Var,
    prompts: Var,
    params: &MultiHeadParams,
    window_mask: &AttentionMask,
    pad: &AttentionMask,
) -> Result<WindowAttention> {
    let prompt_rows = tape.shape(prompts).first().copied().unwrap_or(0);
    if prompt_rows != window_mask.rows() {
        return Err(Error::shape(
            "windowing_attention",
            tape.shape(prompts),
            &[window_mask.rows(), window_mask.cols()],
        ));
    }
    let mask = Arc::new(window_mask.restrict_keys(pad)?);
    let (embeddings, attention) = multi_head_attention(tape, prompts, x, params, mask)?;
    Ok(WindowAttention {
        embeddings,
        attention,
    })
}

/// Output of [`window_weighing`].
#[derive(Clone, Copy, Debug)]
pub struct WindowWeighing {
    /// Sequence embedding, length `D`.
    pub output: Var,
    /// Per-window scalar weights (`L_w × 1`), zero for dead windows.
    pub weights: Var,
}

/// Scores each window embedding with `weight` (`D × 1`) and returns the
/// weighted sum of embeddings. Windows with `alive[i] == false` get weight 0.
pub fn window_weighing(
    tape: &mut Tape,
    windows: Var,
    weight: Var,
    alive: &[bool],
) -> Result<WindowWeighing> {
    let rows = tape.shape(windows).first().copied().unwrap_or(0);
    if rows != alive.len() {
        return Err(Error::shape("window_weighing", tape.shape(windows), &[alive.len()]));
    }
    let scores = tape.matmul(windows, weight)?;
    let gate = tape.constant(
        vec![rows, 1],
        alive.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
    )?;
    let weights = tape.mul(scores, gate)?;
    let row = tape.transpose(weights)?;
    let summed = tape.matmul(row, windows)?;
    let d = tape.shape(windows)[1];
    let output = tape.reshape(summed, vec![d])?;
    Ok(WindowWeighing { output, weights })
}
