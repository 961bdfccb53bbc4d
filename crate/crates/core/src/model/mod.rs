//! Sequence classifiers: SWAN, its two ablations, an encoder-only
//! Transformer and a fixed-window pooled-feature logistic baseline.
//!
//! Every model maps one [`SequenceSample`] to the probability of label 1.
//! Inputs are padded (logically) to a canvas; padded steps are excluded by
//! masks everywhere, so evaluating on a canvas equal to the real length
//! gives the same result as any longer canvas.

mod checkpoint;
mod config;
pub mod windowed;

use std::borrow::Borrow;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, Variant};

use crate::attention::{
    alive_windows, build_self_mask, build_window_mask, multi_head_attention, positional_encoding,
    window_weighing, LinearLayout, MultiHeadLayout, NormLayout,
};
use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::tensor::{AttentionMask, ParamStore, Tape, Tensor, Var};

/// Window attention and window weights of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    /// `L_w × canvas` head-averaged window attention.
    pub attention: Vec<Vec<f64>>,
    /// Per-window weights, zero for windows without real steps.
    pub window_weights: Vec<f64>,
    /// Real (unpadded) length.
    pub valid_len: usize,
}

/// Tape handles produced by [`Model::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Probability of label 1, shape `[1]`.
    pub prob: Var,
    /// Sequence embedding before the classifier head.
    pub embedding: Var,
    pub window_attention: Option<Var>,
    pub window_weights: Option<Var>,
    pub valid_len: usize,
}

impl ForwardVars {
    pub fn trace(&self, tape: &Tape) -> Option<AttentionTrace> {
        let att = tape.attention_weights(self.window_attention?)?;
        let weights = tape.value(self.window_weights?).to_vec();
        Some(AttentionTrace {
            attention: att.head_mean(),
            window_weights: weights,
            valid_len: self.valid_len,
        })
    }
}

#[derive(Clone, Debug)]
struct SwanLayout {
    self_att: Option<SelfAttBlock>,
    window: Option<WindowBlock>,
}

#[derive(Clone, Debug)]
struct SelfAttBlock {
    attention: MultiHeadLayout,
    norm: NormLayout,
    ff_in: LinearLayout,
    ff_out: LinearLayout,
}

#[derive(Clone, Debug)]
struct WindowBlock {
    attention: MultiHeadLayout,
    norm: NormLayout,
    weighing: LinearLayout,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attention: MultiHeadLayout,
    norm_att: NormLayout,
    ff_in: LinearLayout,
    ff_out: LinearLayout,
    norm_ff: NormLayout,
}

#[derive(Clone, Debug)]
enum Arch {
    Swan(SwanLayout),
    Transformer(Vec<EncoderLayer>),
    WindowedLinear,
}

/// Buffer names of the windowed-linear feature standardizer.
const FEATURE_MEAN: &str = "features.mean";
const FEATURE_STD: &str = "features.std";

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    /// Non-trainable state saved with checkpoints.
    buffers: ParamStore,
    arch: Arch,
    head: LinearLayout,
    positions: Option<Tensor>,
}

/// Builds an initialized model for `config.variant`, seeded by `config.seed`.
pub fn build_variant(config: &ModelConfig) -> Result<Model> {
    Model::new(config.clone())
}

/// Total number of trainable scalars.
pub fn count_params(model: &Model) -> usize {
    model.params.count()
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let mut buffers = ParamStore::default();
        let d = config.d_model;
        let h = config.heads;
        let arch = match config.variant {
            Variant::Swan | Variant::SwanNoSelfatt | Variant::SwanNoWinatt => {
                let self_att = (config.variant != Variant::SwanNoSelfatt)
                    .then(|| -> Result<SelfAttBlock> {
                        Ok(SelfAttBlock {
                            attention: MultiHeadLayout::register(
                                &mut params,
                                "self_attention",
                                d,
                                h,
                                &mut rng,
                            )?,
                            norm: NormLayout::register(&mut params, "self_attention.norm", d),
                            ff_in: LinearLayout::register(
                                &mut params, "feed_forward.in", d, d, true, &mut rng,
                            ),
                            ff_out: LinearLayout::register(
                                &mut params, "feed_forward.out", d, d, true, &mut rng,
                            ),
                        })
                    })
                    .transpose()?;
                let window = (config.variant != Variant::SwanNoWinatt)
                    .then(|| -> Result<WindowBlock> {
                        config.window_spec()?;
                        Ok(WindowBlock {
                            attention: MultiHeadLayout::register(
                                &mut params,
                                "window_attention",
                                d,
                                h,
                                &mut rng,
                            )?,
                            norm: NormLayout::register(&mut params, "window_attention.norm", d),
                            weighing: LinearLayout::register(
                                &mut params, "window_weighing", d, 1, false, &mut rng,
                            ),
                        })
                    })
                    .transpose()?;
                Arch::Swan(SwanLayout { self_att, window })
            }
            Variant::Transformer => {
                let layers = (0..config.layers)
                    .map(|i| -> Result<EncoderLayer> {
                        let p = format!("encoder.{i}");
                        Ok(EncoderLayer {
                            attention: MultiHeadLayout::register(
                                &mut params,
                                &format!("{p}.attention"),
                                d,
                                h,
                                &mut rng,
                            )?,
                            norm_att: NormLayout::register(&mut params, &format!("{p}.norm_att"), d),
                            ff_in: LinearLayout::register(
                                &mut params,
                                &format!("{p}.ff_in"),
                                d,
                                2 * d,
                                true,
                                &mut rng,
                            ),
                            ff_out: LinearLayout::register(
                                &mut params,
                                &format!("{p}.ff_out"),
                                2 * d,
                                d,
                                true,
                                &mut rng,
                            ),
                            norm_ff: NormLayout::register(&mut params, &format!("{p}.norm_ff"), d),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Arch::Transformer(layers)
            }
            Variant::WindowedLinear => {
                let n = windowed::STATS.len() * d;
                buffers.register(FEATURE_MEAN, Tensor::zeros(vec![n]));
                buffers.register(FEATURE_STD, Tensor::vector(vec![1.0; n]));
                Arch::WindowedLinear
            }
        };
        let head_in = match config.variant {
            Variant::WindowedLinear => windowed::STATS.len() * d + config.metadata_dim,
            _ => d + config.metadata_dim,
        };
        let head = LinearLayout::register(&mut params, "head", head_in, 1, true, &mut rng);
        let positions = match (&arch, config.positional_encoding) {
            (Arch::WindowedLinear, _) | (_, false) => None,
            _ => Some(positional_encoding(config.max_len, d)?),
        };
        Ok(Self {
            config,
            params,
            buffers,
            arch,
            head,
            positions,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore {
        &self.buffers
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Fits data-dependent state on the training partition. Only the
    /// windowed-linear baseline has any (its feature standardizer).
    pub fn prepare<S: Borrow<SequenceSample>>(&mut self, train: &[S]) -> Result<()> {
        if !matches!(self.arch, Arch::WindowedLinear) || train.is_empty() {
            return Ok(());
        }
        let feats: Vec<Vec<f64>> = train
            .iter()
            .map(|s| self.raw_features(s.borrow()))
            .collect::<Result<_>>()?;
        let n = feats[0].len();
        let count = feats.len() as f64;
        let mut mean = vec![0.0; n];
        for f in &feats {
            mean.iter_mut().zip(f).for_each(|(m, v)| *m += v / count);
        }
        let mut std = vec![0.0; n];
        for f in &feats {
            for ((s, v), m) in std.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m) / count;
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
        let mi = self.buffers.index_of(FEATURE_MEAN).expect("registered");
        let si = self.buffers.index_of(FEATURE_STD).expect("registered");
        self.buffers.get_mut(mi).data_mut().copy_from_slice(&mean);
        self.buffers.get_mut(si).data_mut().copy_from_slice(&std);
        Ok(())
    }

    fn raw_features(&self, sample: &SequenceSample) -> Result<Vec<f64>> {
        self.check_input(sample)?;
        Ok(windowed::pooled_window_features(
            &sample.series,
            self.config.r,
            self.config.s,
        ))
    }

    fn check_input(&self, sample: &SequenceSample) -> Result<()> {
        let len = sample.len();
        if len == 0 {
            return Err(Error::Input(format!("sample {} is empty", sample.segment_id)));
        }
        if len > self.config.max_len {
            return Err(Error::Input(format!(
                "sample {} has {len} steps, longer than max_len {}",
                sample.segment_id, self.config.max_len
            )));
        }
        if sample.series.width() != self.config.d_model {
            return Err(Error::Input(format!(
                "sample {} has {} channels, model expects {}",
                sample.segment_id,
                sample.series.width(),
                self.config.d_model
            )));
        }
        if sample.metadata.len() != self.config.metadata_dim {
            return Err(Error::Input(format!(
                "sample {} has {} metadata values, model expects {}",
                sample.segment_id,
                sample.metadata.len(),
                self.config.metadata_dim
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `sample` on `tape`.
    ///
    /// `bound` must come from `self.params().bind(tape)`. `canvas` is the
    /// padded length (default: the real length); it must lie in
    /// `len..=max_len`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        sample: &SequenceSample,
        canvas: Option<usize>,
    ) -> Result<ForwardVars> {
        self.check_input(sample)?;
        let len = sample.len();
        let canvas = canvas.unwrap_or(len);
        if canvas < len || canvas > self.config.max_len {
            return Err(Error::Input(format!(
                "canvas {canvas} must lie in {len}..={}",
                self.config.max_len
            )));
        }
        let mut vars = ForwardVars {
            prob: bound[0],
            embedding: bound[0],
            window_attention: None,
            window_weights: None,
            valid_len: len,
        };
        let embedding = match &self.arch {
            Arch::WindowedLinear => {
                let raw = self.raw_features(sample)?;
                let mean = self.buffers.get(0).data();
                let std = self.buffers.get(1).data();
                let z: Vec<f64> = raw
                    .iter()
                    .zip(mean.iter().zip(std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect();
                tape.constant(vec![z.len()], z)?
            }
            Arch::Swan(layout) => {
                let x = self.encoded_input(tape, sample, canvas)?;
                self.swan_embedding(tape, bound, layout, x, len, canvas, &mut vars)?
            }
            Arch::Transformer(layers) => {
                let mut h = self.encoded_input(tape, sample, canvas)?;
                let mask = Arc::new(
                    AttentionMask::full(canvas, canvas)
                        .restrict_keys(&AttentionMask::key_padding(canvas, len))?,
                );
                for layer in layers {
                    let mha = layer.attention.bind(bound);
                    let (a, _) = multi_head_attention(tape, h, h, &mha, mask.clone())?;
                    let r = tape.add(h, a)?;
                    h = layer.norm_att.apply(tape, bound, r)?;
                    let f = layer.ff_in.apply(tape, bound, h)?;
                    let f = tape.tanh(f);
                    let f = layer.ff_out.apply(tape, bound, f)?;
                    let r = tape.add(h, f)?;
                    h = layer.norm_ff.apply(tape, bound, r)?;
                }
                tape.mean_rows(h, (0..len).collect())?
            }
        };
        vars.embedding = embedding;
        let meta = tape.constant(vec![sample.metadata.len()], sample.metadata.clone())?;
        let joined = tape.concat(embedding, meta)?;
        let width = tape.shape(joined)[0];
        let row = tape.reshape(joined, vec![1, width])?;
        let logit = self.head.apply(tape, bound, row)?;
        let p = tape.sigmoid(logit);
        vars.prob = tape.reshape(p, vec![1])?;
        Ok(vars)
    }

    fn encoded_input(&self, tape: &mut Tape, sample: &SequenceSample, canvas: usize) -> Result<Var> {
        let d = self.config.d_model;
        let mut x = vec![0.0; canvas * d];
        x[..sample.series.data().len()].copy_from_slice(sample.series.data());
        if let Some(pe) = &self.positions {
            x.iter_mut()
                .zip(&pe.data()[..canvas * d])
                .for_each(|(v, p)| *v += p);
        }
        tape.constant(vec![canvas, d], x)
    }

    #[allow(clippy::too_many_arguments)]
    fn swan_embedding(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        layout: &SwanLayout,
        x: Var,
        len: usize,
        canvas: usize,
        vars: &mut ForwardVars,
    ) -> Result<Var> {
        let pad = AttentionMask::key_padding(canvas, len);
        let mut h = x;
        if let Some(block) = &layout.self_att {
            let mask = Arc::new(build_self_mask(canvas, self.config.r_self).restrict_keys(&pad)?);
            let mha = block.attention.bind(bound);
            let (a, _) = multi_head_attention(tape, h, h, &mha, mask)?;
            let r = tape.add(h, a)?;
            let h1 = block.norm.apply(tape, bound, r)?;
            let f = block.ff_in.apply(tape, bound, h1)?;
            let f = tape.tanh(f);
            let f = block.ff_out.apply(tape, bound, f)?;
            h = tape.add(h1, f)?;
        }
        match &layout.window {
            None => tape.mean_rows(h, (0..len).collect()),
            Some(block) => {
                let spec = self.config.window_spec()?;
                let wmask = build_window_mask(canvas, &spec).restrict_keys(&pad)?;
                let alive = alive_windows(&wmask);
                let prompts = tape.row_max(h, &wmask)?;
                let mha = block.attention.bind(bound);
                let (emb, att) = multi_head_attention(tape, prompts, h, &mha, Arc::new(wmask))?;
                let emb = block.norm.apply(tape, bound, emb)?;
                let weighed = window_weighing(tape, emb, bound[block.weighing.weight], &alive)?;
                vars.window_attention = Some(att);
                vars.window_weights = Some(weighed.weights);
                Ok(weighed.output)
            }
        }
    }

    /// Probability of label 1 on a fresh tape.
    pub fn predict(&self, sample: &SequenceSample) -> Result<f64> {
        self.predict_padded(sample, None)
    }

    pub fn predict_padded(&self, sample: &SequenceSample, canvas: Option<usize>) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let f = self.forward(&mut tape, &bound, sample, canvas)?;
        Ok(tape.value(f.prob)[0])
    }

    /// Probability and, for windowing variants, the attention trace.
    pub fn predict_with_trace(
        &self,
        sample: &SequenceSample,
    ) -> Result<(f64, Option<AttentionTrace>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let f = self.forward(&mut tape, &bound, sample, None)?;
        Ok((tape.value(f.prob)[0], f.trace(&tape)))
    }
}

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Series;

    fn sample(len: usize, d: usize, seed: u64) -> SequenceSample {
        let t = crate::tensor::gradcheck::random_tensor(vec![len, d], seed);
        SequenceSample {
            subject_id: "s".into(),
            video_id: "v".into(),
            segment_id: format!("seg{seed}"),
            series: Series::new(d, t.into_data()).unwrap(),
            metadata: vec![0.5, 0.0, 1.0, 0.25],
            label: 1,
            event: None,
        }
    }

    #[test]
    fn parameter_counts_per_variant() {
        let count = |v| count_params(&build_variant(&ModelConfig::with_variant(v)).unwrap());
        // 2 × attention (4·(100+10)) + 2 norms (20 each) + feed-forward 2·110
        // + weighing 10 + head 15.
        assert_eq!(count(Variant::Swan), 1165);
        assert_eq!(count(Variant::SwanNoSelfatt), 440 + 20 + 10 + 15);
        assert_eq!(count(Variant::SwanNoWinatt), 440 + 20 + 220 + 15);
        assert_eq!(count(Variant::WindowedLinear), 45);
        assert!(count(Variant::Transformer) > count(Variant::Swan));
    }

    #[test]
    fn registry_is_stable_across_builds() {
        let a = build_variant(&ModelConfig::default()).unwrap();
        let b = build_variant(&ModelConfig::default()).unwrap();
        assert_eq!(a.params(), b.params());
        let c = build_variant(&ModelConfig {
            seed: 9,
            ..ModelConfig::default()
        })
        .unwrap();
        let names = |m: &Model| m.params().iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&c));
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn over_length_input_is_rejected() {
        let m = build_variant(&ModelConfig {
            max_len: 20,
            ..ModelConfig::default()
        })
        .unwrap();
        assert!(matches!(m.predict(&sample(21, 10, 1)), Err(Error::Input(_))));
        assert!(m.predict(&sample(20, 10, 1)).is_ok());
    }

    #[test]
    fn zero_input_is_deterministic() {
        let m = build_variant(&ModelConfig::default()).unwrap();
        let mut s = sample(100, 10, 2);
        s.series.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let p1 = m.predict(&s).unwrap();
        let p2 = m.predict(&s).unwrap();
        assert_eq!(p1.to_bits(), p2.to_bits());
        assert!(p1 > 0.0 && p1 < 1.0);
    }

    #[test]
    fn head_doubling_scales_attention_parameters() {
        let attn = |d: usize| {
            let m = build_variant(&ModelConfig {
                d_model: d,
                ..ModelConfig::default()
            })
            .unwrap();
            m.params()
                .iter()
                .filter(|(n, _)| n.contains("attention.") && !n.contains("norm"))
                .map(|(_, t)| t.numel())
                .sum::<usize>()
        };
        assert!(attn(20) >= 4 * attn(10) - 4 * 2 * 20);
        assert!(attn(20) as f64 / attn(10) as f64 > 3.5);
    }

    #[test]
    fn windowed_linear_weighing_layer_without_bias() {
        let m = build_variant(&ModelConfig::default()).unwrap();
        let w = m.params().index_of("window_weighing.weight").unwrap();
        assert_eq!(m.params().get(w).numel(), 10);
        assert!(m.params().index_of("window_weighing.bias").is_none());
    }
}
