//! Recurrent convolutional count regressor and its single-image baseline.
//!
//! Every frame of an RGBP sequence passes the same stack of convolution,
//! 2×2 max-pool and ReLU blocks; the flattened features feed a stack of LSTM
//! layers one time step at a time, and a single linear neuron reads the last
//! hidden state of the last layer (many-to-one).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{RgbpFrame, RgbpSequence, FRAME_HEIGHT, FRAME_WIDTH};
use crate::nn::{
    cast_vec, Conv2d, ConvStack, ConvTrace, Dense, Gradients, Lstm, LstmTrace, ParamKind, ParamView, Real,
};

pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrcnConfig {
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub lstm_units: Vec<usize>,
    pub seq_len: usize,
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub dropout: f64,
    pub conv_frozen: bool,
}

impl Default for LrcnConfig {
    fn default() -> Self {
        Self {
            conv_layers: 3,
            filters: 8,
            kernel: 5,
            lstm_units: vec![250],
            seq_len: 9,
            input_width: FRAME_WIDTH,
            input_height: FRAME_HEIGHT,
            input_channels: INPUT_CHANNELS,
            dropout: 0.3,
            conv_frozen: false,
        }
    }
}

impl LrcnConfig {
    pub fn with_units(units: &[usize]) -> Self {
        Self {
            lstm_units: units.to_vec(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<FeatureShape> {
        if self.conv_layers == 0 || self.filters == 0 || self.kernel == 0 {
            return Err(Error::Config("C, F and K must be at least 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.lstm_units.is_empty() || self.lstm_units.contains(&0) {
            return Err(Error::Config("need at least one LSTM layer with >= 1 unit".into()));
        }
        if self.seq_len == 0 {
            return Err(Error::Config("sequence length must be at least 1".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input needs at least one channel".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        FeatureShape::compute(
            self.input_height,
            self.input_width,
            self.conv_layers,
            self.kernel,
            self.filters,
        )
    }
}

/// Spatial size after every conv block and the flattened feature length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureShape {
    pub stages: Vec<(usize, usize)>,
    pub channels: usize,
    pub flat_len: usize,
}

impl FeatureShape {
    /// Valid convolution shrinks by `K−1`, pooling halves with floor.
    pub fn compute(height: usize, width: usize, conv_layers: usize, kernel: usize, filters: usize) -> Result<Self> {
        let stages = ConvStack::<f32>::stage_dims(height, width, conv_layers, kernel).ok_or_else(|| {
            Error::Config(format!(
                "{height}x{width} input collapses below 1 pixel within {conv_layers} blocks of kernel {kernel}"
            ))
        })?;
        let (h, w) = *stages.last().expect("at least one block");
        Ok(Self {
            stages,
            channels: filters,
            flat_len: h * w * filters,
        })
    }
}

/// Input representation handed to a regressor.
#[derive(Debug, Clone, Copy)]
pub enum SeqInput<'a, S> {
    /// Normalized `C×H×W` frame tensors.
    Frames(&'a [Vec<S>]),
    /// Already-extracted convolutional features per frame.
    Features(&'a [Vec<S>]),
}

impl<S> SeqInput<'_, S> {
    pub fn len(&self) -> usize {
        match self {
            SeqInput::Frames(f) | SeqInput::Features(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// RGB scaled to [0, 1], P as {0, 1}, laid out channel-major.
pub fn frame_tensor<S: Real>(frame: &RgbpFrame) -> Vec<S> {
    let n = frame.width() * frame.height();
    let mut out = vec![S::zero(); 4 * n];
    let scale = S::lit(1.0 / 255.0);
    let (rgb, p) = out.split_at_mut(3 * n);
    for (i, px) in frame.rgb.pixels.chunks_exact(3).enumerate() {
        rgb[i] = S::lit(px[0] as f64) * scale;
        rgb[n + i] = S::lit(px[1] as f64) * scale;
        rgb[2 * n + i] = S::lit(px[2] as f64) * scale;
    }
    for (o, &b) in p.iter_mut().zip(&frame.p.bits) {
        *o = if b != 0 { S::one() } else { S::zero() };
    }
    out
}

pub fn sequence_tensors<S: Real>(seq: &RgbpSequence) -> Vec<Vec<S>> {
    seq.frames.iter().map(frame_tensor).collect()
}

/// Round half away from zero, clamp at zero.
pub fn round_count(y: f64) -> u32 {
    if y.is_nan() {
        return 0;
    }
    y.round().max(0.0).min(u32::MAX as f64) as u32
}

/// Gradient of `|y − t|` with the subgradient at zero taken as zero.
#[inline]
pub fn abs_grad<S: Real>(y: S, t: S) -> S {
    if y > t {
        S::one()
    } else if y < t {
        -S::one()
    } else {
        S::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lrcn,
    Baseline,
}

/// Common surface used by the trainer and evaluator.
pub trait Regressor<S: Real>: Clone + Send + Sync {
    fn kind(&self) -> ModelKind;
    /// Number of frames a sample must hold.
    fn seq_len(&self) -> usize;
    fn conv(&self) -> &ConvStack<S>;
    fn conv_frozen(&self) -> bool;
    fn params(&self) -> Vec<ParamView<'_, S>>;
    fn params_mut(&mut self) -> Vec<&mut Vec<S>>;
    fn forward_eval(&self, input: SeqInput<'_, S>) -> Result<S>;
    /// Accumulates `scale·∂|y−t|/∂θ` into `grads` and returns the train-mode output.
    fn accumulate_abs_grad(
        &self,
        input: SeqInput<'_, S>,
        target: S,
        scale: S,
        dropout_seed: u64,
        grads: &mut Gradients<S>,
    ) -> Result<S>;

    fn trainable_mask(&self) -> Vec<bool> {
        let frozen = self.conv_frozen();
        self.params()
            .iter()
            .map(|p| !(frozen && p.kind == ParamKind::Conv))
            .collect()
    }

    fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn count_trainable_params(&self) -> usize {
        self.params()
            .iter()
            .zip(self.trainable_mask())
            .filter(|(_, t)| *t)
            .map(|(p, _)| p.data.len())
            .sum()
    }

    fn frame_features(&self, frame: &[S]) -> Vec<S> {
        self.conv().features(frame)
    }
}

fn check_frames<S>(input: &[Vec<S>], expected_len: usize, what: &str) -> Result<()> {
    if let Some(bad) = input.iter().find(|f| f.len() != expected_len) {
        return Err(Error::Shape(format!(
            "{what} of length {} where {expected_len} was expected",
            bad.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrcnModel<S> {
    pub config: LrcnConfig,
    pub conv: ConvStack<S>,
    pub lstm: Vec<Lstm<S>>,
    pub output: Dense<S>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct LrcnTrace<S> {
    pub conv: Option<Vec<ConvTrace<S>>>,
    /// Input sequence of every LSTM layer (the first is the conv features).
    pub layer_inputs: Vec<Vec<Vec<S>>>,
    pub lstm: Vec<LstmTrace<S>>,
    /// Inverted-dropout multipliers per layer, `None` in eval mode.
    pub masks: Vec<Option<Vec<Vec<S>>>>,
    pub top: Vec<S>,
    pub output: S,
}

impl<S: Real> LrcnModel<S> {
    /// Allocates every group with zeros.
    pub fn zeros(config: LrcnConfig) -> Result<Self> {
        let shape = config.validate()?;
        let mut layers = Vec::with_capacity(config.conv_layers);
        let mut ch = config.input_channels;
        for _ in 0..config.conv_layers {
            layers.push(Conv2d::zeros(ch, config.filters, config.kernel));
            ch = config.filters;
        }
        let mut lstm = Vec::with_capacity(config.lstm_units.len());
        let mut input = shape.flat_len;
        for &u in &config.lstm_units {
            lstm.push(Lstm::zeros(input, u));
            input = u;
        }
        Ok(Self {
            conv: ConvStack {
                layers,
                in_channels: config.input_channels,
                height: config.input_height,
                width: config.input_width,
            },
            lstm,
            output: Dense::zeros(input, 1),
            config,
        })
    }

    /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
    pub fn build(config: LrcnConfig, seed: u64) -> Result<Self> {
        let shape = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.conv_layers);
        let mut ch = config.input_channels;
        for _ in 0..config.conv_layers {
            layers.push(Conv2d::glorot(&mut rng, ch, config.filters, config.kernel));
            ch = config.filters;
        }
        let mut lstm = Vec::with_capacity(config.lstm_units.len());
        let mut input = shape.flat_len;
        for &u in &config.lstm_units {
            lstm.push(Lstm::glorot(&mut rng, input, u));
            input = u;
        }
        let output = Dense::glorot(&mut rng, input, 1);
        Ok(Self {
            conv: ConvStack {
                layers,
                in_channels: config.input_channels,
                height: config.input_height,
                width: config.input_width,
            },
            lstm,
            output,
            config,
        })
    }

    pub fn feature_shape(&self) -> FeatureShape {
        self.config.validate().expect("validated at construction")
    }

    pub fn cast<T: Real>(&self) -> LrcnModel<T> {
        LrcnModel {
            config: self.config.clone(),
            conv: ConvStack {
                layers: self
                    .conv
                    .layers
                    .iter()
                    .map(|l| Conv2d {
                        in_channels: l.in_channels,
                        out_channels: l.out_channels,
                        kernel: l.kernel,
                        weight: cast_vec(&l.weight),
                        bias: cast_vec(&l.bias),
                    })
                    .collect(),
                in_channels: self.conv.in_channels,
                height: self.conv.height,
                width: self.conv.width,
            },
            lstm: self
                .lstm
                .iter()
                .map(|l| Lstm {
                    input: l.input,
                    units: l.units,
                    kernel: cast_vec(&l.kernel),
                    recurrent: cast_vec(&l.recurrent),
                    bias: cast_vec(&l.bias),
                })
                .collect(),
            output: Dense {
                input: self.output.input,
                output: 1,
                weight: cast_vec(&self.output.weight),
                bias: cast_vec(&self.output.bias),
            },
        }
    }

    fn features_of(&self, input: SeqInput<'_, S>) -> Result<Vec<Vec<S>>> {
        if input.len() != self.config.seq_len {
            return Err(Error::Shape(format!(
                "sequence of {} frames, model expects T={}",
                input.len(),
                self.config.seq_len
            )));
        }
        match input {
            SeqInput::Frames(frames) => {
                check_frames(frames, self.conv.input_len(), "frame tensor")?;
                Ok(frames.iter().map(|f| self.conv.features(f)).collect())
            }
            SeqInput::Features(feats) => {
                check_frames(feats, self.conv.feature_len(), "feature vector")?;
                Ok(feats.to_vec())
            }
        }
    }

    /// Recurrent stack and output neuron over per-frame features (eval mode).
    pub fn forward_features(&self, features: &[Vec<S>]) -> Result<S> {
        self.forward_eval(SeqInput::Features(features))
    }

    pub fn forward_frames(&self, frames: &[Vec<S>]) -> Result<S> {
        self.forward_eval(SeqInput::Frames(frames))
    }

    pub fn forward_sequence(&self, seq: &RgbpSequence) -> Result<S> {
        self.forward_frames(&sequence_tensors(seq))
    }

    pub fn predict_count(&self, seq: &RgbpSequence) -> Result<u32> {
        Ok(round_count(self.forward_sequence(seq)?.to_f64().unwrap()))
    }

    /// Forward pass keeping intermediates; `dropout_seed` selects train mode.
    pub fn trace(&self, input: SeqInput<'_, S>, dropout_seed: Option<u64>, keep_conv: bool) -> Result<LrcnTrace<S>> {
        if input.len() != self.config.seq_len {
            return Err(Error::Shape(format!(
                "sequence of {} frames, model expects T={}",
                input.len(),
                self.config.seq_len
            )));
        }
        let (conv, features) = match input {
            SeqInput::Frames(frames) if keep_conv => {
                check_frames(frames, self.conv.input_len(), "frame tensor")?;
                let traces: Vec<ConvTrace<S>> = frames.iter().map(|f| self.conv.trace(f)).collect();
                let feats = traces.iter().map(|t| t.features.clone()).collect();
                (Some(traces), feats)
            }
            other => (None, self.features_of(other)?),
        };

        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let rate = self.config.dropout;
        let keep = S::lit(1.0 / (1.0 - rate));
        let mut layer_inputs = Vec::with_capacity(self.lstm.len());
        let mut traces = Vec::with_capacity(self.lstm.len());
        let mut masks = Vec::with_capacity(self.lstm.len());
        let mut x = features;
        for layer in &self.lstm {
            let tr = layer.trace(&x);
            let mut out = tr.hidden.clone();
            let mask = match rng.as_mut() {
                Some(r) if rate > 0.0 => {
                    let m: Vec<Vec<S>> = out
                        .iter()
                        .map(|h| {
                            h.iter()
                                .map(|_| if r.gen::<f64>() < rate { S::zero() } else { keep })
                                .collect()
                        })
                        .collect();
                    for (o, mt) in out.iter_mut().zip(&m) {
                        o.iter_mut().zip(mt).for_each(|(v, &k)| *v *= k);
                    }
                    Some(m)
                }
                _ => None,
            };
            layer_inputs.push(std::mem::replace(&mut x, out));
            traces.push(tr);
            masks.push(mask);
        }
        let top = x.last().expect("seq_len >= 1").clone();
        let output = self.output.forward(&top)[0];
        Ok(LrcnTrace {
            conv,
            layer_inputs,
            lstm: traces,
            masks,
            top,
            output,
        })
    }

    /// Gradients of `d_output·y` w.r.t. every parameter group (conv groups are
    /// left empty when frozen) and, optionally, w.r.t. each input frame.
    pub fn backward(
        &self,
        trace: &LrcnTrace<S>,
        d_output: S,
        grads: &mut Gradients<S>,
        want_input: bool,
    ) -> Result<Option<Vec<Vec<S>>>> {
        let n_conv = 2 * self.conv.layers.len();
        let n_lstm = 3 * self.lstm.len();
        let conv_grads = !self.config.conv_frozen;
        if (conv_grads || want_input) && trace.conv.is_none() {
            return Err(Error::Shape(
                "conv gradients need a trace that kept conv activations".into(),
            ));
        }
        ensure_grad_slots(grads, &self.params(), conv_grads);

        let (conv_slots, rest) = grads.split_at_mut(n_conv);
        let (lstm_slots, out_slots) = rest.split_at_mut(n_lstm);
        let d_top = self.output.backward(&trace.top, &[d_output], Some(out_slots));

        let t_len = self.config.seq_len;
        let last = self.lstm.len() - 1;
        let mut grad_hidden = vec![vec![S::zero(); self.lstm[last].units]; t_len];
        grad_hidden[t_len - 1] = d_top;
        let mut grad_features = None;
        for (l, layer) in self.lstm.iter().enumerate().rev() {
            if let Some(mask) = &trace.masks[l] {
                for (g, m) in grad_hidden.iter_mut().zip(mask) {
                    g.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
                }
            }
            let need_input = l > 0 || conv_grads || want_input;
            let dx = layer.backward(
                &trace.layer_inputs[l],
                &trace.lstm[l],
                &grad_hidden,
                Some(&mut lstm_slots[3 * l..3 * l + 3]),
                need_input,
            );
            match dx {
                Some(dx) if l > 0 => grad_hidden = dx,
                Some(dx) => grad_features = Some(dx),
                None => {}
            }
        }

        let Some(grad_features) = grad_features else {
            return Ok(None);
        };
        let conv_traces = trace.conv.as_ref().expect("checked above");
        let mut input_grads = Vec::with_capacity(t_len);
        for (ct, gf) in conv_traces.iter().zip(&grad_features) {
            let slots = conv_grads.then_some(&mut conv_slots[..]);
            let gi = self.conv.backward(ct, gf, slots, want_input);
            if let Some(gi) = gi {
                input_grads.push(gi);
            }
        }
        Ok(want_input.then_some(input_grads))
    }

    /// Copies convolutional weights from a trained network and freezes them.
    pub fn transfer_conv_weights(&mut self, source: &ConvStack<S>) -> Result<()> {
        let compatible = source.layers.len() == self.conv.layers.len()
            && source.in_channels == self.conv.in_channels
            && source.layers.iter().zip(&self.conv.layers).all(|(a, b)| {
                a.in_channels == b.in_channels && a.out_channels == b.out_channels && a.kernel == b.kernel
            });
        if !compatible {
            return Err(Error::Shape("source convolution stack has a different layout".into()));
        }
        for (dst, src) in self.conv.layers.iter_mut().zip(&source.layers) {
            dst.weight.clone_from(&src.weight);
            dst.bias.clone_from(&src.bias);
        }
        self.config.conv_frozen = true;
        Ok(())
    }

    /// Marks every group trainable; weights are untouched.
    pub fn set_fine_tune(&mut self) {
        self.config.conv_frozen = false;
    }
}

fn ensure_grad_slots<S: Real>(grads: &mut Gradients<S>, params: &[ParamView<'_, S>], conv: bool) {
    if grads.len() != params.len() {
        *grads = vec![Vec::new(); params.len()];
    }
    for (g, p) in grads.iter_mut().zip(params) {
        let needed = p.kind != ParamKind::Conv || conv;
        if needed && g.len() != p.data.len() {
            *g = vec![S::zero(); p.data.len()];
        }
    }
}

impl<S: Real> Regressor<S> for LrcnModel<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Lrcn
    }

    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn conv(&self) -> &ConvStack<S> {
        &self.conv
    }

    fn conv_frozen(&self) -> bool {
        self.config.conv_frozen
    }

    fn params(&self) -> Vec<ParamView<'_, S>> {
        let mut v = self.conv.params();
        for (i, l) in self.lstm.iter().enumerate() {
            v.push(ParamView {
                name: format!("lstm.{i}.kernel"),
                shape: vec![4 * l.units, l.input],
                kind: ParamKind::Head,
                data: &l.kernel,
            });
            v.push(ParamView {
                name: format!("lstm.{i}.recurrent_kernel"),
                shape: vec![4 * l.units, l.units],
                kind: ParamKind::Head,
                data: &l.recurrent,
            });
            v.push(ParamView {
                name: format!("lstm.{i}.bias"),
                shape: vec![4 * l.units],
                kind: ParamKind::Head,
                data: &l.bias,
            });
        }
        v.push(ParamView {
            name: "output.weight".into(),
            shape: vec![1, self.output.input],
            kind: ParamKind::Head,
            data: &self.output.weight,
        });
        v.push(ParamView {
            name: "output.bias".into(),
            shape: vec![1],
            kind: ParamKind::Head,
            data: &self.output.bias,
        });
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut v = self.conv.params_mut();
        for l in &mut self.lstm {
            v.push(&mut l.kernel);
            v.push(&mut l.recurrent);
            v.push(&mut l.bias);
        }
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    fn forward_eval(&self, input: SeqInput<'_, S>) -> Result<S> {
        let mut x = self.features_of(input)?;
        for layer in &self.lstm {
            x = layer.forward(&x);
        }
        Ok(self.output.forward(x.last().expect("seq_len >= 1"))[0])
    }

    fn accumulate_abs_grad(
        &self,
        input: SeqInput<'_, S>,
        target: S,
        scale: S,
        dropout_seed: u64,
        grads: &mut Gradients<S>,
    ) -> Result<S> {
        let keep_conv = !self.config.conv_frozen;
        let trace = self.trace(input, Some(dropout_seed), keep_conv)?;
        let dy = abs_grad(trace.output, target) * scale;
        self.backward(&trace, dy, grads, false)?;
        Ok(trace.output)
    }
}

/// Single-image baseline: conv blocks, ReLU dense layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub dense_units: Vec<usize>,
    pub input_width: usize,
    pub input_height: usize,
    pub input_channels: usize,
    pub conv_frozen: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            conv_layers: 3,
            filters: 8,
            kernel: 5,
            dense_units: vec![16, 16],
            input_width: FRAME_WIDTH,
            input_height: FRAME_HEIGHT,
            input_channels: INPUT_CHANNELS,
            conv_frozen: false,
        }
    }
}

impl BaselineConfig {
    /// The conv part of an LRCN configuration with the default dense head.
    pub fn matching(lrcn: &LrcnConfig) -> Self {
        Self {
            conv_layers: lrcn.conv_layers,
            filters: lrcn.filters,
            kernel: lrcn.kernel,
            input_width: lrcn.input_width,
            input_height: lrcn.input_height,
            input_channels: lrcn.input_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<FeatureShape> {
        if self.conv_layers == 0 || self.filters == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config("C, F >= 1 and odd K >= 1 required".into()));
        }
        if self.dense_units.contains(&0) {
            return Err(Error::Config("dense layers need >= 1 unit".into()));
        }
        FeatureShape::compute(
            self.input_height,
            self.input_width,
            self.conv_layers,
            self.kernel,
            self.filters,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel<S> {
    pub config: BaselineConfig,
    pub conv: ConvStack<S>,
    pub dense: Vec<Dense<S>>,
    pub output: Dense<S>,
}

impl<S: Real> BaselineModel<S> {
    pub fn build(config: BaselineConfig, seed: u64) -> Result<Self> {
        let shape = config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.conv_layers);
        let mut ch = config.input_channels;
        for _ in 0..config.conv_layers {
            layers.push(Conv2d::glorot(&mut rng, ch, config.filters, config.kernel));
            ch = config.filters;
        }
        let mut dense = Vec::new();
        let mut input = shape.flat_len;
        for &u in &config.dense_units {
            dense.push(Dense::glorot(&mut rng, input, u));
            input = u;
        }
        let output = Dense::glorot(&mut rng, input, 1);
        Ok(Self {
            conv: ConvStack {
                layers,
                in_channels: config.input_channels,
                height: config.input_height,
                width: config.input_width,
            },
            dense,
            output,
            config,
        })
    }

    pub fn zeros(config: BaselineConfig) -> Result<Self> {
        let mut m = Self::build(config, 0)?;
        for p in m.params_mut() {
            p.iter_mut().for_each(|v| *v = S::zero());
        }
        Ok(m)
    }

    fn last_features(&self, input: SeqInput<'_, S>) -> Result<(Option<ConvTrace<S>>, Vec<S>)> {
        match input {
            SeqInput::Frames(frames) => {
                let f = frames.last().ok_or(Error::Empty("sequence"))?;
                check_frames(std::slice::from_ref(f), self.conv.input_len(), "frame tensor")?;
                let t = self.conv.trace(f);
                let feats = t.features.clone();
                Ok((Some(t), feats))
            }
            SeqInput::Features(feats) => {
                let f = feats.last().ok_or(Error::Empty("sequence"))?;
                check_frames(std::slice::from_ref(f), self.conv.feature_len(), "feature vector")?;
                Ok((None, f.clone()))
            }
        }
    }

    fn head(&self, features: Vec<S>) -> (Vec<Vec<S>>, S) {
        let mut acts = vec![features];
        for d in &self.dense {
            let y = d
                .forward(acts.last().unwrap())
                .into_iter()
                .map(|v| v.max(S::zero()))
                .collect();
            acts.push(y);
        }
        let y = self.output.forward(acts.last().unwrap())[0];
        (acts, y)
    }
}

impl<S: Real> Regressor<S> for BaselineModel<S> {
    fn kind(&self) -> ModelKind {
        ModelKind::Baseline
    }

    fn seq_len(&self) -> usize {
        1
    }

    fn conv(&self) -> &ConvStack<S> {
        &self.conv
    }

    fn conv_frozen(&self) -> bool {
        self.config.conv_frozen
    }

    fn params(&self) -> Vec<ParamView<'_, S>> {
        let mut v = self.conv.params();
        for (i, d) in self.dense.iter().enumerate() {
            v.push(ParamView {
                name: format!("dense.{i}.weight"),
                shape: vec![d.output, d.input],
                kind: ParamKind::Head,
                data: &d.weight,
            });
            v.push(ParamView {
                name: format!("dense.{i}.bias"),
                shape: vec![d.output],
                kind: ParamKind::Head,
                data: &d.bias,
            });
        }
        v.push(ParamView {
            name: "output.weight".into(),
            shape: vec![1, self.output.input],
            kind: ParamKind::Head,
            data: &self.output.weight,
        });
        v.push(ParamView {
            name: "output.bias".into(),
            shape: vec![1],
            kind: ParamKind::Head,
            data: &self.output.bias,
        });
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut v = self.conv.params_mut();
        for d in &mut self.dense {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    fn forward_eval(&self, input: SeqInput<'_, S>) -> Result<S> {
        let feats = match input {
            SeqInput::Frames(frames) => {
                let f = frames.last().ok_or(Error::Empty("sequence"))?;
                check_frames(std::slice::from_ref(f), self.conv.input_len(), "frame tensor")?;
                self.conv.features(f)
            }
            SeqInput::Features(_) => self.last_features(input)?.1,
        };
        Ok(self.head(feats).1)
    }

    fn accumulate_abs_grad(
        &self,
        input: SeqInput<'_, S>,
        target: S,
        scale: S,
        _dropout_seed: u64,
        grads: &mut Gradients<S>,
    ) -> Result<S> {
        let conv_grads = !self.config.conv_frozen;
        let (conv_trace, feats) = self.last_features(input)?;
        if conv_grads && conv_trace.is_none() {
            return Err(Error::Shape("trainable conv layers need frame input".into()));
        }
        ensure_grad_slots(grads, &self.params(), conv_grads);
        let (acts, y) = self.head(feats);
        let dy = abs_grad(y, target) * scale;

        let n_conv = 2 * self.conv.layers.len();
        let n_dense = 2 * self.dense.len();
        let (conv_slots, rest) = grads.split_at_mut(n_conv);
        let (dense_slots, out_slots) = rest.split_at_mut(n_dense);
        let mut g = self.output.backward(acts.last().unwrap(), &[dy], Some(out_slots));
        for (i, d) in self.dense.iter().enumerate().rev() {
            for (gv, &a) in g.iter_mut().zip(&acts[i + 1]) {
                if a <= S::zero() {
                    *gv = S::zero();
                }
            }
            g = d.backward(&acts[i], &g, Some(&mut dense_slots[2 * i..2 * i + 2]));
        }
        if conv_grads {
            let ct = conv_trace.expect("checked above");
            self.conv.backward(&ct, &g, Some(conv_slots), false);
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frozen(units: &[usize]) -> LrcnModel<f32> {
        let mut c = LrcnConfig::with_units(units);
        c.conv_frozen = true;
        LrcnModel::zeros(c).unwrap()
    }

    #[test]
    fn default_feature_shape() {
        let s = LrcnConfig::default().validate().unwrap();
        assert_eq!(s.stages.last(), Some(&(24, 46)));
        assert_eq!(s.flat_len, 8832);
    }

    #[test]
    fn invalid_configs() {
        let mut c = LrcnConfig::default();
        c.conv_layers = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = LrcnConfig {
            conv_layers: 2,
            kernel: 5,
            input_width: 6,
            input_height: 6,
            ..LrcnConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = LrcnConfig {
            kernel: 4,
            ..LrcnConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn trainable_counts_frozen_conv() {
        assert_eq!(frozen(&[250]).count_trainable_params(), 9_083_251);
        assert_eq!(frozen(&[1000, 250]).count_trainable_params(), 40_583_251);
        assert_eq!(frozen(&[125]).count_trainable_params(), 4_479_126);
    }

    #[test]
    fn fine_tune_adds_conv_params() {
        let mut m = frozen(&[250]);
        assert_eq!(m.conv.param_count(), 4024);
        let before = m.clone();
        m.set_fine_tune();
        assert_eq!(m.count_trainable_params(), 9_083_251 + 4024);
        m.set_fine_tune();
        assert_eq!(m.count_trainable_params(), 9_083_251 + 4024);
        assert_eq!(m.conv, before.conv);
        assert_eq!(m.lstm, before.lstm);
    }

    #[test]
    fn baseline_param_count() {
        let b = BaselineModel::<f32>::build(BaselineConfig::default(), 1).unwrap();
        assert_eq!(b.count_params(), 145_641);
    }

    #[test]
    fn zero_weights_output_bias() {
        let c = LrcnConfig {
            input_width: 24,
            input_height: 16,
            kernel: 3,
            conv_layers: 2,
            filters: 2,
            lstm_units: vec![3],
            seq_len: 2,
            ..LrcnConfig::default()
        };
        let mut m = LrcnModel::<f64>::zeros(c).unwrap();
        m.output.bias[0] = 2.0;
        let frames = vec![vec![0.7; 4 * 24 * 16]; 2];
        assert_eq!(m.forward_frames(&frames).unwrap(), 2.0);
        assert!(m.forward_frames(&frames[..1]).is_err());
    }

    #[test]
    fn rounding_rules() {
        assert_eq!(round_count(3.4), 3);
        assert_eq!(round_count(-0.3), 0);
        assert_eq!(round_count(2.5), 3);
        assert_eq!(round_count(f64::NAN), 0);
    }
}
