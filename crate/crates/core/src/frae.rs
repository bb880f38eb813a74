//! Feedback recurrent autoencoder (FRAE) with a vector-quantized bottleneck.
//!
//! The encoder is a GRU fed with the current frame concatenated with the
//! previously decoded frame, followed by a `tanh` projection to the latent
//! space. The latent is snapped to the nearest codebook entry, and only the
//! entry's index crosses the channel. The decoder is a second GRU driven by
//! the code vector with a linear output layer. Each frame is coded as soon as
//! it arrives, so there is no algorithmic delay.
//!
//! Parameters are laid out in declaration order, row-major within each block:
//!
//! | block            | role    | shape                  |
//! |------------------|---------|------------------------|
//! | `enc.input`      | encoder | 3·He × 2·M             |
//! | `enc.recurrent`  | encoder | 3·He × He              |
//! | `enc.bias`       | bias    | 3·He                   |
//! | `enc.out`        | encoder | L × He                 |
//! | `enc.out_bias`   | bias    | L                      |
//! | `dec.input`      | decoder | 3·Hd × L               |
//! | `dec.recurrent`  | decoder | 3·Hd × Hd              |
//! | `dec.bias`       | bias    | 3·Hd                   |
//! | `dec.out`        | decoder | M × Hd                 |
//! | `dec.out_bias`   | bias    | M                      |
//! | `codebook`       | code    | 2^bits × L             |
//!
//! GRU gate rows are stacked update, reset, candidate.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{build_partition, Block, ModelShape, ParamVector, Role, WeightPartition};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FraeConfig {
    /// Channels per frame (M).
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// Codebook holds `2^codebook_bits` entries.
    pub codebook_bits: u32,
}

impl Default for FraeConfig {
    fn default() -> Self {
        FraeConfig {
            input_dim: 22,
            latent_dim: 4,
            encoder_hidden: 12,
            decoder_hidden: 16,
            codebook_bits: 6,
        }
    }
}

impl FraeConfig {
    pub fn codebook_size(&self) -> usize {
        1usize << self.codebook_bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.latent_dim == 0
            || self.encoder_hidden == 0
            || self.decoder_hidden == 0
        {
            return Err(Error::Config("FRAE layer sizes must be positive"));
        }
        if self.codebook_bits == 0 || self.codebook_bits > 16 {
            return Err(Error::Config("codebook bits must be in 1..=16"));
        }
        Ok(())
    }

    pub fn shape(&self) -> ModelShape {
        let (m, l) = (self.input_dim, self.latent_dim);
        let (he, hd) = (self.encoder_hidden, self.decoder_hidden);
        ModelShape::new(vec![
            Block::new("enc.input", Role::EncoderWeight, 3 * he, 2 * m),
            Block::new("enc.recurrent", Role::EncoderWeight, 3 * he, he),
            Block::new("enc.bias", Role::Bias, 1, 3 * he),
            Block::new("enc.out", Role::EncoderWeight, l, he),
            Block::new("enc.out_bias", Role::Bias, 1, l),
            Block::new("dec.input", Role::DecoderWeight, 3 * hd, l),
            Block::new("dec.recurrent", Role::DecoderWeight, 3 * hd, hd),
            Block::new("dec.bias", Role::Bias, 1, 3 * hd),
            Block::new("dec.out", Role::DecoderWeight, m, hd),
            Block::new("dec.out_bias", Role::Bias, 1, m),
            Block::new("codebook", Role::Codebook, self.codebook_size(), l),
        ])
    }

    /// Total trainable parameters, biases and codebook included.
    pub fn param_count(&self) -> usize {
        self.shape().total_len()
    }

    /// Prunable weights only (encoder plus decoder matrices).
    pub fn weight_count(&self) -> usize {
        self.shape()
            .blocks
            .iter()
            .filter(|b| matches!(b.role, Role::EncoderWeight | Role::DecoderWeight))
            .map(Block::len)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Offsets {
    enc_input: usize,
    enc_recurrent: usize,
    enc_bias: usize,
    enc_out: usize,
    enc_out_bias: usize,
    dec_input: usize,
    dec_recurrent: usize,
    dec_bias: usize,
    dec_out: usize,
    dec_out_bias: usize,
    codebook: usize,
}

/// A validated FRAE configuration together with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FraeArch {
    config: FraeConfig,
    shape: ModelShape,
    partition: WeightPartition,
    offsets: Offsets,
}

impl FraeArch {
    pub fn new(config: FraeConfig) -> Result<Self> {
        config.validate()?;
        let shape = config.shape();
        let partition = build_partition(&shape)?;
        let at = |name| shape.offset_of(name).expect("block declared in shape()");
        let offsets = Offsets {
            enc_input: at("enc.input"),
            enc_recurrent: at("enc.recurrent"),
            enc_bias: at("enc.bias"),
            enc_out: at("enc.out"),
            enc_out_bias: at("enc.out_bias"),
            dec_input: at("dec.input"),
            dec_recurrent: at("dec.recurrent"),
            dec_bias: at("dec.bias"),
            dec_out: at("dec.out"),
            dec_out_bias: at("dec.out_bias"),
            codebook: at("codebook"),
        };
        Ok(FraeArch {
            config,
            shape,
            partition,
            offsets,
        })
    }

    pub fn config(&self) -> &FraeConfig {
        &self.config
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn partition(&self) -> &WeightPartition {
        &self.partition
    }

    pub fn param_count(&self) -> usize {
        self.partition.len()
    }

    /// Evaluates the architecture with borrowed parameters.
    pub fn view<'a>(&'a self, params: &'a [f64]) -> Result<FraeView<'a>> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                what: "FRAE parameters",
                expected: self.param_count(),
                found: params.len(),
            });
        }
        Ok(FraeView { arch: self, params })
    }

    /// Draws fresh parameters: every weight and bias block uniform in
    /// `±1/sqrt(fan_in)`, codebook entries uniform in `[-1, 1)` to cover the
    /// `tanh`-bounded latent space.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng::stream(rng::derive_seed(&[seed, 0x1417]), 0, 0);
        let mut values = Vec::with_capacity(self.param_count());
        let c = &self.config;
        for block in &self.shape.blocks {
            let fan_in = match block.name {
                "enc.input" => 2 * c.input_dim,
                "enc.recurrent" | "enc.bias" | "enc.out" | "enc.out_bias" => c.encoder_hidden,
                "dec.input" => c.latent_dim,
                _ => c.decoder_hidden,
            };
            let bound = match block.role {
                Role::Codebook => 1.0,
                _ => 1.0 / libm::sqrt(fan_in as f64),
            };
            values.extend((0..block.len()).map(|_| rng::uniform(&mut rng, -bound, bound)));
        }
        ParamVector::from_finite(values)
    }
}

/// An architecture bundled with owned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FraeModel {
    arch: FraeArch,
    params: ParamVector,
}

impl FraeModel {
    /// Fresh model with seeded parameters.
    pub fn init(config: FraeConfig, seed: u64) -> Result<Self> {
        let arch = FraeArch::new(config)?;
        let params = arch.init_params(seed);
        Ok(FraeModel { arch, params })
    }

    pub fn from_params(config: FraeConfig, params: ParamVector) -> Result<Self> {
        let arch = FraeArch::new(config)?;
        arch.view(params.as_slice())?;
        Ok(FraeModel { arch, params })
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        self.arch.view(params.as_slice())?;
        Ok(FraeModel {
            arch: self.arch.clone(),
            params,
        })
    }

    pub fn arch(&self) -> &FraeArch {
        &self.arch
    }

    pub fn config(&self) -> &FraeConfig {
        &self.arch.config
    }

    pub fn partition(&self) -> &WeightPartition {
        &self.arch.partition
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn view(&self) -> FraeView<'_> {
        FraeView {
            arch: &self.arch,
            params: self.params.as_slice(),
        }
    }
}

/// Recurrent state of one coding session. Encoder and decoder both read the
/// same feedback frame, so the transmitter mirrors the receiver exactly.
#[derive(Debug, Clone)]
pub struct CoderState {
    pub encoder_hidden: Vec<f64>,
    pub decoder_hidden: Vec<f64>,
    /// The previously decoded frame.
    pub feedback: Vec<f64>,
    scratch: Vec<f64>,
}

impl CoderState {
    pub fn new(config: &FraeConfig) -> Self {
        let widest = 3 * config.encoder_hidden.max(config.decoder_hidden);
        CoderState {
            encoder_hidden: vec![0.0; config.encoder_hidden],
            decoder_hidden: vec![0.0; config.decoder_hidden],
            feedback: vec![0.0; config.input_dim],
            scratch: vec![0.0; 2 * widest + 2 * config.input_dim],
        }
    }

    pub fn reset(&mut self) {
        self.encoder_hidden.fill(0.0);
        self.decoder_hidden.fill(0.0);
        self.feedback.fill(0.0);
    }
}

// The scratch buffer is workspace, not state.
impl PartialEq for CoderState {
    fn eq(&self, other: &Self) -> bool {
        self.encoder_hidden == other.encoder_hidden
            && self.decoder_hidden == other.decoder_hidden
            && self.feedback == other.feedback
    }
}

/// Output of coding one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedSequence {
    /// One codebook index per frame.
    pub indices: Vec<u16>,
    /// Reconstructed frames, flattened row by row.
    pub frames_hat: Vec<f64>,
}

/// Bits per second spent on indices at `frame_rate` frames per second.
pub fn raw_bitrate(config: &FraeConfig, frame_rate: f64) -> f64 {
    f64::from(config.codebook_bits) * frame_rate
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    0.5 * (1.0 + libm::tanh(0.5 * x))
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(row: &[f64], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (rc, xc) = (row.chunks_exact(4), x.chunks_exact(4));
    let tail: f64 = rc
        .remainder()
        .iter()
        .zip(xc.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (r, v) in rc.zip(xc) {
        for i in 0..4 {
            acc[i] += r[i] * v[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out = W x` for a row-major `W` with `out.len()` rows.
fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

struct GruWeights<'a> {
    input: &'a [f64],
    recurrent: &'a [f64],
    bias: &'a [f64],
}

/// One GRU update of `h` in place. `scratch` must hold at least `6 * h.len()`.
fn gru_step(w: &GruWeights<'_>, x: &[f64], h: &mut [f64], scratch: &mut [f64]) {
    let n = h.len();
    let (gx, rest) = scratch.split_at_mut(3 * n);
    let gh = &mut rest[..3 * n];
    matvec(w.input, x, gx);
    matvec(w.recurrent, h, gh);
    for i in 0..n {
        let z = sigmoid(gx[i] + gh[i] + w.bias[i]);
        let r = sigmoid(gx[n + i] + gh[n + i] + w.bias[n + i]);
        let cand = libm::tanh(gx[2 * n + i] + w.bias[2 * n + i] + r * gh[2 * n + i]);
        h[i] = (1.0 - z) * cand + z * h[i];
    }
}

/// A FRAE evaluated with borrowed parameters.
#[derive(Debug, Clone, Copy)]
pub struct FraeView<'a> {
    arch: &'a FraeArch,
    params: &'a [f64],
}

impl<'a> FraeView<'a> {
    pub fn config(&self) -> &'a FraeConfig {
        &self.arch.config
    }

    fn block(&self, offset: usize, len: usize) -> &'a [f64] {
        &self.params[offset..offset + len]
    }

    fn encoder_gru(&self) -> GruWeights<'a> {
        let c = self.config();
        let (he, m, o) = (c.encoder_hidden, c.input_dim, &self.arch.offsets);
        GruWeights {
            input: self.block(o.enc_input, 3 * he * 2 * m),
            recurrent: self.block(o.enc_recurrent, 3 * he * he),
            bias: self.block(o.enc_bias, 3 * he),
        }
    }

    fn decoder_gru(&self) -> GruWeights<'a> {
        let c = self.config();
        let (hd, l, o) = (c.decoder_hidden, c.latent_dim, &self.arch.offsets);
        GruWeights {
            input: self.block(o.dec_input, 3 * hd * l),
            recurrent: self.block(o.dec_recurrent, 3 * hd * hd),
            bias: self.block(o.dec_bias, 3 * hd),
        }
    }

    pub fn codebook_entry(&self, index: usize) -> &'a [f64] {
        let l = self.config().latent_dim;
        self.block(self.arch.offsets.codebook + index * l, l)
    }

    fn check_state(&self, state: &CoderState) -> Result<()> {
        let c = self.config();
        let fresh = CoderState::new(c);
        if state.encoder_hidden.len() != c.encoder_hidden
            || state.decoder_hidden.len() != c.decoder_hidden
            || state.feedback.len() != c.input_dim
            || state.scratch.len() < fresh.scratch.len()
        {
            return Err(Error::Contract(
                "coder state does not match model configuration",
            ));
        }
        Ok(())
    }

    /// Encodes `frame` given the current state. Updates the encoder hidden
    /// state and writes the latent vector to `latent`.
    fn encode_into(&self, state: &mut CoderState, frame: &[f64], latent: &mut [f64]) {
        let c = self.config();
        let m = c.input_dim;
        let CoderState {
            encoder_hidden,
            feedback,
            scratch,
            ..
        } = state;
        let (input, gates) = scratch.split_at_mut(2 * m);
        input[..m].copy_from_slice(frame);
        input[m..].copy_from_slice(feedback);
        gru_step(&self.encoder_gru(), input, encoder_hidden, gates);
        let o = &self.arch.offsets;
        let w_out = self.block(o.enc_out, c.latent_dim * c.encoder_hidden);
        let b_out = self.block(o.enc_out_bias, c.latent_dim);
        matvec(w_out, encoder_hidden, latent);
        for (z, b) in latent.iter_mut().zip(b_out) {
            *z = libm::tanh(*z + b);
        }
    }

    fn decode_into(&self, state: &mut CoderState, code: &[f64], frame_hat: &mut [f64]) {
        let c = self.config();
        let CoderState {
            decoder_hidden,
            feedback,
            scratch,
            ..
        } = state;
        gru_step(&self.decoder_gru(), code, decoder_hidden, scratch);
        let o = &self.arch.offsets;
        let w_out = self.block(o.dec_out, c.input_dim * c.decoder_hidden);
        let b_out = self.block(o.dec_out_bias, c.input_dim);
        matvec(w_out, decoder_hidden, frame_hat);
        for (y, b) in frame_hat.iter_mut().zip(b_out) {
            *y += b;
        }
        feedback.copy_from_slice(frame_hat);
    }

    /// Encoder half of one coding step. Reads the frame and the fed-back
    /// previous reconstruction; never looks ahead.
    pub fn encode_step(&self, state: &mut CoderState, frame: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let c = self.config();
        if frame.len() != c.input_dim {
            return Err(Error::DimensionMismatch {
                what: "frame",
                expected: c.input_dim,
                found: frame.len(),
            });
        }
        let mut latent = vec![0.0; c.latent_dim];
        self.encode_into(state, frame, &mut latent);
        Ok(latent)
    }

    /// Nearest codebook entry by squared Euclidean distance; ties go to the
    /// lower index.
    pub fn quantize(&self, latent: &[f64]) -> Result<(usize, &'a [f64])> {
        let c = self.config();
        if latent.len() != c.latent_dim {
            return Err(Error::DimensionMismatch {
                what: "latent",
                expected: c.latent_dim,
                found: latent.len(),
            });
        }
        let index = self.nearest(latent);
        Ok((index, self.codebook_entry(index)))
    }

    fn nearest(&self, latent: &[f64]) -> usize {
        let l = self.config().latent_dim;
        let k = self.config().codebook_size();
        let codebook = self.block(self.arch.offsets.codebook, k * l);
        let mut best = (0, f64::INFINITY);
        for (i, entry) in codebook.chunks_exact(l).enumerate() {
            let d: f64 = entry
                .iter()
                .zip(latent)
                .map(|(e, z)| (e - z) * (e - z))
                .sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Decoder half of one coding step. Updates the decoder hidden state and
    /// the feedback frame.
    pub fn decode_step(&self, state: &mut CoderState, code: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let c = self.config();
        if code.len() != c.latent_dim {
            return Err(Error::DimensionMismatch {
                what: "code",
                expected: c.latent_dim,
                found: code.len(),
            });
        }
        let mut frame_hat = vec![0.0; c.input_dim];
        self.decode_into(state, code, &mut frame_hat);
        Ok(frame_hat)
    }

    /// Receiver side: reconstructs frames from transmitted indices alone.
    /// Touches only the decoder and codebook blocks.
    pub fn decode_indices(&self, indices: &[u16]) -> Result<Vec<f64>> {
        let c = self.config();
        let mut state = CoderState::new(c);
        let mut out = vec![0.0; indices.len() * c.input_dim];
        for (&index, frame_hat) in indices.iter().zip(out.chunks_exact_mut(c.input_dim)) {
            let index = usize::from(index);
            if index >= c.codebook_size() {
                return Err(Error::IndexOutOfRange {
                    index,
                    len: c.codebook_size(),
                });
            }
            self.decode_into(&mut state, self.codebook_entry(index), frame_hat);
        }
        Ok(out)
    }

    /// Codes a whole sequence from a reset state: encode, quantize, decode,
    /// frame by frame. `frames` is flattened with `input_dim` values per
    /// frame.
    pub fn code_sequence<T: Copy + Into<f64>>(&self, frames: &[T]) -> Result<CodedSequence> {
        let c = self.config();
        let m = c.input_dim;
        if !frames.len().is_multiple_of(m) {
            return Err(Error::DimensionMismatch {
                what: "flattened frames",
                expected: frames.len() / m * m + m,
                found: frames.len(),
            });
        }
        let count = frames.len() / m;
        let mut state = CoderState::new(c);
        let mut indices = Vec::with_capacity(count);
        let mut frames_hat = vec![0.0; frames.len()];
        let mut frame = vec![0.0; m];
        let mut latent = vec![0.0; c.latent_dim];
        for (src, dst) in frames.chunks_exact(m).zip(frames_hat.chunks_exact_mut(m)) {
            for (f, &s) in frame.iter_mut().zip(src) {
                *f = s.into();
            }
            self.encode_into(&mut state, &frame, &mut latent);
            let index = self.nearest(&latent);
            indices.push(index as u16);
            self.decode_into(&mut state, self.codebook_entry(index), dst);
        }
        Ok(CodedSequence {
            indices,
            frames_hat,
        })
    }
}
