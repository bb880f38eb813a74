//! N-of-M stimulation pattern sequences and a synthetic generator.

use alloc::vec;
use alloc::vec::Vec;

use crate::{rng, Error, Result};

/// Channels per frame (M).
pub const CHANNELS: usize = 22;
/// Most channels active in one frame (N).
pub const MAX_ACTIVE: usize = 8;
/// Channel stimulation rate, frames per second.
pub const FRAME_RATE: f64 = 900.0;

/// One stimulation pattern: frames of per-channel magnitudes in `[0, 1]`,
/// stored flat, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSequence {
    channels: usize,
    frame_rate: f64,
    frames: Vec<f32>,
}

impl PatternSequence {
    /// Builds a sequence, rejecting (never repairing) frames that break the
    /// value range or the `max_active` sparsity limit.
    pub fn new(
        channels: usize,
        max_active: usize,
        frame_rate: f64,
        frames: Vec<f32>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("pattern sequences need at least one channel"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive"));
        }
        if !frames.len().is_multiple_of(channels) {
            return Err(Error::DimensionMismatch {
                what: "flattened frames",
                expected: frames.len() / channels * channels,
                found: frames.len(),
            });
        }
        let seq = PatternSequence {
            channels,
            frame_rate,
            frames,
        };
        if let Some(t) = seq.first_invalid_frame(max_active) {
            return Err(Error::InvalidFrame { frame: t });
        }
        Ok(seq)
    }

    fn first_invalid_frame(&self, max_active: usize) -> Option<usize> {
        self.frames().position(|f| {
            f.iter().any(|v| !(0.0..=1.0).contains(v))
                || f.iter().filter(|&&v| v != 0.0).count() > max_active
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// All frames, flattened.
    pub fn as_flat(&self) -> &[f32] {
        &self.frames
    }

    pub fn frames(&self) -> core::slice::ChunksExact<'_, f32> {
        self.frames.chunks_exact(self.channels)
    }

    pub fn frame(&self, t: usize) -> Option<&[f32]> {
        self.frames().nth(t)
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.frame_rate
    }
}

/// Knobs of the synthetic generator. Defaults follow the clinical N-of-M
/// setup (22 channels, 8 maxima, 900 frames per second).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub channels: usize,
    pub max_active: usize,
    pub frame_rate: f64,
    /// Number of drifting formant-like peaks.
    pub formants: usize,
    /// Per-frame probability of toggling voiced/unvoiced excitation.
    pub voicing_switch: f64,
    /// Per-frame probability of toggling the high-band noise burst.
    pub noise_switch: f64,
    /// Channel envelopes below this level are not stimulated.
    pub threshold: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            channels: CHANNELS,
            max_active: MAX_ACTIVE,
            frame_rate: FRAME_RATE,
            formants: 3,
            voicing_switch: 0.05,
            noise_switch: 0.03,
            threshold: 0.05,
        }
    }
}

struct Formant {
    center: f64,
    velocity: f64,
    amplitude: f64,
}

/// Generates one sequence from its own random stream.
fn synthesize(params: &SyntheticParams, frames: usize, seed: u64, index: u64) -> PatternSequence {
    let mut r = rng::stream(seed, index, 0);
    let m = params.channels;
    let top = (m - 1) as f64;
    let mut formants: Vec<Formant> = (0..params.formants)
        .map(|j| {
            let lo = top * j as f64 / params.formants as f64;
            let hi = top * (j + 1) as f64 / params.formants as f64;
            Formant {
                center: rng::uniform(&mut r, lo, hi),
                velocity: 0.0,
                amplitude: 0.0,
            }
        })
        .collect();
    let mut voiced = rng::uniform01(&mut r) < 0.7;
    let mut noisy = false;
    let mut envelope = vec![0.0f64; m];
    let mut target = vec![0.0f64; m];
    let mut order: Vec<usize> = (0..m).collect();
    let noise_start = m * 2 / 3;
    let mut out = Vec::with_capacity(frames * m);

    for _ in 0..frames {
        if rng::uniform01(&mut r) < params.voicing_switch {
            voiced = !voiced;
        }
        if rng::uniform01(&mut r) < params.noise_switch {
            noisy = !noisy;
        }
        target.fill(0.0);
        for f in formants.iter_mut() {
            f.velocity = 0.97 * f.velocity + 0.03 * rng::normal(&mut r);
            f.center = (f.center + f.velocity).clamp(0.0, top);
            let excitation = if voiced {
                0.5 + 0.5 * rng::uniform01(&mut r)
            } else {
                0.08 * rng::uniform01(&mut r)
            };
            f.amplitude = 0.9 * f.amplitude + 0.1 * excitation;
            for (ch, t) in target.iter_mut().enumerate() {
                let d = ch as f64 - f.center;
                *t += f.amplitude * libm::exp(-d * d / 4.5);
            }
        }
        for (ch, t) in target.iter_mut().enumerate() {
            if noisy && ch >= noise_start {
                *t += 0.4 * rng::uniform01(&mut r);
            }
            *t += 0.03 * rng::uniform01(&mut r);
        }
        for (e, t) in envelope.iter_mut().zip(&target) {
            *e = 0.6 * *e + 0.4 * t;
        }
        // N-of-M: keep the largest envelopes, ties to the lower channel
        order.sort_by(|&a, &b| envelope[b].total_cmp(&envelope[a]).then(a.cmp(&b)));
        let mut frame = vec![0.0f32; m];
        for &ch in order.iter().take(params.max_active) {
            if envelope[ch] >= params.threshold {
                frame[ch] = envelope[ch].clamp(0.0, 1.0) as f32;
            }
        }
        out.extend_from_slice(&frame);
    }
    PatternSequence {
        channels: m,
        frame_rate: params.frame_rate,
        frames: out,
    }
}

/// `num_sequences` synthetic sequences of `frames_per_sequence` frames with
/// slowly drifting formant peaks, voiced/unvoiced excitation, occasional
/// high-band noise and first-order smoothed channel envelopes. Deterministic
/// given `seed`.
pub fn generate_synthetic(
    num_sequences: usize,
    frames_per_sequence: usize,
    seed: u64,
) -> Vec<PatternSequence> {
    generate_with(
        &SyntheticParams::default(),
        num_sequences,
        frames_per_sequence,
        seed,
    )
}

pub fn generate_with(
    params: &SyntheticParams,
    num_sequences: usize,
    frames_per_sequence: usize,
    seed: u64,
) -> Vec<PatternSequence> {
    (0..num_sequences)
        .map(|i| synthesize(params, frames_per_sequence, seed, i as u64))
        .collect()
}

/// Disjoint train and test sets drawn from independent seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PatternSequence>,
    pub test: Vec<PatternSequence>,
}

pub fn generate_split(seed: u64, train: usize, test: usize, frames_per_sequence: usize) -> Split {
    Split {
        train: generate_synthetic(train, frames_per_sequence, rng::derive_seed(&[seed, 0])),
        test: generate_synthetic(test, frames_per_sequence, rng::derive_seed(&[seed, 1])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_frames_respect_n_of_m() {
        let data = generate_synthetic(20, 200, 5);
        assert_eq!(data.len(), 20);
        for seq in &data {
            assert_eq!(seq.len(), 200);
            assert_eq!(seq.channels(), CHANNELS);
            for frame in seq.frames() {
                assert!(frame.iter().filter(|&&v| v != 0.0).count() <= MAX_ACTIVE);
                assert!(frame.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate_synthetic(3, 50, 1), generate_synthetic(3, 50, 1));
        assert_ne!(generate_synthetic(3, 50, 1), generate_synthetic(3, 50, 2));
    }

    #[test]
    fn patterns_are_not_degenerate() {
        let data = generate_synthetic(10, 300, 8);
        let active: usize = data
            .iter()
            .flat_map(|s| s.frames())
            .map(|f| f.iter().filter(|&&v| v != 0.0).count())
            .sum();
        let frames = 10 * 300;
        let mean_active = active as f64 / frames as f64;
        assert!(mean_active > 3.0, "{mean_active}");
        // channels actually change over time
        let seq = &data[0];
        let changes = seq
            .frames()
            .zip(seq.frames().skip(1))
            .filter(|(a, b)| a != b)
            .count();
        assert!(changes > 250);
    }

    #[test]
    fn split_sets_are_disjoint_streams() {
        let s = generate_split(4, 3, 5, 40);
        assert_eq!(s.train.len(), 3);
        assert_eq!(s.test.len(), 5);
        assert_ne!(s.train[0], s.test[0]);
    }

    #[test]
    fn constructor_rejects_invalid_frames() {
        let mut dense = vec![0.5f32; 22];
        assert_eq!(
            PatternSequence::new(22, 8, 900.0, dense.clone()),
            Err(Error::InvalidFrame { frame: 0 })
        );
        dense.iter_mut().skip(8).for_each(|v| *v = 0.0);
        assert!(PatternSequence::new(22, 8, 900.0, dense.clone()).is_ok());
        dense[0] = 1.5;
        assert!(PatternSequence::new(22, 8, 900.0, dense).is_err());
        assert!(PatternSequence::new(22, 8, 900.0, vec![0.0; 23]).is_err());
        assert!(PatternSequence::new(22, 8, 900.0, vec![])
            .unwrap()
            .is_empty());
    }
}
