//! Reconstruction fitness functions, all oriented so that higher is better.

use core::fmt;
use core::str::FromStr;

use alloc::vec::Vec;

use crate::data::PatternSequence;
use crate::frae::{FraeArch, FraeView};
use crate::spsa::Fitness;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitnessKind {
    NegMse,
    EnvelopeCorrelation,
}

impl FitnessKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitnessKind::NegMse => "neg_mse",
            FitnessKind::EnvelopeCorrelation => "envelope_correlation",
        }
    }
}

impl fmt::Display for FitnessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitnessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg_mse" => Ok(FitnessKind::NegMse),
            "envelope_correlation" => Ok(FitnessKind::EnvelopeCorrelation),
            _ => Err(Error::Config("unknown fitness kind")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessSpec {
    pub kind: FitnessKind,
    /// Analysis window of the envelope correlation, in frames.
    pub window_frames: usize,
    /// Lower clip of the envelope correlation score.
    pub score_floor: f64,
}

impl Default for FitnessSpec {
    fn default() -> Self {
        FitnessSpec {
            kind: FitnessKind::EnvelopeCorrelation,
            window_frames: 30,
            score_floor: 0.0,
        }
    }
}

impl FitnessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_frames < 2 {
            return Err(Error::Config(
                "correlation window needs at least two frames",
            ));
        }
        if !(self.score_floor.is_finite() && self.score_floor <= 1.0) {
            return Err(Error::Config("score floor must be finite and at most 1"));
        }
        Ok(())
    }
}

fn check_same_len(reference: usize, reconstructed: usize) -> Result<()> {
    if reference == reconstructed {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what: "reconstructed frames",
            expected: reference,
            found: reconstructed,
        })
    }
}

/// Negative mean squared error over every entry of every frame.
pub fn neg_mse_fitness<R: Copy + Into<f64>>(reference: &[R], reconstructed: &[f64]) -> Result<f64> {
    check_same_len(reference.len(), reconstructed.len())?;
    if reference.is_empty() {
        return Err(Error::Contract("cannot score an empty sequence"));
    }
    let sse: f64 = reference
        .iter()
        .zip(reconstructed)
        .map(|(&x, y)| {
            let d = x.into() - y;
            d * d
        })
        .sum();
    Ok(-sse / reference.len() as f64)
}

/// Short-time envelope correlation.
///
/// For every channel and every window of `window_frames` consecutive frames
/// (hop of one frame), correlates the mean-removed reference envelope with
/// the mean-removed reconstruction. Windows where the reference is constant
/// are skipped; a constant reconstruction against a varying reference scores
/// zero. The mean over all scored windows is clipped to `[score_floor, 1]`.
pub fn envelope_correlation_fitness<R: Copy + Into<f64>>(
    reference: &[R],
    reconstructed: &[f64],
    channels: usize,
    spec: &FitnessSpec,
) -> Result<f64> {
    check_same_len(reference.len(), reconstructed.len())?;
    if channels == 0 || !reference.len().is_multiple_of(channels) {
        return Err(Error::Contract("frames do not divide into channels"));
    }
    let frames = reference.len() / channels;
    let win = spec.window_frames;
    if win < 2 {
        return Err(Error::Config(
            "correlation window needs at least two frames",
        ));
    }
    if frames < win {
        return Err(Error::Contract(
            "sequence shorter than the correlation window",
        ));
    }
    let mut x = Vec::with_capacity(win);
    let mut y = Vec::with_capacity(win);
    let mut total = 0.0;
    let mut scored = 0usize;
    for ch in 0..channels {
        for start in 0..=frames - win {
            x.clear();
            y.clear();
            for t in start..start + win {
                x.push(reference[t * channels + ch].into());
                y.push(reconstructed[t * channels + ch]);
            }
            if x.iter().all(|&v| v == x[0]) {
                continue;
            }
            total += correlation(&x, &y);
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::Contract(
            "reference has no window with varying envelope",
        ));
    }
    let mean = total / scored as f64;
    Ok(mean.clamp(spec.score_floor, 1.0))
}

/// Pearson correlation; zero when `y` has no variance.
fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if syy == 0.0 || sxx == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Scores one reconstruction against its reference under `spec`.
pub fn sequence_score<R: Copy + Into<f64>>(
    reference: &[R],
    reconstructed: &[f64],
    channels: usize,
    spec: &FitnessSpec,
) -> Result<f64> {
    match spec.kind {
        FitnessKind::NegMse => neg_mse_fitness(reference, reconstructed),
        FitnessKind::EnvelopeCorrelation => {
            envelope_correlation_fitness(reference, reconstructed, channels, spec)
        }
    }
}

/// Order-independent mean: the scores are sorted before summation, so any
/// permutation of the same values gives the same bits.
pub fn mean_of(scores: &mut [f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Contract("cannot average an empty dataset"));
    }
    scores.sort_unstable_by(f64::total_cmp);
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Codes every sequence with `model` and averages the per-sequence scores.
pub fn dataset_fitness(
    model: &FraeView<'_>,
    dataset: &[PatternSequence],
    spec: &FitnessSpec,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot score an empty dataset"));
    }
    let mut scores = Vec::with_capacity(dataset.len());
    for seq in dataset {
        if seq.channels() != model.config().input_dim {
            return Err(Error::DimensionMismatch {
                what: "pattern channels",
                expected: model.config().input_dim,
                found: seq.channels(),
            });
        }
        let coded = model.code_sequence(seq.as_flat())?;
        scores.push(sequence_score(
            seq.as_flat(),
            &coded.frames_hat,
            seq.channels(),
            spec,
        )?);
    }
    mean_of(&mut scores)
}

/// A scorable reference window: start frame, mean and centered energy.
#[derive(Debug, Clone)]
struct PreparedSequence {
    reference: Vec<f64>,
    /// Start frames of the scorable windows, per channel.
    windows: Vec<Vec<usize>>,
}

/// A dataset converted to `f64` once, with its scorable reference windows
/// located up front. Scores agree with [`dataset_fitness`] bit for bit.
#[derive(Debug, Clone)]
pub struct PreparedDataset<'a> {
    dataset: &'a [PatternSequence],
    spec: FitnessSpec,
    prepared: Vec<PreparedSequence>,
}

impl<'a> PreparedDataset<'a> {
    pub fn new(dataset: &'a [PatternSequence], spec: FitnessSpec) -> Result<Self> {
        spec.validate()?;
        if dataset.is_empty() {
            return Err(Error::Contract("cannot score an empty dataset"));
        }
        let win = spec.window_frames;
        let mut prepared = Vec::with_capacity(dataset.len());
        for seq in dataset {
            let reference: Vec<f64> = seq.as_flat().iter().map(|&v| f64::from(v)).collect();
            let m = seq.channels();
            let frames = seq.len();
            let mut windows = Vec::with_capacity(m);
            if spec.kind == FitnessKind::EnvelopeCorrelation {
                if frames < win {
                    return Err(Error::Contract(
                        "sequence shorter than the correlation window",
                    ));
                }
                for ch in 0..m {
                    let mut list = Vec::new();
                    for start in 0..=frames - win {
                        let first = reference[start * m + ch];
                        if (start..start + win).any(|t| reference[t * m + ch] != first) {
                            list.push(start);
                        }
                    }
                    windows.push(list);
                }
                if windows.iter().all(Vec::is_empty) {
                    return Err(Error::Contract(
                        "reference has no window with varying envelope",
                    ));
                }
            } else if frames == 0 {
                return Err(Error::Contract("cannot score an empty sequence"));
            }
            prepared.push(PreparedSequence { reference, windows });
        }
        Ok(PreparedDataset {
            dataset,
            spec,
            prepared,
        })
    }

    pub fn dataset(&self) -> &'a [PatternSequence] {
        self.dataset
    }

    pub fn spec(&self) -> &FitnessSpec {
        &self.spec
    }

    fn correlation_score(&self, seq: &PreparedSequence, channels: usize, recon: &[f64]) -> f64 {
        let win = self.spec.window_frames;
        let mut x = Vec::with_capacity(win);
        let mut y = Vec::with_capacity(win);
        let (mut total, mut scored) = (0.0, 0usize);
        for (ch, windows) in seq.windows.iter().enumerate() {
            for &start in windows {
                x.clear();
                y.clear();
                for t in start..start + win {
                    x.push(seq.reference[t * channels + ch]);
                    y.push(recon[t * channels + ch]);
                }
                total += correlation(&x, &y);
                scored += 1;
            }
        }
        (total / scored as f64).clamp(self.spec.score_floor, 1.0)
    }

    /// Mean score of `model` over the dataset.
    pub fn fitness(&self, model: &FraeView<'_>) -> Result<f64> {
        let mut scores = Vec::with_capacity(self.dataset.len());
        for (seq, prep) in self.dataset.iter().zip(&self.prepared) {
            if seq.channels() != model.config().input_dim {
                return Err(Error::DimensionMismatch {
                    what: "pattern channels",
                    expected: model.config().input_dim,
                    found: seq.channels(),
                });
            }
            let coded = model.code_sequence(&prep.reference)?;
            let score = match self.spec.kind {
                FitnessKind::NegMse => neg_mse_fitness(&prep.reference, &coded.frames_hat)?,
                FitnessKind::EnvelopeCorrelation => {
                    self.correlation_score(prep, seq.channels(), &coded.frames_hat)
                }
            };
            scores.push(score);
        }
        mean_of(&mut scores)
    }
}

/// Dataset fitness as an SPSA objective over raw parameter vectors.
pub struct DatasetFitness<'a> {
    arch: &'a FraeArch,
    data: PreparedDataset<'a>,
}

impl<'a> DatasetFitness<'a> {
    pub fn new(
        arch: &'a FraeArch,
        dataset: &'a [PatternSequence],
        spec: FitnessSpec,
    ) -> Result<Self> {
        Ok(DatasetFitness {
            arch,
            data: PreparedDataset::new(dataset, spec)?,
        })
    }

    pub fn spec(&self) -> &FitnessSpec {
        self.data.spec()
    }

    pub fn arch(&self) -> &'a FraeArch {
        self.arch
    }
}

impl Fitness for DatasetFitness<'_> {
    fn evaluate(&self, params: &[f64], _iteration: usize) -> Result<f64> {
        self.data.fitness(&self.arch.view(params)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp(frames: usize, channels: usize) -> Vec<f64> {
        (0..frames * channels)
            .map(|i| ((i * 7919) % 13) as f64 / 13.0)
            .collect()
    }

    #[test]
    fn mse_cases() {
        let a = ramp(5, 3);
        assert_eq!(neg_mse_fitness(&a, &a).unwrap(), 0.0);
        let zeros = vec![0.0f32; 12];
        assert_eq!(neg_mse_fitness(&zeros, &[1.0; 12]).unwrap(), -1.0);
        let off1: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        let off2: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        let m1 = neg_mse_fitness(&a, &off1).unwrap();
        let m2 = neg_mse_fitness(&a, &off2).unwrap();
        assert_eq!(m2, 4.0 * m1);
        assert!(neg_mse_fitness(&a, &a[1..]).is_err());
    }

    #[test]
    fn correlation_cases() {
        let spec = FitnessSpec {
            window_frames: 4,
            ..FitnessSpec::default()
        };
        let a = ramp(10, 3);
        assert!((envelope_correlation_fitness(&a, &a, 3, &spec).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(
            envelope_correlation_fitness(&a, &neg, 3, &spec).unwrap(),
            0.0
        );
        let floor = FitnessSpec {
            score_floor: -0.5,
            ..spec
        };
        assert_eq!(
            envelope_correlation_fitness(&a, &neg, 3, &floor).unwrap(),
            -0.5
        );
        let twice: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        assert!((envelope_correlation_fitness(&a, &twice, 3, &spec).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_reference_windows_are_skipped() {
        let spec = FitnessSpec {
            window_frames: 3,
            ..FitnessSpec::default()
        };
        // channel 0 varies, channel 1 is silent
        let reference = [0.1, 0.0, 0.5, 0.0, 0.2, 0.0, 0.9, 0.0];
        let mut recon = reference.to_vec();
        recon[1] = 0.3;
        recon[5] = -0.4;
        let score = envelope_correlation_fitness(&reference, &recon, 2, &spec).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
        let silent = [0.0; 8];
        assert!(envelope_correlation_fitness(&silent, &recon, 2, &spec).is_err());
    }

    #[test]
    fn short_sequences_are_rejected() {
        let spec = FitnessSpec::default();
        let a = ramp(10, 2);
        assert!(envelope_correlation_fitness(&a, &a, 2, &spec).is_err());
    }

    #[test]
    fn mean_ignores_order() {
        let mut a = [0.1, 0.7, 1e-17, 0.3];
        let mut b = [1e-17, 0.3, 0.7, 0.1];
        assert_eq!(
            mean_of(&mut a).unwrap().to_bits(),
            mean_of(&mut b).unwrap().to_bits()
        );
        assert!(mean_of(&mut []).is_err());
    }
}
