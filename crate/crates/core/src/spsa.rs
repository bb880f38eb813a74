//! Simultaneous perturbation stochastic approximation (SPSA).
//!
//! Each iteration perturbs every coordinate at once with a random sign
//! vector `Δ_k`, evaluates the fitness on both sides and moves along `Δ_k`:
//!
//! ```text
//! w_{k+1} = w_k + a_k (y⁺ - y⁻) / (2 c_k) · Δ_k,   y± = f(w_k ± c_k Δ_k)
//! ```
//!
//! The fitness is maximized. Coordinates in an optional freeze mask are
//! left out of `Δ_k` and forced back to zero after every update.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::params::{ParamVector, PruningMask};
use crate::{rng, Error, Result};

/// Gain sequences `a_k = a / (A + k + 1)^γ` and `c_k = c / (k + 1)^β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule {
    pub a: f64,
    pub big_a: f64,
    pub gamma: f64,
    pub c: f64,
    pub beta: f64,
}

impl GainSchedule {
    /// Gains used for every FRAE optimization.
    pub const FRAE: GainSchedule = GainSchedule {
        a: 1.0,
        big_a: 10273.0,
        gamma: 0.602,
        c: 0.020765,
        beta: 0.101,
    };

    pub fn validate(&self) -> Result<()> {
        let positive = [self.a, self.gamma, self.c, self.beta];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(
                "gain constants a, gamma, c, beta must be positive",
            ));
        }
        if !(self.big_a.is_finite() && self.big_a >= 0.0) {
            return Err(Error::Config("gain constant A must be non-negative"));
        }
        Ok(())
    }

    /// `(a_k, c_k)` for iteration `k`.
    pub fn gain_at(&self, k: usize) -> (f64, f64) {
        let k = k as f64;
        let a_k = self.a / libm::pow(self.big_a + k + 1.0, self.gamma);
        let c_k = self.c / libm::pow(k + 1.0, self.beta);
        (a_k, c_k)
    }
}

impl Default for GainSchedule {
    fn default() -> Self {
        GainSchedule::FRAE
    }
}

/// Objective to maximize. `iteration` is the optimizer's step counter, for
/// objectives that change over the course of a run.
pub trait Fitness {
    fn evaluate(&self, params: &[f64], iteration: usize) -> Result<f64>;
}

impl<F> Fitness for F
where
    F: Fn(&[f64]) -> f64,
{
    fn evaluate(&self, params: &[f64], _iteration: usize) -> Result<f64> {
        Ok(self(params))
    }
}

/// Adapts a fallible closure into a [`Fitness`].
pub struct TryFitness<F>(pub F);

impl<F> Fitness for TryFitness<F>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    fn evaluate(&self, params: &[f64], _iteration: usize) -> Result<f64> {
        (self.0)(params)
    }
}

/// `n` iid fair signs, drawn 64 per random word.
pub fn sample_rademacher<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut bits = rng.next_u64();
        let take = (n - out.len()).min(64);
        for _ in 0..take {
            out.push(if bits & 1 == 1 { 1.0 } else { -1.0 });
            bits >>= 1;
        }
    }
    out
}

fn evaluate_checked<F: Fitness + ?Sized>(f: &F, params: &[f64], k: usize) -> Result<f64> {
    let value = f.evaluate(params, k)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteFitness {
            iteration: k,
            value,
        })
    }
}

/// One SPSA update at iteration `k`. The sign vector comes from the stream
/// keyed by `(seed, k)`, so the step is reproducible in isolation.
pub fn spsa_step<F: Fitness + ?Sized>(
    w: &ParamVector,
    f: &F,
    schedule: &GainSchedule,
    k: usize,
    seed: u64,
    freeze: Option<&PruningMask>,
) -> Result<ParamVector> {
    let n = w.len();
    let mut delta = sample_rademacher(n, &mut rng::stream(seed, k as u64, 0));
    if let Some(mask) = freeze {
        for &i in mask.indices() {
            *delta
                .get_mut(i)
                .ok_or(Error::IndexOutOfRange { index: i, len: n })? = 0.0;
        }
    }
    let (a_k, c_k) = schedule.gain_at(k);
    let base = w.as_slice();
    let shifted = |sign: f64| -> Vec<f64> {
        base.iter()
            .zip(&delta)
            .map(|(x, d)| x + sign * c_k * d)
            .collect()
    };
    let y_plus = evaluate_checked(f, &shifted(1.0), k)?;
    let y_minus = evaluate_checked(f, &shifted(-1.0), k)?;
    let scale = a_k * (y_plus - y_minus) / (2.0 * c_k);
    let mut next: Vec<f64> = base
        .iter()
        .zip(&delta)
        .map(|(x, d)| x + scale * d)
        .collect();
    if let Some(mask) = freeze {
        for &i in mask.indices() {
            next[i] = 0.0;
        }
    }
    ParamVector::new(next)
}

/// One fitness sample along an optimization run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub k: usize,
    pub fitness: f64,
    pub a_k: f64,
    pub c_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub params: ParamVector,
    pub trace: Vec<TracePoint>,
    /// SPSA updates actually performed.
    pub iterations: usize,
}

/// A stateful SPSA run: gains, seed, optional freeze mask and the iteration
/// counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Spsa {
    schedule: GainSchedule,
    seed: u64,
    freeze: Option<PruningMask>,
    iteration: usize,
    trace_stride: usize,
}

impl Spsa {
    pub fn new(schedule: GainSchedule, seed: u64) -> Self {
        Spsa {
            schedule,
            seed,
            freeze: None,
            iteration: 0,
            trace_stride: 0,
        }
    }

    /// Keeps the masked coordinates pinned at zero.
    pub fn with_freeze(mut self, mask: PruningMask) -> Self {
        self.freeze = Some(mask);
        self
    }

    /// Records `f(w_k)` every `stride` iterations (0 disables tracing).
    /// Each sample costs one extra fitness evaluation.
    pub fn with_trace_stride(mut self, stride: usize) -> Self {
        self.trace_stride = stride;
        self
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn freeze(&self) -> Option<&PruningMask> {
        self.freeze.as_ref()
    }

    pub fn step<F: Fitness + ?Sized>(&mut self, w: &ParamVector, f: &F) -> Result<ParamVector> {
        let next = spsa_step(
            w,
            f,
            &self.schedule,
            self.iteration,
            self.seed,
            self.freeze.as_ref(),
        )?;
        self.iteration += 1;
        Ok(next)
    }

    fn trace_point<F: Fitness + ?Sized>(&self, w: &ParamVector, f: &F) -> Result<TracePoint> {
        let k = self.iteration;
        let (a_k, c_k) = self.schedule.gain_at(k);
        Ok(TracePoint {
            k,
            fitness: evaluate_checked(f, w.as_slice(), k)?,
            a_k,
            c_k,
        })
    }

    /// Runs `iterations` further steps from `w0`. With tracing enabled the
    /// trace also holds the fitness after the final step.
    pub fn run<F: Fitness + ?Sized>(
        &mut self,
        w0: ParamVector,
        f: &F,
        iterations: usize,
    ) -> Result<Optimized> {
        let mut w = w0;
        if let Some(mask) = &self.freeze {
            w = crate::params::apply_mask(&w, mask)?;
        }
        let mut trace = Vec::new();
        let stride = self.trace_stride;
        let start = self.iteration;
        for step in 0..iterations {
            if stride > 0 && step % stride == 0 {
                trace.push(self.trace_point(&w, f)?);
            }
            w = self.step(&w, f)?;
        }
        if stride > 0 {
            trace.push(self.trace_point(&w, f)?);
        }
        Ok(Optimized {
            params: w,
            trace,
            iterations: self.iteration - start,
        })
    }
}

/// Runs `iterations` SPSA steps from `w0`, starting the gain sequences at
/// `k = 0`.
pub fn optimize<F: Fitness + ?Sized>(
    w0: ParamVector,
    f: &F,
    schedule: &GainSchedule,
    iterations: usize,
    seed: u64,
    freeze: Option<PruningMask>,
    trace_stride: usize,
) -> Result<Optimized> {
    let mut run = Spsa::new(*schedule, seed).with_trace_stride(trace_stride);
    if let Some(mask) = freeze {
        run = run.with_freeze(mask);
    }
    run.run(w0, f, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Scope;
    use alloc::vec;

    fn sphere(target: &'static [f64]) -> impl Fn(&[f64]) -> f64 {
        move |w: &[f64]| {
            -w.iter()
                .zip(target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        }
    }

    #[test]
    fn paper_gains_at_zero() {
        let (a0, c0) = GainSchedule::FRAE.gain_at(0);
        assert_eq!(c0, 0.020765);
        let expected = 1.0 / libm::pow(10274.0, 0.602);
        assert!((a0 - expected).abs() / expected < 1e-12);
        assert!((a0 - 3.845e-3).abs() < 5e-7, "{a0}");
        let (_, c99) = GainSchedule::FRAE.gain_at(99);
        assert!((c99 - 1.304e-2).abs() < 5e-6, "{c99}");
    }

    #[test]
    fn gains_strictly_decrease() {
        let s = GainSchedule::FRAE;
        let mut prev = s.gain_at(0);
        for k in 1..5000 {
            let g = s.gain_at(k);
            assert!(g.0 < prev.0 && g.1 < prev.1 && g.0 > 0.0 && g.1 > 0.0);
            prev = g;
        }
    }

    #[test]
    fn validate_rejects_bad_constants() {
        assert!(GainSchedule::FRAE.validate().is_ok());
        let bad = GainSchedule {
            c: 0.0,
            ..GainSchedule::FRAE
        };
        assert!(bad.validate().is_err());
        let bad = GainSchedule {
            big_a: -1.0,
            ..GainSchedule::FRAE
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rademacher_entries_are_signs() {
        let mut rng = rng::stream(3, 0, 0);
        let v = sample_rademacher(1000, &mut rng);
        assert_eq!(v.len(), 1000);
        assert!(v.iter().all(|&s| s == 1.0 || s == -1.0));
        assert_eq!(v, sample_rademacher(1000, &mut rng::stream(3, 0, 0)));
    }

    #[test]
    fn rademacher_mean_is_near_zero() {
        let mut rng = rng::stream(11, 0, 0);
        let v = sample_rademacher(100_000, &mut rng);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn flat_fitness_leaves_weights_alone() {
        let w = ParamVector::new(vec![0.3, -0.2, 0.9]).unwrap();
        let next = spsa_step(&w, &|_: &[f64]| 0.5, &GainSchedule::FRAE, 3, 1, None).unwrap();
        assert_eq!(next, w);
    }

    #[test]
    fn update_magnitude_is_shared_by_all_coordinates() {
        let w = ParamVector::zeros(16);
        let f = |p: &[f64]| {
            p.iter()
                .enumerate()
                .map(|(i, x)| (i as f64 + 1.0) * x)
                .sum::<f64>()
        };
        let s = GainSchedule::FRAE;
        let k = 5;
        let next = spsa_step(&w, &f, &s, k, 9, None).unwrap();
        let delta = sample_rademacher(16, &mut rng::stream(9, k as u64, 0));
        let (a_k, c_k) = s.gain_at(k);
        let plus: Vec<f64> = delta.iter().map(|d| c_k * d).collect();
        let minus: Vec<f64> = delta.iter().map(|d| -c_k * d).collect();
        let scale = a_k * (f(&plus) - f(&minus)) / (2.0 * c_k);
        for (x, d) in next.as_slice().iter().zip(&delta) {
            assert_eq!(*x, scale * d);
        }
    }

    #[test]
    fn frozen_coordinate_stays_zero() {
        let w = ParamVector::new(vec![0.0, 1.0]).unwrap();
        let mask = PruningMask::from_parts(vec![0], 0.5, Scope::WholeModel).unwrap();
        let f = sphere(&[5.0, 5.0]);
        let mut run = Spsa::new(GainSchedule::FRAE, 4).with_freeze(mask);
        let mut cur = w;
        for _ in 0..200 {
            cur = run.step(&cur, &f).unwrap();
            assert_eq!(cur.as_slice()[0].to_bits(), 0.0f64.to_bits());
        }
        assert_ne!(cur.as_slice()[1], 1.0);
    }

    #[test]
    fn non_finite_fitness_names_iteration() {
        let w = ParamVector::zeros(3);
        let err =
            spsa_step(&w, &|_: &[f64]| f64::NAN, &GainSchedule::FRAE, 7, 0, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteFitness { iteration: 7, .. }));
    }

    #[test]
    fn zero_iterations_is_identity() {
        let w = ParamVector::new(vec![0.1, 0.2]).unwrap();
        let out = optimize(
            w.clone(),
            &sphere(&[0.0, 0.0]),
            &GainSchedule::FRAE,
            0,
            1,
            None,
            0,
        )
        .unwrap();
        assert_eq!(out.params, w);
        assert_eq!(out.iterations, 0);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn trace_follows_stride() {
        let w = ParamVector::new(vec![0.1, 0.2]).unwrap();
        let out = optimize(w, &sphere(&[0.0, 0.0]), &GainSchedule::FRAE, 10, 1, None, 4).unwrap();
        let ks: Vec<usize> = out.trace.iter().map(|p| p.k).collect();
        assert_eq!(ks, vec![0, 4, 8, 10]);
        assert_eq!(out.trace[1].a_k, GainSchedule::FRAE.gain_at(4).0);
    }
}
