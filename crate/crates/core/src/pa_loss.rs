//! Pruning-aware fitness.
//!
//! The base fitness is penalized by how much it changes when the weights are
//! pushed toward their magnitude-pruned version:
//!
//! ```text
//! f_PA(w) = f(w) - λ |f(w) - f(w + g(n / n_max) Δω_n)|
//! ```
//!
//! `Δω_n` is the pruning direction of the mask chosen on the current weights,
//! and the perturbation function `g` ramps the perturbation from nothing at
//! `n = 0` to full pruning at `n = n_max`. Since fitness is maximized here,
//! the penalty is subtracted.

use core::fmt;
use core::str::FromStr;

use alloc::vec::Vec;

use crate::params::{
    pruning_direction, select_pruned_indices, ParamVector, Scope, WeightPartition,
};
use crate::spsa::Fitness;
use crate::{Error, Result};

/// Shape of the perturbation ramp `g: [0, 1] → [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PerturbationKind {
    Linear,
    Square,
    Cube,
    /// `√x`, the most aggressive ramp.
    Sqrt,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 4] = [
        PerturbationKind::Linear,
        PerturbationKind::Square,
        PerturbationKind::Cube,
        PerturbationKind::Sqrt,
    ];

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            PerturbationKind::Linear => x,
            PerturbationKind::Square => x * x,
            PerturbationKind::Cube => x * x * x,
            PerturbationKind::Sqrt => libm::sqrt(x),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbationKind::Linear => "linear",
            PerturbationKind::Square => "square",
            PerturbationKind::Cube => "cube",
            PerturbationKind::Sqrt => "sqrt",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PerturbationKind::Linear),
            "square" => Ok(PerturbationKind::Square),
            "cube" => Ok(PerturbationKind::Cube),
            "sqrt" | "root" => Ok(PerturbationKind::Sqrt),
            _ => Err(Error::Config("unknown perturbation function")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSchedule {
    pub kind: PerturbationKind,
    /// Length of the pruning-aware training phase.
    pub n_max: usize,
    pub rate: f64,
    pub scope: Scope,
    pub lambda: f64,
}

impl PerturbationSchedule {
    pub fn new(kind: PerturbationKind, n_max: usize, rate: f64, scope: Scope) -> Self {
        PerturbationSchedule {
            kind,
            n_max,
            rate,
            scope,
            lambda: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::Config("perturbation horizon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config("pruning rate must lie in [0, 1]"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative"));
        }
        Ok(())
    }

    /// `g(n / n_max)`.
    pub fn scale(&self, n: usize) -> Result<f64> {
        if n > self.n_max {
            return Err(Error::Contract(
                "perturbation step beyond the schedule horizon",
            ));
        }
        if n == self.n_max {
            return Ok(1.0);
        }
        Ok(self.kind.apply(n as f64 / self.n_max as f64))
    }
}

/// `g(n / n_max)` for the schedule.
pub fn perturbation_scale(sched: &PerturbationSchedule, n: usize) -> Result<f64> {
    sched.scale(n)
}

/// `w + g(n / n_max) Δω_n`, with `Δω_n` the magnitude pruning direction of
/// the current `w`.
pub fn perturbed_weights(
    w: &ParamVector,
    part: &WeightPartition,
    sched: &PerturbationSchedule,
    n: usize,
) -> Result<ParamVector> {
    let scale = sched.scale(n)?;
    if scale == 0.0 {
        return Ok(w.clone());
    }
    let mask = select_pruned_indices(w, part, sched.rate, sched.scope)?;
    let direction = pruning_direction(w, &mask)?;
    let values: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(direction.as_slice())
        .map(|(x, d)| x + scale * d)
        .collect();
    ParamVector::new(values)
}

fn finite(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteFitness { iteration, value })
    }
}

/// Pruning-aware fitness of `w` at schedule step `n`. Costs exactly two
/// evaluations of `base`.
pub fn pa_fitness<F: Fitness + ?Sized>(
    base: &F,
    w: &ParamVector,
    part: &WeightPartition,
    sched: &PerturbationSchedule,
    n: usize,
) -> Result<f64> {
    let perturbed = perturbed_weights(w, part, sched, n)?;
    let plain = finite(base.evaluate(w.as_slice(), n)?, n)?;
    let pruned = finite(base.evaluate(perturbed.as_slice(), n)?, n)?;
    Ok(plain - sched.lambda * libm::fabs(plain - pruned))
}

/// Wraps a base fitness into its pruning-aware version for use inside SPSA.
///
/// SPSA iteration `k` maps to schedule step `n = k + 1`, so the last update
/// of an `n_max`-iteration run already sees full-strength pruning.
pub struct PaFitness<'a, F: ?Sized> {
    base: &'a F,
    partition: &'a WeightPartition,
    schedule: PerturbationSchedule,
}

impl<'a, F: Fitness + ?Sized> PaFitness<'a, F> {
    pub fn new(
        base: &'a F,
        partition: &'a WeightPartition,
        schedule: PerturbationSchedule,
    ) -> Self {
        PaFitness {
            base,
            partition,
            schedule,
        }
    }

    pub fn schedule(&self) -> &PerturbationSchedule {
        &self.schedule
    }
}

impl<F: Fitness + ?Sized> Fitness for PaFitness<'_, F> {
    fn evaluate(&self, params: &[f64], iteration: usize) -> Result<f64> {
        let n = (iteration + 1).min(self.schedule.n_max);
        let w = ParamVector::new(params.to_vec())?;
        pa_fitness(self.base, &w, self.partition, &self.schedule, n)
    }
}
