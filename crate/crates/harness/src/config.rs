//! TOML experiment configuration. Every field has a default, so an empty
//! file describes the full protocol.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use frae_prune_core::frae::FraeConfig;
use frae_prune_core::objective::{FitnessKind, FitnessSpec};
use frae_prune_core::pa_loss::PerturbationKind;
use frae_prune_core::params::Scope;
use frae_prune_core::spsa::GainSchedule;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub gain: GainSection,
    pub fitness: FitnessSection,
    pub data: DataSection,
    pub model: ModelSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(with = "crate::named::list")]
    pub scopes: Vec<Scope>,
    pub rate_grid: Vec<f64>,
    #[serde(with = "crate::named::list")]
    pub perturbations: Vec<PerturbationKind>,
    pub lambda: f64,
    pub pa_iterations: usize,
    pub finetune_iterations: usize,
    pub baseline_iterations: usize,
    pub reference_iterations: usize,
    pub seeds: Vec<u64>,
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_rate_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            scopes: Scope::ALL.to_vec(),
            rate_grid: default_rate_grid(),
            perturbations: vec![
                PerturbationKind::Linear,
                PerturbationKind::Square,
                PerturbationKind::Cube,
            ],
            lambda: 1.0,
            pa_iterations: 1000,
            finetune_iterations: 7000,
            baseline_iterations: 8000,
            reference_iterations: 20000,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSection {
    pub a: f64,
    #[serde(rename = "A")]
    pub big_a: f64,
    pub gamma: f64,
    pub c: f64,
    pub beta: f64,
}

impl Default for GainSection {
    fn default() -> Self {
        let g = GainSchedule::FRAE;
        GainSection {
            a: g.a,
            big_a: g.big_a,
            gamma: g.gamma,
            c: g.c,
            beta: g.beta,
        }
    }
}

impl GainSection {
    pub fn schedule(&self) -> GainSchedule {
        GainSchedule {
            a: self.a,
            big_a: self.big_a,
            gamma: self.gamma,
            c: self.c,
            beta: self.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitnessSection {
    #[serde(with = "crate::named")]
    pub kind: FitnessKind,
    pub window_frames: usize,
    pub score_floor: f64,
}

impl Default for FitnessSection {
    fn default() -> Self {
        let spec = FitnessSpec::default();
        FitnessSection {
            kind: spec.kind,
            window_frames: spec.window_frames,
            score_floor: spec.score_floor,
        }
    }
}

impl FitnessSection {
    pub fn spec(&self) -> FitnessSpec {
        FitnessSpec {
            kind: self.kind,
            window_frames: self.window_frames,
            score_floor: self.score_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub frames_per_sequence: usize,
    /// Pattern files used instead of the generator. Relative paths resolve
    /// against the directory of the config file.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            seed: 0,
            train_sequences: 100,
            test_sequences: 200,
            frames_per_sequence: 32,
            train_file: None,
            test_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub codebook_bits: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from(FraeConfig::default())
    }
}

impl From<FraeConfig> for ModelSection {
    fn from(c: FraeConfig) -> Self {
        ModelSection {
            input_dim: c.input_dim,
            latent_dim: c.latent_dim,
            encoder_hidden: c.encoder_hidden,
            decoder_hidden: c.decoder_hidden,
            codebook_bits: c.codebook_bits,
        }
    }
}

impl ModelSection {
    pub fn frae(&self) -> FraeConfig {
        FraeConfig {
            input_dim: self.input_dim,
            latent_dim: self.latent_dim,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            codebook_bits: self.codebook_bits,
        }
    }
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads and validates a config file, resolving data paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for file in [&mut config.data.train_file, &mut config.data.test_file]
            .into_iter()
            .flatten()
        {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.experiment;
        if e.pa_iterations + e.finetune_iterations != e.baseline_iterations {
            return Err(config_error(format!(
                "pa_iterations + finetune_iterations = {} but baseline_iterations = {}",
                e.pa_iterations + e.finetune_iterations,
                e.baseline_iterations
            )));
        }
        if e.scopes.is_empty()
            || e.rate_grid.is_empty()
            || e.perturbations.is_empty()
            || e.seeds.is_empty()
        {
            return Err(config_error(
                "scopes, rate_grid, perturbations and seeds must be non-empty",
            ));
        }
        for (i, &r) in e.rate_grid.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(config_error(format!("rate {r} outside [0, 1]")));
            }
            if e.rate_grid[..i].contains(&r) {
                return Err(config_error(format!("rate {r} listed twice")));
            }
        }
        if has_duplicates(&e.scopes) || has_duplicates(&e.perturbations) || has_duplicates(&e.seeds)
        {
            return Err(config_error(
                "scopes, perturbations and seeds must not repeat",
            ));
        }
        if !(e.lambda.is_finite() && e.lambda >= 0.0) {
            return Err(config_error("lambda must be finite and non-negative"));
        }
        self.gain.schedule().validate()?;
        self.fitness.spec().validate()?;
        self.model.frae().validate()?;
        let d = &self.data;
        if d.train_file.is_none() && d.train_sequences == 0 {
            return Err(config_error("train_sequences must be positive"));
        }
        if d.test_file.is_none() && d.test_sequences == 0 {
            return Err(config_error("test_sequences must be positive"));
        }
        if (d.train_file.is_none() || d.test_file.is_none()) && d.frames_per_sequence == 0 {
            return Err(config_error("frames_per_sequence must be positive"));
        }
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, x)| items[..i].contains(x))
}
