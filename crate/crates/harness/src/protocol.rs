//! The two-arm pruning protocol.
//!
//! The pruning-aware arm trains the reference model with the pruning-aware
//! fitness, prunes it by magnitude and fine-tunes the survivors. The baseline
//! arm prunes the reference model directly and fine-tunes for the whole
//! budget. All recorded fitness values are measured on the test set.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use frae_prune_core::data::{generate_split, PatternSequence};
use frae_prune_core::frae::{FraeArch, FraeModel};
use frae_prune_core::objective::{DatasetFitness, PreparedDataset};
use frae_prune_core::pa_loss::{PaFitness, PerturbationKind, PerturbationSchedule};
use frae_prune_core::params::{apply_mask, select_pruned_indices, PruningMask, Scope};
use frae_prune_core::rng::derive_seed;
use frae_prune_core::spsa::optimize;

use crate::config::ExperimentConfig;
use crate::format;
use crate::HarnessError;

const PHASE_INIT: u64 = 1;
const PHASE_REFERENCE: u64 = 2;
const PHASE_PA: u64 = 3;
const PHASE_FINETUNE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Pa,
    Baseline,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Pa => "pa",
            Arm::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pa" => Ok(Arm::Pa),
            "baseline" => Ok(Arm::Baseline),
            _ => Err(HarnessError::Config(format!("unknown arm {s:?}"))),
        }
    }
}

/// One sweep cell. Baseline cells carry no perturbation function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub arm: Arm,
    pub scope: Scope,
    pub rate: f64,
    pub g_kind: Option<PerturbationKind>,
    pub seed: u64,
}

impl Cell {
    pub fn pa(scope: Scope, rate: f64, kind: PerturbationKind, seed: u64) -> Self {
        Cell {
            arm: Arm::Pa,
            scope,
            rate,
            g_kind: Some(kind),
            seed,
        }
    }

    pub fn baseline(scope: Scope, rate: f64, seed: u64) -> Self {
        Cell {
            arm: Arm::Baseline,
            scope,
            rate,
            g_kind: None,
            seed,
        }
    }

    /// A file-name friendly identifier.
    pub fn label(&self) -> String {
        let g = self.g_kind.map_or("none", |k| k.as_str());
        format!(
            "{}-{}-r{}-{}-s{}",
            self.arm, self.scope, self.rate, g, self.seed
        )
    }

    fn phase_seed(&self, phase: u64) -> u64 {
        let kind = self.g_kind.map_or(0, |k| {
            1 + PerturbationKind::ALL
                .iter()
                .position(|&x| x == k)
                .unwrap_or(0) as u64
        });
        let scope = match self.scope {
            Scope::WholeModel => 0,
            Scope::DecoderOnly => 1,
        };
        let arm = match self.arm {
            Arm::Pa => 0,
            Arm::Baseline => 1,
        };
        derive_seed(&[self.seed, phase, arm, scope, self.rate.to_bits(), kind])
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.g_kind.map_or("none", |k| k.as_str());
        write!(
            f,
            "arm={} scope={} rate={} g_kind={} seed={}",
            self.arm, self.scope, self.rate, g, self.seed
        )
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub arm: Arm,
    #[serde(with = "crate::named")]
    pub scope: Scope,
    pub rate: f64,
    #[serde(with = "crate::named::optional")]
    pub g_kind: Option<PerturbationKind>,
    pub seed: u64,
    pub fitness_pre_prune: f64,
    pub fitness_post_prune: f64,
    pub fitness_post_finetune: f64,
    pub pa_iterations: usize,
    pub finetune_iterations: usize,
    pub spsa_iterations: usize,
}

impl ResultRecord {
    pub fn cell(&self) -> Cell {
        Cell {
            arm: self.arm,
            scope: self.scope,
            rate: self.rate,
            g_kind: self.g_kind,
            seed: self.seed,
        }
    }
}

pub fn write_records<W: io::Write>(out: W, records: &[ResultRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: io::Read>(input: R) -> Result<Vec<ResultRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn save_records(path: &Path, records: &[ResultRecord]) -> Result<(), HarnessError> {
    write_records(std::fs::File::create(path)?, records)
}

pub fn load_records(path: &Path) -> Result<Vec<ResultRecord>, HarnessError> {
    read_records(std::fs::File::open(path)?)
}

/// The state of a cell right after pruning.
#[derive(Debug, Clone)]
pub struct PrunedStage {
    pub cell: Cell,
    /// The model the mask was computed from: PA-trained or the reference.
    pub trained: FraeModel,
    pub mask: PruningMask,
    pub pruned: FraeModel,
    pub fitness_pre_prune: f64,
    pub fitness_post_prune: f64,
    pub pa_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub record: ResultRecord,
    pub stage: PrunedStage,
    pub finetuned: FraeModel,
}

impl CellOutcome {
    /// Writes `<label>-pruned.frae`, `<label>-finetuned.frae` and
    /// `<label>-mask.pawm` into `dir`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<(), HarnessError> {
        let label = self.stage.cell.label();
        format::save_checkpoint(
            &dir.join(format!("{label}-pruned.frae")),
            &self.stage.pruned,
        )?;
        format::save_checkpoint(
            &dir.join(format!("{label}-finetuned.frae")),
            &self.finetuned,
        )?;
        format::save_mask(&dir.join(format!("{label}-mask.pawm")), &self.stage.mask)?;
        Ok(())
    }
}

/// Configuration plus the model architecture and the train and test sets.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    arch: FraeArch,
    train: Vec<PatternSequence>,
    test: Vec<PatternSequence>,
}

impl Experiment {
    /// Loads the configured pattern files or generates the synthetic split.
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let d = &config.data;
        let generated = if d.train_file.is_none() || d.test_file.is_none() {
            Some(generate_split(
                d.seed,
                d.train_sequences,
                d.test_sequences,
                d.frames_per_sequence,
            ))
        } else {
            None
        };
        let (gen_train, gen_test) = match generated {
            Some(s) => (Some(s.train), Some(s.test)),
            None => (None, None),
        };
        let train = match &d.train_file {
            Some(path) => format::load_patterns(path)?,
            None => gen_train.unwrap_or_default(),
        };
        let test = match &d.test_file {
            Some(path) => format::load_patterns(path)?,
            None => gen_test.unwrap_or_default(),
        };
        Self::with_data(config, train, test)
    }

    pub fn with_data(
        config: ExperimentConfig,
        train: Vec<PatternSequence>,
        test: Vec<PatternSequence>,
    ) -> Result<Self, HarnessError> {
        config.validate()?;
        let arch = FraeArch::new(config.model.frae())?;
        let exp = Experiment {
            config,
            arch,
            train,
            test,
        };
        // Surfaces empty sets, short sequences and channel mismatches early.
        exp.train_objective()?;
        PreparedDataset::new(&exp.test, exp.config.fitness.spec())?;
        Ok(exp)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn arch(&self) -> &FraeArch {
        &self.arch
    }

    pub fn train_set(&self) -> &[PatternSequence] {
        &self.train
    }

    pub fn test_set(&self) -> &[PatternSequence] {
        &self.test
    }

    /// The fitness SPSA maximizes, on the training set.
    pub fn train_objective(&self) -> Result<DatasetFitness<'_>, HarnessError> {
        Ok(DatasetFitness::new(
            &self.arch,
            &self.train,
            self.config.fitness.spec(),
        )?)
    }

    /// Fitness on the test set, the value stored in result records.
    pub fn evaluate(&self, model: &FraeModel) -> Result<f64, HarnessError> {
        let prepared = PreparedDataset::new(&self.test, self.config.fitness.spec())?;
        Ok(prepared.fitness(&model.view())?)
    }

    pub fn init_model(&self, seed: u64) -> FraeModel {
        let params = self.arch.init_params(derive_seed(&[seed, PHASE_INIT]));
        FraeModel::from_params(*self.arch.config(), params)
            .expect("initializer matches the architecture")
    }

    /// Plain SPSA training from a seeded initialization.
    pub fn train_reference(&self, seed: u64) -> Result<FraeModel, HarnessError> {
        let init = self.init_model(seed);
        let objective = self.train_objective()?;
        let run = optimize(
            init.params().clone(),
            &objective,
            &self.config.gain.schedule(),
            self.config.experiment.reference_iterations,
            derive_seed(&[seed, PHASE_REFERENCE]),
            None,
            0,
        )?;
        Ok(init.with_params(run.params)?)
    }

    fn check_reference(&self, reference: &FraeModel) -> Result<(), HarnessError> {
        if reference.config() != self.arch.config() {
            return Err(HarnessError::Config(
                "reference checkpoint does not match the configured model".into(),
            ));
        }
        Ok(())
    }

    /// Trains (PA arm only), prunes and scores a cell, stopping before
    /// fine-tuning.
    pub fn prune_stage(
        &self,
        reference: &FraeModel,
        cell: Cell,
    ) -> Result<PrunedStage, HarnessError> {
        self.check_reference(reference)?;
        let partition = self.arch.partition();
        let (trained, pa_iterations) = match (cell.arm, cell.g_kind) {
            (Arm::Baseline, None) => (reference.clone(), 0),
            (Arm::Pa, Some(kind)) => {
                let iterations = self.config.experiment.pa_iterations;
                if iterations == 0 {
                    (reference.clone(), 0)
                } else {
                    let base = self.train_objective()?;
                    let schedule =
                        PerturbationSchedule::new(kind, iterations, cell.rate, cell.scope)
                            .with_lambda(self.config.experiment.lambda);
                    schedule.validate()?;
                    let pa = PaFitness::new(&base, partition, schedule);
                    let run = optimize(
                        reference.params().clone(),
                        &pa,
                        &self.config.gain.schedule(),
                        iterations,
                        cell.phase_seed(PHASE_PA),
                        None,
                        0,
                    )?;
                    (reference.with_params(run.params)?, run.iterations)
                }
            }
            _ => {
                return Err(HarnessError::Config(format!(
                    "cell {cell} needs a perturbation function exactly when arm=pa"
                )))
            }
        };
        let mask = select_pruned_indices(trained.params(), partition, cell.rate, cell.scope)?;
        let pruned = trained.with_params(apply_mask(trained.params(), &mask)?)?;
        Ok(PrunedStage {
            cell,
            fitness_pre_prune: self.evaluate(&trained)?,
            fitness_post_prune: self.evaluate(&pruned)?,
            trained,
            mask,
            pruned,
            pa_iterations,
        })
    }

    /// Fine-tunes a pruned model with the pruned coordinates frozen at zero.
    pub fn finetune(&self, stage: PrunedStage) -> Result<CellOutcome, HarnessError> {
        let e = &self.config.experiment;
        let iterations = match stage.cell.arm {
            Arm::Pa => e.finetune_iterations,
            Arm::Baseline => e.baseline_iterations,
        };
        let objective = self.train_objective()?;
        let run = optimize(
            stage.pruned.params().clone(),
            &objective,
            &self.config.gain.schedule(),
            iterations,
            stage.cell.phase_seed(PHASE_FINETUNE),
            Some(stage.mask.clone()),
            0,
        )?;
        let finetuned = stage.pruned.with_params(run.params)?;
        let cell = stage.cell;
        let record = ResultRecord {
            arm: cell.arm,
            scope: cell.scope,
            rate: cell.rate,
            g_kind: cell.g_kind,
            seed: cell.seed,
            fitness_pre_prune: stage.fitness_pre_prune,
            fitness_post_prune: stage.fitness_post_prune,
            fitness_post_finetune: self.evaluate(&finetuned)?,
            pa_iterations: stage.pa_iterations,
            finetune_iterations: run.iterations,
            spsa_iterations: stage.pa_iterations + run.iterations,
        };
        Ok(CellOutcome {
            record,
            stage,
            finetuned,
        })
    }

    pub fn run_cell(&self, reference: &FraeModel, cell: Cell) -> Result<CellOutcome, HarnessError> {
        let stage = self.prune_stage(reference, cell)?;
        self.finetune(stage)
    }

    pub fn run_pa_arm(
        &self,
        reference: &FraeModel,
        scope: Scope,
        rate: f64,
        kind: PerturbationKind,
        seed: u64,
    ) -> Result<CellOutcome, HarnessError> {
        self.run_cell(reference, Cell::pa(scope, rate, kind, seed))
    }

    pub fn run_baseline_arm(
        &self,
        reference: &FraeModel,
        scope: Scope,
        rate: f64,
        seed: u64,
    ) -> Result<CellOutcome, HarnessError> {
        self.run_cell(reference, Cell::baseline(scope, rate, seed))
    }
}
