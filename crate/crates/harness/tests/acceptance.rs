//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7 and 8 train five reference models and run the pruning-aware
//! phase at every rate from 0.5 up, all at the default configuration. Cells
//! run in parallel through rayon; on a single core the suite takes a few
//! hours.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use frae_prune::config::ExperimentConfig;
use frae_prune::core::data::{generate_synthetic, CHANNELS};
use frae_prune::core::frae::{FraeConfig, FraeModel};
use frae_prune::core::pa_loss::{perturbed_weights, PerturbationKind, PerturbationSchedule};
use frae_prune::core::params::{
    apply_mask, pruned_count, pruning_direction, select_pruned_indices, ParamVector, Scope,
    WeightPartition,
};
use frae_prune::core::rng::{derive_seed, stream, uniform};
use frae_prune::core::spsa::{optimize, GainSchedule};
use frae_prune::plot::median;
use frae_prune::protocol::{Cell, Experiment, PrunedStage};
use frae_prune::sweep::run_sweep;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_vector(n: usize, seed: u64, case: u64) -> ParamVector {
    let mut rng = stream(seed, case, 0);
    let values = (0..n)
        .map(|_| {
            // Every fourth draw comes from a handful of repeated values so
            // magnitude ties are common.
            if uniform(&mut rng, 0.0, 1.0) < 0.25 {
                [0.0, 0.5, -0.5, 0.125][(uniform(&mut rng, 0.0, 4.0)) as usize]
            } else {
                uniform(&mut rng, -1.5, 1.5)
            }
        })
        .collect();
    ParamVector::new(values).unwrap()
}

fn random_rate(seed: u64, case: u64) -> f64 {
    let mut rng = stream(seed, case, 1);
    if case.is_multiple_of(2) {
        (uniform(&mut rng, 0.0, 21.0) as u32).min(20) as f64 / 20.0
    } else {
        uniform(&mut rng, 0.0, 1.0)
    }
}

fn bits(w: &ParamVector) -> Vec<u64> {
    w.as_slice().iter().map(|v| v.to_bits()).collect()
}

/// Round-half-up of `rate * n`. Grid rates `j / 20` go through exact integer
/// arithmetic.
fn expected_count(rate: f64, n: usize) -> usize {
    let j = rate * 20.0;
    if j == j.round() {
        (2 * j as usize * n + 20) / 40
    } else {
        (rate * n as f64 + 0.5).floor() as usize
    }
}

fn frae_partition() -> WeightPartition {
    FraeModel::init(FraeConfig::default(), 0)
        .unwrap()
        .partition()
        .clone()
}

fn criterion_1() -> Outcome {
    let part = frae_partition();
    let start = Instant::now();
    let mut failures = Vec::new();
    for case in 0..1000u64 {
        let w = random_vector(part.len(), 11, case);
        let rate = random_rate(11, case);
        let scope = Scope::ALL[(case / 2 % 2) as usize];
        let mask = select_pruned_indices(&w, &part, rate, scope).unwrap();
        let masked = apply_mask(&w, &mask).unwrap();
        let moved = w.add(&pruning_direction(&w, &mask).unwrap()).unwrap();
        let idempotent = bits(&apply_mask(&masked, &mask).unwrap()) == bits(&masked);
        let n = part.eligible_count(scope);
        let count_ok = mask.len() == expected_count(rate, n) && mask.len() == pruned_count(rate, n);
        if bits(&moved) != bits(&masked) || !idempotent || !count_ok {
            failures.push(case);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(1),
        format!(
            "1000 triples, {} failing, {:.3} s (limit 1 s)",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut reached = 0;
    let mut distances = Vec::new();
    for seed in 0..10u64 {
        let mut rng = stream(derive_seed(&[seed, 2]), 0, 0);
        let target: Vec<f64> = (0..10).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
        let w0: Vec<f64> = target
            .iter()
            .map(|t| t + uniform(&mut rng, -1.0, 1.0))
            .collect();
        let f = |w: &[f64]| -> f64 {
            -w.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        };
        let run = optimize(
            ParamVector::new(w0).unwrap(),
            &f,
            &GainSchedule::FRAE,
            2000,
            seed,
            None,
            0,
        )
        .unwrap();
        let d = (-f(run.params.as_slice())).sqrt();
        distances.push(d);
        if d < 0.05 {
            reached += 1;
        }
    }
    let elapsed = start.elapsed();
    let worst = distances.iter().cloned().fold(0.0, f64::max);
    outcome(
        reached >= 9 && elapsed < Duration::from_secs(5),
        format!(
            "{reached}/10 seeds within 0.05 (worst {worst:.2e}), {:.3} s (limit 5 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let (a0, c0) = GainSchedule::FRAE.gain_at(0);
    let want_a = 1.0 / 10274f64.powf(0.602);
    let want_c = 0.020765;
    let ra = ((a0 - want_a) / want_a).abs();
    let rc = ((c0 - want_c) / want_c).abs();
    outcome(
        ra < 1e-12 && rc < 1e-12,
        format!("a_0 = {a0:.15e} (rel err {ra:.1e}), c_0 = {c0} (rel err {rc:.1e})"),
    )
}

fn criterion_4() -> Outcome {
    let part = frae_partition();
    let n_max = 1000;
    let mut failures = 0;
    for case in 0..100u64 {
        let w = random_vector(part.len(), 44, case);
        let rate = random_rate(44, case);
        let scope = Scope::ALL[(case % 2) as usize];
        let mask = select_pruned_indices(&w, &part, rate, scope).unwrap();
        let masked = bits(&apply_mask(&w, &mask).unwrap());
        for kind in PerturbationKind::ALL {
            let sched = PerturbationSchedule::new(kind, n_max, rate, scope);
            let start = perturbed_weights(&w, &part, &sched, 0).unwrap();
            let end = perturbed_weights(&w, &part, &sched, n_max).unwrap();
            if bits(&start) != bits(&w) || bits(&end) != masked {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("100 vectors x 4 perturbation functions, {failures} failing"),
    )
}

fn tiny_experiment(iterations: (usize, usize, usize)) -> Experiment {
    let mut config = ExperimentConfig::default();
    let e = &mut config.experiment;
    e.pa_iterations = iterations.0;
    e.finetune_iterations = iterations.1;
    e.baseline_iterations = iterations.2;
    config.data.train_sequences = 2;
    config.data.test_sequences = 2;
    config.data.frames_per_sequence = 30;
    Experiment::new(config).unwrap()
}

fn criterion_5() -> Outcome {
    let exp = tiny_experiment((1000, 7000, 8000));
    let model = exp.init_model(5);
    let cells = [
        Cell::baseline(Scope::WholeModel, 0.6, 5),
        Cell::baseline(Scope::DecoderOnly, 0.35, 5),
    ];
    let results: Vec<(usize, usize, usize)> = cells
        .par_iter()
        .map(|&cell| {
            let done = exp.run_cell(&model, cell).unwrap();
            let w = done.finetuned.params().as_slice();
            let nonzero = done
                .stage
                .mask
                .indices()
                .iter()
                .filter(|&&i| w[i].to_bits() != 0)
                .count();
            (
                done.record.finetune_iterations,
                done.stage.mask.len(),
                nonzero,
            )
        })
        .collect();
    let pass = results
        .iter()
        .all(|&(iters, pruned, nonzero)| iters == 8000 && pruned > 0 && nonzero == 0);
    let detail = results
        .iter()
        .zip(&cells)
        .map(|((iters, pruned, nonzero), c)| {
            format!(
                "{} rate {}: {iters} iterations, {nonzero} of {pruned} pruned coordinates nonzero",
                c.scope, c.rate
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn criterion_6() -> Outcome {
    let frames = 40;
    let mut violations = 0;
    for case in 0..50u64 {
        let model = FraeModel::init(FraeConfig::default(), derive_seed(&[case, 6])).unwrap();
        let view = model.view();
        let seq = generate_synthetic(1, frames, derive_seed(&[case, 7]))
            .pop()
            .unwrap();
        let original: Vec<f64> = seq.as_flat().iter().map(|&v| v as f64).collect();
        let base = view.code_sequence(&original).unwrap();
        let mut rng = stream(derive_seed(&[case, 8]), 0, 0);
        for t in 0..frames - 1 {
            let mut changed = original.clone();
            for v in &mut changed[(t + 1) * CHANNELS..(t + 2) * CHANNELS] {
                *v = uniform(&mut rng, 0.0, 1.0);
            }
            let coded = view.code_sequence(&changed).unwrap();
            let prefix = (t + 1) * CHANNELS;
            let same = base.frames_hat[..prefix]
                .iter()
                .zip(&coded.frames_hat[..prefix])
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "50 sequences x {} perturbed frames, {violations} prefixes changed",
            frames - 1
        ),
    )
}

/// Shared state for criteria 7 and 8: references and the pruned stages of
/// both arms at every rate from 0.5 up.
struct Replication {
    config: ExperimentConfig,
    reference_fitness: Vec<f64>,
    stages: Vec<PrunedStage>,
}

const FIG23_RATES: [f64; 8] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85];

fn replicate() -> Replication {
    let config = ExperimentConfig::default();
    let exp = Experiment::new(config.clone()).unwrap();
    let seeds = config.experiment.seeds.clone();
    let started = Instant::now();
    let references: Vec<FraeModel> = seeds
        .par_iter()
        .map(|&s| exp.train_reference(s).unwrap())
        .collect();
    let reference_fitness: Vec<f64> = references
        .iter()
        .map(|r| exp.evaluate(r).unwrap())
        .collect();
    eprintln!(
        "  references trained in {:.0} s, test fitness {:?}",
        started.elapsed().as_secs_f64(),
        reference_fitness
    );

    let high: Vec<f64> = config
        .experiment
        .rate_grid
        .iter()
        .copied()
        .filter(|&r| r >= 0.5)
        .collect();
    let mut cells = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        for &rate in &high {
            cells.push((
                i,
                Cell::pa(Scope::WholeModel, rate, PerturbationKind::Linear, seed),
            ));
            cells.push((i, Cell::baseline(Scope::WholeModel, rate, seed)));
        }
        for rate in FIG23_RATES {
            cells.push((
                i,
                Cell::pa(Scope::DecoderOnly, rate, PerturbationKind::Linear, seed),
            ));
            cells.push((i, Cell::baseline(Scope::DecoderOnly, rate, seed)));
        }
    }
    let stages: Vec<PrunedStage> = cells
        .par_iter()
        .map(|&(i, cell)| exp.prune_stage(&references[i], cell).unwrap())
        .collect();
    eprintln!(
        "  {} cells pruned after {:.0} s",
        stages.len(),
        started.elapsed().as_secs_f64()
    );
    Replication {
        config,
        reference_fitness,
        stages,
    }
}

fn post_prune_median(rep: &Replication, scope: Scope, pa: bool, rate: f64) -> f64 {
    let mut values: Vec<f64> = rep
        .stages
        .iter()
        .filter(|s| s.cell.scope == scope && s.cell.rate == rate && s.cell.g_kind.is_some() == pa)
        .map(|s| s.fitness_post_prune)
        .collect();
    assert_eq!(values.len(), rep.config.experiment.seeds.len());
    median(&mut values)
}

fn criterion_7(rep: &Replication) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for scope in Scope::ALL {
        let mut at_least = 0;
        let mut strictly = 0;
        let mut gaps = Vec::new();
        for rate in FIG23_RATES {
            let pa = post_prune_median(rep, scope, true, rate);
            let baseline = post_prune_median(rep, scope, false, rate);
            at_least += usize::from(pa >= baseline);
            strictly += usize::from(pa > baseline);
            gaps.push(format!("{rate}:{:+.3}", pa - baseline));
        }
        pass &= at_least == FIG23_RATES.len() && strictly >= 5;
        parts.push(format!(
            "{scope}: PA >= baseline at {at_least}/8, > at {strictly}/8 (median gaps {})",
            gaps.join(" ")
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_8(rep: &Replication) -> Outcome {
    let seeds = &rep.config.experiment.seeds;
    let mut pass = true;
    let mut counts = Vec::new();
    let rates: Vec<f64> = rep
        .config
        .experiment
        .rate_grid
        .iter()
        .copied()
        .filter(|&r| r >= 0.5)
        .collect();
    for rate in rates {
        let below = rep
            .stages
            .iter()
            .filter(|s| {
                s.cell.scope == Scope::WholeModel && s.cell.rate == rate && s.cell.g_kind.is_some()
            })
            .filter(|s| {
                let i = seeds.iter().position(|&x| x == s.cell.seed).unwrap();
                s.fitness_pre_prune <= rep.reference_fitness[i]
            })
            .count();
        pass &= below >= 4;
        counts.push(format!("{rate}:{below}/5"));
    }
    outcome(
        pass,
        format!("seeds with PA pre-prune <= reference: {}", counts.join(" ")),
    )
}

fn criterion_9() -> Outcome {
    let mut config = ExperimentConfig::default();
    config.experiment.rate_grid = vec![0.05, 0.5, 0.95];
    config.experiment.seeds = vec![0];
    config.experiment.reference_iterations = 200;
    config.data.train_sequences = 1;
    config.data.test_sequences = 1;
    config.data.frames_per_sequence = 30;
    let exp = Experiment::new(config).unwrap();
    let report = run_sweep(&exp, None).unwrap();
    let bad = report
        .records
        .iter()
        .filter(|r| r.spsa_iterations != 8000 || r.pa_iterations + r.finetune_iterations != 8000)
        .count();
    let expected = 3 * 2 * 4;
    let fairness_enforced = {
        let mut c = ExperimentConfig::default();
        c.experiment.finetune_iterations = 6999;
        c.validate().is_err()
    };
    outcome(
        report.is_complete() && report.records.len() == expected && bad == 0 && fairness_enforced,
        format!(
            "{} cells, {} failed, {bad} with a total other than 8000; unequal budgets rejected: {fairness_enforced}",
            report.records.len(),
            report.failures.len()
        ),
    )
}

type Check = fn() -> Outcome;

fn report(n: usize, name: &str, started: Instant, result: Outcome) -> bool {
    println!(
        "criterion {n} [{}] {name}: {} ({:.1} s)",
        if result.pass { "PASS" } else { "FAIL" },
        result.detail,
        started.elapsed().as_secs_f64()
    );
    result.pass
}

fn main() -> ExitCode {
    let mut all = true;
    let quick: [(&str, Check); 6] = [
        ("pruning direction, mask and count consistency", criterion_1),
        ("SPSA reaches the optimum of a quadratic", criterion_2),
        ("gain constants", criterion_3),
        ("perturbation schedule boundaries", criterion_4),
        (
            "pruned coordinates stay zero through 8000 fine-tuning iterations",
            criterion_5,
        ),
        ("zero-delay coding", criterion_6),
    ];
    for (i, (name, check)) in quick.into_iter().enumerate() {
        let t = Instant::now();
        all &= report(i + 1, name, t, check());
    }

    let t = Instant::now();
    eprintln!("criteria 7 and 8: training references and running the pruning-aware phase");
    let rep = replicate();
    all &= report(
        7,
        "PA post-prune fitness beats the baseline (whole model and decoder only)",
        t,
        criterion_7(&rep),
    );
    all &= report(
        8,
        "PA pre-prune fitness at or below the reference",
        t,
        criterion_8(&rep),
    );

    let t = Instant::now();
    all &= report(
        9,
        "every sweep cell spends 8000 SPSA iterations",
        t,
        criterion_9(),
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
