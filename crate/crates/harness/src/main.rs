use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use frae_prune::config::ExperimentConfig;
use frae_prune::core::data::{generate_split, FRAME_RATE};
use frae_prune::core::frae::raw_bitrate;
use frae_prune::core::pa_loss::PerturbationKind;
use frae_prune::core::params::{Role, Scope};
use frae_prune::format::{self, PatternLimits};
use frae_prune::plot::{emit_plot_data, rates_in, Figure};
use frae_prune::protocol::{load_records, write_records, Arm, Cell, Experiment};
use frae_prune::sweep::run_sweep;

#[derive(Parser)]
#[command(
    name = "frae-prune",
    version,
    about = "Pruning-aware SPSA training for feedback recurrent autoencoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test split, or convert CSV files, to STIM files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Convert these CSV files (one sequence each) into `imported.stim`.
        #[arg(long, num_args = 1..)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value_t = FRAME_RATE)]
        frame_rate: f64,
    },
    /// Train a reference model with plain SPSA.
    TrainReference {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one protocol cell and print its result record.
    RunCell {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        arm: Arm,
        #[arg(long)]
        scope: Scope,
        #[arg(long)]
        rate: f64,
        /// Perturbation function of the PA arm.
        #[arg(long, default_value = "linear")]
        g_kind: PerturbationKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reference checkpoint; trained from scratch when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Directory for the pruned and fine-tuned checkpoints.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run every cell of the configured grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Aggregate results.csv into one figure's series.
    PlotData {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        figure: Figure,
        /// Take the rate grid from this config instead of the results.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Describe a checkpoint, parameter vector, mask or pattern file.
    InspectCheckpoint {
        path: PathBuf,
        /// Also report the test-set fitness of a checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn gen_data(config: Option<&Path>, out_dir: &Path, csv: &[PathBuf], frame_rate: f64) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    if !csv.is_empty() {
        let mut dataset = Vec::with_capacity(csv.len());
        for path in csv {
            let seq = format::import_csv(path, frame_rate, PatternLimits::default())
                .with_context(|| format!("importing {}", path.display()))?;
            dataset.push(seq);
        }
        let out = out_dir.join("imported.stim");
        format::save_patterns(&out, &dataset)?;
        println!("wrote {} sequences to {}", dataset.len(), out.display());
        return Ok(());
    }
    let d = load_config(config)?.data;
    let split = generate_split(
        d.seed,
        d.train_sequences,
        d.test_sequences,
        d.frames_per_sequence,
    );
    for (name, set) in [("train.stim", &split.train), ("test.stim", &split.test)] {
        let out = out_dir.join(name);
        format::save_patterns(&out, set)?;
        println!("wrote {} sequences to {}", set.len(), out.display());
    }
    Ok(())
}

fn inspect(path: &Path, config: Option<&Path>) -> Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic = bytes.get(..4).unwrap_or_default();
    match magic {
        b"FRAE" => {
            let model = format::decode_checkpoint(&bytes)?;
            let c = model.config();
            println!("FRAE checkpoint");
            println!(
                "  input_dim={} latent_dim={} encoder_hidden={} decoder_hidden={} codebook_bits={}",
                c.input_dim, c.latent_dim, c.encoder_hidden, c.decoder_hidden, c.codebook_bits
            );
            println!(
                "  parameters={} weights={}",
                c.param_count(),
                c.weight_count()
            );
            println!(
                "  bitrate={} bit/s at {} frames/s",
                raw_bitrate(c, FRAME_RATE),
                FRAME_RATE
            );
            let w = model.params().as_slice();
            let part = model.partition();
            for (role, idx) in [
                (Role::EncoderWeight, part.encoder_weights()),
                (Role::DecoderWeight, part.decoder_weights()),
                (Role::Bias, part.biases()),
                (Role::Codebook, part.codebook()),
            ] {
                let zeros = idx.iter().filter(|&&i| w[i] == 0.0).count();
                println!("  {role:?}: {} entries, {zeros} exactly zero", idx.len());
            }
            if let Some(cfg) = config {
                let exp = Experiment::new(load_config(Some(cfg))?)?;
                println!("  test fitness={}", exp.evaluate(&model)?);
            }
        }
        b"PAWV" => {
            let w = format::decode_params(&bytes)?;
            let zeros = w.as_slice().iter().filter(|&&v| v == 0.0).count();
            println!(
                "parameter vector: {} entries, {zeros} exactly zero",
                w.len()
            );
        }
        b"PAWM" => {
            let m = format::decode_mask(&bytes)?;
            println!(
                "pruning mask: {} indices, rate={}, scope={}",
                m.len(),
                m.rate(),
                m.scope()
            );
        }
        b"STIM" => {
            let data = format::decode_patterns(&bytes, PatternLimits::default())?;
            let frames: usize = data.iter().map(|s| s.len()).sum();
            println!("pattern file: {} sequences, {frames} frames", data.len());
        }
        _ => bail!(
            "{}: unrecognized file magic {:?}",
            path.display(),
            String::from_utf8_lossy(magic)
        ),
    }
    Ok(())
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::GenData {
            config,
            out_dir,
            csv,
            frame_rate,
        } => gen_data(config.as_deref(), &out_dir, &csv, frame_rate)?,
        Command::TrainReference { config, seed, out } => {
            let exp = Experiment::new(load_config(config.as_deref())?)?;
            let model = exp.train_reference(seed)?;
            format::save_checkpoint(&out, &model)?;
            println!("test fitness {}", exp.evaluate(&model)?);
        }
        Command::RunCell {
            config,
            arm,
            scope,
            rate,
            g_kind,
            seed,
            reference,
            out_dir,
        } => {
            let exp = Experiment::new(load_config(config.as_deref())?)?;
            let reference = match reference {
                Some(p) => format::load_checkpoint(&p)
                    .with_context(|| format!("loading {}", p.display()))?,
                None => exp.train_reference(seed)?,
            };
            let cell = match arm {
                Arm::Pa => Cell::pa(scope, rate, g_kind, seed),
                Arm::Baseline => Cell::baseline(scope, rate, seed),
            };
            let outcome = exp.run_cell(&reference, cell)?;
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                outcome.save_checkpoints(&dir)?;
            }
            write_records(io::stdout().lock(), &[outcome.record])?;
        }
        Command::Sweep { config, out_dir } => {
            let exp = Experiment::new(load_config(config.as_deref())?)?;
            fs::create_dir_all(&out_dir)?;
            let report = run_sweep(&exp, Some(&out_dir))?;
            println!(
                "{} records, {} failed cells, results in {}",
                report.records.len(),
                report.failures.len(),
                out_dir.display()
            );
            for (figure, why) in &report.skipped_figures {
                eprintln!("{figure} not written: {why}");
            }
            for f in &report.failures {
                eprintln!("cell {} failed: {}", f.cell, f.error);
            }
            if !report.is_complete() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::PlotData {
            results,
            figure,
            config,
            out,
        } => {
            let records =
                load_records(&results).with_context(|| format!("reading {}", results.display()))?;
            let rates = match config {
                Some(p) => load_config(Some(&p))?.experiment.rate_grid,
                None => rates_in(&records),
            };
            let table = emit_plot_data(&records, figure, &rates)?;
            table.write_csv(output(out.as_deref())?)?;
        }
        Command::InspectCheckpoint { path, config } => inspect(&path, config.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
