use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neuroscatter::config::{hex, RunConfig};
use neuroscatter::pipeline::{self, ENERGY_FILE};
use neuroscatter::{Error, Result};

/// Simulated event-camera imaging through scattering media with a spiking
/// tracking and reconstruction network.
#[derive(Parser)]
#[command(name = "neuroscatter", version)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data generation and preprocessing.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate scenes, scattering and DVS events.
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Filter, downsample and bin event files into spike tensors.
    Preprocess {
        /// Dataset directory holding manifest.jsonl.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the network; writes checkpoints and the run record.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint: metrics, per-step frames, tracking traces.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate every sample instead of the held-out split.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        force: bool,
    },
    /// Count ACs and MACs and compare against the dense twin.
    Energy {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Summarize run, evaluation and energy artifacts.
    Report {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        energy: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let quiet = cli.quiet;
    let say = |msg: String| {
        if !quiet {
            println!("{msg}");
        }
    };
    let p = cfg.paths.clone();
    match cli.cmd {
        Cmd::Gen { out, samples } => {
            if let Some(n) = samples {
                cfg.samples = n;
            }
            let out = out.unwrap_or(p.data_dir);
            let rows = pipeline::cmd_gen(&cfg, &out)?;
            let events: usize = rows.len();
            say(format!(
                "generated {events} {:?} samples in {} (data hash {})",
                cfg.sim.mode,
                out.display(),
                hex(cfg.data_hash()?)
            ));
        }
        Cmd::Preprocess { input, out } => {
            let (input, out) = (input.unwrap_or(p.data_dir), out.unwrap_or(p.tensor_dir));
            let rows = pipeline::cmd_preprocess(&cfg, &input, &out)?;
            let mut totals = [0usize; 7];
            for r in &rows {
                for (t, v) in totals.iter_mut().zip(r.stages.as_array()) {
                    *t += v;
                }
            }
            say(format!("preprocessed {} samples into {}", rows.len(), out.display()));
            say(format!(
                "events kept per stage: raw {} roi {} activity {} stc {} antiflicker {} insect_eye {} binned {}",
                totals[0], totals[1], totals[2], totals[3], totals[4], totals[5], totals[6]
            ));
        }
        Cmd::Train {
            data,
            out,
            epochs,
            resume,
            force,
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let (data, out) = (data.unwrap_or(p.tensor_dir), out.unwrap_or(p.run_dir));
            let rec = pipeline::cmd_train(&cfg, &data, &out, resume, force, |e| {
                say(format!(
                    "epoch {:>3}  train {:.4}  test {:.4}  ssim {:.4}  mse {:.4}  track {:.5}",
                    e.epoch, e.train_loss, e.test_loss, e.test_ssim, e.test_mse, e.test_track_mse
                ))
            })?;
            say(format!("{} epochs recorded in {}", rec.epochs.len(), out.display()));
        }
        Cmd::Eval {
            checkpoint,
            data,
            out,
            all,
            force,
        } => {
            let ck = checkpoint.unwrap_or_else(|| p.run_dir.join(pipeline::CHECKPOINT_FILE));
            let (data, out) = (data.unwrap_or(p.tensor_dir), out.unwrap_or(p.eval_dir));
            let r = pipeline::cmd_eval(&cfg, &ck, &data, &out, all, force)?;
            say(format!(
                "{} samples: ssim {:.4}  mse {:.4}  track_mse {:.5}",
                r.summary.samples.len(),
                r.summary.mean_ssim,
                r.summary.mean_mse,
                r.summary.mean_track_mse
            ));
        }
        Cmd::Energy {
            checkpoint,
            data,
            out,
            force,
        } => {
            let ck = checkpoint.unwrap_or_else(|| p.run_dir.join(pipeline::CHECKPOINT_FILE));
            let data = data.unwrap_or(p.tensor_dir);
            let out = out.unwrap_or_else(|| p.eval_dir.join(ENERGY_FILE));
            let r = pipeline::cmd_energy(&cfg, &ck, &data, &out, force)?;
            for row in &r.table {
                say(format!(
                    "{}: ACs {:.4} G  MACs {:.4} G  energy {:.4} mJ",
                    row.model, row.acs_g, row.macs_g, row.energy_mj
                ));
            }
        }
        Cmd::Report { run, eval, energy } => {
            let eval = eval.unwrap_or(p.eval_dir);
            let energy = energy.unwrap_or_else(|| eval.join(ENERGY_FILE));
            print!("{}", pipeline::cmd_report(&run.unwrap_or(p.run_dir), &eval, &energy)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
