//! `coex`: run, ablate, evaluate and inspect exploration experiments.
//!
//! Exit codes: 0 when the step budget completed, 1 on any error, 2 on bad
//! usage, 3 when a run stopped early at `--stop-after`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coex::experiment::{
    run_ablation_suite, AblationAxis, Experiment, ExperimentConfig, RunOutcome, CONFIG_PRESETS,
};

// Training allocates and frees large tensors every step; the system
// allocator returns them to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Environment variable naming the directory relative output paths resolve
/// against.
const OUTPUT_ROOT_VAR: &str = "COEX_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "coex", version, about = "Contingency-aware exploration experiments")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_VAR, default_value = "runs")]
    output_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment preset.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config leaf, e.g. `--set trainer.gamma=0.98`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let value = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            (None, Some(name)) => serde_json::to_value(ExperimentConfig::preset(name)?)?,
            (None, None) => bail!(
                "give --config FILE or --preset NAME (presets: {})",
                CONFIG_PRESETS.join(", ")
            ),
        };
        let cfg = ExperimentConfig::from_value_with_overrides(value, &self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one seeded run until its step budget.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a run checkpoint instead of starting fresh.
        #[arg(long, conflicts_with_all = ["config", "preset", "overrides"])]
        resume: Option<PathBuf>,
        /// Stop after this many iterations and write a checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Print the resolved config and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Run the four variants of an ablation axis for every seed.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// adm-losses or psi-components.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint's policy on fresh episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Rollouts to run.
        #[arg(long, default_value_t = 100)]
        iterations: u64,
        /// Write the report here as JSON as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write attention heatmaps of a checkpoint's model as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        iterations: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(root: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        root.join(dir)
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let root = &cli.output_root;
    match cli.command {
        Command::Run {
            config,
            out,
            resume,
            stop_after,
            print_config,
        } => {
            let mut exp = match resume {
                Some(ckpt) => {
                    let probe = Experiment::load(&ckpt, &std::env::temp_dir())
                        .with_context(|| format!("loading {}", ckpt.display()))?;
                    let dir = resolve(root, out.as_deref().unwrap_or(Path::new(&probe.config().output_dir)));
                    drop(probe);
                    Experiment::resume(&ckpt, &dir)?
                }
                None => {
                    let cfg = config.load()?;
                    if print_config {
                        println!("{}", cfg.to_json());
                        return Ok(ExitCode::SUCCESS);
                    }
                    let dir = resolve(root, out.as_deref().unwrap_or(Path::new(&cfg.output_dir)));
                    Experiment::new(cfg, &dir)?
                }
            };
            match exp.run(stop_after)? {
                RunOutcome::Completed(art) => {
                    println!("{}", serde_json::to_string_pretty(&art.summary)?);
                    eprintln!("run complete: {}", art.out_dir.display());
                    Ok(ExitCode::SUCCESS)
                }
                RunOutcome::Stopped { iteration, checkpoint } => {
                    eprintln!(
                        "stopped after iteration {iteration} before the step budget; resume with --resume {}",
                        checkpoint.display()
                    );
                    Ok(ExitCode::from(3))
                }
            }
        }
        Command::Ablate {
            config,
            axis,
            seeds,
            out,
        } => {
            let cfg = config.load()?;
            let axis: AblationAxis = axis.parse()?;
            let default = format!("{}-ablate-{axis}", cfg.output_dir);
            let dir = resolve(root, out.as_deref().unwrap_or(Path::new(&default)));
            let table = run_ablation_suite(&cfg, axis, &seeds, &dir)?;
            print!("{}", table.to_csv());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            iterations,
            out,
        } => {
            let exp = Experiment::load(&checkpoint, &std::env::temp_dir())?;
            let report = exp.evaluate(iterations, None)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                fs::write(resolve(root, &path), text + "\n")?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportAttention {
            checkpoint,
            iterations,
            out,
        } => {
            let exp = Experiment::load(&checkpoint, &std::env::temp_dir())?;
            if exp.explorer().adm.is_none() {
                bail!("checkpoint has no dynamics model");
            }
            let path = resolve(root, &out);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(fs::File::create(&path)?);
            exp.evaluate(iterations, Some(&mut w))?;
            std::io::Write::flush(&mut w)?;
            eprintln!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
