use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sketch2cad_cli::commands::{self, InferInput};
use sketch2cad_cli::{CliError, Result, SEED_ENV};
use sketch2cad_core::dataset::GenConfig;
use sketch2cad_nets::{Regime, Stage};

#[derive(Parser)]
#[command(name = "sketch2cad", version, about = "Parse CAD sketches into primitives and constraints")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Primitive,
    Constraint,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Primitive => Stage::Primitive,
            StageArg::Constraint => Stage::Constraint,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Noiseless,
    Noisy,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Noiseless => Regime::Noiseless,
            RegimeArg::Noisy => Regime::Noisy,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus file.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Render hand-drawn style images.
        #[arg(long, overrides_with = "no_noise")]
        noise: bool,
        #[arg(long)]
        no_noise: bool,
        #[arg(long)]
        min_primitives: Option<usize>,
        #[arg(long)]
        max_primitives: Option<usize>,
        #[arg(long)]
        constraint_density: Option<f64>,
        #[arg(long)]
        construction_prob: Option<f64>,
    },
    /// Train one stage into a checkpoint directory (resumes if it exists).
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "noiseless")]
        regime: RegimeArg,
    },
    /// Evaluate a checkpoint on a corpus and print a JSON report.
    Eval {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "noiseless")]
        regime: RegimeArg,
        /// Also report accuracy after snapping to the ground-truth constraints.
        #[arg(long)]
        apply_constraints: bool,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse one image (or primitive-only sketch) into sketch JSON.
    Infer {
        #[arg(long, conflicts_with = "sketch", required_unless_present = "sketch")]
        image: Option<PathBuf>,
        #[arg(long)]
        sketch: Option<PathBuf>,
        #[arg(long)]
        prim_ckpt: Option<PathBuf>,
        #[arg(long)]
        cons_ckpt: PathBuf,
        #[arg(long)]
        snap: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a PNG of the predictions over the input.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n")).map_err(|e| CliError::io(p, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            n,
            seed,
            out,
            noise,
            no_noise: _,
            min_primitives,
            max_primitives,
            constraint_density,
            construction_prob,
        } => {
            let d = GenConfig::default();
            let gen = GenConfig {
                seed,
                min_primitives: min_primitives.unwrap_or(d.min_primitives),
                max_primitives: max_primitives.unwrap_or(d.max_primitives),
                constraint_density: constraint_density.unwrap_or(d.constraint_density),
                construction_prob: construction_prob.unwrap_or(d.construction_prob),
                ..d
            };
            let summary = commands::gen_data(&commands::GenData { n, out, noise, gen })?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Cmd::Train {
            stage,
            corpus,
            config,
            out,
            regime,
        } => {
            let last = commands::train(&commands::Train {
                stage: stage.into(),
                corpus,
                config,
                out,
                regime: regime.into(),
            })?;
            if let Some(r) = last {
                println!("{}", serde_json::to_string(&r).expect("record serializes"));
            }
        }
        Cmd::Eval {
            stage,
            checkpoint,
            corpus,
            regime,
            apply_constraints,
            seed,
            out,
        } => {
            let report = commands::eval(&commands::Eval {
                stage: stage.into(),
                checkpoint,
                corpus,
                regime: regime.into(),
                apply_constraints,
                seed,
            })?;
            emit(&serde_json::to_string_pretty(&report).expect("report serializes"), out.as_ref())?;
        }
        Cmd::Infer {
            image,
            sketch,
            prim_ckpt,
            cons_ckpt,
            snap,
            out,
            overlay,
        } => {
            let input = match (image, sketch) {
                (Some(p), _) => InferInput::Image(p),
                (None, Some(p)) => InferInput::Sketch(p),
                (None, None) => return Err(CliError::Config("one of --image or --sketch is required".into())),
            };
            let s = commands::infer(&commands::Infer {
                input,
                prim_ckpt,
                cons_ckpt,
                snap,
                overlay,
            })?;
            emit(&commands::sketch_json(&s), out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
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
