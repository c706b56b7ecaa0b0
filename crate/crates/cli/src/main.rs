use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icft::harness::{self, Overrides, TrainOptions};
use icft::train::LossMode;

#[derive(Parser)]
#[command(name = "icft", version, about = "Staged adapter / memory / LoRA fine-tuning on a small transformer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the three-stage schedule and write a checkpoint and metrics log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Stop after this many steps; the checkpoint can be resumed later.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy-decode prompts and print a JSON metric report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL eval set; defaults to the checkpoint's training corpus.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Include per-example generations in the output.
        #[arg(long)]
        per_example: bool,
    },
    /// Print trainable-parameter counts for each fine-tuning mode.
    CountParams {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        json: bool,
    },
    /// Print the STM and LTM contents of a checkpoint.
    InspectMemory {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    no_curriculum: bool,
    #[arg(long)]
    no_lora: bool,
    /// staged | joint
    #[arg(long)]
    loss_mode: Option<LossMode>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            no_memory: self.no_memory,
            no_curriculum: self.no_curriculum,
            no_lora: self.no_lora,
            loss_mode: self.loss_mode,
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn run(cli: Cli) -> icft::Result<()> {
    match cli.cmd {
        Cmd::Train { run, max_steps, resume } => {
            let out = harness::cmd_train(&run.config, &run.overrides(), &TrainOptions { max_steps, resume })?;
            println!("{}", json(&out));
        }
        Cmd::Eval {
            checkpoint,
            data,
            per_example,
        } => {
            let out = harness::cmd_eval(&checkpoint, data.as_deref())?;
            if per_example {
                println!("{}", json(&out));
            } else {
                println!("{}", json(&out.report));
            }
        }
        Cmd::CountParams { run, json: as_json } => {
            let t = harness::cmd_count_params(&run.config, &run.overrides())?;
            if as_json {
                println!("{}", json(&t));
            } else {
                print!("{}", t.render());
            }
        }
        Cmd::InspectMemory { checkpoint } => {
            print!("{}", harness::cmd_inspect_memory(&checkpoint)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
