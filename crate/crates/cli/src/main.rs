mod args;
mod commands;
mod config;
mod failure;
mod layers;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::{FileConfig, Overrides, RunConfig};
use failure::CliResult;

fn run(cli: Cli) -> CliResult<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let base = Overrides { jobs: cli.jobs, ..Default::default() };
    match cli.command {
        Command::Quantize(a) => {
            let cfg = RunConfig::resolve(
                &file,
                Overrides {
                    target_bits: a.tuning.target_bits,
                    percdamp: a.tuning.percdamp,
                    ref_loss_iterate: a.tuning.iterate,
                    ..base
                },
            )?;
            commands::quantize::run(&a.input, &a.output, &cfg, a.uniform)
        }
        Command::Allocate(a) => {
            let cfg = RunConfig::resolve(
                &file,
                Overrides {
                    target_bits: a.tuning.target_bits,
                    percdamp: a.tuning.percdamp,
                    ref_loss_iterate: a.tuning.iterate,
                    ..base
                },
            )?;
            commands::allocate::run(&a.input, a.output.as_deref(), &cfg)
        }
        Command::Synth(a) => {
            let cfg = RunConfig::resolve(&file, Overrides { seed: a.seed, ..base })?;
            commands::synth::run(&a.output, &a.shape, a.layers, cfg.seed)
        }
        Command::TransformBench(a) => {
            let cfg = RunConfig::resolve(
                &file,
                Overrides {
                    seed: a.seed,
                    block_size: a.block_size,
                    transform_mode: a.mode,
                    probe_bits: a.probe_bits,
                    percdamp: a.percdamp,
                    ..base
                },
            )?;
            commands::bench::run(a.input.as_deref(), &a.output, &a.shape, a.seeds, &cfg)
        }
        Command::Verify(a) => {
            let cfg = RunConfig::resolve(&file, Overrides { percdamp: a.percdamp, ..base })?;
            commands::verify::run(&a.packed, &a.reference, a.calib.as_deref(), cfg.percdamp)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
