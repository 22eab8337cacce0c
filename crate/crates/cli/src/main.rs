use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

mod args;
mod commands;
mod config;
mod output;

use args::{Cli, Command, Common};
use config::{RunConfig, RESOLVED_NAME};
use output::OutDir;

type Runner = fn(&RunConfig, &OutDir) -> Result<String>;

fn resolve(common: &Common, overrides: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    common.apply(&mut cfg);
    overrides(&mut cfg);
    cfg.propagate_seed();
    Ok(cfg)
}

fn prepare(cli: &Cli) -> Result<(RunConfig, Runner)> {
    let (cfg, runner): (RunConfig, Runner) = match &cli.command {
        Command::FitOls(common) => (resolve(common, |_| {})?, commands::fit_ols_cmd),
        Command::FitSar { common, sar } => (resolve(common, |c| sar.apply(c))?, commands::fit_sar_cmd),
        Command::FitAdmm { common, admm } => (resolve(common, |c| admm.apply(c))?, commands::fit_admm_cmd),
        Command::Sweep { common, admm, sweep } => (
            resolve(common, |c| {
                admm.apply(c);
                sweep.apply(c);
            })?,
            commands::sweep_cmd,
        ),
        Command::Cluster { common, admm, cluster } => (
            resolve(common, |c| {
                admm.apply(c);
                cluster.apply(c);
            })?,
            commands::cluster_cmd,
        ),
        Command::Submarkets { common, admm, cluster, clusters, per_cluster } => (
            resolve(common, |c| {
                admm.apply(c);
                cluster.apply(c);
                if let Some(path) = clusters {
                    c.submarkets.clusters = Some(path.clone());
                }
                if let Some(k) = per_cluster {
                    c.submarkets.per_cluster = *k;
                }
            })?,
            commands::submarkets_cmd,
        ),
        Command::Spillover { common, admm, spill } => (
            resolve(common, |c| {
                admm.apply(c);
                spill.apply(c);
            })?,
            commands::spillover_cmd,
        ),
        Command::Synth { common, synth } => (resolve(common, |c| synth.apply(c))?, commands::synth_cmd),
        Command::Bench { common, bench } => (resolve(common, |c| bench.apply(c))?, commands::bench_cmd),
    };
    Ok((cfg, runner))
}

fn run(cli: &Cli) -> Result<String> {
    let (cfg, runner) = prepare(cli)?;
    let out = OutDir::create(&cfg.out)?;
    std::fs::write(out.file(RESOLVED_NAME), cfg.to_toml()?)?;
    runner(&cfg, &out)
}

/// Module named in diagnostics: the library module for library errors,
/// `cli` for everything else.
fn module_of(err: &anyhow::Error) -> &'static str {
    err.chain().find_map(|e| e.downcast_ref::<sarlearn::Error>()).map_or("cli", sarlearn::Error::module)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error [{}]: {:#}", module_of(&err), err);
            ExitCode::from(1)
        }
    }
}
