use std::path::PathBuf;
use std::process::ExitCode;

use amc_cli::commands::{self, Outcome};
use amc_cli::{load_config, CalcQuery, RunConfig};
use amc_core::agent::Method;
use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "amc", version, about = "Adaptive memory crystallization experiments")]
struct Cli {
    /// Layered JSON config (`defaults` then `overrides`); run manifests are accepted too.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an ensemble of crystallization paths and check the closed forms.
    SdeEnsemble {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Evolve the density equation and compare with the stationary law.
    FpSolve {
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Train on the reward-flip task suite.
    Continual {
        #[arg(long, value_enum, default_value_t = MethodArg::Amc)]
        method: MethodArg,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Half-open seed range `A..B`.
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        ablations: AblationFlags,
    },
    /// Print closed-form quantities as JSON.
    Calc {
        #[command(subcommand)]
        query: CalcCommand,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Amc,
    Vanilla,
    Prioritized,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Amc => Method::Amc,
            MethodArg::Vanilla => Method::Vanilla,
            MethodArg::Prioritized => Method::Prioritized,
        }
    }
}

#[derive(Args, Debug, Default)]
struct AblationFlags {
    #[arg(long)]
    no_crystallization: bool,
    #[arg(long)]
    no_lr_modulation: bool,
    #[arg(long)]
    no_interference: bool,
    #[arg(long)]
    no_novelty: bool,
    #[arg(long)]
    no_downstream: bool,
    #[arg(long)]
    single_buffer: bool,
    #[arg(long)]
    zero_sigma: bool,
    #[arg(long)]
    random_downstream: bool,
}

#[derive(Subcommand, Debug)]
enum CalcCommand {
    FixedPoint {
        #[arg(long, default_value_t = 0.5)]
        utility: f64,
        #[arg(long, default_value_t = 0.1)]
        interference: f64,
    },
    Stationary {
        #[arg(long, default_value_t = 0.5)]
        u_bar: f64,
        #[arg(long, default_value_t = 0.1)]
        i_bar: f64,
    },
    Occupancy {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long, default_value_t = 0.3)]
        tau_l: f64,
        #[arg(long, default_value_t = 0.7)]
        tau_c: f64,
    },
    Capacity {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 1.0)]
        r_max: f64,
        #[arg(long)]
        sa_count: f64,
        #[arg(long)]
        f_c: f64,
    },
    Qbound {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        r_max: f64,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
        #[arg(long)]
        f_c: f64,
        #[arg(long)]
        n_c: f64,
    },
    Fstar {
        #[arg(long, default_value_t = 0.5)]
        u_bar: f64,
        #[arg(long, default_value_t = 0.1)]
        i_bar: f64,
    },
    EffectiveLr {
        #[arg(long, default_value_t = 1.0)]
        eta_base: f64,
        #[arg(long)]
        c: f64,
    },
}

impl From<CalcCommand> for CalcQuery {
    fn from(c: CalcCommand) -> Self {
        match c {
            CalcCommand::FixedPoint { utility, interference } => CalcQuery::FixedPoint { utility, interference },
            CalcCommand::Stationary { u_bar, i_bar } => CalcQuery::Stationary { u_bar, i_bar },
            CalcCommand::Occupancy { a, b, tau_l, tau_c } => CalcQuery::Occupancy { a, b, tau_l, tau_c },
            CalcCommand::Capacity { epsilon, delta, gamma, lipschitz, r_max, sa_count, f_c } => {
                CalcQuery::Capacity { epsilon, delta, gamma, lipschitz, r_max, sa_count, f_c }
            }
            CalcCommand::Qbound { gamma, r_max, lipschitz, f_c, n_c } => {
                CalcQuery::QBound { gamma, r_max, lipschitz, f_c, n_c }
            }
            CalcCommand::Fstar { u_bar, i_bar } => CalcQuery::FStar { u_bar, i_bar },
            CalcCommand::EffectiveLr { eta_base, c } => CalcQuery::EffectiveLr { eta_base, c },
        }
    }
}

fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let Some((a, b)) = s.split_once("..") else {
        bail!("seed range must look like A..B, got {s:?}");
    };
    let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
    if a >= b {
        bail!("empty seed range {s:?}");
    }
    Ok((a..b).collect())
}

fn apply_ablations(cfg: &mut RunConfig, f: &AblationFlags) {
    let a = &mut cfg.ablations;
    a.no_crystallization |= f.no_crystallization;
    a.no_lr_modulation |= f.no_lr_modulation;
    a.no_interference |= f.no_interference;
    a.no_novelty |= f.no_novelty;
    a.no_downstream |= f.no_downstream;
    a.single_buffer |= f.single_buffer;
    a.zero_sigma |= f.zero_sigma;
    a.random_downstream |= f.random_downstream;
}

enum Done {
    Ran(Outcome),
    Printed,
}

fn run(cli: Cli) -> Result<Done> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let outcome = match cli.command {
        Command::SdeEnsemble { seed, paths, horizon } => {
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(p) = paths {
                cfg.ensemble.paths = p;
            }
            if let Some(h) = horizon {
                cfg.ensemble.horizon = h;
            }
            cfg.validate()?;
            commands::sde_ensemble(&cfg, cfg.seeds[0], &cli.out)?
        }
        Command::FpSolve { nodes, t_final } => {
            if let Some(n) = nodes {
                cfg.fp.nodes = n;
            }
            if let Some(t) = t_final {
                cfg.fp.t_final = t;
            }
            cfg.validate()?;
            commands::fp_solve(&cfg, &cli.out)?
        }
        Command::Continual { method, seed, seeds, ablations } => {
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            if let Some(r) = seeds {
                cfg.seeds = parse_seed_range(&r)?;
            }
            apply_ablations(&mut cfg, &ablations);
            cfg.validate()?;
            commands::continual(&cfg, method.into(), &cli.out)?
        }
        Command::Calc { query } => {
            let value = commands::calc(&cfg, &query.into())?;
            println!("{}", serde_json::to_string_pretty(&value)?);
            return Ok(Done::Printed);
        }
    };
    Ok(Done::Ran(outcome))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Done::Printed) => ExitCode::SUCCESS,
        Ok(Done::Ran(outcome)) => {
            println!("{}", outcome.report.summary());
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": chain.join(": ") }));
            ExitCode::from(2)
        }
    }
}
