use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use amc_core::agent::{run_continual, Method, RunResult};
use amc_core::analysis::{mean, Verdict, VerdictReport};
use amc_core::ensemble::{even_checkpoints, simulate_ensemble, Drive, EnsembleSpec, EnsembleSummary};
use amc_core::envs::make_reward_flip_sequence;
use amc_core::fp::{fp_evolve, fp_stationary_error, DensityGrid};
use amc_core::memory::{capacity_bound, effective_lr, optimal_crystal_fraction, qlearning_error_bound};
use amc_core::par::{map_indexed, Execution};
use amc_core::sde::{
    discrete_mean_trajectory, fixed_point, phase_occupancy, stationary_beta, BetaStationary, CrystallizationState,
};
use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{InitialDensity, RunConfig};

/// Fixed column order of the per-episode metrics file.
pub const METRICS_HEADER: [&str; 9] = [
    "step",
    "task",
    "return",
    "n_liquid",
    "n_glass",
    "n_crystal",
    "mean_c_liquid",
    "mean_c_glass",
    "mean_c_crystal",
];

/// Files written by a command plus its verdicts.
#[derive(Debug)]
pub struct Outcome {
    pub report: VerdictReport,
    pub files: Vec<PathBuf>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Manifest in config-document shape so it can be passed back via `--config`.
fn write_manifest(out: &Path, command: Value, cfg: &RunConfig) -> Result<PathBuf> {
    let path = out.join("manifest.json");
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "defaults": cfg,
    });
    write_json(&path, &doc)?;
    Ok(path)
}

fn finish(out: &Path, command: Value, cfg: &RunConfig, report: VerdictReport, mut files: Vec<PathBuf>) -> Result<Outcome> {
    files.push(write_manifest(out, command, cfg)?);
    let verdict = out.join("verdict.json");
    write_json(&verdict, &json!({ "pass": report.all_pass(), "verdicts": report.verdicts }))?;
    files.push(verdict);
    Ok(Outcome { report, files })
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

pub fn ensemble_spec(cfg: &RunConfig, seed: u64) -> EnsembleSpec {
    let e = &cfg.ensemble;
    EnsembleSpec {
        params: cfg.sde,
        drive: Drive::constant(e.utility, e.interference),
        c0: e.c0,
        paths: e.paths,
        checkpoints: even_checkpoints(e.horizon, e.checkpoints),
        keep_samples: false,
        seed,
    }
}

pub fn ensemble_verdicts(cfg: &RunConfig, spec: &EnsembleSpec, summary: &EnsembleSummary) -> Result<VerdictReport> {
    let e = &cfg.ensemble;
    let p = &cfg.sde;
    let mut report = VerdictReport::default();
    let Ok(fp) = fixed_point(e.utility, e.interference, p) else {
        return Ok(report);
    };
    let c0 = CrystallizationState::new(e.c0)?;
    if p.sigma == 0.0 {
        let worst = summary
            .checkpoints
            .iter()
            .zip(&spec.checkpoints)
            .zip(&summary.means)
            .map(|((_, &step), m)| (m - discrete_mean_trajectory(c0, &fp, p.dt, step)).abs())
            .chain(
                summary
                    .terminal_samples
                    .iter()
                    .map(|x| (x - discrete_mean_trajectory(c0, &fp, p.dt, spec.horizon())).abs()),
            )
            .fold(0.0, f64::max);
        report.push(Verdict::at_most("noise-free paths follow the mean recursion", worst, 1e-12));
        return Ok(report);
    }
    let ceiling = fp.variance_ceiling * 1.05;
    let worst = summary.variances.iter().copied().fold(0.0, f64::max);
    report.push(Verdict::at_most("variance below ceiling at every checkpoint", worst, ceiling));
    let relaxed = spec.horizon() as f64 * p.dt >= 10.0 * fp.relaxation_time();
    if let (true, Ok(law)) = (relaxed, stationary_beta(p, e.utility, e.interference)) {
        let terminal = *summary.means.last().expect("at least one checkpoint");
        report.push(Verdict::within("terminal mean matches stationary mean", terminal, law.mean(), e.mean_tolerance));
    }
    Ok(report)
}

pub fn sde_ensemble(cfg: &RunConfig, seed: u64, out: &Path) -> Result<Outcome> {
    prepare(out)?;
    let spec = ensemble_spec(cfg, seed);
    let summary = simulate_ensemble(&spec, Execution::default())?;
    let csv = out.join("ensemble.csv");
    summary.write_csv(create(&csv)?)?;
    let report = ensemble_verdicts(cfg, &spec, &summary)?;
    finish(out, json!({ "name": "sde-ensemble", "seed": seed }), cfg, report, vec![csv])
}

pub fn initial_density(cfg: &RunConfig) -> Result<DensityGrid> {
    Ok(match cfg.fp.initial {
        InitialDensity::Uniform => DensityGrid::uniform(cfg.fp.nodes)?,
        InitialDensity::Bump { centre, width } => DensityGrid::gaussian_bump(cfg.fp.nodes, centre, width)?,
    })
}

pub fn fp_solve(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    prepare(out)?;
    let f = &cfg.fp;
    let initial = initial_density(cfg)?;
    let density = fp_evolve(&initial, &cfg.sde, f.u_bar, f.i_bar, f.t_final)?;
    let csv = out.join("density.csv");
    density.write_csv(create(&csv)?)?;

    let mut report = VerdictReport::default();
    report.push(Verdict::at_most("mass conserved", (density.mass() - 1.0).abs(), 1e-9));
    if f.t_final == 0.0 {
        report.push(Verdict::at_most("zero horizon returns the initial density", density.l1_distance(&initial)?, 0.0));
    }
    let law = stationary_beta(&cfg.sde, f.u_bar, f.i_bar);
    let fp = fixed_point(f.u_bar, f.i_bar, &cfg.sde);
    if let (Ok(law), Ok(fp)) = (law, fp) {
        if f.t_final >= 10.0 * fp.relaxation_time() {
            let err = fp_stationary_error(&density, &law)?;
            report.push(Verdict::at_most("L1 distance to stationary law", err, f.l1_tolerance));
        }
    }
    finish(out, json!({ "name": "fp-solve" }), cfg, report, vec![csv])
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: std::io::Write>(run: &RunResult, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(METRICS_HEADER)?;
    for row in &run.episodes {
        wr.write_record([
            row.step.to_string(),
            (row.task + 1).to_string(),
            row.ret.to_string(),
            row.occupancy[0].to_string(),
            row.occupancy[1].to_string(),
            row.occupancy[2].to_string(),
            opt(row.mean_c[0]),
            opt(row.mean_c[1]),
            opt(row.mean_c[2]),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Mean over seeds of each metric; absent values are skipped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricMeans {
    pub average_performance: f64,
    pub forward_transfer: Option<f64>,
    pub backward_transfer: Option<f64>,
    /// Runs that never solved the first task count as zero retention.
    pub task1_retention: f64,
    pub task1_q_drift: Option<f64>,
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

pub fn metric_means(runs: &[RunResult]) -> MetricMeans {
    let ap: Vec<f64> = runs.iter().map(|r| r.metrics.average_performance).collect();
    let ret: Vec<f64> = runs.iter().map(|r| r.metrics.task1_retention.unwrap_or(0.0)).collect();
    MetricMeans {
        average_performance: mean(&ap),
        forward_transfer: mean_of(runs.iter().map(|r| r.metrics.forward_transfer)),
        backward_transfer: mean_of(runs.iter().map(|r| r.metrics.backward_transfer)),
        task1_retention: mean(&ret),
        task1_q_drift: mean_of(runs.iter().map(|r| r.task1_q_drift)),
    }
}

/// Run every seed (in parallel when available), results sorted by seed.
pub fn run_seeds(cfg: &RunConfig, method: Method) -> Result<Vec<RunResult>> {
    let suite = make_reward_flip_sequence(&cfg.suite, cfg.suite_seed)?;
    let spec = cfg.run_spec();
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let runs = map_indexed(seeds.len(), Execution::default(), |i| run_continual(method, &suite, &spec, seeds[i]));
    runs.into_iter().map(|r| r.map_err(Into::into)).collect()
}

pub fn continual(cfg: &RunConfig, method: Method, out: &Path) -> Result<Outcome> {
    prepare(out)?;
    let runs = run_seeds(cfg, method)?;
    let mut files = Vec::new();
    let mut report = VerdictReport::default();
    for run in &runs {
        let path = out.join(format!("metrics_seed{}.csv", run.seed));
        write_metrics_csv(run, create(&path)?)?;
        files.push(path);
        report.push(Verdict::at_most(
            format!("seed {}: value projection inactive", run.seed),
            run.q.projections() as f64,
            0.0,
        ));
    }
    let suite = make_reward_flip_sequence(&cfg.suite, cfg.suite_seed)?;
    let suite_path = out.join("suite.json");
    fs::write(&suite_path, suite.to_json()? + "\n").with_context(|| format!("cannot write {}", suite_path.display()))?;
    files.push(suite_path);
    let per_seed: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "metrics": r.metrics,
                "eval": r.eval,
                "scratch": r.scratch,
                "task1_q_drift": r.task1_q_drift,
            })
        })
        .collect();
    let aggregate = out.join("aggregate.json");
    write_json(
        &aggregate,
        &json!({
            "method": method.name(),
            "ablations": cfg.ablations,
            "seeds": runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "mean": metric_means(&runs),
            "runs": per_seed,
        }),
    )?;
    files.push(aggregate);
    finish(out, json!({ "name": "continual", "method": method.name() }), cfg, report, files)
}

/// Closed-form quantities printed by `calc`.
#[derive(Debug, Clone, PartialEq)]
pub enum CalcQuery {
    FixedPoint { utility: f64, interference: f64 },
    Stationary { u_bar: f64, i_bar: f64 },
    Occupancy { a: f64, b: f64, tau_l: f64, tau_c: f64 },
    Capacity { epsilon: f64, delta: f64, gamma: f64, lipschitz: f64, r_max: f64, sa_count: f64, f_c: f64 },
    QBound { gamma: f64, r_max: f64, lipschitz: f64, f_c: f64, n_c: f64 },
    FStar { u_bar: f64, i_bar: f64 },
    EffectiveLr { eta_base: f64, c: f64 },
}

pub fn calc(cfg: &RunConfig, q: &CalcQuery) -> Result<Value> {
    let p = &cfg.sde;
    Ok(match *q {
        CalcQuery::FixedPoint { utility, interference } => {
            let fp = fixed_point(utility, interference, p)?;
            json!({
                "c_star": fp.c_star,
                "lambda": fp.lambda,
                "variance_ceiling": fp.variance_ceiling,
                "relaxation_time": fp.relaxation_time(),
            })
        }
        CalcQuery::Stationary { u_bar, i_bar } => {
            let law = stationary_beta(p, u_bar, i_bar)?;
            json!({ "a": law.a_shape, "b": law.b_shape, "mean": law.mean(), "variance": law.variance(), "mode": law.mode() })
        }
        CalcQuery::Occupancy { a, b, tau_l, tau_c } => {
            let occ = phase_occupancy(&BetaStationary::new(a, b)?, tau_l, tau_c)?;
            json!({ "liquid": occ.liquid, "glass": occ.glass, "crystal": occ.crystal })
        }
        CalcQuery::Capacity { epsilon, delta, gamma, lipschitz, r_max, sa_count, f_c } => {
            json!({ "capacity": capacity_bound(epsilon, delta, gamma, lipschitz, r_max, sa_count, f_c)? })
        }
        CalcQuery::QBound { gamma, r_max, lipschitz, f_c, n_c } => {
            json!({ "error_bound": qlearning_error_bound(gamma, r_max, lipschitz, f_c, n_c)? })
        }
        CalcQuery::FStar { u_bar, i_bar } => {
            let f = optimal_crystal_fraction(p, u_bar, i_bar)?;
            let c = fixed_point(u_bar, i_bar, p)?.c_star;
            json!({ "f_c_star": f, "c_star": c })
        }
        CalcQuery::EffectiveLr { eta_base, c } => {
            json!({ "effective_lr": effective_lr(eta_base, CrystallizationState::new(c)?) })
        }
    })
}
