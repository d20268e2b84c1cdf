//! Running configured experiments and writing their artifacts.
//!
//! A run writes four files to the output directory:
//!
//! * `trajectory.csv`: one row per path and time `t = 0..=T` with absolute
//!   wealth, market wealth, relative wealth and the prices cleared at `t`
//!   (empty at `t = T`);
//! * `diagnostics.csv`: the per-step diagnostic series of the first agent;
//! * `diagnostics.json`: the full report per path and an aggregate;
//! * `manifest.json`: the configuration text, effective run parameters,
//!   per-path seeds, version and wall time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{aggregate, diagnose, AggregateDiagnostics, DiagnosticsReport};
use crate::config::{Experiment, RunBlock};
use crate::error::{Error, Result};
use crate::market::{simulate, MarketTrajectory, Renormalize};

/// Command-line overrides of the run block.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

/// The run block after overrides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunParameters {
    pub horizon: usize,
    pub paths: usize,
    pub seed: u64,
    pub renormalize: Renormalize,
    pub renormalized: bool,
    pub output: PathBuf,
}

impl RunParameters {
    pub fn resolve(run: &RunBlock, o: &Overrides) -> Result<Self> {
        let horizon = o.horizon.unwrap_or(run.horizon);
        let paths = o.paths.unwrap_or(run.paths);
        if paths == 0 {
            return Err(Error::invalid("at least one path is required"));
        }
        Ok(RunParameters {
            horizon,
            paths,
            seed: o.seed.unwrap_or(run.seed),
            renormalize: run.renormalize,
            renormalized: run.renormalize.active(horizon),
            output: o.out.clone().unwrap_or_else(|| PathBuf::from(&run.output)),
        })
    }
}

/// Random source of path `path`: ChaCha8 seeded with the master seed, on
/// stream `path`.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

#[derive(Debug, Clone, Serialize)]
struct PathSeed {
    path: usize,
    seed: u64,
    stream: u64,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    generator: &'static str,
    config: &'a str,
    overrides: &'a Overrides,
    run: &'a RunParameters,
    agents: Vec<&'a str>,
    designated_agent: usize,
    seeds: Vec<PathSeed>,
    files: [&'static str; 3],
    wall_time_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
struct Diagnostics<'a> {
    designated_agent: usize,
    paths: &'a [DiagnosticsReport],
    aggregate: AggregateDiagnostics,
}

/// What [`run_experiment`] produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub parameters: RunParameters,
    pub trajectories: Vec<MarketTrajectory>,
    pub reports: Vec<DiagnosticsReport>,
    pub aggregate: AggregateDiagnostics,
}

/// Simulates and diagnoses every path; paths run in parallel and results are
/// returned in path order.
pub fn simulate_paths(exp: &Experiment, params: &RunParameters) -> Result<(Vec<MarketTrajectory>, Vec<DiagnosticsReport>)> {
    let results: Vec<Result<(MarketTrajectory, DiagnosticsReport)>> = (0..params.paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(params.seed, path);
            let traj = simulate(
                &exp.model,
                &exp.profile,
                exp.profile.initial_wealth(),
                params.horizon,
                params.renormalize,
                &mut rng,
            )?;
            let report = diagnose(&exp.model, &traj, 0)?;
            Ok((traj, report))
        })
        .collect();
    let mut trajectories = Vec::with_capacity(params.paths);
    let mut reports = Vec::with_capacity(params.paths);
    for r in results {
        let (t, d) = r?;
        trajectories.push(t);
        reports.push(d);
    }
    Ok((trajectories, reports))
}

fn num(out: &mut String, v: f64) {
    write!(out, ",{v:.16e}").expect("writing to a string");
}

/// The trajectory table; 17 significant digits per value.
pub fn trajectory_csv(trajectories: &[MarketTrajectory], agents: usize, endogenous: usize) -> String {
    let mut out = String::from("t,path,state");
    for m in 1..=agents {
        write!(out, ",v_{m}").unwrap();
    }
    out.push_str(",W");
    for m in 1..=agents {
        write!(out, ",r_{m}").unwrap();
    }
    for n in 1..=endogenous {
        write!(out, ",p_{n}").unwrap();
    }
    out.push('\n');
    for (path, traj) in trajectories.iter().enumerate() {
        for (t, st) in traj.states.iter().enumerate() {
            write!(out, "{t},{path},{}", st.state).unwrap();
            for v in st.absolute_wealth() {
                num(&mut out, v);
            }
            num(&mut out, st.market_wealth());
            for &r in &st.relative {
                num(&mut out, r);
            }
            if t < traj.horizon() {
                for p in traj.absolute_prices(t).iter() {
                    num(&mut out, *p);
                }
            } else {
                out.push_str(&",".repeat(endogenous));
            }
            out.push('\n');
        }
    }
    out
}

/// Per-step diagnostic series; missing values are empty.
pub fn diagnostics_csv(reports: &[DiagnosticsReport]) -> String {
    let mut out = String::from(
        "t,path,compensator_increment,bound_slack,numeraire_max_ratio,proximity_sum,dominance_sum,q,price_gap\n",
    );
    for (path, r) in reports.iter().enumerate() {
        let mut numeraire = r.numeraire.iter().peekable();
        for t in 0..r.compensator_increments.len() {
            write!(out, "{t},{path}").unwrap();
            num(&mut out, r.compensator_increments[t]);
            match r.bound_slack[t] {
                Some(s) => num(&mut out, s),
                None => out.push(','),
            }
            match numeraire.next_if(|n| n.t == t) {
                Some(n) => num(&mut out, n.max_ratio),
                None => out.push(','),
            }
            num(&mut out, r.proximity_partial_sums[t]);
            num(&mut out, r.dominance_partial_sums[t]);
            num(&mut out, r.q_values[t]);
            num(&mut out, r.price_gaps[t]);
            out.push('\n');
        }
    }
    out
}

/// Runs the experiment and writes its artifacts.
pub fn run_experiment(exp: &Experiment, overrides: &Overrides) -> Result<RunOutcome> {
    let started = Instant::now();
    let params = RunParameters::resolve(exp.document.config.run.get_ref(), overrides)?;
    let (trajectories, reports) = simulate_paths(exp, &params)?;
    let agg = aggregate(&reports);
    let env = exp.model.environment();
    write_artifacts(&params.output, &[
        ("trajectory.csv", trajectory_csv(&trajectories, exp.profile.len(), env.num_endogenous())),
        ("diagnostics.csv", diagnostics_csv(&reports)),
        ("diagnostics.json", serde_json::to_string_pretty(&Diagnostics {
            designated_agent: 0,
            paths: &reports,
            aggregate: agg.clone(),
        })?),
    ])?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        generator: "ChaCha8 seeded with the run seed, stream = path index",
        config: &exp.document.text,
        overrides,
        run: &params,
        agents: exp.profile.agents.iter().map(|a| a.name.as_str()).collect(),
        designated_agent: 0,
        seeds: (0..params.paths).map(|path| PathSeed { path, seed: params.seed, stream: path as u64 }).collect(),
        files: ["trajectory.csv", "diagnostics.csv", "diagnostics.json"],
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    write_artifacts(&params.output, &[("manifest.json", serde_json::to_string_pretty(&manifest)?)])?;
    Ok(RunOutcome { parameters: params, trajectories, reports, aggregate: agg })
}

fn write_artifacts(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    Ok(())
}
