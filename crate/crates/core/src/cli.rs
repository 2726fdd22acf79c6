//! Command-line front end: one subcommand per model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::beckmann::{self, EquilibriumResult};
use crate::dynamics::{self, AveragingParams, AveragingReport, Dynamics, DynamicsState, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::exchange_chain::{self, ChainConfig, ConcentrationReport};
use crate::formats::{self, fmt_num, to_json, ChainSpec, DynamicsSpec, NetworkFile};
use crate::network::{Network, RouteSet};
use crate::od_entropy;

#[derive(Debug, Parser)]
#[command(name = "wardrop-lab", version, about = "Entropy trip distribution and Wardrop equilibrium experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: ScenarioConfig,
}

#[derive(Debug, Clone, Subcommand)]
pub enum ScenarioConfig {
    /// Balance a zone file into the entropy-optimal correspondence matrix.
    OdBalance {
        zones: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Simulate the resident/worker exchange chain.
    ExchangeSim {
        zones: PathBuf,
        /// File with a `chain pL <v> seed <u64> steps <count>` line.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        p_l: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Trajectory thinning for the CSV output.
        #[arg(long, default_value_t = 1000)]
        stride: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3,4,6,8")]
        lambda_grid: Vec<f64>,
        /// CSV trajectory `step,i,j,count`.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Solve for the Wardrop equilibrium by Frank-Wolfe.
    Equilibrium {
        network: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_iter: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the logit-imitation dynamics.
    Dynamics {
        network: PathBuf,
        /// File with a `dynamics ...` line; overrides the one in the network file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        stride: Option<u64>,
        /// Players per unit of demand.
        #[arg(long)]
        players: Option<u64>,
        /// Independent replicas; more than one adds a replica summary.
        #[arg(long, default_value_t = 1)]
        replicas: usize,
        /// CSV trajectory `n,route_id,count,psi,gap` of replica 0.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Tail frequencies of the time-averaged potential under constant steps.
    Averaging {
        network: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 10_000)]
        horizon: u64,
        #[arg(long, default_value_t = 200)]
        replicas: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
        omega_grid: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        players: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Compare solver, entropy projection and dynamics limits path by path.
    CompareProjection {
        network: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Structured error message written to stderr.
pub fn error_json(e: &Error) -> String {
    let kind = match e {
        Error::Parse { .. } => "parse",
        Error::NonConvergence { .. } => "non_convergence",
        Error::InfeasibleMarginals { .. } => "infeasible_marginals",
        Error::InvalidInput(_) => "invalid_input",
        Error::StateSpaceTooLarge { .. } => "state_space_too_large",
        Error::NoRouteForOd(_) => "no_route_for_od",
        Error::RouteExplosion { .. } => "route_explosion",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InfeasibleFlow(_) => "infeasible_flow",
        Error::Unattainable { .. } => "unattainable",
        Error::Domain(_) => "domain",
        Error::Io { .. } => "io",
    };
    let mut v = json!({ "error": kind, "exit_code": e.exit_code(), "message": e.to_string() });
    if let Error::Parse { file, line, .. } = e {
        v["file"] = json!(file.display().to_string());
        v["line"] = json!(line);
    }
    v.to_string()
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io { path: p.to_path_buf(), source }),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|source| Error::Io { path: PathBuf::from("<stdout>"), source })
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<()> {
    match cfg {
        ScenarioConfig::OdBalance { zones, tol, max_iter, output } => {
            let zf = formats::load_zone_file(zones)?;
            let r = od_entropy::balance(&zf.zones, *tol, *max_iter)?;
            emit(output.as_deref(), &to_json(&od_balance_output(&r)))
        }
        ScenarioConfig::ExchangeSim { zones, config, p_l, seed, steps, stride, lambda_grid, csv, output } => {
            let zf = formats::load_zone_file(zones)?;
            let mut spec = zf.chain.unwrap_or(ChainSpec { p_l: 1.0, seed: 0, steps: 1_000_000 });
            if let Some(path) = config {
                let (chain, _) = formats::parse_config_file(path, &formats::read_to_string(path)?)?;
                spec = chain.ok_or_else(|| Error::Parse {
                    file: path.clone(),
                    line: 0,
                    msg: "no `chain` line".into(),
                })?;
            }
            spec.p_l = p_l.unwrap_or(spec.p_l);
            spec.seed = seed.unwrap_or(spec.seed);
            spec.steps = steps.unwrap_or(spec.steps);
            let sim = exchange_sim(&zf.zones, &spec, *stride, lambda_grid)?;
            if let Some(path) = csv {
                write_file(path, &sim.csv)?;
            }
            emit(output.as_deref(), &to_json(&sim.summary))
        }
        ScenarioConfig::Equilibrium { network, tol, max_iter, output } => {
            let nf = formats::load_network_file(network)?;
            let r = beckmann::solve_equilibrium(&nf.network, &nf.routes, *tol, *max_iter)?;
            emit(output.as_deref(), &to_json(&equilibrium_output(&nf.network, &nf.routes, &r)))
        }
        ScenarioConfig::Dynamics {
            network,
            config,
            temperature,
            seed,
            steps,
            stride,
            players,
            replicas,
            csv,
            output,
        } => {
            let nf = formats::load_network_file(network)?;
            let mut spec = dynamics_spec(&nf, config.as_deref())?;
            if let Some(t) = temperature {
                spec.config.temperature = *t;
            }
            spec.config.seed = seed.unwrap_or(spec.config.seed);
            if let Some(s) = steps {
                spec.config.steps = *s;
                if let dynamics::GammaSchedule::SqrtHorizon { horizon, .. } = &mut spec.config.schedule {
                    *horizon = (*s).max(1);
                }
            }
            spec.stride = stride.unwrap_or(spec.stride);
            spec.config.players_per_unit = players.unwrap_or(spec.config.players_per_unit);
            let out = dynamics_run(&nf, &spec, *replicas)?;
            if let Some(path) = csv {
                write_file(path, &trajectory_csv(&nf.network, &nf.routes, &out.trajectory))?;
            }
            emit(output.as_deref(), &to_json(&out.summary))
        }
        ScenarioConfig::Averaging {
            network,
            temperature,
            alpha,
            horizon,
            replicas,
            omega_grid,
            seed,
            players,
            output,
        } => {
            let nf = formats::load_network_file(network)?;
            let params = AveragingParams {
                temperature: *temperature,
                alpha: *alpha,
                horizon: *horizon,
                replicas: *replicas,
                omega_grid: omega_grid.clone(),
                seed: *seed,
                players_per_unit: *players,
                threads: crate::threads_from_env(),
            };
            let report = dynamics::averaging_estimate(&nf.network, &nf.routes, &params)?;
            emit(output.as_deref(), &to_json(&averaging_output(&params, &report)))
        }
        ScenarioConfig::CompareProjection { network, config, tol, output } => {
            let nf = formats::load_network_file(network)?;
            let spec = dynamics_spec(&nf, config.as_deref())?;
            let cmp = compare_projection(&nf.network, &nf.routes, &spec, *tol)?;
            emit(output.as_deref(), &to_json(&cmp))
        }
    }
}

fn dynamics_spec(nf: &NetworkFile, config: Option<&Path>) -> Result<DynamicsSpec> {
    if let Some(path) = config {
        let (_, d) = formats::parse_config_file(path, &formats::read_to_string(path)?)?;
        return d.ok_or_else(|| Error::Parse { file: path.to_path_buf(), line: 0, msg: "no `dynamics` line".into() });
    }
    Ok(nf.dynamics.clone().unwrap_or_default())
}

/// Route identifiers: edge ids joined by `-`, prefixed by the 1-based OD index
/// when the network has several OD pairs.
pub fn route_ids(net: &Network, rs: &RouteSet) -> Vec<String> {
    let multi = rs.od_count() > 1;
    (0..rs.len())
        .map(|p| {
            let label = rs.label(net, p);
            if multi {
                format!("{}:{label}", rs.routes()[p].od + 1)
            } else {
                label
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct OdBalanceOutput {
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    pub n: usize,
    #[serde(rename = "lambdaL")]
    pub lambda_l: Vec<f64>,
    #[serde(rename = "lambdaW")]
    pub lambda_w: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn od_balance_output(r: &od_entropy::CorrespondenceMatrix) -> OdBalanceOutput {
    OdBalanceOutput {
        x: r.x.iter().flatten().copied().collect(),
        n: r.x.len(),
        lambda_l: r.lambda_l.clone(),
        lambda_w: r.lambda_w.clone(),
        residual: r.residual,
        iterations: r.iterations,
    }
}

#[derive(Debug, Serialize)]
pub struct ExchangeSummary {
    pub zones: usize,
    pub total: u64,
    #[serde(rename = "pL")]
    pub p_l: f64,
    pub seed: u64,
    pub steps: u64,
    pub rate_bound: f64,
    pub concentration: ConcentrationReport,
}

pub struct ExchangeSim {
    pub summary: ExchangeSummary,
    pub csv: String,
}

fn integer_counts(v: &[f64], what: &str) -> Result<Vec<u64>> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u64)
            } else {
                Err(Error::invalid(format!("{what} of zone {} must be a nonnegative integer, got {x}", i + 1)))
            }
        })
        .collect()
}

pub fn exchange_sim(zones: &od_entropy::ZoneData, spec: &ChainSpec, stride: u64, lambda_grid: &[f64]) -> Result<ExchangeSim> {
    let l = integer_counts(zones.residents(), "resident count")?;
    let w = integer_counts(zones.workers(), "worker count")?;
    let cfg = ChainConfig { p_l: spec.p_l, cost: zones.cost().to_vec(), seed: spec.seed, steps: spec.steps };
    let total: u64 = l.iter().sum();
    let rate_bound = exchange_chain::ExchangeChain::new(&cfg, total)?.bound();
    let trajectory = exchange_chain::trajectory(&cfg, &l, &w, stride)?;
    let mut csv = String::from("step,i,j,count\n");
    for s in &trajectory {
        for (i, row) in s.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{},{}", s.time, i + 1, j + 1, c);
            }
        }
    }
    let concentration = exchange_chain::concentration_report(&cfg, &l, &w, lambda_grid)?;
    Ok(ExchangeSim {
        summary: ExchangeSummary { zones: l.len(), total, p_l: spec.p_l, seed: spec.seed, steps: spec.steps, rate_bound, concentration },
        csv,
    })
}

#[derive(Debug, Serialize)]
pub struct RouteRow {
    pub id: String,
    pub od: usize,
    pub flow: f64,
    pub cost: f64,
}

#[derive(Debug, Serialize)]
pub struct EquilibriumOutput {
    pub x: BTreeMap<String, f64>,
    pub y: BTreeMap<String, f64>,
    pub psi: f64,
    pub gap: f64,
    pub iterations: usize,
    pub routes: Vec<RouteRow>,
}

pub fn equilibrium_output(net: &Network, rs: &RouteSet, r: &EquilibriumResult) -> EquilibriumOutput {
    let ids = route_ids(net, rs);
    let costs = rs.route_costs_from_edge_costs(&net.edge_costs(&r.y));
    EquilibriumOutput {
        x: ids.iter().cloned().zip(r.x.iter().copied()).collect(),
        y: net.edges().iter().map(|e| e.id.clone()).zip(r.y.iter().copied()).collect(),
        psi: r.psi,
        gap: r.gap,
        iterations: r.iterations,
        routes: ids
            .into_iter()
            .enumerate()
            .map(|(p, id)| RouteRow { id, od: rs.routes()[p].od + 1, flow: r.x[p], cost: costs[p] })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct ReplicaFinal {
    pub replica: usize,
    pub n: u64,
    pub counts: Vec<u64>,
    pub psi: f64,
    pub gap: f64,
}

#[derive(Debug, Serialize)]
pub struct DynamicsSummary {
    pub routes: Vec<String>,
    pub temperature: f64,
    pub seed: u64,
    pub steps: u64,
    pub players_per_unit: u64,
    pub initial_counts: Vec<u64>,
    pub replicas: Vec<ReplicaFinal>,
    pub median_psi: f64,
    pub median_gap: f64,
}

pub struct DynamicsOutput {
    pub summary: DynamicsSummary,
    /// Trajectory of replica 0.
    pub trajectory: TrajectoryRecord,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Runs `replicas` independent trajectories from the even split. Replica `r`
/// uses stream `r` of the seeded generator, so replica 0 matches a single run.
pub fn dynamics_run(nf: &NetworkFile, spec: &DynamicsSpec, replicas: usize) -> Result<DynamicsOutput> {
    if replicas == 0 {
        return Err(Error::invalid("at least one replica is required"));
    }
    let d = Dynamics::new(&nf.network, &nf.routes, spec.config.clone())?;
    let initial = d.even_split();
    let runs = dynamics::run_replicas(replicas, crate::threads_from_env(), |r| {
        let mut rng = dynamics::replica_rng(spec.config.seed, r as u64);
        d.run_with(initial.clone(), spec.stride, &mut rng)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let finals: Vec<ReplicaFinal> = runs
        .iter()
        .enumerate()
        .map(|(replica, t)| {
            let s = t.last();
            ReplicaFinal { replica, n: s.n, counts: s.counts.clone(), psi: s.psi, gap: s.gap }
        })
        .collect();
    let summary = DynamicsSummary {
        routes: route_ids(&nf.network, &nf.routes),
        temperature: spec.config.temperature,
        seed: spec.config.seed,
        steps: spec.config.steps,
        players_per_unit: spec.config.players_per_unit,
        initial_counts: initial.counts.clone(),
        median_psi: median(&finals.iter().map(|f| f.psi).collect::<Vec<_>>()),
        median_gap: median(&finals.iter().map(|f| f.gap).collect::<Vec<_>>()),
        replicas: finals,
    };
    let trajectory = runs.into_iter().next().expect("replicas >= 1");
    Ok(DynamicsOutput { summary, trajectory })
}

pub fn trajectory_csv(net: &Network, rs: &RouteSet, t: &TrajectoryRecord) -> String {
    let ids = route_ids(net, rs);
    let mut csv = String::from("n,route_id,count,psi,gap\n");
    for s in &t.samples {
        let (psi, gap) = (fmt_num(s.psi), fmt_num(s.gap));
        for (id, c) in ids.iter().zip(&s.counts) {
            let _ = writeln!(csv, "{},{},{},{},{}", s.n, id, c, psi, gap);
        }
    }
    csv
}

#[derive(Debug, Serialize)]
pub struct AveragingOutput<'a> {
    pub temperature: f64,
    pub alpha: f64,
    pub seed: u64,
    pub players_per_unit: u64,
    pub report: &'a AveragingReport,
}

fn averaging_output<'a>(p: &AveragingParams, report: &'a AveragingReport) -> AveragingOutput<'a> {
    AveragingOutput { temperature: p.temperature, alpha: p.alpha, seed: p.seed, players_per_unit: p.players_per_unit, report }
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsLimit {
    pub start: String,
    pub initial_counts: Vec<u64>,
    pub x: Vec<f64>,
    pub psi: f64,
    pub gap: f64,
    /// Largest path-flow difference from the entropy projection.
    pub distance_to_projection: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub route: String,
    pub solver: f64,
    pub projection: f64,
    pub dynamics: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionComparison {
    pub routes: Vec<String>,
    pub psi_min: f64,
    pub y_star: Vec<f64>,
    pub solver: Vec<f64>,
    pub projection: Vec<f64>,
    pub dynamics: Vec<DynamicsLimit>,
    pub table: Vec<TableRow>,
}

/// Solver answer, entropy projection of its edge flows, and the final states
/// of the dynamics from the even split and from a start tilted towards each
/// route that has an alternative.
pub fn compare_projection(net: &Network, rs: &RouteSet, spec: &DynamicsSpec, tol: f64) -> Result<ProjectionComparison> {
    let eq = beckmann::solve_equilibrium(net, rs, tol, 1_000_000)?;
    let projection = beckmann::entropy_path_projection(net, rs, &eq.y, tol)?;
    let d = Dynamics::new(net, rs, spec.config.clone())?;
    let ids = route_ids(net, rs);

    let mut starts: Vec<(String, DynamicsState)> = vec![("even".to_string(), d.even_split())];
    for (p, id) in ids.iter().enumerate() {
        if rs.od_routes(rs.routes()[p].od).len() > 1 {
            starts.push((format!("toward {id}"), d.concentrated_start(p)?));
        }
    }
    let dynamics = starts
        .into_iter()
        .map(|(start, initial)| {
            let counts = initial.counts.clone();
            let t = d.run_from(initial, spec.stride)?;
            let last = t.last();
            let x = DynamicsState { counts: last.counts.clone(), n: last.n }.flows(spec.config.players_per_unit);
            let distance_to_projection = x.iter().zip(&projection).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok(DynamicsLimit { start, initial_counts: counts, x, psi: last.psi, gap: last.gap, distance_to_projection })
        })
        .collect::<Result<Vec<_>>>()?;

    let table = ids
        .iter()
        .enumerate()
        .map(|(p, id)| TableRow {
            route: id.clone(),
            solver: eq.x[p],
            projection: projection[p],
            dynamics: dynamics.iter().map(|l| l.x[p]).collect(),
        })
        .collect();
    Ok(ProjectionComparison { routes: ids, psi_min: eq.psi, y_star: eq.y, solver: eq.x, projection, dynamics, table })
}
