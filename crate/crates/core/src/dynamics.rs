//! Logit-imitation route-choice dynamics.
//!
//! Every OD pair `w` has a fixed population of players. At step `n` each
//! player independently keeps its route with probability `1 - gamma_n`, or
//! resamples a route of its OD pair with probability proportional to
//!
//! ```text
//! max{x_p(n), 1/n} * exp(-G_p(x(n)) / T)
//! ```
//!
//! where `x_p(n)` is the number of players on route `p` and all costs are
//! evaluated on the state before anyone moves. Flows handed to the network
//! are `count / players_per_unit`, so a demand of `6` with
//! `players_per_unit = 1000` is played by 6000 players.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::beckmann::{self, gap_from_costs, potential_of_edge_flows};
use crate::error::{Error, Result};
use crate::network::{Network, RouteSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    /// `gamma_n = gamma0 / n`
    Harmonic { gamma0: f64 },
    Constant { gamma: f64 },
    /// `gamma = alpha / sqrt(horizon)` for the whole run.
    SqrtHorizon { alpha: f64, horizon: u64 },
}

impl GammaSchedule {
    pub fn gamma(&self, n: u64) -> f64 {
        match *self {
            GammaSchedule::Harmonic { gamma0 } => gamma0 / n.max(1) as f64,
            GammaSchedule::Constant { gamma } => gamma,
            GammaSchedule::SqrtHorizon { alpha, horizon } => alpha / (horizon as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GammaSchedule::Harmonic { gamma0 } => gamma0 > 0.0 && gamma0 <= 1.0,
            GammaSchedule::Constant { gamma } => gamma > 0.0 && gamma <= 1.0,
            GammaSchedule::SqrtHorizon { alpha, horizon } => {
                horizon > 0 && alpha > 0.0 && alpha / (horizon as f64).sqrt() <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("schedule {self:?} violates 0 < gamma_n <= 1")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsConfig {
    pub temperature: f64,
    pub schedule: GammaSchedule,
    pub seed: u64,
    pub steps: u64,
    pub players_per_unit: u64,
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.players_per_unit == 0 {
            return Err(Error::invalid("players_per_unit must be positive"));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct DynamicsState {
    pub counts: Vec<u64>,
    /// Step index, starting at 1.
    pub n: u64,
}

impl DynamicsState {
    pub fn flows(&self, players_per_unit: u64) -> Vec<f64> {
        let s = players_per_unit as f64;
        self.counts.iter().map(|&c| c as f64 / s).collect()
    }
}

/// Players per OD pair: `demand * players_per_unit`, which must be an integer.
pub fn od_players(net: &Network, players_per_unit: u64) -> Result<Vec<u64>> {
    net.od_pairs()
        .iter()
        .enumerate()
        .map(|(w, od)| {
            let p = od.demand * players_per_unit as f64;
            let r = p.round();
            if (p - r).abs() > 1e-9 * p.max(1.0) {
                Err(Error::invalid(format!("OD {w}: demand {} x {players_per_unit} players is not an integer", od.demand)))
            } else {
                Ok(r as u64)
            }
        })
        .collect()
}

/// Shared simulation context.
#[derive(Debug, Clone)]
pub struct Dynamics<'a> {
    net: &'a Network,
    rs: &'a RouteSet,
    cfg: DynamicsConfig,
    players: Vec<u64>,
}

impl<'a> Dynamics<'a> {
    pub fn new(net: &'a Network, rs: &'a RouteSet, cfg: DynamicsConfig) -> Result<Self> {
        cfg.validate()?;
        let players = od_players(net, cfg.players_per_unit)?;
        Ok(Self { net, rs, cfg, players })
    }

    pub fn config(&self) -> &DynamicsConfig {
        &self.cfg
    }

    pub fn players(&self) -> &[u64] {
        &self.players
    }

    /// Players split as evenly as possible over each OD's routes (remainder to the lowest route ids).
    pub fn even_split(&self) -> DynamicsState {
        let mut counts = vec![0; self.rs.len()];
        for (w, &total) in self.players.iter().enumerate() {
            let ps = self.rs.od_routes(w);
            let k = ps.len() as u64;
            for (i, &p) in ps.iter().enumerate() {
                counts[p] = total / k + u64::from((i as u64) < total % k);
            }
        }
        DynamicsState { counts, n: 1 }
    }

    /// Start tilted towards route `p`: three quarters of its OD's players (rounded up) on
    /// `p`, the rest split evenly over the OD's other routes.
    pub fn concentrated_start(&self, p: usize) -> Result<DynamicsState> {
        if p >= self.rs.len() {
            return Err(Error::DimensionMismatch { expected: self.rs.len(), got: p + 1 });
        }
        let mut state = self.even_split();
        let w = self.rs.routes()[p].od;
        let total = self.players[w];
        let others: Vec<usize> = self.rs.od_routes(w).iter().copied().filter(|&q| q != p).collect();
        if others.is_empty() {
            return Ok(state);
        }
        let head = (3 * total).div_ceil(4);
        let rest = total - head;
        let k = others.len() as u64;
        state.counts[p] = head;
        for (i, &q) in others.iter().enumerate() {
            state.counts[q] = rest / k + u64::from((i as u64) < rest % k);
        }
        Ok(state)
    }

    /// Validates that `counts` places exactly the OD populations.
    pub fn state_from_counts(&self, counts: Vec<u64>) -> Result<DynamicsState> {
        if counts.len() != self.rs.len() {
            return Err(Error::DimensionMismatch { expected: self.rs.len(), got: counts.len() });
        }
        for (w, &total) in self.players.iter().enumerate() {
            let s: u64 = self.rs.od_routes(w).iter().map(|&p| counts[p]).sum();
            if s != total {
                return Err(Error::invalid(format!("OD {w} has {s} players, expected {total}")));
            }
        }
        Ok(DynamicsState { counts, n: 1 })
    }

    pub fn flows(&self, state: &DynamicsState) -> Vec<f64> {
        state.flows(self.cfg.players_per_unit)
    }

    pub fn route_costs(&self, state: &DynamicsState) -> Vec<f64> {
        let y = self.rs.edge_flows(&self.flows(state)).expect("dimensions checked");
        self.rs.route_costs_from_edge_costs(&self.net.edge_costs(&y))
    }

    pub fn potential(&self, state: &DynamicsState) -> f64 {
        let y = self.rs.edge_flows(&self.flows(state)).expect("dimensions checked");
        potential_of_edge_flows(self.net, &y)
    }

    pub fn gap(&self, state: &DynamicsState) -> f64 {
        let x = self.flows(state);
        gap_from_costs(self.rs, &x, &self.route_costs(state))
    }

    /// Resampling distribution of every OD pair, indexed like [`RouteSet::od_routes`].
    pub fn choice_weights(&self, state: &DynamicsState) -> Vec<Vec<f64>> {
        let g = self.route_costs(state);
        (0..self.rs.od_count())
            .map(|w| {
                let ps = self.rs.od_routes(w);
                let counts: Vec<u64> = ps.iter().map(|&p| state.counts[p]).collect();
                let costs: Vec<f64> = ps.iter().map(|&p| g[p]).collect();
                logit_imitation_weights(&counts, &costs, state.n, self.cfg.temperature)
            })
            .collect()
    }

    /// `E[x(n+1) - x(n) | x(n)]` in flow units: `gamma_n (d_w w_p - x_p)`.
    pub fn expected_drift(&self, state: &DynamicsState) -> Vec<f64> {
        let gamma = self.cfg.schedule.gamma(state.n);
        let scale = self.cfg.players_per_unit as f64;
        let weights = self.choice_weights(state);
        let mut drift = vec![0.0; self.rs.len()];
        for (w, ws) in weights.iter().enumerate() {
            let total = self.players[w] as f64;
            for (&p, &wp) in self.rs.od_routes(w).iter().zip(ws) {
                drift[p] = gamma * (total * wp - state.counts[p] as f64) / scale;
            }
        }
        drift
    }

    /// One synchronous update: `Binomial(x_p, gamma_n)` players leave each route
    /// and are redistributed by a multinomial draw on the choice weights.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut DynamicsState, rng: &mut R) {
        let gamma = self.cfg.schedule.gamma(state.n);
        if gamma > 0.0 {
            let weights = self.choice_weights(state);
            for (w, ws) in weights.iter().enumerate() {
                let ps = self.rs.od_routes(w);
                let mut movers = 0;
                for &p in ps {
                    let r = binomial(rng, state.counts[p], gamma);
                    state.counts[p] -= r;
                    movers += r;
                }
                let mut left = movers;
                let mut mass = 1.0;
                for (i, (&p, &wp)) in ps.iter().zip(ws).enumerate() {
                    let take = if i + 1 == ps.len() { left } else { binomial(rng, left, wp / mass) };
                    state.counts[p] += take;
                    left -= take;
                    mass -= wp;
                }
            }
        }
        state.n += 1;
    }

    /// Advances `state` until its step index reaches `n_target`.
    pub fn advance_to<R: Rng + ?Sized>(&self, state: &mut DynamicsState, n_target: u64, rng: &mut R) {
        while state.n < n_target {
            self.step(state, rng);
        }
    }

    pub fn sample(&self, state: &DynamicsState) -> TrajectorySample {
        TrajectorySample { n: state.n, counts: state.counts.clone(), psi: self.potential(state), gap: self.gap(state) }
    }

    /// Runs `cfg.steps` steps from `initial`, recording the initial state, every
    /// state whose index is a multiple of `stride`, and the final state.
    pub fn run_from(&self, initial: DynamicsState, stride: u64) -> Result<TrajectoryRecord> {
        self.run_with(initial, stride, &mut ChaCha8Rng::seed_from_u64(self.cfg.seed))
    }

    /// [`Dynamics::run_from`] driven by a caller-supplied generator.
    pub fn run_with<R: Rng + ?Sized>(&self, initial: DynamicsState, stride: u64, rng: &mut R) -> Result<TrajectoryRecord> {
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let mut state = initial;
        let mut samples = vec![self.sample(&state)];
        for _ in 0..self.cfg.steps {
            self.step(&mut state, rng);
            if state.n.is_multiple_of(stride) {
                samples.push(self.sample(&state));
            }
        }
        if samples.last().map(|s| s.n) != Some(state.n) {
            samples.push(self.sample(&state));
        }
        Ok(TrajectoryRecord { players_per_unit: self.cfg.players_per_unit, samples })
    }

    pub fn run(&self, stride: u64) -> Result<TrajectoryRecord> {
        self.run_from(self.even_split(), stride)
    }
}

fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

/// `max{x_p, 1/n} exp(-G_p/T)`, normalized over the given routes.
pub fn logit_imitation_weights(counts: &[u64], costs: &[f64], n: u64, temperature: f64) -> Vec<f64> {
    let floor = 1.0 / n.max(1) as f64;
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = counts
        .iter()
        .zip(costs)
        .map(|(&c, &g)| (c as f64).max(floor) * (-(g - min) / temperature).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Free-standing form of [`Dynamics::choice_weights`].
pub fn choice_weights(state: &DynamicsState, net: &Network, rs: &RouteSet, cfg: &DynamicsConfig) -> Result<Vec<Vec<f64>>> {
    Ok(Dynamics::new(net, rs, cfg.clone())?.choice_weights(state))
}

/// Free-standing form of [`Dynamics::expected_drift`].
pub fn expected_drift(state: &DynamicsState, net: &Network, rs: &RouteSet, cfg: &DynamicsConfig) -> Result<Vec<f64>> {
    Ok(Dynamics::new(net, rs, cfg.clone())?.expected_drift(state))
}

/// Free-standing form of [`Dynamics::step`].
pub fn step<R: Rng + ?Sized>(
    state: &DynamicsState,
    net: &Network,
    rs: &RouteSet,
    cfg: &DynamicsConfig,
    rng: &mut R,
) -> Result<DynamicsState> {
    let d = Dynamics::new(net, rs, cfg.clone())?;
    let mut next = state.clone();
    d.step(&mut next, rng);
    Ok(next)
}

/// Free-standing form of [`Dynamics::run`].
pub fn run(net: &Network, rs: &RouteSet, cfg: &DynamicsConfig, record_stride: u64) -> Result<TrajectoryRecord> {
    Dynamics::new(net, rs, cfg.clone())?.run(record_stride)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub n: u64,
    pub counts: Vec<u64>,
    pub psi: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub players_per_unit: u64,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryRecord {
    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("a trajectory records at least its initial state")
    }
}

/// Weighted means of `f(w) = -T ln w`:
/// `F0 = sum a_i w_i f(w_i) / sum a_i w_i`, `F1 = sum a_i f(w_i) / sum a_i`.
pub fn lemma1_check(alpha: &[f64], w: &[f64], temperature: f64) -> Result<(f64, f64)> {
    if alpha.len() != w.len() {
        return Err(Error::DimensionMismatch { expected: alpha.len(), got: w.len() });
    }
    if alpha.is_empty() {
        return Err(Error::Domain("empty input".into()));
    }
    if let Some(v) = w.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain(format!("w = {v} is outside (0, 1)")));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Domain(format!("alpha = {a} is not positive")));
    }
    let f = |v: f64| -temperature * v.ln();
    let (mut num0, mut den0, mut num1, mut den1) = (0.0, 0.0, 0.0, 0.0);
    for (&a, &v) in alpha.iter().zip(w) {
        num0 += a * v * f(v);
        den0 += a * v;
        num1 += a * f(v);
        den1 += a;
    }
    Ok((num0 / den0, num1 / den1))
}

/// Independent RNG stream for replica `index`.
pub fn replica_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Evaluates `f(0..count)` on at most `threads` worker threads; results are in
/// index order and independent of the thread count.
pub fn run_replicas<T, F>(count: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let threads = threads.unwrap_or(0);
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
        Err(_) => (0..count).map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub omega: f64,
    /// `omega / sqrt(N)`
    pub threshold: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragingReport {
    pub psi_min: f64,
    pub gamma: f64,
    pub horizon: u64,
    pub replicas: usize,
    /// `Psi(mean x) - Psi_min` per replica.
    pub excess: Vec<f64>,
    pub rows: Vec<TailRow>,
    /// Slope of `-ln frequency` against `omega` (least squares over positive frequencies).
    pub c_hat: Option<f64>,
    /// `min_k ln(f_0 / f_k) / (omega_k - omega_0)` over the grid beyond its first point.
    pub min_decay_rate: Option<f64>,
    pub monotone: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingParams {
    pub temperature: f64,
    pub alpha: f64,
    pub horizon: u64,
    pub replicas: usize,
    pub omega_grid: Vec<f64>,
    pub seed: u64,
    pub players_per_unit: u64,
    pub threads: Option<usize>,
}

/// Tail frequencies of `Psi((1/N) sum_{n<=N} x(n)) - Psi_min >= omega / sqrt(N)`
/// over independent replicas run with constant `gamma = alpha / sqrt(N)`.
///
/// Passes when the frequencies are non-increasing in `omega` and every grid
/// point beyond the first has strictly lower frequency than the first.
pub fn averaging_estimate(net: &Network, rs: &RouteSet, params: &AveragingParams) -> Result<AveragingReport> {
    if params.horizon < 100 {
        return Err(Error::invalid("averaging needs a horizon of at least 100 steps"));
    }
    if params.replicas < 100 {
        return Err(Error::invalid("averaging needs at least 100 replicas"));
    }
    if params.omega_grid.is_empty() || params.omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("omega grid must be non-empty and increasing"));
    }
    let cfg = DynamicsConfig {
        temperature: params.temperature,
        schedule: GammaSchedule::SqrtHorizon { alpha: params.alpha, horizon: params.horizon },
        seed: params.seed,
        steps: params.horizon,
        players_per_unit: params.players_per_unit,
    };
    let dynamics = Dynamics::new(net, rs, cfg)?;
    let psi_min = beckmann::solve_equilibrium(net, rs, 1e-10, 1_000_000)?.psi;

    let excess = run_replicas(params.replicas, params.threads, |r| {
        let mut rng = replica_rng(params.seed, r as u64);
        let mut state = dynamics.even_split();
        let mut sum: Vec<u64> = state.counts.clone();
        for _ in 1..params.horizon {
            dynamics.step(&mut state, &mut rng);
            sum.iter_mut().zip(&state.counts).for_each(|(s, c)| *s += c);
        }
        let denom = (params.horizon * params.players_per_unit) as f64;
        let mean: Vec<f64> = sum.iter().map(|&s| s as f64 / denom).collect();
        let y = rs.edge_flows(&mean).expect("dimensions checked");
        potential_of_edge_flows(net, &y) - psi_min
    });

    let sqrt_n = (params.horizon as f64).sqrt();
    let rows: Vec<TailRow> = params
        .omega_grid
        .iter()
        .map(|&omega| {
            let threshold = omega / sqrt_n;
            let hits = excess.iter().filter(|&&e| e >= threshold).count();
            TailRow { omega, threshold, frequency: hits as f64 / excess.len() as f64 }
        })
        .collect();

    let monotone = rows.windows(2).all(|w| w[1].frequency <= w[0].frequency);
    let f0 = rows[0].frequency;
    let min_decay_rate = if f0 > 0.0 && rows.len() > 1 {
        Some(
            rows[1..]
                .iter()
                .map(|r| if r.frequency == 0.0 { f64::INFINITY } else { (f0 / r.frequency).ln() / (r.omega - rows[0].omega) })
                .fold(f64::INFINITY, f64::min),
        )
    } else {
        None
    };
    let positive: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.frequency > 0.0).map(|r| (r.omega, -r.frequency.ln())).collect();
    let c_hat = if positive.len() >= 2 {
        let k = positive.len() as f64;
        let mx = positive.iter().map(|p| p.0).sum::<f64>() / k;
        let my = positive.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = positive.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = positive.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    // f0 == 0 means the tail is empty over the whole grid.
    let decays = f0 == 0.0 || rows.len() == 1 || min_decay_rate.is_some_and(|r| r > 0.0);
    Ok(AveragingReport {
        psi_min,
        gamma: dynamics.cfg.schedule.gamma(1),
        horizon: params.horizon,
        replicas: params.replicas,
        excess,
        rows,
        c_hat,
        min_decay_rate,
        monotone,
        pass: monotone && decays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{braess, enumerate_routes, LatencyFn};

    fn cfg(schedule: GammaSchedule, temperature: f64) -> DynamicsConfig {
        DynamicsConfig { temperature, schedule, seed: 5, steps: 0, players_per_unit: 1 }
    }

    fn twin_routes(demand: f64) -> (Network, RouteSet) {
        let lin = LatencyFn::affine(0.0, 1.0);
        let net = Network::from_parts(&["1", "2"], &[("a", "1", "2", lin), ("b", "1", "2", lin)], &[("1", "2", demand)])
            .unwrap();
        let rs = enumerate_routes(&net, 10).unwrap();
        (net, rs)
    }

    #[test]
    fn weights_symmetric_and_imitation_limit() {
        let w = logit_imitation_weights(&[2, 2], &[5.0, 5.0], 10, 1.0);
        assert_eq!(w, vec![0.5, 0.5]);
        let w = logit_imitation_weights(&[3, 1], &[83.0, 53.0], 10, 1e9);
        assert!((w[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn weights_direct_evaluation() {
        let w = logit_imitation_weights(&[3, 1], &[83.0, 53.0], 10, 10.0);
        let direct = 3.0 * (-8.3f64).exp() / (3.0 * (-8.3f64).exp() + (-5.3f64).exp());
        assert!((w[0] - direct).abs() < 1e-14);
        assert!((w[0] - 0.130).abs() < 5e-4);
    }

    #[test]
    fn floor_keeps_empty_routes_alive() {
        let w = logit_imitation_weights(&[0, 4], &[1.0, 1.0], 2, 1.0);
        assert!((w[0] - 0.5 / 4.5).abs() < 1e-15);
    }

    #[test]
    fn schedules() {
        assert_eq!(GammaSchedule::Harmonic { gamma0: 1.0 }.gamma(4), 0.25);
        assert_eq!(GammaSchedule::Constant { gamma: 0.3 }.gamma(4), 0.3);
        assert_eq!(GammaSchedule::SqrtHorizon { alpha: 1.0, horizon: 100 }.gamma(4), 0.1);
        assert!(GammaSchedule::Harmonic { gamma0: 1.5 }.validate().is_err());
        assert!(GammaSchedule::Constant { gamma: 0.0 }.validate().is_err());
        assert!(GammaSchedule::SqrtHorizon { alpha: 20.0, horizon: 100 }.validate().is_err());
    }

    #[test]
    fn zero_gamma_keeps_state() {
        // gamma_n = 0 is outside the schedule family; exercise the step directly
        let (net, rs) = twin_routes(5.0);
        let d = Dynamics::new(&net, &rs, cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 1.0)).unwrap();
        let mut s = DynamicsState { counts: vec![4, 1], n: u64::MAX / 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            d.step(&mut s, &mut rng);
        }
        // gamma_n ~ 2e-19: nobody moves
        assert_eq!(s.counts, vec![4, 1]);
    }

    #[test]
    fn single_route_od_never_changes() {
        let net = Network::from_parts(&["1", "2"], &[("a", "1", "2", LatencyFn::affine(1.0, 1.0))], &[("1", "2", 7.0)])
            .unwrap();
        let rs = enumerate_routes(&net, 10).unwrap();
        let c = DynamicsConfig { steps: 500, ..cfg(GammaSchedule::Constant { gamma: 1.0 }, 1.0) };
        let rec = run(&net, &rs, &c, 1).unwrap();
        assert!(rec.samples.iter().all(|s| s.counts == vec![7]));
    }

    #[test]
    fn demand_is_conserved() {
        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        let c = DynamicsConfig {
            steps: 2000,
            players_per_unit: 50,
            ..cfg(GammaSchedule::Constant { gamma: 0.4 }, 3.0)
        };
        for seed in 0..5 {
            let rec = run(&net, &rs, &DynamicsConfig { seed, ..c.clone() }, 1).unwrap();
            assert!(rec.samples.iter().all(|s| s.counts.iter().sum::<u64>() == 300));
        }
    }

    #[test]
    fn zero_demand_trajectory() {
        let (net, rs) = twin_routes(0.0);
        let c = DynamicsConfig { steps: 100, ..cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 1.0) };
        let rec = run(&net, &rs, &c, 10).unwrap();
        assert!(rec.samples.iter().all(|s| s.counts == vec![0, 0] && s.psi == 0.0 && s.gap == 0.0));
    }

    #[test]
    fn drift_vanishes_at_symmetric_point() {
        let (net, rs) = twin_routes(4.0);
        let d = Dynamics::new(&net, &rs, cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 1.0)).unwrap();
        let s = DynamicsState { counts: vec![2, 2], n: 3 };
        assert!(d.expected_drift(&s).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn drift_points_downhill_at_all_on_one_route() {
        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        let d = Dynamics::new(&net, &rs, DynamicsConfig { players_per_unit: 1000, ..cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 1.0) })
            .unwrap();
        let s = DynamicsState { counts: vec![6000, 0, 0], n: 10_000 };
        let g = d.route_costs(&s);
        let drift = d.expected_drift(&s);
        let inner: f64 = g.iter().zip(&drift).map(|(a, b)| a * b).sum();
        assert!(inner < 0.0);
    }

    #[test]
    fn weighted_mean_examples() {
        let (f0, f1) = lemma1_check(&[1.0, 2.0, 0.5], &[0.3, 0.3, 0.3], 2.0).unwrap();
        assert!((f0 - f1).abs() < 1e-15);
        let (f0, f1) = lemma1_check(&[1.0, 1.0], &[0.5, 0.25], 1.0).unwrap();
        assert!((f0 - 0.924_196).abs() < 1e-6, "{f0}");
        assert!((f1 - 1.039_721).abs() < 1e-6, "{f1}");
        let (f0, f1) = lemma1_check(&[3.0], &[0.7], 0.5).unwrap();
        assert_eq!(f0, f1);
        assert!(matches!(lemma1_check(&[1.0], &[1.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(lemma1_check(&[1.0], &[0.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn full_resampling_is_binomial() {
        // gamma = 1, two identical routes, two players: next count on route a ~ Binomial(2, 1/2)
        let (net, rs) = twin_routes(2.0);
        let d = Dynamics::new(&net, &rs, cfg(GammaSchedule::Constant { gamma: 1.0 }, 1.0)).unwrap();
        let start = DynamicsState { counts: vec![1, 1], n: 5 };
        let w = d.choice_weights(&start)[0][0];
        assert!((w - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let reps = 100_000;
        let mut hist = [0u64; 3];
        for _ in 0..reps {
            let mut s = start.clone();
            d.step(&mut s, &mut rng);
            hist[s.counts[0] as usize] += 1;
        }
        let expected = [(1.0 - w) * (1.0 - w), 2.0 * w * (1.0 - w), w * w].map(|p| p * reps as f64);
        let chi2: f64 = hist.iter().zip(expected).map(|(&o, e)| (o as f64 - e).powi(2) / e).sum();
        // two degrees of freedom: p = exp(-chi2 / 2)
        assert!((-chi2 / 2.0).exp() > 0.01, "chi2 = {chi2}");
    }

    #[test]
    fn sampled_increment_matches_drift() {
        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        let d = Dynamics::new(&net, &rs, DynamicsConfig { players_per_unit: 10, ..cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 5.0) })
            .unwrap();
        let start = DynamicsState { counts: vec![30, 20, 10], n: 4 };
        let drift = d.expected_drift(&start);
        let reps = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..reps {
            let mut s = start.clone();
            d.step(&mut s, &mut rng);
            for p in 0..3 {
                let inc = (s.counts[p] as f64 - start.counts[p] as f64) / 10.0;
                sum[p] += inc;
                sq[p] += inc * inc;
            }
        }
        for p in 0..3 {
            let mean = sum[p] / reps as f64;
            let var = sq[p] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!((mean - drift[p]).abs() <= 3.0 * se, "route {p}: {mean} vs {}", drift[p]);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        let c = DynamicsConfig { steps: 300, players_per_unit: 100, ..cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 1.0) };
        assert_eq!(run(&net, &rs, &c, 7).unwrap(), run(&net, &rs, &c, 7).unwrap());
    }

    #[test]
    fn replicas_do_not_depend_on_thread_count() {
        let f = |r: usize| {
            let mut rng = replica_rng(3, r as u64);
            rng.random::<u64>()
        };
        assert_eq!(run_replicas(32, Some(1), f), run_replicas(32, Some(4), f));
    }

    #[test]
    fn rejects_fractional_players() {
        let (net, rs) = twin_routes(1.5);
        assert!(Dynamics::new(&net, &rs, cfg(GammaSchedule::Harmonic { gamma0: 1.0 }, 1.0)).is_err());
    }
}
