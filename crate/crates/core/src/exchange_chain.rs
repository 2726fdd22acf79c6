//! Apartment-exchange Markov chain on integer correspondence matrices.
//!
//! A state is an integer matrix `x` with row sums `L` and column sums `W`.
//! Two residents living/working at `(k, m)` and `(p, q)` with `k != p`,
//! `m != q` swap homes at rate `pL * exp((c_km + c_pq) - (c_pm + c_kq))`,
//! which moves the state to `x - e_km - e_pq + e_pm + e_kq`. There are
//! `x_km * x_pq` such resident pairs.
//!
//! The continuous-time chain is simulated through uniformization with the
//! bound `R = pL * N^2 * exp(4 max c)`: each step picks a move with
//! probability `rate / R` and otherwise stays put. The stationary law is the
//! Gibbs measure `prod exp(-2 c_ij x_ij) / x_ij!`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::od_entropy::{self, ZoneData};

pub type CountMatrix = Vec<Vec<u64>>;

/// Upper bound on the number of states [`enumerate_stationary`] will visit.
pub const MAX_ENUMERATED_STATES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChainState {
    pub counts: CountMatrix,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub p_l: f64,
    pub cost: Vec<Vec<f64>>,
    pub seed: u64,
    pub steps: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_l > 0.0 && self.p_l.is_finite()) {
            return Err(Error::invalid(format!("pL must be positive, got {}", self.p_l)));
        }
        let n = self.cost.len();
        if self.cost.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("cost matrix must be square"));
        }
        if self.cost.iter().flatten().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("costs must be nonnegative and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Move {
    /// Cells `(k, m)` and `(p, q)` each lose one resident.
    k: usize,
    m: usize,
    p: usize,
    q: usize,
    rate: f64,
}

/// Uniformized discrete-time exchange chain.
#[derive(Debug, Clone)]
pub struct ExchangeChain {
    moves: Vec<Move>,
    bound: f64,
}

fn exchange_rate(p_l: f64, cost: &[Vec<f64>], (k, m): (usize, usize), (p, q): (usize, usize)) -> f64 {
    p_l * ((cost[k][m] + cost[p][q]) - (cost[p][m] + cost[k][q])).exp()
}

impl ExchangeChain {
    /// Builds the move table for a population of `total` residents.
    pub fn new(cfg: &ChainConfig, total: u64) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.cost.len();
        let mut moves = Vec::new();
        // Unordered resident pairs: k < p, any m != q.
        for k in 0..n {
            for p in k + 1..n {
                for m in 0..n {
                    for q in 0..n {
                        if m != q {
                            let rate = exchange_rate(cfg.p_l, &cfg.cost, (k, m), (p, q));
                            moves.push(Move { k, m, p, q, rate });
                        }
                    }
                }
            }
        }
        let max_c = cfg.cost.iter().flatten().copied().fold(0.0, f64::max);
        let nn = total as f64;
        let bound = cfg.p_l * nn * nn * (4.0 * max_c).exp();
        Ok(Self { moves, bound })
    }

    /// Uniformization constant `R`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Total jump rate out of `x`.
    pub fn exit_rate(&self, x: &CountMatrix) -> f64 {
        self.moves.iter().map(|mv| (x[mv.k][mv.m] * x[mv.p][mv.q]) as f64 * mv.rate).sum()
    }

    /// One uniformized transition.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut ChainState, rng: &mut R) {
        let x = &mut state.counts;
        let u = rng.random::<f64>() * self.bound;
        let mut acc = 0.0;
        for mv in &self.moves {
            let pairs = x[mv.k][mv.m] * x[mv.p][mv.q];
            if pairs == 0 {
                continue;
            }
            acc += pairs as f64 * mv.rate;
            if u < acc {
                x[mv.k][mv.m] -= 1;
                x[mv.p][mv.q] -= 1;
                x[mv.p][mv.m] += 1;
                x[mv.k][mv.q] += 1;
                break;
            }
        }
        state.time += 1;
    }

    /// Runs `steps` transitions, calling `observe` after each one.
    pub fn run<R, F>(&self, state: &mut ChainState, steps: u64, rng: &mut R, mut observe: F)
    where
        R: Rng + ?Sized,
        F: FnMut(&ChainState),
    {
        #[cfg(debug_assertions)]
        let (rows, cols) = (row_sums(&state.counts), col_sums(&state.counts));
        for _ in 0..steps {
            self.step(state, rng);
            #[cfg(debug_assertions)]
            {
                debug_assert_eq!(row_sums(&state.counts), rows);
                debug_assert_eq!(col_sums(&state.counts), cols);
            }
            observe(state);
        }
    }
}

/// Convenience wrapper: one transition of the chain configured by `cfg`.
pub fn step<R: Rng + ?Sized>(state: &ChainState, cfg: &ChainConfig, rng: &mut R) -> Result<ChainState> {
    let total = state.counts.iter().flatten().sum();
    let chain = ExchangeChain::new(cfg, total)?;
    let mut next = state.clone();
    chain.step(&mut next, rng);
    Ok(next)
}

pub fn row_sums(x: &CountMatrix) -> Vec<u64> {
    x.iter().map(|r| r.iter().sum()).collect()
}

pub fn col_sums(x: &CountMatrix) -> Vec<u64> {
    let n = x.first().map_or(0, Vec::len);
    (0..n).map(|j| x.iter().map(|r| r[j]).sum()).collect()
}

/// A feasible starting state (northwest-corner rule).
pub fn northwest_corner(residents: &[u64], workers: &[u64]) -> Result<CountMatrix> {
    check_marginals(residents, workers)?;
    let n = residents.len();
    let mut x = vec![vec![0; n]; n];
    let (mut rl, mut rw) = (residents.to_vec(), workers.to_vec());
    let (mut i, mut j) = (0, 0);
    while i < n && j < n {
        let t = rl[i].min(rw[j]);
        x[i][j] = t;
        rl[i] -= t;
        rw[j] -= t;
        if rl[i] == 0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(x)
}

fn check_marginals(residents: &[u64], workers: &[u64]) -> Result<()> {
    if residents.len() != workers.len() {
        return Err(Error::DimensionMismatch { expected: residents.len(), got: workers.len() });
    }
    let (sl, sw): (u64, u64) = (residents.iter().sum(), workers.iter().sum());
    if sl != sw {
        return Err(Error::InfeasibleMarginals { sum_l: sl as f64, sum_w: sw as f64 });
    }
    Ok(())
}

pub fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// `ln prod exp(-2 c_ij x_ij) / x_ij!`.
pub fn gibbs_log_mass(x: &CountMatrix, cost: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(cost)
        .flat_map(|(xr, cr)| xr.iter().zip(cr))
        .map(|(&v, &c)| -2.0 * c * v as f64 - ln_factorial(v))
        .sum()
}

/// Unnormalized stationary mass, evaluated in the log domain.
pub fn gibbs_mass(x: &CountMatrix, cost: &[Vec<f64>]) -> f64 {
    gibbs_log_mass(x, cost).exp()
}

/// All integer matrices with the given row and column sums.
///
/// Rows are filled left to right; a cell never exceeds what remains of its
/// column, and the last row takes the column remainders.
pub fn enumerate_states(residents: &[u64], workers: &[u64], limit: usize) -> Result<Vec<CountMatrix>> {
    check_marginals(residents, workers)?;
    let n = residents.len();
    let mut out = Vec::new();
    let mut x = vec![vec![0; n]; n];
    let mut col_rem = workers.to_vec();

    #[allow(clippy::too_many_arguments)]
    fn fill_row(
        i: usize,
        j: usize,
        row_rem: u64,
        residents: &[u64],
        x: &mut CountMatrix,
        col_rem: &mut [u64],
        out: &mut Vec<CountMatrix>,
        limit: usize,
    ) -> Result<()> {
        let n = residents.len();
        if i + 1 == n {
            // last row is forced
            x[i].copy_from_slice(col_rem);
            if out.len() >= limit {
                return Err(Error::StateSpaceTooLarge { limit });
            }
            out.push(x.clone());
            return Ok(());
        }
        if j + 1 == n {
            if row_rem > col_rem[j] {
                return Ok(());
            }
            x[i][j] = row_rem;
            col_rem[j] -= row_rem;
            let r = fill_row(i + 1, 0, residents[i + 1], residents, x, col_rem, out, limit);
            col_rem[j] += row_rem;
            return r;
        }
        // The columns after j must be able to absorb what is left of this row.
        let tail_cap: u64 = col_rem[j + 1..].iter().sum();
        let lo = row_rem.saturating_sub(tail_cap);
        let hi = row_rem.min(col_rem[j]);
        for v in lo..=hi {
            x[i][j] = v;
            col_rem[j] -= v;
            let r = fill_row(i, j + 1, row_rem - v, residents, x, col_rem, out, limit);
            col_rem[j] += v;
            r?;
        }
        Ok(())
    }

    if n == 0 {
        return Ok(out);
    }
    fill_row(0, 0, residents[0], residents, &mut x, &mut col_rem, &mut out, limit)?;
    Ok(out)
}

/// Exact stationary law over all feasible states.
#[derive(Debug, Clone)]
pub struct StationaryLaw {
    pub states: Vec<CountMatrix>,
    pub probs: Vec<f64>,
    index: HashMap<CountMatrix, usize>,
}

impl StationaryLaw {
    pub fn prob(&self, x: &CountMatrix) -> Option<f64> {
        self.index.get(x).map(|&i| self.probs[i])
    }

    pub fn index_of(&self, x: &CountMatrix) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn enumerate_stationary(residents: &[u64], workers: &[u64], cost: &[Vec<f64>]) -> Result<StationaryLaw> {
    let states = enumerate_states(residents, workers, MAX_ENUMERATED_STATES)?;
    let logs: Vec<f64> = states.iter().map(|x| gibbs_log_mass(x, cost)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / z).collect();
    let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(StationaryLaw { states, probs, index })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetailedBalanceReport {
    /// `max |forward flux / backward flux - 1|` over all transitions.
    pub max_violation: f64,
    pub transitions: usize,
}

/// Checks `pi(x) * x_km x_pq * rate(km,pq) == pi(y) * y_pm y_kq * rate(pm,kq)` for
/// every exchange `x -> y` in the enumerated state space.
pub fn check_detailed_balance(residents: &[u64], workers: &[u64], cost: &[Vec<f64>]) -> Result<DetailedBalanceReport> {
    let law = enumerate_stationary(residents, workers, cost)?;
    let n = residents.len();
    let p_l = 1.0;
    let mut max_violation: f64 = 0.0;
    let mut transitions = 0;
    for (s, x) in law.states.iter().enumerate() {
        for k in 0..n {
            for p in k + 1..n {
                for m in 0..n {
                    for q in 0..n {
                        if m == q || x[k][m] == 0 || x[p][q] == 0 {
                            continue;
                        }
                        let mut y = x.clone();
                        y[k][m] -= 1;
                        y[p][q] -= 1;
                        y[p][m] += 1;
                        y[k][q] += 1;
                        let t = law.index_of(&y).expect("exchange preserves marginals");
                        let forward =
                            law.probs[s] * (x[k][m] * x[p][q]) as f64 * exchange_rate(p_l, cost, (k, m), (p, q));
                        let backward =
                            law.probs[t] * (y[p][m] * y[k][q]) as f64 * exchange_rate(p_l, cost, (p, m), (k, q));
                        max_violation = max_violation.max((forward / backward - 1.0).abs());
                        transitions += 1;
                    }
                }
            }
        }
    }
    Ok(DetailedBalanceReport { max_violation, transitions })
}

/// `sum (x_ij - x*_ij)^2 / (2 max{x_ij, x*_ij})`.
pub fn concentration_functional(x: &CountMatrix, x_star: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(x_star)
        .flat_map(|(xr, sr)| xr.iter().zip(sr))
        .map(|(&v, &s)| {
            let v = v as f64;
            let d = v - s;
            if d == 0.0 {
                0.0
            } else {
                d * d / (2.0 * v.max(s))
            }
        })
        .sum()
}

/// Stirling form of the log mass, `-sum (x ln x - x) - 2 sum c x`, extended to real `x`.
///
/// Its Hessian is `diag(-1/x)` and its maximizer over the transportation
/// polytope is the entropy-program solution.
pub fn stirling_log_mass(x: &[Vec<f64>], cost: &[Vec<f64>]) -> f64 {
    x.iter()
        .zip(cost)
        .flat_map(|(xr, cr)| xr.iter().zip(cr))
        .map(|(&v, &c)| -(od_entropy::xlogx(v) - v) - 2.0 * c * v)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationCheck {
    pub states: usize,
    /// States violating `p(x) <= exp(-M) p(x*)` with `M` the concentration functional.
    pub violations: usize,
    /// Largest `ln p(x) - ln p(x*) + M(x)`; the inequality holds iff this is `<= 0`.
    pub max_excess: f64,
    /// Same check with exact factorials (`ln x!`, `ln Gamma(x*+1)`); informational.
    pub exact_factorial_violations: usize,
    pub pass: bool,
}

/// Log-space slack allowed for rounding in [`check_concentration_inequality`].
pub const CONCENTRATION_SLACK: f64 = 1e-9;

/// Checks the measure-concentration inequality on every feasible state.
pub fn check_concentration_inequality(
    residents: &[u64],
    workers: &[u64],
    cost: &[Vec<f64>],
) -> Result<ConcentrationCheck> {
    let states = enumerate_states(residents, workers, MAX_ENUMERATED_STATES)?;
    let z = ZoneData::new(
        residents.iter().map(|&v| v as f64).collect(),
        workers.iter().map(|&v| v as f64).collect(),
        cost.to_vec(),
    )?;
    let x_star = od_entropy::balance(&z, 1e-14, 1_000_000)?.x;
    let ref_log = stirling_log_mass(&x_star, cost);
    let ref_exact: f64 = x_star
        .iter()
        .zip(cost)
        .flat_map(|(xr, cr)| xr.iter().zip(cr))
        .map(|(&v, &c)| -2.0 * c * v - ln_gamma_plus_one(v))
        .sum();

    let mut violations = 0;
    let mut exact_factorial_violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for x in &states {
        let m = concentration_functional(x, &x_star);
        let xf: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let excess = stirling_log_mass(&xf, cost) - ref_log + m;
        max_excess = max_excess.max(excess);
        if excess > CONCENTRATION_SLACK {
            violations += 1;
        }
        if gibbs_log_mass(x, cost) - ref_exact + m > CONCENTRATION_SLACK {
            exact_factorial_violations += 1;
        }
    }
    Ok(ConcentrationCheck {
        states: states.len(),
        violations,
        max_excess,
        exact_factorial_violations,
        pass: violations == 0,
    })
}

/// `ln Gamma(v + 1)` for real `v >= 0`, via Lanczos (g = 7, n = 9).
fn ln_gamma_plus_one(v: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = v; // Gamma(v + 1) = Lanczos evaluated at z = v
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub lambda: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    /// Typical marginal size `N / n`.
    pub m: f64,
    pub samples: u64,
    pub coverage: Vec<CoverageRow>,
    /// Smallest grid value reaching coverage 0.999.
    pub witness: Option<f64>,
    pub deterministic: Option<ConcentrationCheck>,
    pub deterministic_skipped: Option<String>,
}

pub const COVERAGE_TARGET: f64 = 0.999;

/// Long-run frequency of `|x_ij/x*_ij - 1| <= lambda/sqrt(m)` for all cells,
/// for each `lambda` in `lambda_grid`.
///
/// `x*` is `L W^T / N` for constant costs and the balanced entropy solution
/// otherwise. The first half of `cfg.steps` is discarded as burn-in.
pub fn concentration_report(
    cfg: &ChainConfig,
    residents: &[u64],
    workers: &[u64],
    lambda_grid: &[f64],
) -> Result<ConcentrationReport> {
    cfg.validate()?;
    let c0 = cfg.cost.first().and_then(|r| r.first()).copied().unwrap_or(0.0);
    let n = residents.len();
    if cfg.cost.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cfg.cost.len() });
    }
    let total: u64 = residents.iter().sum();
    let nf = total as f64;
    let m = nf / n as f64;
    let x_star: Vec<Vec<f64>> = if cfg.cost.iter().flatten().all(|&c| c == c0) {
        residents.iter().map(|&l| workers.iter().map(|&w| l as f64 * w as f64 / nf).collect()).collect()
    } else {
        let z = ZoneData::new(
            residents.iter().map(|&v| v as f64).collect(),
            workers.iter().map(|&v| v as f64).collect(),
            cfg.cost.clone(),
        )?;
        od_entropy::balance(&z, 1e-14, 1_000_000)?.x
    };

    let chain = ExchangeChain::new(cfg, total)?;
    let mut state = ChainState { counts: northwest_corner(residents, workers)?, time: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let burn_in = cfg.steps / 2;
    chain.run(&mut state, burn_in, &mut rng, |_| {});

    let mut hits = vec![0u64; lambda_grid.len()];
    let mut samples = 0u64;
    chain.run(&mut state, cfg.steps - burn_in, &mut rng, |s| {
        let dev = s
            .counts
            .iter()
            .zip(&x_star)
            .flat_map(|(xr, sr)| xr.iter().zip(sr))
            .map(|(&v, &st)| (v as f64 / st - 1.0).abs())
            .fold(0.0, f64::max);
        for (h, lam) in hits.iter_mut().zip(lambda_grid) {
            if dev <= lam / m.sqrt() {
                *h += 1;
            }
        }
        samples += 1;
    });

    let coverage: Vec<CoverageRow> = lambda_grid
        .iter()
        .zip(&hits)
        .map(|(&lambda, &h)| CoverageRow { lambda, coverage: if samples == 0 { 1.0 } else { h as f64 / samples as f64 } })
        .collect();
    let witness = coverage
        .iter()
        .filter(|r| r.coverage >= COVERAGE_TARGET)
        .map(|r| r.lambda)
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.min(l))));

    let (deterministic, deterministic_skipped) = match check_concentration_inequality(residents, workers, &cfg.cost) {
        Ok(c) => (Some(c), None),
        Err(e @ Error::StateSpaceTooLarge { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };

    Ok(ConcentrationReport { m, samples, coverage, witness, deterministic, deterministic_skipped })
}

/// Empirical state-visit frequencies after burn-in (half of `cfg.steps`).
pub fn visit_frequencies(cfg: &ChainConfig, residents: &[u64], workers: &[u64]) -> Result<HashMap<CountMatrix, f64>> {
    let total: u64 = residents.iter().sum();
    let chain = ExchangeChain::new(cfg, total)?;
    let mut state = ChainState { counts: northwest_corner(residents, workers)?, time: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let burn_in = cfg.steps / 2;
    chain.run(&mut state, burn_in, &mut rng, |_| {});
    let mut visits: HashMap<CountMatrix, u64> = HashMap::new();
    let kept = cfg.steps - burn_in;
    chain.run(&mut state, kept, &mut rng, |s| *visits.entry(s.counts.clone()).or_default() += 1);
    Ok(visits.into_iter().map(|(k, v)| (k, v as f64 / kept as f64)).collect())
}

/// Total-variation distance between empirical frequencies and the exact law.
pub fn total_variation(freqs: &HashMap<CountMatrix, f64>, law: &StationaryLaw) -> f64 {
    let mut tv = 0.0;
    for (x, p) in law.states.iter().zip(&law.probs) {
        tv += (freqs.get(x).copied().unwrap_or(0.0) - p).abs();
    }
    // mass on states outside the law would indicate a broken chain
    tv += freqs.iter().filter(|(x, _)| law.index_of(x).is_none()).map(|(_, p)| p).sum::<f64>();
    0.5 * tv
}

/// Thinned trajectory: the state after every `stride`-th step.
pub fn trajectory(cfg: &ChainConfig, residents: &[u64], workers: &[u64], stride: u64) -> Result<Vec<ChainState>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let total: u64 = residents.iter().sum();
    let chain = ExchangeChain::new(cfg, total)?;
    let mut state = ChainState { counts: northwest_corner(residents, workers)?, time: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![state.clone()];
    chain.run(&mut state, cfg.steps, &mut rng, |s| {
        if s.time % stride == 0 {
            out.push(s.clone());
        }
    });
    Ok(out)
}
