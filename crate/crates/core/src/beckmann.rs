//! Beckmann potential, Wardrop certification and equilibrium solvers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{LatencyFn, Network, Route, RouteSet};

/// Relative demand tolerance used when checking path-flow feasibility.
pub const FEASIBILITY_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub psi: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// `Psi(x) = sum_e int_0^{y_e} tau_e(z) dz` with `y = Theta x`.
pub fn potential(net: &Network, rs: &RouteSet, x: &[f64]) -> Result<f64> {
    let y = rs.edge_flows(x)?;
    Ok(potential_of_edge_flows(net, &y))
}

pub fn potential_of_edge_flows(net: &Network, y: &[f64]) -> f64 {
    net.edges().iter().zip(y).map(|(e, &v)| e.latency.integral(v)).sum()
}

pub fn check_feasible(net: &Network, rs: &RouteSet, x: &[f64]) -> Result<()> {
    if x.len() != rs.len() {
        return Err(Error::DimensionMismatch { expected: rs.len(), got: x.len() });
    }
    if let Some(p) = x.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InfeasibleFlow(format!("route {p} carries negative flow {}", x[p])));
    }
    for (w, (od, total)) in net.od_pairs().iter().zip(rs.od_totals(x)).enumerate() {
        if (total - od.demand).abs() > FEASIBILITY_RTOL * od.demand.max(1.0) {
            return Err(Error::InfeasibleFlow(format!("OD {w} carries {total}, demand is {}", od.demand)));
        }
    }
    Ok(())
}

/// `sum_w sum_{p in P_w} x_p (G_p - min_{q in P_w} G_q)` for a cost vector `g`.
pub fn gap_from_costs(rs: &RouteSet, x: &[f64], g: &[f64]) -> f64 {
    (0..rs.od_count())
        .map(|w| {
            let ps = rs.od_routes(w);
            let min = ps.iter().map(|&p| g[p]).fold(f64::INFINITY, f64::min);
            ps.iter().map(|&p| x[p] * (g[p] - min)).sum::<f64>()
        })
        .sum()
}

/// Wardrop complementarity residual; zero iff `x` is an equilibrium over `rs`.
pub fn wardrop_gap(net: &Network, rs: &RouteSet, x: &[f64]) -> Result<f64> {
    check_feasible(net, rs, x)?;
    let g = crate::network::route_costs(net, rs, x)?;
    Ok(gap_from_costs(rs, x, &g))
}

/// All-or-nothing assignment onto the cheapest route of each OD (lowest index on ties).
fn all_or_nothing(net: &Network, rs: &RouteSet, g: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; rs.len()];
    for (w, od) in net.od_pairs().iter().enumerate() {
        let best = rs
            .od_routes(w)
            .iter()
            .copied()
            .fold(None, |acc: Option<usize>, p| match acc {
                Some(b) if g[b] <= g[p] => Some(b),
                _ => Some(p),
            })
            .expect("every OD has a route");
        s[best] = od.demand;
    }
    s
}

/// Conditional-gradient equilibrium solver started from the all-or-nothing
/// assignment at zero flow.
pub fn solve_equilibrium(net: &Network, rs: &RouteSet, tol: f64, max_iter: usize) -> Result<EquilibriumResult> {
    let zero_costs = rs.route_costs_from_edge_costs(&net.edge_costs(&vec![0.0; rs.edge_count()]));
    let x0 = all_or_nothing(net, rs, &zero_costs);
    solve_equilibrium_from(net, rs, &x0, tol, max_iter)
}

/// Conditional gradient (Frank-Wolfe) with exact line search on `Psi`.
pub fn solve_equilibrium_from(
    net: &Network,
    rs: &RouteSet,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EquilibriumResult> {
    check_feasible(net, rs, x0)?;
    let mut x = x0.to_vec();
    let mut iterations = 0;
    loop {
        let y = rs.edge_flows(&x)?;
        let g = rs.route_costs_from_edge_costs(&net.edge_costs(&y));
        let gap = gap_from_costs(rs, &x, &g);
        if gap <= tol {
            let psi = potential_of_edge_flows(net, &y);
            return Ok(EquilibriumResult { x, y, psi, gap, iterations });
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence { iterations, residual: gap });
        }
        iterations += 1;

        let s = all_or_nothing(net, rs, &g);
        let dir: Vec<f64> = s.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dy = rs.edge_flows(&dir)?;
        let t = line_search(net, &y, &dy);
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi = (*xi + t * di).max(0.0);
        }
    }
}

/// Minimizes `Psi(y + t dy)` over `t in [0, 1]` by bisection on its derivative.
fn line_search(net: &Network, y: &[f64], dy: &[f64]) -> f64 {
    let slope = |t: f64| -> f64 {
        net.edges()
            .iter()
            .zip(y.iter().zip(dy))
            .map(|(e, (&v, &d))| e.latency.eval((v + t * d).max(0.0)) * d)
            .sum()
    };
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-entropy path decomposition of the edge flows `y_star`:
///
/// ```text
/// min sum_w sum_{p in P_w} x_p ln(x_p / |P_w|) - x_p   s.t.  x in X, Theta x = y_star
/// ```
///
/// Solved by cyclic Bregman projections onto the demand and edge
/// constraints, starting from `x_p = |P_w|`. Every iterate keeps the form
/// `x_p = |P_w| mu_w prod_{e in p} nu_e`.
pub fn entropy_path_projection(net: &Network, rs: &RouteSet, y_star: &[f64], tol: f64) -> Result<Vec<f64>> {
    const MAX_SWEEPS: usize = 200_000;
    if y_star.len() != rs.edge_count() {
        return Err(Error::DimensionMismatch { expected: rs.edge_count(), got: y_star.len() });
    }
    if y_star.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Unattainable { residual: f64::INFINITY });
    }

    // constraint rows: (route support, target)
    let mut rows: Vec<(Vec<usize>, f64)> = Vec::new();
    for (w, od) in net.od_pairs().iter().enumerate() {
        rows.push((rs.od_routes(w).to_vec(), od.demand));
    }
    for (e, &target) in y_star.iter().enumerate() {
        let support: Vec<usize> =
            rs.routes().iter().enumerate().filter(|(_, r)| r.edges.contains(&e)).map(|(p, _)| p).collect();
        if support.is_empty() {
            if target != 0.0 {
                return Err(Error::Unattainable { residual: target });
            }
            continue;
        }
        rows.push((support, target));
    }
    let scale = rows.iter().map(|r| r.1).fold(1.0, f64::max);

    let mut x: Vec<f64> = rs.routes().iter().map(|r| rs.od_routes(r.od).len() as f64).collect();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        for (support, target) in &rows {
            let s: f64 = support.iter().map(|&p| x[p]).sum();
            if *target == 0.0 {
                support.iter().for_each(|&p| x[p] = 0.0);
            } else if s == 0.0 {
                return Err(Error::Unattainable { residual: *target });
            } else {
                let ratio = target / s;
                support.iter().for_each(|&p| x[p] *= ratio);
            }
        }
        residual = rows
            .iter()
            .map(|(support, target)| (support.iter().map(|&p| x[p]).sum::<f64>() - target).abs())
            .fold(0.0, f64::max)
            / scale;
        if residual <= tol {
            return Ok(x);
        }
    }

    // Stalled: tell infeasible targets apart from slow convergence.
    let distance = edge_flow_distance(net, rs, y_star)?;
    if distance > 1e-6 * scale {
        Err(Error::Unattainable { residual: distance })
    } else {
        Err(Error::NonConvergence { iterations: MAX_SWEEPS, residual })
    }
}

/// `min_{x in X} ||Theta x - y_star||_inf`, approximated by conditional gradient on
/// the squared distance (its route costs are `Theta^T (Theta x - y_star)`).
pub fn edge_flow_distance(net: &Network, rs: &RouteSet, y_star: &[f64]) -> Result<f64> {
    let zero_costs: Vec<f64> = y_star.iter().map(|v| -v).collect();
    let mut x = all_or_nothing(net, rs, &rs.route_costs_from_edge_costs(&zero_costs));
    for _ in 0..20_000 {
        let y = rs.edge_flows(&x)?;
        let r: Vec<f64> = y.iter().zip(y_star).map(|(a, b)| a - b).collect();
        let g = rs.route_costs_from_edge_costs(&r);
        let s = all_or_nothing(net, rs, &g);
        let dir: Vec<f64> = s.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dy = rs.edge_flows(&dir)?;
        let num: f64 = -r.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        let den: f64 = dy.iter().map(|v| v * v).sum();
        if den == 0.0 || num <= 0.0 {
            break;
        }
        let t = (num / den).min(1.0);
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += t * di;
        }
    }
    let y = rs.edge_flows(&x)?;
    Ok(y.iter().zip(y_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// One-parameter family of equilibria `x(s)`, `s in [lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSegment {
    pub lo: f64,
    pub hi: f64,
    demand: f64,
}

impl EquilibriumSegment {
    /// Path flows at parameter `s`, in route order `(u1 m1, u1 m2, u2 m1, u2 m2)`.
    pub fn point(&self, s: f64) -> Vec<f64> {
        let d = self.demand;
        vec![d * s, d * (0.5 - s), d * (0.5 - s), d * s]
    }
}

#[derive(Debug, Clone)]
pub struct NonuniquenessInstance {
    pub network: Network,
    pub routes: RouteSet,
    pub segment: EquilibriumSegment,
}

/// Network whose Wardrop equilibrium is a segment of path flows with one
/// common edge flow.
///
/// Two parallel edges `u1, u2` run 1->2, two parallel edges `m1, m2` run
/// 2->3 and `e34` runs 3->4; OD (1,4). Every route picks one upper and one
/// middle edge, so `Theta` has the kernel direction `(1, -1, -1, 1)` and the
/// flows `d * (s, 1/2 - s, 1/2 - s, s)` are equilibria for all `s in [0, 1/2]`.
pub fn build_nonuniqueness_instance() -> NonuniquenessInstance {
    build_nonuniqueness_instance_with_demand(1.0)
}

pub fn build_nonuniqueness_instance_with_demand(demand: f64) -> NonuniquenessInstance {
    let lin = LatencyFn::affine(0.0, 1.0);
    let network = Network::from_parts(
        &["1", "2", "3", "4"],
        &[
            ("u1", "1", "2", lin),
            ("u2", "1", "2", lin),
            ("m1", "2", "3", lin),
            ("m2", "2", "3", lin),
            ("e34", "3", "4", LatencyFn::constant(1.0)),
        ],
        &[("1", "4", demand)],
    )
    .expect("static instance is valid");
    let idx = |id: &str| network.edge_index(id).expect("known edge");
    let routes = ["u1", "u2"]
        .iter()
        .flat_map(|u| ["m1", "m2"].iter().map(move |m| (*u, *m)))
        .map(|(u, m)| Route { od: 0, edges: vec![idx(u), idx(m), idx("e34")] })
        .collect();
    let routes = RouteSet::from_routes(&network, routes).expect("static routes are valid");
    NonuniquenessInstance { network, routes, segment: EquilibriumSegment { lo: 0.0, hi: 0.5, demand } }
}
