//! Transport multigraph, latency functions, OD demands and routes.
//!
//! Routes are sequences of edge indices, never node sequences: parallel
//! edges between the same pair of nodes give distinct routes.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// `tau(y) = a + b * y^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyFn {
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

impl LatencyFn {
    pub fn new(a: f64, b: f64, k: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite() && b >= 0.0 && b.is_finite()) {
            return Err(Error::invalid(format!("latency coefficients must be nonnegative (a={a}, b={b})")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("latency exponent must be positive (k={k})")));
        }
        Ok(Self { a, b, k })
    }

    pub fn constant(a: f64) -> Self {
        Self { a, b: 0.0, k: 1.0 }
    }

    /// `a + b y`.
    pub fn affine(a: f64, b: f64) -> Self {
        Self { a, b, k: 1.0 }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.a + self.b * pow(y, self.k)
    }

    /// `int_0^y tau(z) dz = a y + b y^(k+1) / (k+1)`.
    pub fn integral(&self, y: f64) -> f64 {
        self.a * y + self.b * pow(y, self.k + 1.0) / (self.k + 1.0)
    }

    pub fn derivative(&self, y: f64) -> f64 {
        if self.b == 0.0 {
            0.0
        } else {
            self.b * self.k * pow(y, self.k - 1.0)
        }
    }

    pub fn strictly_increasing(&self) -> bool {
        self.b > 0.0
    }
}

fn pow(y: f64, k: f64) -> f64 {
    if k == 1.0 {
        y
    } else if y <= 0.0 {
        0.0
    } else {
        y.powf(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub latency: LatencyFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    od_pairs: Vec<OdPair>,
}

impl Network {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>, od_pairs: Vec<OdPair>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if seen.insert(n.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node id {n}")));
            }
        }
        let mut edge_ids = HashMap::new();
        for e in &edges {
            if e.tail >= nodes.len() || e.head >= nodes.len() {
                return Err(Error::invalid(format!("edge {} has an unknown endpoint", e.id)));
            }
            if edge_ids.insert(e.id.as_str(), ()).is_some() {
                return Err(Error::invalid(format!("duplicate edge id {}", e.id)));
            }
        }
        for (w, od) in od_pairs.iter().enumerate() {
            if od.origin >= nodes.len() || od.destination >= nodes.len() {
                return Err(Error::invalid(format!("OD pair {w} has an unknown endpoint")));
            }
            if od.origin == od.destination {
                return Err(Error::invalid(format!("OD pair {w} has identical origin and destination")));
            }
            if !(od.demand >= 0.0 && od.demand.is_finite()) {
                return Err(Error::invalid(format!("OD pair {w} has invalid demand {}", od.demand)));
            }
        }
        Ok(Self { nodes, edges, od_pairs })
    }

    /// Builds a network from string node ids; convenient for fixtures and tests.
    pub fn from_parts(
        nodes: &[&str],
        edges: &[(&str, &str, &str, LatencyFn)],
        od_pairs: &[(&str, &str, f64)],
    ) -> Result<Self> {
        let node_ids: Vec<String> = nodes.iter().map(|s| s.to_string()).collect();
        let lookup = |id: &str| {
            node_ids
                .iter()
                .position(|n| n == id)
                .ok_or_else(|| Error::invalid(format!("unknown node {id}")))
        };
        let edges = edges
            .iter()
            .map(|(id, t, h, l)| Ok(Edge { id: id.to_string(), tail: lookup(t)?, head: lookup(h)?, latency: *l }))
            .collect::<Result<Vec<_>>>()?;
        let ods = od_pairs
            .iter()
            .map(|(o, d, dem)| Ok(OdPair { origin: lookup(o)?, destination: lookup(d)?, demand: *dem }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(node_ids, edges, ods)
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == id)
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn with_demands(&self, demands: &[f64]) -> Result<Self> {
        if demands.len() != self.od_pairs.len() {
            return Err(Error::DimensionMismatch { expected: self.od_pairs.len(), got: demands.len() });
        }
        let ods = self
            .od_pairs
            .iter()
            .zip(demands)
            .map(|(od, &d)| OdPair { demand: d, ..od.clone() })
            .collect();
        Self::new(self.nodes.clone(), self.edges.clone(), ods)
    }

    /// Edge costs `tau_e(y_e)`.
    pub fn edge_costs(&self, y: &[f64]) -> Vec<f64> {
        self.edges.iter().zip(y).map(|(e, &v)| e.latency.eval(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub od: usize,
    pub edges: Vec<usize>,
}

/// Routes of every OD pair and the edge/route incidence they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSet {
    routes: Vec<Route>,
    by_od: Vec<Vec<usize>>,
    edge_count: usize,
}

impl RouteSet {
    /// Validates explicit routes (e.g. from a `route` line of a network file).
    pub fn from_routes(net: &Network, mut routes: Vec<Route>) -> Result<Self> {
        for r in &routes {
            let od = net
                .od_pairs
                .get(r.od)
                .ok_or_else(|| Error::invalid(format!("route refers to unknown OD index {}", r.od)))?;
            if r.edges.is_empty() {
                return Err(Error::invalid("empty route"));
            }
            let mut at = od.origin;
            let mut visited = vec![at];
            for &e in &r.edges {
                let edge = net
                    .edges
                    .get(e)
                    .ok_or_else(|| Error::invalid(format!("route refers to unknown edge index {e}")))?;
                if edge.tail != at {
                    return Err(Error::invalid(format!("route edge {} does not continue from node {}", edge.id, net.nodes[at])));
                }
                at = edge.head;
                if visited.contains(&at) {
                    return Err(Error::invalid(format!("route revisits node {}", net.nodes[at])));
                }
                visited.push(at);
            }
            if at != od.destination {
                return Err(Error::invalid(format!("route for OD {} does not end at its destination", r.od)));
            }
        }
        routes.sort_by(|a, b| (a.od, &a.edges).cmp(&(b.od, &b.edges)));
        if routes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate route"));
        }
        let mut by_od = vec![Vec::new(); net.od_pairs.len()];
        for (p, r) in routes.iter().enumerate() {
            by_od[r.od].push(p);
        }
        if let Some(w) = by_od.iter().position(Vec::is_empty) {
            return Err(Error::NoRouteForOd(w));
        }
        Ok(Self { routes, by_od, edge_count: net.edges.len() })
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Route indices belonging to OD pair `w`.
    pub fn od_routes(&self, w: usize) -> &[usize] {
        &self.by_od[w]
    }

    pub fn od_count(&self) -> usize {
        self.by_od.len()
    }

    /// Dense `|E| x |P|` 0/1 incidence matrix.
    pub fn theta(&self) -> Vec<Vec<u8>> {
        let mut t = vec![vec![0; self.routes.len()]; self.edge_count];
        for (p, r) in self.routes.iter().enumerate() {
            for &e in &r.edges {
                t[e][p] = 1;
            }
        }
        t
    }

    /// Human-readable route label: edge ids joined by `-`.
    pub fn label(&self, net: &Network, p: usize) -> String {
        self.routes[p].edges.iter().map(|&e| net.edges[e].id.as_str()).collect::<Vec<_>>().join("-")
    }

    /// `y = Theta x`.
    pub fn edge_flows(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.routes.len() {
            return Err(Error::DimensionMismatch { expected: self.routes.len(), got: x.len() });
        }
        let mut y = vec![0.0; self.edge_count];
        for (r, &v) in self.routes.iter().zip(x) {
            for &e in &r.edges {
                y[e] += v;
            }
        }
        Ok(y)
    }

    /// `G = Theta^T c` for edge costs `c`.
    pub fn route_costs_from_edge_costs(&self, edge_costs: &[f64]) -> Vec<f64> {
        self.routes.iter().map(|r| r.edges.iter().map(|&e| edge_costs[e]).sum()).collect()
    }

    /// Path flow `x` summed per OD pair.
    pub fn od_totals(&self, x: &[f64]) -> Vec<f64> {
        self.by_od.iter().map(|ps| ps.iter().map(|&p| x[p]).sum()).collect()
    }
}

/// All simple directed paths for every OD pair, in lexicographic order of
/// edge indices.
///
/// Networks with at most 12 edges are always enumerated exhaustively;
/// larger networks fail with `RouteExplosion` once an OD pair exceeds
/// `max_routes_per_od` routes.
pub fn enumerate_routes(net: &Network, max_routes_per_od: usize) -> Result<RouteSet> {
    let exhaustive = net.edges.len() <= 12;
    let mut outgoing = vec![Vec::new(); net.nodes.len()];
    for (i, e) in net.edges.iter().enumerate() {
        outgoing[e.tail].push(i);
    }

    let mut routes = Vec::new();
    for (w, od) in net.od_pairs.iter().enumerate() {
        let mut found = Vec::new();
        let mut on_path = vec![false; net.nodes.len()];
        let mut stack = Vec::new();
        on_path[od.origin] = true;
        dfs(net, &outgoing, od.origin, od.destination, &mut on_path, &mut stack, &mut found, exhaustive, max_routes_per_od)
            .map_err(|_| Error::RouteExplosion { od: w, limit: max_routes_per_od })?;
        if found.is_empty() {
            return Err(Error::NoRouteForOd(w));
        }
        routes.extend(found.into_iter().map(|edges| Route { od: w, edges }));
    }
    RouteSet::from_routes(net, routes)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    net: &Network,
    outgoing: &[Vec<usize>],
    at: usize,
    target: usize,
    on_path: &mut [bool],
    stack: &mut Vec<usize>,
    found: &mut Vec<Vec<usize>>,
    exhaustive: bool,
    limit: usize,
) -> std::result::Result<(), ()> {
    if at == target {
        if !exhaustive && found.len() >= limit {
            return Err(());
        }
        found.push(stack.clone());
        return Ok(());
    }
    for &e in &outgoing[at] {
        let next = net.edges[e].head;
        if on_path[next] {
            continue;
        }
        on_path[next] = true;
        stack.push(e);
        let r = dfs(net, outgoing, next, target, on_path, stack, found, exhaustive, limit);
        stack.pop();
        on_path[next] = false;
        r?;
    }
    Ok(())
}

/// `y = Theta x`.
pub fn edge_flows(rs: &RouteSet, x: &[f64]) -> Result<Vec<f64>> {
    rs.edge_flows(x)
}

/// `G_p(x) = sum_{e in p} tau_e(y_e)` with `y = Theta x`.
pub fn route_costs(net: &Network, rs: &RouteSet, x: &[f64]) -> Result<Vec<f64>> {
    let y = rs.edge_flows(x)?;
    Ok(rs.route_costs_from_edge_costs(&net.edge_costs(&y)))
}

/// The classical Braess instance (demand 6), with or without the 2->3 link.
///
/// Edge latencies: 1->2 `10y`, 2->4 `y+50`, 1->3 `y+50`, 3->4 `10y`, 2->3 `y+10`.
pub fn braess(with_link: bool) -> Network {
    let mut edges = vec![
        ("e12", "1", "2", LatencyFn::affine(0.0, 10.0)),
        ("e24", "2", "4", LatencyFn::affine(50.0, 1.0)),
        ("e13", "1", "3", LatencyFn::affine(50.0, 1.0)),
        ("e34", "3", "4", LatencyFn::affine(0.0, 10.0)),
    ];
    if with_link {
        edges.push(("e23", "2", "3", LatencyFn::affine(10.0, 1.0)));
    }
    Network::from_parts(&["1", "2", "3", "4"], &edges, &[("1", "4", 6.0)]).expect("static instance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(net: &Network, rs: &RouteSet) -> Vec<String> {
        (0..rs.len()).map(|p| rs.label(net, p)).collect()
    }

    #[test]
    fn parallel_edges_are_distinct_routes() {
        let net = Network::from_parts(
            &["1", "2"],
            &[("a", "1", "2", LatencyFn::affine(0.0, 1.0)), ("b", "1", "2", LatencyFn::affine(0.0, 1.0))],
            &[("1", "2", 2.0)],
        )
        .unwrap();
        let rs = enumerate_routes(&net, 10).unwrap();
        assert_eq!(labels(&net, &rs), ["a", "b"]);
    }

    #[test]
    fn braess_routes() {
        let net = braess(false);
        let rs = enumerate_routes(&net, 10).unwrap();
        assert_eq!(labels(&net, &rs), ["e12-e24", "e13-e34"]);

        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        assert_eq!(labels(&net, &rs), ["e12-e24", "e12-e23-e34", "e13-e34"]);
    }

    #[test]
    fn braess_costs_match_captions() {
        let net = braess(false);
        let rs = enumerate_routes(&net, 10).unwrap();
        assert_eq!(route_costs(&net, &rs, &[3.0, 3.0]).unwrap(), vec![83.0, 83.0]);

        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        assert_eq!(route_costs(&net, &rs, &[2.0, 2.0, 2.0]).unwrap(), vec![92.0, 92.0, 92.0]);
        let y = edge_flows(&rs, &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(y[net.edge_index("e12").unwrap()], 4.0);
        assert_eq!(y[net.edge_index("e24").unwrap()], 2.0);
    }

    #[test]
    fn edge_flow_trivial_cases() {
        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        assert_eq!(edge_flows(&rs, &[0.0; 3]).unwrap(), vec![0.0; 5]);
        assert!(matches!(edge_flows(&rs, &[1.0]), Err(Error::DimensionMismatch { .. })));

        let chain = Network::from_parts(
            &["a", "b", "c", "d"],
            &[
                ("x", "a", "b", LatencyFn::constant(1.0)),
                ("y", "b", "c", LatencyFn::constant(2.0)),
                ("z", "c", "d", LatencyFn::constant(4.0)),
            ],
            &[("a", "d", 5.0)],
        )
        .unwrap();
        let rs = enumerate_routes(&chain, 10).unwrap();
        assert_eq!(edge_flows(&rs, &[5.0]).unwrap(), vec![5.0; 3]);
        assert_eq!(route_costs(&chain, &rs, &[5.0]).unwrap(), vec![7.0]);
        assert_eq!(route_costs(&chain, &rs, &[0.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn theta_columns_are_route_lengths() {
        let net = braess(true);
        let rs = enumerate_routes(&net, 10).unwrap();
        let t = rs.theta();
        assert_eq!(t.len(), 5);
        for (p, r) in rs.routes().iter().enumerate() {
            let col: usize = t.iter().map(|row| row[p] as usize).sum();
            assert_eq!(col, r.edges.len());
        }
    }

    #[test]
    fn missing_route_is_an_error() {
        let net = Network::from_parts(
            &["1", "2", "3"],
            &[("a", "1", "2", LatencyFn::constant(1.0))],
            &[("1", "3", 1.0)],
        )
        .unwrap();
        assert!(matches!(enumerate_routes(&net, 10), Err(Error::NoRouteForOd(0))));
    }

    #[test]
    fn large_networks_refuse_to_truncate() {
        // 7 stages of 2 parallel edges: 14 edges, 128 routes
        let nodes: Vec<String> = (0..8).map(|i| i.to_string()).collect();
        let node_refs: Vec<&str> = nodes.iter().map(String::as_str).collect();
        let ids: Vec<(String, String)> = (0..7).map(|i| (format!("u{i}"), format!("l{i}"))).collect();
        let mut edges = Vec::new();
        for (i, (u, l)) in ids.iter().enumerate() {
            edges.push((u.as_str(), node_refs[i], node_refs[i + 1], LatencyFn::constant(1.0)));
            edges.push((l.as_str(), node_refs[i], node_refs[i + 1], LatencyFn::constant(1.0)));
        }
        let net = Network::from_parts(&node_refs, &edges, &[("0", "7", 1.0)]).unwrap();
        assert!(matches!(enumerate_routes(&net, 100), Err(Error::RouteExplosion { .. })));
        assert_eq!(enumerate_routes(&net, 128).unwrap().len(), 128);
    }

    #[test]
    fn explicit_routes_are_validated() {
        let net = braess(true);
        let e = |id| net.edge_index(id).unwrap();
        let ok = RouteSet::from_routes(&net, vec![Route { od: 0, edges: vec![e("e13"), e("e34")] }]).unwrap();
        assert_eq!(ok.len(), 1);
        assert!(RouteSet::from_routes(&net, vec![Route { od: 0, edges: vec![e("e12"), e("e34")] }]).is_err());
        assert!(RouteSet::from_routes(&net, vec![Route { od: 0, edges: vec![e("e12")] }]).is_err());
        assert!(RouteSet::from_routes(&net, vec![]).is_err());
    }

    #[test]
    fn latency_integral_matches_quadrature() {
        let l = LatencyFn::new(0.5, 0.15, 4.0).unwrap();
        let y = 2.3;
        let steps = 100_000;
        let h = y / steps as f64;
        // composite Simpson
        let mut s = l.eval(0.0) + l.eval(y);
        for i in 1..steps {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * l.eval(i as f64 * h);
        }
        assert!((s * h / 3.0 - l.integral(y)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn edge_flows_are_linear(
            x1 in proptest::collection::vec(0.0f64..10.0, 3),
            x2 in proptest::collection::vec(0.0f64..10.0, 3),
            a in 0.0f64..5.0,
            b in 0.0f64..5.0,
        ) {
            let rs = enumerate_routes(&braess(true), 10).unwrap();
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
            let lhs = rs.edge_flows(&mix).unwrap();
            let y1 = rs.edge_flows(&x1).unwrap();
            let y2 = rs.edge_flows(&x2).unwrap();
            for (e, v) in lhs.iter().enumerate() {
                prop_assert!((v - (a * y1[e] + b * y2[e])).abs() < 1e-9);
            }
        }

        #[test]
        fn route_costs_nondecreasing(
            x in proptest::collection::vec(0.0f64..10.0, 3),
            p in 0usize..3,
            bump in 0.0f64..5.0,
        ) {
            let net = braess(true);
            let rs = enumerate_routes(&net, 10).unwrap();
            let before = route_costs(&net, &rs, &x).unwrap();
            let mut x2 = x.clone();
            x2[p] += bump;
            let after = route_costs(&net, &rs, &x2).unwrap();
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(a + 1e-12 >= *b);
            }
        }
    }
}
