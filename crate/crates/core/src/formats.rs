//! Text input formats and numeric output formatting.
//!
//! Zone file:
//!
//! ```text
//! zones 2
//! zone 1 100 120
//! zone 2 80 60
//! costrow 1 0.0 1.5
//! costrow 2 1.5 0.0
//! chain pL 1 seed 7 steps 1000000     # optional
//! ```
//!
//! Network file:
//!
//! ```text
//! node 1
//! node 2
//! edge a 1 2 0 1 1          # id tail head a b k: tau(y) = a + b y^k
//! od 1 2 6
//! route 1 a                 # optional; OD index is 1-based
//! dynamics T 1 schedule harmonic 1 seed 7 steps 100000 stride 100 players 1000   # optional
//! ```
//!
//! `#` starts a comment. Zone and OD indices are 1-based.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::dynamics::{DynamicsConfig, GammaSchedule};
use crate::error::{Error, Result};
use crate::network::{enumerate_routes, Edge, LatencyFn, Network, OdPair, Route, RouteSet};
use crate::od_entropy::ZoneData;

/// Route enumeration cap applied to networks with more than 12 edges.
pub const DEFAULT_MAX_ROUTES_PER_OD: usize = 1000;

struct Lines<'a> {
    file: &'a Path,
    items: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Lines<'a> {
    fn new(file: &'a Path, text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .filter_map(|(i, l)| {
                let body = l.split('#').next().unwrap_or("");
                let toks: Vec<&str> = body.split_whitespace().collect();
                (!toks.is_empty()).then_some((i + 1, toks))
            })
            .collect();
        Self { file, items }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { file: self.file.to_path_buf(), line, msg: msg.into() }
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(0, |(l, _)| *l)
    }
}

fn real(lines: &Lines, line: usize, tok: &str) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(lines.err(line, format!("expected a real number, found `{tok}`"))),
    }
}

fn uint(lines: &Lines, line: usize, tok: &str) -> Result<u64> {
    tok.parse::<u64>().map_err(|_| lines.err(line, format!("expected a nonnegative integer, found `{tok}`")))
}

fn arity(lines: &Lines, line: usize, toks: &[&str], n: usize) -> Result<()> {
    if toks.len() != n {
        return Err(lines.err(line, format!("`{}` takes {} fields, found {}", toks[0], n - 1, toks.len() - 1)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub p_l: f64,
    pub seed: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneFile {
    pub zones: ZoneData,
    pub chain: Option<ChainSpec>,
}

pub fn parse_zone_file(file: &Path, text: &str) -> Result<ZoneFile> {
    let lines = Lines::new(file, text);
    let mut n: Option<usize> = None;
    let mut l: Vec<Option<f64>> = Vec::new();
    let mut w: Vec<Option<f64>> = Vec::new();
    let mut cost: Vec<Option<Vec<f64>>> = Vec::new();
    let mut chain = None;

    for (line, toks) in &lines.items {
        let line = *line;
        let index = |tok: &str, n: usize| -> Result<usize> {
            let i = uint(&lines, line, tok)? as usize;
            if i == 0 || i > n {
                return Err(lines.err(line, format!("zone index {i} outside 1..={n}")));
            }
            Ok(i - 1)
        };
        match toks[0] {
            "zones" => {
                arity(&lines, line, toks, 2)?;
                if n.is_some() {
                    return Err(lines.err(line, "duplicate `zones` header"));
                }
                let k = uint(&lines, line, toks[1])? as usize;
                if k == 0 {
                    return Err(lines.err(line, "zone count must be positive"));
                }
                n = Some(k);
                l = vec![None; k];
                w = vec![None; k];
                cost = vec![None; k];
            }
            "zone" => {
                let k = n.ok_or_else(|| lines.err(line, "`zone` before `zones` header"))?;
                arity(&lines, line, toks, 4)?;
                let i = index(toks[1], k)?;
                if l[i].is_some() {
                    return Err(lines.err(line, format!("zone {} defined twice", i + 1)));
                }
                l[i] = Some(real(&lines, line, toks[2])?);
                w[i] = Some(real(&lines, line, toks[3])?);
            }
            "costrow" => {
                let k = n.ok_or_else(|| lines.err(line, "`costrow` before `zones` header"))?;
                arity(&lines, line, toks, k + 2)?;
                let i = index(toks[1], k)?;
                if cost[i].is_some() {
                    return Err(lines.err(line, format!("cost row {} defined twice", i + 1)));
                }
                cost[i] = Some(toks[2..].iter().map(|t| real(&lines, line, t)).collect::<Result<_>>()?);
            }
            "chain" => {
                chain = Some(parse_chain(&lines, line, toks)?);
            }
            other => return Err(lines.err(line, format!("unknown keyword `{other}`"))),
        }
    }

    let end = lines.last_line();
    let k = n.ok_or_else(|| lines.err(end, "missing `zones` header"))?;
    let collect = |v: Vec<Option<f64>>, what: &str| -> Result<Vec<f64>> {
        v.into_iter()
            .enumerate()
            .map(|(i, x)| x.ok_or_else(|| lines.err(end, format!("missing {what} for zone {}", i + 1))))
            .collect()
    };
    let l = collect(l, "`zone` line")?;
    let w = collect(w, "`zone` line")?;
    let cost = cost
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| lines.err(end, format!("missing `costrow` {}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    debug_assert_eq!(cost.len(), k);
    let zones = ZoneData::new(l, w, cost)?;
    Ok(ZoneFile { zones, chain })
}

fn parse_chain(lines: &Lines, line: usize, toks: &[&str]) -> Result<ChainSpec> {
    arity(lines, line, toks, 7)?;
    if toks[1] != "pL" || toks[3] != "seed" || toks[5] != "steps" {
        return Err(lines.err(line, "expected `chain pL <value> seed <u64> steps <count>`"));
    }
    Ok(ChainSpec { p_l: real(lines, line, toks[2])?, seed: uint(lines, line, toks[4])?, steps: uint(lines, line, toks[6])? })
}

/// Parses a standalone config file holding `chain` and/or `dynamics` lines.
pub fn parse_config_file(file: &Path, text: &str) -> Result<(Option<ChainSpec>, Option<DynamicsSpec>)> {
    let lines = Lines::new(file, text);
    let (mut chain, mut dynamics) = (None, None);
    for (line, toks) in &lines.items {
        match toks[0] {
            "chain" => chain = Some(parse_chain(&lines, *line, toks)?),
            "dynamics" => dynamics = Some(parse_dynamics(&lines, *line, toks)?),
            other => return Err(lines.err(*line, format!("unknown keyword `{other}`"))),
        }
    }
    Ok((chain, dynamics))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSpec {
    pub config: DynamicsConfig,
    pub stride: u64,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            config: DynamicsConfig {
                temperature: 1.0,
                schedule: GammaSchedule::Harmonic { gamma0: 1.0 },
                seed: 0,
                steps: 10_000,
                players_per_unit: 1,
            },
            stride: 100,
        }
    }
}

fn parse_dynamics(lines: &Lines, line: usize, toks: &[&str]) -> Result<DynamicsSpec> {
    let usage = "expected `dynamics T <real> schedule <harmonic g0 | constant g | sqrt alpha> seed <u64> steps <count> stride <count> [players <count>]`";
    if toks.len() != 12 && toks.len() != 14 {
        return Err(lines.err(line, usage));
    }
    if toks[1] != "T" || toks[3] != "schedule" || toks[6] != "seed" || toks[8] != "steps" || toks[10] != "stride" {
        return Err(lines.err(line, usage));
    }
    let temperature = real(lines, line, toks[2])?;
    let value = real(lines, line, toks[5])?;
    let seed = uint(lines, line, toks[7])?;
    let steps = uint(lines, line, toks[9])?;
    let stride = uint(lines, line, toks[11])?;
    let players_per_unit = if toks.len() == 14 {
        if toks[12] != "players" {
            return Err(lines.err(line, usage));
        }
        uint(lines, line, toks[13])?
    } else {
        1
    };
    let schedule = match toks[4] {
        "harmonic" => GammaSchedule::Harmonic { gamma0: value },
        "constant" => GammaSchedule::Constant { gamma: value },
        "sqrt" => GammaSchedule::SqrtHorizon { alpha: value, horizon: steps.max(1) },
        other => return Err(lines.err(line, format!("unknown schedule `{other}`"))),
    };
    if stride == 0 {
        return Err(lines.err(line, "stride must be positive"));
    }
    let config = DynamicsConfig { temperature, schedule, seed, steps, players_per_unit };
    config.validate().map_err(|e| lines.err(line, e.to_string()))?;
    Ok(DynamicsSpec { config, stride })
}

#[derive(Debug, Clone)]
pub struct NetworkFile {
    pub network: Network,
    pub routes: RouteSet,
    pub dynamics: Option<DynamicsSpec>,
}

pub fn parse_network_file(file: &Path, text: &str) -> Result<NetworkFile> {
    let lines = Lines::new(file, text);
    let mut nodes: Vec<String> = Vec::new();
    let mut edges: Vec<Edge> = Vec::new();
    let mut ods: Vec<OdPair> = Vec::new();
    let mut route_lines: Vec<(usize, usize, Vec<String>)> = Vec::new();
    let mut dynamics = None;

    let node = |nodes: &[String], line: usize, id: &str| -> Result<usize> {
        nodes.iter().position(|n| n == id).ok_or_else(|| lines.err(line, format!("unknown node `{id}`")))
    };

    for (line, toks) in &lines.items {
        let line = *line;
        match toks[0] {
            "node" => {
                arity(&lines, line, toks, 2)?;
                if nodes.iter().any(|n| n == toks[1]) {
                    return Err(lines.err(line, format!("duplicate node `{}`", toks[1])));
                }
                nodes.push(toks[1].to_string());
            }
            "edge" => {
                arity(&lines, line, toks, 7)?;
                if edges.iter().any(|e| e.id == toks[1]) {
                    return Err(lines.err(line, format!("duplicate edge `{}`", toks[1])));
                }
                let latency = LatencyFn::new(
                    real(&lines, line, toks[4])?,
                    real(&lines, line, toks[5])?,
                    real(&lines, line, toks[6])?,
                )
                .map_err(|e| lines.err(line, e.to_string()))?;
                edges.push(Edge {
                    id: toks[1].to_string(),
                    tail: node(&nodes, line, toks[2])?,
                    head: node(&nodes, line, toks[3])?,
                    latency,
                });
            }
            "od" => {
                arity(&lines, line, toks, 4)?;
                let demand = real(&lines, line, toks[3])?;
                if demand < 0.0 {
                    return Err(lines.err(line, "demand must be nonnegative"));
                }
                ods.push(OdPair { origin: node(&nodes, line, toks[1])?, destination: node(&nodes, line, toks[2])?, demand });
            }
            "route" => {
                if toks.len() < 3 {
                    return Err(lines.err(line, "`route` needs an OD index and at least one edge"));
                }
                let w = uint(&lines, line, toks[1])? as usize;
                route_lines.push((line, w, toks[2..].iter().map(|s| s.to_string()).collect()));
            }
            "dynamics" => dynamics = Some(parse_dynamics(&lines, line, toks)?),
            other => return Err(lines.err(line, format!("unknown keyword `{other}`"))),
        }
    }

    let end = lines.last_line();
    if nodes.is_empty() {
        return Err(lines.err(end, "network has no nodes"));
    }
    if edges.is_empty() {
        return Err(lines.err(end, "network has no edges"));
    }
    if ods.is_empty() {
        return Err(lines.err(end, "network has no OD pairs"));
    }
    let network = Network::new(nodes, edges, ods).map_err(|e| lines.err(end, e.to_string()))?;

    let routes = if route_lines.is_empty() {
        enumerate_routes(&network, DEFAULT_MAX_ROUTES_PER_OD)?
    } else {
        let mut routes = Vec::new();
        for (line, w, ids) in route_lines {
            if w == 0 || w > network.od_pairs().len() {
                return Err(lines.err(line, format!("OD index {w} outside 1..={}", network.od_pairs().len())));
            }
            let edges = ids
                .iter()
                .map(|id| network.edge_index(id).ok_or_else(|| lines.err(line, format!("unknown edge `{id}`"))))
                .collect::<Result<Vec<_>>>()?;
            routes.push(Route { od: w - 1, edges });
        }
        RouteSet::from_routes(&network, routes).map_err(|e| match e {
            Error::InvalidInput(msg) => lines.err(end, msg),
            other => other,
        })?
    };
    Ok(NetworkFile { network, routes, dynamics })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_zone_file(path: &Path) -> Result<ZoneFile> {
    parse_zone_file(path, &read_to_string(path)?)
}

pub fn load_network_file(path: &Path) -> Result<NetworkFile> {
    parse_network_file(path, &read_to_string(path)?)
}

/// Rounds to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Display form of [`round_sig`].
pub fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(f) = n.as_f64() {
                *v = serde_json::Number::from_f64(round_sig(f)).map_or(Value::Null, Value::Number);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut v = serde_json::to_value(value).expect("serializable output");
    round_value(&mut v);
    serde_json::to_string_pretty(&v).expect("JSON value serializes")
}


#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn zone_file_round() {
        let text = "# two zones\nzones 2\nzone 1 3 2\nzone 2 1 2\ncostrow 1 0 1.0e0\ncostrow 2 1 0 # trailing\nchain pL 1 seed 7 steps 100\n";
        let zf = parse_zone_file(p(), text).unwrap();
        assert_eq!(zf.zones.residents(), &[3.0, 1.0]);
        assert_eq!(zf.zones.cost()[0], vec![0.0, 1.0]);
        assert_eq!(zf.chain, Some(ChainSpec { p_l: 1.0, seed: 7, steps: 100 }));
    }

    #[test]
    fn zone_file_errors_carry_lines() {
        let err = parse_zone_file(p(), "zones 2\nzone 1 3 2\nzone 3 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_zone_file(p(), "zones 1\nzone 1 1 1\ncostrow 1 x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_zone_file(p(), "zones 1\nzone 1 1 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = parse_zone_file(p(), "zones 2\nzone 1 1 1\nzone 2 1 2\ncostrow 1 0 0\ncostrow 2 0 0\n").unwrap_err();
        assert!(matches!(err, Error::InfeasibleMarginals { .. }));
    }

    #[test]
    fn network_file_with_scientific_notation() {
        let text = "node 1\nnode 2\nedge a 1 2 5e-1 1.5E+1 1\nedge b 1 2 0 1 2\nod 1 2 2\n";
        let nf = parse_network_file(p(), text).unwrap();
        assert_eq!(nf.network.edges()[0].latency, LatencyFn { a: 0.5, b: 15.0, k: 1.0 });
        assert_eq!(nf.routes.len(), 2);
        assert!(nf.dynamics.is_none());
    }

    #[test]
    fn explicit_routes_and_dynamics_line() {
        let text = "node 1\nnode 2\nedge a 1 2 0 1 1\nedge b 1 2 0 1 1\nod 1 2 2\nroute 1 b\n\
                    dynamics T 0.5 schedule sqrt 2 seed 9 steps 400 stride 10 players 50\n";
        let nf = parse_network_file(p(), text).unwrap();
        assert_eq!(nf.routes.len(), 1);
        assert_eq!(nf.routes.routes()[0].edges, vec![1]);
        let d = nf.dynamics.unwrap();
        assert_eq!(d.config.schedule, GammaSchedule::SqrtHorizon { alpha: 2.0, horizon: 400 });
        assert_eq!(d.config.players_per_unit, 50);
        assert_eq!(d.stride, 10);
    }

    #[test]
    fn empty_network_is_a_parse_error() {
        assert!(matches!(parse_network_file(p(), ""), Err(Error::Parse { .. })));
        assert!(matches!(parse_network_file(p(), "# nothing\n\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_network_lines() {
        assert!(matches!(parse_network_file(p(), "node 1\nedge a 1 2 0 1 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_network_file(p(), "node 1\nnode 2\nedge a 1 2 0 1 0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_network_file(p(), "node 1\nnode 2\nedge a 1 2 nan 1 1\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_network_file(p(), "node 1\nfoo\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(92.00000000000001), 92.0);
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(fmt_num(-2.5e-20), "-0.000000000000000000025");
        assert_eq!(to_json(&vec![1.0 / 3.0]), "[\n  0.333333333333\n]");
    }
}
