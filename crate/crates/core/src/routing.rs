//! Commuter routing games on a small road network.
//!
//! Each driver picks one route from a fixed set. Edge loads drive BPR travel
//! times, congestion-scaled fuel use and signal delays; a driver's features
//! are the negated totals `(time, distance, gas, stopped_time)` along their
//! chosen route.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::game::{Game, UtilityWeights};

pub const FEATURE_NAMES: [&str; 4] = ["time", "distance", "gas", "stopped_time"];
const GAS_CONGESTION: f64 = 0.3;
const SIGNAL_DELAY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub length_km: f64,
    pub base_time_min: f64,
    pub capacity: f64,
    /// Litres per km at free flow.
    pub gas_rate: f64,
    #[serde(default)]
    pub has_signal: bool,
    /// Part of the major roadway affected by construction.
    #[serde(default)]
    pub major: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub origin: usize,
    pub destination: usize,
    /// Each route is a list of edge indices from origin to destination.
    pub routes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Congestion {
    pub bpr_coeff: f64,
    pub bpr_power: f64,
}

impl Default for Congestion {
    fn default() -> Self {
        Self {
            bpr_coeff: 0.15,
            bpr_power: 4.0,
        }
    }
}

/// New road segments plus one extra route per driver using them. Route edge
/// indices refer to the network after the highway edges are appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highway {
    pub edges: Vec<Edge>,
    pub routes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    #[serde(default)]
    pub name: String,
    pub nodes: usize,
    pub edges: Vec<Edge>,
    pub drivers: Vec<Driver>,
    pub true_w: Vec<f64>,
    #[serde(default)]
    pub congestion: Congestion,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub highway: Option<Highway>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_driver: Option<Driver>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    AddHighway,
    AddDriver,
    GasShortage,
    Congestion,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::AddHighway,
        VariantKind::AddDriver,
        VariantKind::GasShortage,
        VariantKind::Congestion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VariantKind::AddHighway => "add_highway",
            VariantKind::AddDriver => "add_driver",
            VariantKind::GasShortage => "gas_shortage",
            VariantKind::Congestion => "congestion",
        }
    }
}

impl std::str::FromStr for VariantKind {
    type Err = IceError;

    fn from_str(s: &str) -> Result<Self> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| IceError::Config(format!("unknown variant '{s}'")))
    }
}

fn edge(from: usize, to: usize, length_km: f64, base_time_min: f64, capacity: f64, gas_rate: f64) -> Edge {
    Edge {
        from,
        to,
        length_km,
        base_time_min,
        capacity,
        gas_rate,
        has_signal: false,
        major: false,
    }
}

/// Nine intersections on a 3x3 grid, node `3 * row + col`, with the
/// arterial running 0-3-4-5-8 and an optional highway straight from 0 to 8.
fn grid_edges() -> Vec<Edge> {
    let mut e = vec![
        edge(0, 1, 2.0, 4.0, 4.0, 0.08),
        edge(1, 2, 3.0, 6.0, 2.0, 0.08),
        edge(3, 4, 2.0, 3.0, 8.0, 0.07),
        edge(4, 5, 3.0, 4.0, 8.0, 0.07),
        edge(6, 7, 2.0, 5.0, 2.0, 0.09),
        edge(7, 8, 4.0, 7.0, 4.0, 0.08),
        edge(0, 3, 3.0, 4.0, 8.0, 0.07),
        edge(3, 6, 2.0, 4.0, 2.0, 0.09),
        edge(1, 4, 3.0, 5.0, 4.0, 0.08),
        edge(4, 7, 2.0, 4.0, 4.0, 0.08),
        edge(2, 5, 1.0, 2.0, 2.0, 0.08),
        edge(5, 8, 2.0, 3.0, 8.0, 0.07),
    ];
    for i in [2, 3, 6, 11] {
        e[i].major = true;
    }
    for i in [2, 8, 9, 10] {
        e[i].has_signal = true;
    }
    e
}

const TO_8: [&[usize]; 4] = [&[6, 2, 3, 11], &[0, 1, 10, 11], &[6, 7, 4, 5], &[0, 8, 9, 5]];
const TO_5: [&[usize]; 4] = [&[6, 2, 3], &[0, 1, 10], &[0, 8, 3], &[6, 7, 4, 5, 11]];
const TO_7: [&[usize]; 4] = [&[6, 7, 4], &[0, 8, 9], &[6, 2, 9], &[0, 1, 10, 11, 5]];

fn driver(destination: usize, routes: &[&[usize]]) -> Driver {
    Driver {
        origin: 0,
        destination,
        routes: routes.iter().map(|r| r.to_vec()).collect(),
    }
}

fn highway_route(destination: usize) -> Vec<usize> {
    match destination {
        8 => vec![12],
        5 => vec![12, 11],
        7 => vec![12, 5],
        _ => unreachable!(),
    }
}

impl RoutingConfig {
    /// Seven drivers leaving node 0 for homes at nodes 8, 5 and 7, four
    /// routes each.
    pub fn default_network() -> Self {
        let homes = [8, 8, 8, 5, 5, 7, 7];
        let routes_for = |d: usize| match d {
            8 => &TO_8,
            5 => &TO_5,
            _ => &TO_7,
        };
        let drivers = homes.iter().map(|&d| driver(d, routes_for(d))).collect();
        Self {
            name: "commute".into(),
            nodes: 9,
            edges: grid_edges(),
            drivers,
            true_w: vec![1.0, 0.0, 0.2, 0.1],
            congestion: Congestion::default(),
            seed: 0,
            highway: Some(Highway {
                edges: vec![edge(0, 8, 7.0, 6.0, 8.0, 0.06)],
                routes: homes.iter().map(|&d| highway_route(d)).collect(),
            }),
            extra_driver: Some(driver(8, &TO_8)),
        }
    }

    /// Five drivers with three routes each.
    pub fn desk_scale() -> Self {
        let homes = [8, 8, 5, 7, 7];
        let routes_for = |d: usize| match d {
            8 => &TO_8[..3],
            5 => &TO_5[..3],
            _ => &TO_7[..3],
        };
        let drivers = homes.iter().map(|&d| driver(d, routes_for(d))).collect();
        let mut edges = grid_edges();
        edges[6].capacity = 4.0;
        Self {
            name: "commute_desk".into(),
            nodes: 9,
            edges,
            drivers,
            true_w: vec![1.0, 0.0, 0.2, 0.1],
            congestion: Congestion::default(),
            seed: 0,
            highway: None,
            extra_driver: None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        FEATURE_NAMES.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.drivers.iter().map(|d| d.routes.len()).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_w.len() != FEATURE_NAMES.len() {
            return Err(IceError::Config(format!("true_w has {} entries, expected 4", self.true_w.len())));
        }
        if self.true_w.iter().any(|x| !x.is_finite()) {
            return Err(IceError::Config("true_w must be finite".into()));
        }
        if self.drivers.is_empty() {
            return Err(IceError::Config("no drivers".into()));
        }
        let c = self.congestion;
        if !(c.bpr_coeff >= 0.0 && c.bpr_power > 0.0) {
            return Err(IceError::Config("congestion needs bpr_coeff >= 0 and bpr_power > 0".into()));
        }
        for (j, e) in self.edges.iter().enumerate() {
            if e.from >= self.nodes || e.to >= self.nodes || e.from == e.to {
                return Err(IceError::Config(format!("edge {j} has bad endpoints {}-{}", e.from, e.to)));
            }
            let nums = [e.length_km, e.base_time_min, e.gas_rate];
            if nums.iter().any(|x| !x.is_finite() || *x < 0.0) || !(e.capacity > 0.0) || !e.capacity.is_finite() {
                return Err(IceError::Config(format!("edge {j} has invalid attributes")));
            }
        }
        for (i, d) in self.drivers.iter().enumerate() {
            if d.routes.len() < 2 {
                return Err(IceError::Config(format!("driver {i} needs at least 2 routes")));
            }
            for (r, route) in d.routes.iter().enumerate() {
                self.check_route(d, route)
                    .map_err(|m| IceError::Config(format!("driver {i} route {r}: {m}")))?;
            }
        }
        Ok(())
    }

    fn check_route(&self, d: &Driver, route: &[usize]) -> std::result::Result<(), String> {
        if route.is_empty() {
            return Err("empty route".into());
        }
        let mut at = d.origin;
        let mut seen = vec![false; self.edges.len()];
        for &j in route {
            let e = self.edges.get(j).ok_or_else(|| format!("missing edge {j}"))?;
            if std::mem::replace(&mut seen[j], true) {
                return Err(format!("edge {j} used twice"));
            }
            at = if e.from == at {
                e.to
            } else if e.to == at {
                e.from
            } else {
                return Err(format!("edge {j} does not touch node {at}"));
            };
        }
        if at != d.destination {
            return Err(format!("ends at node {at}, not {}", d.destination));
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<UtilityWeights> {
        UtilityWeights::new(self.true_w.clone())
    }

    /// Route-choice game and its true weights.
    pub fn build(&self) -> Result<(Game, UtilityWeights)> {
        self.validate()?;
        let counts: Vec<usize> = self.drivers.iter().map(|d| d.routes.len()).collect();
        let n = self.drivers.len();
        let total = counts
            .iter()
            .try_fold(1usize, |acc, &m| acc.checked_mul(m))
            .filter(|&t| t <= crate::game::MAX_OUTCOMES)
            .ok_or_else(|| IceError::TooLarge("routing game has too many outcomes".into()))?;
        let k = FEATURE_NAMES.len();
        let mut features = vec![0.0; total * n * k];
        features
            .par_chunks_mut(n * k)
            .enumerate()
            .for_each(|(a, out)| self.fill_outcome(&counts, a, out));
        let names = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        let game = Game::new(counts, k, names, features)?;
        Ok((game, self.weights()?))
    }

    fn fill_outcome(&self, counts: &[usize], mut a: usize, out: &mut [f64]) {
        let n = counts.len();
        let mut choice = vec![0usize; n];
        for i in (0..n).rev() {
            choice[i] = a % counts[i];
            a /= counts[i];
        }
        let mut load = vec![0.0f64; self.edges.len()];
        for (d, &r) in self.drivers.iter().zip(&choice) {
            for &j in &d.routes[r] {
                load[j] += 1.0;
            }
        }
        let c = self.congestion;
        for (i, (d, &r)) in self.drivers.iter().zip(&choice).enumerate() {
            let mut f = [0.0f64; 4];
            for &j in &d.routes[r] {
                let e = &self.edges[j];
                let ratio = load[j] / e.capacity;
                f[0] += e.base_time_min * (1.0 + c.bpr_coeff * ratio.powf(c.bpr_power));
                f[1] += e.length_km;
                f[2] += e.length_km * e.gas_rate * (1.0 + GAS_CONGESTION * ratio);
                if e.has_signal {
                    f[3] += SIGNAL_DELAY * (load[j] - 1.0).max(0.0);
                }
            }
            for (o, v) in out[i * 4..(i + 1) * 4].iter_mut().zip(f) {
                *o = -v;
            }
        }
    }

    pub fn variant(&self, kind: VariantKind) -> Result<RoutingConfig> {
        self.validate()?;
        let mut cfg = self.clone();
        match kind {
            VariantKind::AddHighway => {
                let hw = cfg
                    .highway
                    .take()
                    .ok_or_else(|| IceError::Config("config defines no highway".into()))?;
                if hw.routes.len() != cfg.drivers.len() {
                    return Err(IceError::Config(format!(
                        "highway lists {} routes for {} drivers",
                        hw.routes.len(),
                        cfg.drivers.len()
                    )));
                }
                cfg.edges.extend(hw.edges);
                for (d, r) in cfg.drivers.iter_mut().zip(hw.routes) {
                    d.routes.push(r);
                }
                cfg.extra_driver = None;
                cfg.name = format!("{}_{}", self.name, kind.label());
            }
            VariantKind::AddDriver => {
                let d = cfg
                    .extra_driver
                    .take()
                    .ok_or_else(|| IceError::Config("config defines no extra driver".into()))?;
                cfg.drivers.push(d);
                cfg.highway = None;
            }
            VariantKind::GasShortage => {
                cfg.true_w[2] *= 5.0;
            }
            VariantKind::Congestion => {
                if !cfg.edges.iter().any(|e| e.major) {
                    return Err(IceError::Config("no major roadway edges".into()));
                }
                for e in cfg.edges.iter_mut().filter(|e| e.major) {
                    e.capacity /= 2.0;
                    e.base_time_min *= 2.0;
                }
            }
        }
        if cfg.name == self.name {
            cfg.name = format!("{}_{}", self.name, kind.label());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes() {
        let cfg = RoutingConfig::default_network();
        assert_eq!(cfg.num_outcomes(), 16384);
        let (g, w) = cfg.build().unwrap();
        assert_eq!(g.num_outcomes(), 16384);
        assert_eq!(g.feature_dim(), 4);
        assert_eq!(w.as_slice(), &[1.0, 0.0, 0.2, 0.1]);
        assert_eq!(RoutingConfig::desk_scale().num_outcomes(), 243);
    }

    #[test]
    fn variant_sizes() {
        let cfg = RoutingConfig::default_network();
        assert_eq!(cfg.variant(VariantKind::AddDriver).unwrap().num_outcomes(), 65536);
        let hw = cfg.variant(VariantKind::AddHighway).unwrap();
        assert!(hw.drivers.iter().all(|d| d.routes.len() == 5));
        for kind in VariantKind::ALL {
            let (g, _) = cfg.variant(kind).unwrap().build().unwrap();
            assert_eq!(g.feature_dim(), 4);
        }
    }

    #[test]
    fn gas_shortage_changes_only_weights() {
        let cfg = RoutingConfig::default_network();
        let v = cfg.variant(VariantKind::GasShortage).unwrap();
        let (g0, w0) = cfg.build().unwrap();
        let (g1, w1) = v.build().unwrap();
        assert_eq!(g0.raw_features(), g1.raw_features());
        assert_eq!(w1.as_slice()[2], 5.0 * w0.as_slice()[2]);
    }

    #[test]
    fn congestion_slows_major_edges() {
        let cfg = RoutingConfig::default_network();
        let v = cfg.variant(VariantKind::Congestion).unwrap();
        for (a, b) in cfg.edges.iter().zip(&v.edges) {
            if a.major {
                assert_eq!(b.capacity, a.capacity / 2.0);
                assert_eq!(b.base_time_min, a.base_time_min * 2.0);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn lone_driver_is_near_free_flow() {
        let mut cfg = RoutingConfig::default_network();
        cfg.drivers.truncate(1);
        cfg.drivers.push(driver(8, &TO_8));
        let (g, _) = cfg.build().unwrap();
        // Disjoint routes whose edges all have capacity >= 4.
        let a = g.encode(&[0, 3]).unwrap();
        for (i, r) in [(0, 0), (1, 3)] {
            let free: f64 = TO_8[r].iter().map(|&j| cfg.edges[j].base_time_min).sum();
            let t = -g.features(i, a)[0];
            assert!(t >= free && t - free < 1e-3 * free, "{t} vs {free}");
        }
        assert_eq!(g.features(0, a)[3], 0.0);
    }

    #[test]
    fn zero_length_network() {
        let mut cfg = RoutingConfig::desk_scale();
        cfg.edges.iter_mut().for_each(|e| e.length_km = 0.0);
        let (g, _) = cfg.build().unwrap();
        for a in 0..g.num_outcomes() {
            for i in 0..g.num_players() {
                assert_eq!(g.features(i, a)[1], 0.0);
                assert_eq!(g.features(i, a)[2], 0.0);
            }
        }
    }

    #[test]
    fn identical_drivers_are_symmetric() {
        let (g, _) = RoutingConfig::desk_scale().build().unwrap();
        // Drivers 0 and 1 share origin, destination and routes.
        for a in 0..g.num_outcomes() {
            let mut d = g.decode(a).unwrap();
            d.swap(0, 1);
            let b = g.encode(&d).unwrap();
            assert_eq!(g.features(0, a), g.features(1, b));
        }
    }

    #[test]
    fn more_traffic_never_speeds_anyone_up() {
        let cfg = RoutingConfig::desk_scale();
        let (g, _) = cfg.build().unwrap();
        let mut bigger = cfg.clone();
        bigger.drivers.push(driver(8, &TO_8[..3]));
        let (h, _) = bigger.build().unwrap();
        for a in 0..g.num_outcomes() {
            let digits = g.decode(a).unwrap();
            for r in 0..3 {
                let mut ext = digits.clone();
                ext.push(r);
                let b = h.encode(&ext).unwrap();
                for i in 0..g.num_players() {
                    assert!(-h.features(i, b)[0] >= -g.features(i, a)[0] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn bad_routes_rejected() {
        let mut cfg = RoutingConfig::desk_scale();
        cfg.drivers[0].routes[0] = vec![0, 99];
        assert!(matches!(cfg.build(), Err(IceError::Config(_))));
        let mut cfg = RoutingConfig::desk_scale();
        cfg.drivers[0].routes[0] = vec![0, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = RoutingConfig::desk_scale();
        cfg.drivers[0].routes.truncate(1);
        assert!(cfg.validate().is_err());
        assert!("detour".parse::<VariantKind>().is_err());
        assert_eq!("add_driver".parse::<VariantKind>().unwrap(), VariantKind::AddDriver);
    }
}
