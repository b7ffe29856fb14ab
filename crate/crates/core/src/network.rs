//! Directed traffic graphs, route enumeration and the conservation update.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cells::{CellModel, CellSpec, LocalDensities};
use crate::error::{Error, Result};

/// Internal 0-based node index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

/// Direction of travel `(from, via, to)` through the node `via`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Route {
    pub from: NodeId,
    pub via: NodeId,
    pub to: NodeId,
}

impl Route {
    pub fn new(from: NodeId, via: NodeId, to: NodeId) -> Self {
        Route { from, via, to }
    }
}

/// How turning fractions are derived when the network is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum TurningRule {
    /// Equal split over all admissible continuations.
    UniformNoUturn,
    /// Explicit table keyed by external labels.
    Explicit { entries: Vec<TurningEntry> },
}

/// One entry `f_{(x,u,v)->w}` of an explicit table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurningEntry {
    pub route: [u32; 3],
    pub next: u32,
    pub fraction: f64,
}

/// Declarative node description used by [`NetworkBuilder`].
#[derive(Clone, Debug)]
pub struct NodeDef {
    pub label: u32,
    pub length: f64,
    pub cell: CellSpec,
    /// Counterclockwise neighbour order; defaults to ascending labels.
    pub order: Option<Vec<u32>>,
    pub allow_uturn: bool,
}

/// Routes `(x,u,v)` leaving node `u` towards `v` and the routes `(u,v,w)` they feed.
#[derive(Clone, Debug)]
pub struct EdgeGroup {
    pub tail: NodeId,
    pub head: NodeId,
    pub upstream: Vec<usize>,
    pub downstream: Vec<usize>,
}

/// Turning fractions, one row per route aligned with the downstream list of its edge group.
#[derive(Clone, Debug, PartialEq)]
pub struct TurningFractions {
    rows: Vec<Vec<f64>>,
}

impl TurningFractions {
    pub fn row(&self, route: usize) -> &[f64] {
        &self.rows[route]
    }

    /// Builds fractions from raw rows without checking normalization.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        TurningFractions { rows }
    }

    pub fn validate(&self, net: &TrafficNetwork) -> Result<()> {
        if self.rows.len() != net.route_count() {
            return Err(Error::InvalidNetwork(format!(
                "{} turning rows for {} routes",
                self.rows.len(),
                net.route_count()
            )));
        }
        for (r, row) in self.rows.iter().enumerate() {
            let expected = net.edges[net.route_edge_out[r]].downstream.len();
            if row.len() != expected {
                return Err(Error::InvalidNetwork(format!(
                    "turning row of {} has {} entries, expected {expected}",
                    net.describe(r),
                    row.len()
                )));
            }
            if row.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(Error::TurningFractions {
                    route: net.describe(r),
                    sum: row.iter().sum(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::TurningFractions {
                    route: net.describe(r),
                    sum,
                });
            }
        }
        Ok(())
    }
}

/// Immutable network with dense route indexing.
#[derive(Clone, Debug)]
pub struct TrafficNetwork {
    labels: Vec<u32>,
    label_index: HashMap<u32, NodeId>,
    adjacency: Vec<Vec<bool>>,
    lengths: Vec<f64>,
    cells: Vec<CellModel>,
    order: Vec<Vec<NodeId>>,
    routes: Vec<Route>,
    route_index: HashMap<Route, usize>,
    route_local: Vec<(usize, usize)>,
    node_routes: Vec<Range<usize>>,
    edges: Vec<EdgeGroup>,
    route_edge_out: Vec<usize>,
    route_edge_in: Vec<usize>,
    turning: TurningFractions,
}

impl TrafficNetwork {
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, idx: usize) -> Route {
        self.routes[idx]
    }

    pub fn route_index(&self, route: &Route) -> Option<usize> {
        self.route_index.get(route).copied()
    }

    /// Route index from external labels.
    pub fn route_by_labels(&self, from: u32, via: u32, to: u32) -> Result<usize> {
        let r = Route::new(self.node(from)?, self.node(via)?, self.node(to)?);
        self.route_index(&r).ok_or_else(|| {
            Error::InvalidNetwork(format!("({from},{via},{to}) is not a route"))
        })
    }

    pub fn node(&self, label: u32) -> Result<NodeId> {
        self.label_index
            .get(&label)
            .copied()
            .ok_or(Error::UnknownLabel(label))
    }

    pub fn label(&self, v: NodeId) -> u32 {
        self.labels[v.0]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn length(&self, v: NodeId) -> f64 {
        self.lengths[v.0]
    }

    pub fn cell(&self, v: NodeId) -> &CellModel {
        &self.cells[v.0]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adjacency[u.0][v.0]
    }

    /// Neighbour list of `v` in the order identified with `Z_n`.
    pub fn local_order(&self, v: NodeId) -> &[NodeId] {
        &self.order[v.0]
    }

    /// `{u : (u,v) ∈ E}` in ascending id order.
    pub fn neighbors_in(&self, v: NodeId) -> Result<Vec<NodeId>> {
        self.check(v)?;
        Ok((0..self.node_count())
            .filter(|&u| self.adjacency[u][v.0])
            .map(NodeId)
            .collect())
    }

    /// `{w : (v,w) ∈ E}` in ascending id order.
    pub fn neighbors_out(&self, v: NodeId) -> Result<Vec<NodeId>> {
        self.check(v)?;
        Ok((0..self.node_count())
            .filter(|&w| self.adjacency[v.0][w])
            .map(NodeId)
            .collect())
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if v.0 < self.node_count() {
            Ok(())
        } else {
            Err(Error::InvalidNode(v.0))
        }
    }

    /// Route indices through `v`, a contiguous block.
    pub fn routes_through(&self, v: NodeId) -> Range<usize> {
        self.node_routes[v.0].clone()
    }

    /// Position of the route's endpoints in the local order of its via node.
    pub fn local_indices(&self, route: usize) -> (usize, usize) {
        self.route_local[route]
    }

    pub fn edges(&self) -> &[EdgeGroup] {
        &self.edges
    }

    /// Edge group in which `route` is an upstream (sending) route.
    pub fn out_edge(&self, route: usize) -> usize {
        self.route_edge_out[route]
    }

    /// Edge group in which `route` is a downstream (receiving) route.
    pub fn in_edge(&self, route: usize) -> usize {
        self.route_edge_in[route]
    }

    pub fn turning(&self) -> &TurningFractions {
        &self.turning
    }

    /// Route length factor `l_v` of the via node.
    pub fn route_length(&self, route: usize) -> f64 {
        self.lengths[self.routes[route].via.0]
    }

    /// Human readable `(u,v,w)` with external labels.
    pub fn describe(&self, route: usize) -> String {
        let r = self.routes[route];
        format!(
            "({},{},{})",
            self.label(r.from),
            self.label(r.via),
            self.label(r.to)
        )
    }

    /// Fills `out` with the local density matrix of node `v`.
    pub fn local_densities(&self, v: NodeId, rho: &[f64], out: &mut LocalDensities) {
        let n = self.order[v.0].len();
        out.reset(n);
        for r in self.node_routes[v.0].clone() {
            let (i, j) = self.route_local[r];
            out.set(i, j, rho[r]);
        }
    }

    /// Replaces the turning fractions after checking them.
    pub fn with_turning(mut self, turning: TurningFractions) -> Result<Self> {
        turning.validate(&self)?;
        self.turning = turning;
        Ok(self)
    }
}

/// Builds a [`TrafficNetwork`] from node definitions and arcs given by external labels.
#[derive(Clone, Debug, Default)]
pub struct NetworkBuilder {
    nodes: Vec<NodeDef>,
    arcs: Vec<(u32, u32)>,
    turning: Option<TurningRule>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(mut self, def: NodeDef) -> Self {
        self.nodes.push(def);
        self
    }

    /// Adds both arcs `a -> b` and `b -> a`.
    pub fn link(mut self, a: u32, b: u32) -> Self {
        self.arcs.push((a, b));
        self.arcs.push((b, a));
        self
    }

    pub fn arc(mut self, a: u32, b: u32) -> Self {
        self.arcs.push((a, b));
        self
    }

    pub fn turning(mut self, rule: TurningRule) -> Self {
        self.turning = Some(rule);
        self
    }

    pub fn build(self) -> Result<TrafficNetwork> {
        let n = self.nodes.len();
        let mut label_index = HashMap::new();
        for (i, def) in self.nodes.iter().enumerate() {
            if label_index.insert(def.label, NodeId(i)).is_some() {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate node label {}",
                    def.label
                )));
            }
            if !(def.length > 0.0 && def.length.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "node {} has non-positive length {}",
                    def.label, def.length
                )));
            }
        }
        let lookup = |l: u32| label_index.get(&l).copied().ok_or(Error::UnknownLabel(l));

        let mut adjacency = vec![vec![false; n]; n];
        for &(a, b) in &self.arcs {
            let (a, b) = (lookup(a)?, lookup(b)?);
            if a == b {
                return Err(Error::InvalidNetwork(format!(
                    "self loop at node {}",
                    self.nodes[a.0].label
                )));
            }
            adjacency[a.0][b.0] = true;
        }

        // local neighbour orders
        let mut order = Vec::with_capacity(n);
        for (v, def) in self.nodes.iter().enumerate() {
            let mut nbrs: Vec<NodeId> = (0..n)
                .filter(|&u| adjacency[u][v] || adjacency[v][u])
                .map(NodeId)
                .collect();
            match &def.order {
                Some(given) => {
                    let given: Vec<NodeId> = given.iter().map(|&l| lookup(l)).collect::<Result<_>>()?;
                    let mut a = given.clone();
                    a.sort();
                    a.dedup();
                    if a != nbrs || given.len() != nbrs.len() {
                        return Err(Error::InvalidNetwork(format!(
                            "order of node {} does not list exactly its neighbours",
                            def.label
                        )));
                    }
                    nbrs = given;
                }
                None => nbrs.sort_by_key(|u| self.nodes[u.0].label),
            }
            order.push(nbrs);
        }

        let mut cells = Vec::with_capacity(n);
        for (v, def) in self.nodes.iter().enumerate() {
            let cell = CellModel::new(def.cell.clone(), order[v].len()).map_err(|e| {
                Error::InvalidNetwork(format!("node {}: {e}", def.label))
            })?;
            cells.push(cell);
        }

        // routes grouped by via node
        let mut routes = Vec::new();
        let mut route_local = Vec::new();
        let mut node_routes = Vec::with_capacity(n);
        for v in 0..n {
            let start = routes.len();
            for (i, &u) in order[v].iter().enumerate() {
                if !adjacency[u.0][v] {
                    continue;
                }
                for (j, &w) in order[v].iter().enumerate() {
                    if !adjacency[v][w.0] || (u == w && !self.nodes[v].allow_uturn) {
                        continue;
                    }
                    routes.push(Route::new(u, NodeId(v), w));
                    route_local.push((i, j));
                }
            }
            node_routes.push(start..routes.len());
        }
        let route_index: HashMap<Route, usize> =
            routes.iter().enumerate().map(|(i, r)| (*r, i)).collect();

        // edge groups
        let mut edge_of: HashMap<(NodeId, NodeId), usize> = HashMap::new();
        let mut edges: Vec<EdgeGroup> = Vec::new();
        for (u, row) in adjacency.iter().enumerate() {
            for (v, &e) in row.iter().enumerate() {
                if e {
                    edge_of.insert((NodeId(u), NodeId(v)), edges.len());
                    edges.push(EdgeGroup {
                        tail: NodeId(u),
                        head: NodeId(v),
                        upstream: Vec::new(),
                        downstream: Vec::new(),
                    });
                }
            }
        }
        let mut route_edge_out = vec![0; routes.len()];
        let mut route_edge_in = vec![0; routes.len()];
        for (r, route) in routes.iter().enumerate() {
            let out = edge_of[&(route.via, route.to)];
            let inn = edge_of[&(route.from, route.via)];
            edges[out].upstream.push(r);
            edges[inn].downstream.push(r);
            route_edge_out[r] = out;
            route_edge_in[r] = inn;
        }

        let mut net = TrafficNetwork {
            labels: self.nodes.iter().map(|d| d.label).collect(),
            label_index,
            adjacency,
            lengths: self.nodes.iter().map(|d| d.length).collect(),
            cells,
            order,
            routes,
            route_index,
            route_local,
            node_routes,
            edges,
            route_edge_out,
            route_edge_in,
            turning: TurningFractions { rows: Vec::new() },
        };
        for r in 0..net.route_count() {
            if net.edges[net.route_edge_out[r]].downstream.is_empty() {
                return Err(Error::InvalidNetwork(format!(
                    "route {} has no continuation",
                    net.describe(r)
                )));
            }
        }
        let turning = match self.turning.unwrap_or(TurningRule::UniformNoUturn) {
            TurningRule::UniformNoUturn => uniform_turning(&net),
            TurningRule::Explicit { entries } => explicit_turning(&net, &entries)?,
        };
        turning.validate(&net)?;
        net.turning = turning;
        Ok(net)
    }
}

fn uniform_turning(net: &TrafficNetwork) -> TurningFractions {
    let rows = (0..net.route_count())
        .map(|r| {
            let k = net.edges[net.route_edge_out[r]].downstream.len();
            vec![1.0 / k as f64; k]
        })
        .collect();
    TurningFractions { rows }
}

fn explicit_turning(net: &TrafficNetwork, entries: &[TurningEntry]) -> Result<TurningFractions> {
    let mut rows: Vec<Vec<f64>> = (0..net.route_count())
        .map(|r| vec![0.0; net.edges[net.route_edge_out[r]].downstream.len()])
        .collect();
    for e in entries {
        let r = net.route_by_labels(e.route[0], e.route[1], e.route[2])?;
        let route = net.route(r);
        let next = Route::new(route.via, route.to, net.node(e.next)?);
        let d = net.route_index(&next).ok_or_else(|| {
            Error::InvalidNetwork(format!(
                "turn {} -> {} is not a route",
                net.describe(r),
                e.next
            ))
        })?;
        let pos = net.edges[net.route_edge_out[r]]
            .downstream
            .iter()
            .position(|&x| x == d)
            .expect("downstream route belongs to the out edge");
        rows[r][pos] = e.fraction;
    }
    Ok(TurningFractions { rows })
}

/// Densities of all routes at one time index.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    pub rho: Vec<f64>,
    pub t: usize,
}

impl DensityState {
    pub fn zeros(net: &TrafficNetwork) -> Self {
        DensityState {
            rho: vec![0.0; net.route_count()],
            t: 0,
        }
    }
}

/// Flows realized during one step, indexed like the routes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowRecord {
    pub q_in: Vec<f64>,
    pub q_out: Vec<f64>,
    pub q_net: Vec<f64>,
    /// Attempted net flows before clamping.
    pub q_aux: Vec<f64>,
}

impl FlowRecord {
    pub fn zeros(routes: usize) -> Self {
        FlowRecord {
            q_in: vec![0.0; routes],
            q_out: vec![0.0; routes],
            q_net: vec![0.0; routes],
            q_aux: vec![0.0; routes],
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// `rho + (q_in - q_out + q_net) / l_v`.
pub fn update_density(rho: f64, l_v: f64, q_in: f64, q_out: f64, q_net: f64) -> Result<f64> {
    if ![rho, l_v, q_in, q_out, q_net].iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("density update"));
    }
    if l_v <= 0.0 {
        return Err(Error::InvalidParameter(format!("cell length {l_v}")));
    }
    Ok(rho + (q_in - q_out + q_net) / l_v)
}

/// Inflows `q_in_{(u,v,w)} = Σ_x f_{(x,u,v)->w} q_out_{(x,u,v)}` for every route.
pub fn aggregate_inflows(
    outflows: &[f64],
    turning: &TurningFractions,
    net: &TrafficNetwork,
) -> Result<Vec<f64>> {
    turning.validate(net)?;
    let mut q_in = vec![0.0; net.route_count()];
    accumulate_inflows(outflows, turning, net, &mut q_in);
    Ok(q_in)
}

pub(crate) fn accumulate_inflows(
    outflows: &[f64],
    turning: &TurningFractions,
    net: &TrafficNetwork,
    q_in: &mut [f64],
) {
    q_in.iter_mut().for_each(|q| *q = 0.0);
    for edge in &net.edges {
        for &x in &edge.upstream {
            let q = outflows[x];
            if q == 0.0 {
                continue;
            }
            for (k, &d) in edge.downstream.iter().enumerate() {
                q_in[d] += turning.rows[x][k] * q;
            }
        }
    }
}

/// `Σ_routes l_v ρ`.
pub fn total_mass(state: &DensityState, net: &TrafficNetwork) -> f64 {
    state
        .rho
        .iter()
        .enumerate()
        .map(|(r, rho)| net.route_length(r) * rho)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;

    fn road() -> CellSpec {
        CellSpec::new(CellKind::PedestrianSquare, 5.0, 30.0).with_d(1.0)
    }

    fn pair() -> TrafficNetwork {
        NetworkBuilder::new()
            .node(NodeDef { label: 1, length: 1.0, cell: road(), order: None, allow_uturn: true })
            .node(NodeDef { label: 2, length: 1.0, cell: road(), order: None, allow_uturn: true })
            .link(1, 2)
            .build()
            .unwrap()
    }

    #[test]
    fn neighbors_of_pair() {
        let net = pair();
        assert_eq!(net.neighbors_in(NodeId(0)).unwrap(), vec![NodeId(1)]);
        assert!(net.neighbors_in(NodeId(7)).is_err());
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let net = NetworkBuilder::new()
            .node(NodeDef { label: 3, length: 1.0, cell: road(), order: None, allow_uturn: false })
            .build()
            .unwrap();
        assert!(net.neighbors_in(NodeId(0)).unwrap().is_empty());
        assert_eq!(net.route_count(), 0);
    }

    #[test]
    fn update_examples() {
        assert_eq!(update_density(5.0, 1.0, 1.0, 2.0, 0.0).unwrap(), 4.0);
        assert_eq!(update_density(5.0, 3.0, 3.0, 0.0, 0.0).unwrap(), 6.0);
        assert_eq!(update_density(0.0, 1.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(update_density(f64::NAN, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn uturn_opt_in_creates_routes() {
        let net = pair();
        // each node: only (other, v, other)
        assert_eq!(net.route_count(), 2);
        assert_eq!(net.turning().row(0), &[1.0]);
    }

    #[test]
    fn dead_end_without_uturn_is_rejected() {
        let err = NetworkBuilder::new()
            .node(NodeDef { label: 1, length: 1.0, cell: road(), order: None, allow_uturn: false })
            .node(NodeDef { label: 2, length: 1.0, cell: road(), order: None, allow_uturn: true })
            .node(NodeDef { label: 3, length: 1.0, cell: road(), order: None, allow_uturn: false })
            .link(1, 2)
            .link(2, 3)
            .build();
        assert!(matches!(err, Err(Error::InvalidNetwork(_))));
    }
}
