//! Network congestion game: graph, OD pairs, routes, incidence matrix,
//! affine edge costs, flows and social cost.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// One origin-destination demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    /// Number of agents routing on this pair (n_k).
    pub agents: usize,
}

/// Immutable game definition. Routes are edge-index sequences; column r of
/// the incidence matrix has a 1 exactly for the edges on route r.
#[derive(Debug, Clone)]
pub struct GameDefinition {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    od_pairs: Vec<OdPair>,
    /// Per pair, the ordered list of routes (edge-index sequences).
    routes: Vec<Vec<Vec<usize>>>,
    incidence: DMatrix<f64>,
    cost_slope: DMatrix<f64>,
    cost_offset: DVector<f64>,
    /// Global route index -> owning pair.
    route_pair: Vec<usize>,
    /// Per pair, the half-open range of global route indices.
    pair_ranges: Vec<(usize, usize)>,
}

impl GameDefinition {
    pub fn new(
        edges: Vec<(usize, usize)>,
        od_pairs: Vec<OdPair>,
        routes: Vec<Vec<Vec<usize>>>,
        cost_slope: DMatrix<f64>,
        cost_offset: DVector<f64>,
    ) -> Result<Self> {
        let m = edges.len();
        if m == 0 {
            return Err(Error::InvalidDefinition("no edges".into()));
        }
        let num_nodes = edges
            .iter()
            .flat_map(|&(t, h)| [t, h])
            .chain(od_pairs.iter().flat_map(|p| [p.origin, p.destination]))
            .max()
            .unwrap_or(0)
            + 1;
        if od_pairs.is_empty() {
            return Err(Error::InvalidDefinition("no OD pairs".into()));
        }
        if routes.len() != od_pairs.len() {
            return Err(Error::InvalidDefinition(format!(
                "route lists for {} pairs, expected {}",
                routes.len(),
                od_pairs.len()
            )));
        }
        if cost_slope.nrows() != m || cost_slope.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "cost slope",
                expected: m,
                got: cost_slope.nrows(),
            });
        }
        if cost_offset.len() != m {
            return Err(Error::DimensionMismatch {
                context: "cost offset",
                expected: m,
                got: cost_offset.len(),
            });
        }

        let mut route_pair = Vec::new();
        let mut pair_ranges = Vec::new();
        let mut total_routes = 0usize;
        for (k, (pair, pair_routes)) in od_pairs.iter().zip(&routes).enumerate() {
            if pair.agents == 0 {
                return Err(Error::InvalidDefinition(format!(
                    "pair {k} has zero agents"
                )));
            }
            if pair_routes.is_empty() {
                return Err(Error::InvalidDefinition(format!("pair {k} has no routes")));
            }
            for (r, route) in pair_routes.iter().enumerate() {
                validate_route(&edges, pair, route).map_err(|e| {
                    Error::InvalidDefinition(format!("pair {k} route {r}: {e}"))
                })?;
            }
            let start = total_routes;
            total_routes += pair_routes.len();
            pair_ranges.push((start, total_routes));
            route_pair.extend(std::iter::repeat(k).take(pair_routes.len()));
        }

        let mut incidence = DMatrix::zeros(m, total_routes);
        let mut col = 0;
        for pair_routes in &routes {
            for route in pair_routes {
                for &e in route {
                    incidence[(e, col)] = 1.0;
                }
                col += 1;
            }
        }

        Ok(Self {
            num_nodes,
            edges,
            od_pairs,
            routes,
            incidence,
            cost_slope,
            cost_offset,
            route_pair,
            pair_ranges,
        })
    }

    /// Build with routes enumerated as the `max_routes` shortest loopless
    /// paths per pair.
    pub fn with_enumerated_routes(
        edges: Vec<(usize, usize)>,
        od_pairs: Vec<OdPair>,
        max_routes: &[usize],
        cost_slope: DMatrix<f64>,
        cost_offset: DVector<f64>,
    ) -> Result<Self> {
        if max_routes.len() != od_pairs.len() {
            return Err(Error::InvalidDefinition(
                "max_routes length must match od_pairs".into(),
            ));
        }
        let mut routes = Vec::with_capacity(od_pairs.len());
        for (pair, &count) in od_pairs.iter().zip(max_routes) {
            routes.push(enumerate_routes(
                &edges,
                pair.origin,
                pair.destination,
                count,
            )?);
        }
        Self::new(edges, od_pairs, routes, cost_slope, cost_offset)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_routes(&self) -> usize {
        self.route_pair.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.od_pairs.len()
    }

    /// Total number of agents, Σ_k n_k.
    pub fn num_agents(&self) -> usize {
        self.od_pairs.iter().map(|p| p.agents).sum()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn routes_of(&self, pair: usize) -> &[Vec<usize>] {
        &self.routes[pair]
    }

    /// Half-open global route index range of a pair.
    pub fn route_range(&self, pair: usize) -> (usize, usize) {
        self.pair_ranges[pair]
    }

    pub fn pair_of_route(&self, route: usize) -> usize {
        self.route_pair[route]
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn cost_slope(&self) -> &DMatrix<f64> {
        &self.cost_slope
    }

    pub fn cost_offset(&self) -> &DVector<f64> {
        &self.cost_offset
    }

    /// Pair of the i-th agent; agents are ordered by pair, pair sizes n_k.
    pub fn agent_pair(&self, agent: usize) -> usize {
        let mut acc = 0;
        for (k, p) in self.od_pairs.iter().enumerate() {
            acc += p.agents;
            if agent < acc {
                return k;
            }
        }
        panic!("agent index {agent} out of range");
    }

    /// Non-fatal issues (e.g. cost decreasing in own flow).
    pub fn validation_warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for i in 0..self.num_edges() {
            if self.cost_slope[(i, i)] < 0.0 {
                w.push(format!(
                    "edge {i} has negative cost slope {}; costs decrease in own flow",
                    self.cost_slope[(i, i)]
                ));
            }
        }
        w
    }
}

fn validate_route(edges: &[(usize, usize)], pair: &OdPair, route: &[usize]) -> Result<()> {
    if route.is_empty() {
        return Err(Error::InvalidDefinition("empty route".into()));
    }
    let mut seen = vec![false; edges.len()];
    let mut at = pair.origin;
    for &e in route {
        if e >= edges.len() {
            return Err(Error::InvalidDefinition(format!("edge index {e} out of range")));
        }
        if seen[e] {
            return Err(Error::InvalidDefinition(format!("edge {e} repeated")));
        }
        seen[e] = true;
        let (tail, head) = edges[e];
        if tail != at {
            return Err(Error::InvalidDefinition(format!(
                "edge {e} starts at {tail}, expected {at}"
            )));
        }
        at = head;
    }
    if at != pair.destination {
        return Err(Error::InvalidDefinition(format!(
            "route ends at {at}, expected {}",
            pair.destination
        )));
    }
    Ok(())
}

/// Route and edge flows; edge flow always equals D·h.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowVector {
    pub route_flow_h: DVector<f64>,
    pub edge_flow_f: DVector<f64>,
}

impl FlowVector {
    pub fn from_route_flows(game: &GameDefinition, h: DVector<f64>) -> Result<Self> {
        let f = edge_flow(game, &h)?;
        Ok(Self {
            route_flow_h: h,
            edge_flow_f: f,
        })
    }
}

/// One route choice per agent (global route indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyProfile {
    pub choices: Vec<usize>,
}

impl StrategyProfile {
    /// Aggregate to flows: h_r = |{i : a_i = r}| in exact integer arithmetic.
    pub fn flows(&self, game: &GameDefinition) -> Result<FlowVector> {
        if self.choices.len() != game.num_agents() {
            return Err(Error::DimensionMismatch {
                context: "strategy profile",
                expected: game.num_agents(),
                got: self.choices.len(),
            });
        }
        let mut counts = vec![0u64; game.num_routes()];
        for (i, &r) in self.choices.iter().enumerate() {
            let k = game.agent_pair(i);
            let (lo, hi) = game.route_range(k);
            if r < lo || r >= hi {
                return Err(Error::UnknownRoute { route: r, pair: k });
            }
            counts[r] += 1;
        }
        let h = DVector::from_iterator(counts.len(), counts.iter().map(|&c| c as f64));
        FlowVector::from_route_flows(game, h)
    }
}

/// f = D·h.
pub fn edge_flow(game: &GameDefinition, h: &DVector<f64>) -> Result<DVector<f64>> {
    if h.len() != game.num_routes() {
        return Err(Error::DimensionMismatch {
            context: "edge_flow",
            expected: game.num_routes(),
            got: h.len(),
        });
    }
    Ok(game.incidence() * h)
}

/// c = Λf + b.
pub fn edge_costs(game: &GameDefinition, f: &DVector<f64>) -> Result<DVector<f64>> {
    if f.len() != game.num_edges() {
        return Err(Error::DimensionMismatch {
            context: "edge_costs",
            expected: game.num_edges(),
            got: f.len(),
        });
    }
    Ok(game.cost_slope() * f + game.cost_offset())
}

/// φ_r = Σ_{e on r} c_e (column-vector convention: φ = Dᵀc).
pub fn route_costs(game: &GameDefinition, c: &DVector<f64>) -> Result<DVector<f64>> {
    if c.len() != game.num_edges() {
        return Err(Error::DimensionMismatch {
            context: "route_costs",
            expected: game.num_edges(),
            got: c.len(),
        });
    }
    Ok(game.incidence().transpose() * c)
}

/// Total realized cost φ·h.
pub fn social_cost(phi: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
    if phi.len() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "social_cost",
            expected: phi.len(),
            got: h.len(),
        });
    }
    Ok(phi.dot(h))
}

/// Partial path in the best-first enumeration, ordered by
/// (hop length, lexicographic edge sequence).
#[derive(Clone, PartialEq, Eq)]
struct Partial {
    edges: Vec<usize>,
    node: usize,
    visited: Vec<usize>,
}

impl Ord for Partial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.edges
            .len()
            .cmp(&other.edges.len())
            .then_with(|| self.edges.cmp(&other.edges))
    }
}

impl PartialOrd for Partial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// The `count` loopless paths of smallest hop length from origin to
/// destination, ties broken lexicographically by edge-index sequence.
/// Returns fewer than `count` when the graph admits fewer simple paths.
pub fn enumerate_routes(
    edges: &[(usize, usize)],
    origin: usize,
    destination: usize,
    count: usize,
) -> Result<Vec<Vec<usize>>> {
    if count == 0 {
        return Err(Error::InvalidParams("route count must be ≥ 1".into()));
    }
    let num_nodes = edges.iter().flat_map(|&(t, h)| [t, h]).max().unwrap_or(0) + 1;
    if origin >= num_nodes || destination >= num_nodes || origin == destination {
        return Err(Error::Disconnected {
            origin,
            destination,
        });
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for (e, &(tail, _)) in edges.iter().enumerate() {
        out[tail].push(e);
    }
    // best-first expansion: (length, lexicographic) is monotone under
    // extension, so completed paths pop in exactly the requested order
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Partial {
        edges: Vec::new(),
        node: origin,
        visited: vec![origin],
    }));
    let mut found = Vec::new();
    while let Some(Reverse(p)) = heap.pop() {
        if p.node == destination {
            found.push(p.edges);
            if found.len() == count {
                break;
            }
            continue;
        }
        for &e in &out[p.node] {
            let head = edges[e].1;
            if p.visited.contains(&head) {
                continue;
            }
            let mut next = p.clone();
            next.edges.push(e);
            next.node = head;
            next.visited.push(head);
            heap.push(Reverse(next));
        }
    }
    if found.is_empty() {
        return Err(Error::Disconnected {
            origin,
            destination,
        });
    }
    Ok(found)
}
