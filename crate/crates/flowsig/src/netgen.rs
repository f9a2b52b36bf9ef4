//! Seeded generation of benchmark network instances: a bidirected connected
//! graph with affine costs, OD demands with shortest-path route sets, and
//! belief parameters produced by simulating the population.

use crate::error::{Error, Result};
use crate::game::{edge_costs, route_costs, GameDefinition, OdPair};
use crate::gaussian::symmetrize;
use crate::prediction::BeliefParams;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

/// Generation parameters. The defaults give the benchmark scale: 46
/// directed edges, 172 agents on 14 OD pairs, 5 routes each.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub num_nodes: usize,
    /// Directed edge count; must be even (edges come in opposed pairs).
    pub num_edges: usize,
    pub num_pairs: usize,
    pub num_agents: usize,
    pub routes_per_pair: usize,
    pub seed: u64,
    /// Rounds of uniformly random route choices used to build Σ_h.
    pub covariance_rounds: usize,
    /// Fraction of the full-information best-response run kept when
    /// producing μ_h ("stopped before converging").
    pub mu_h_stop_fraction: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            num_nodes: 12,
            num_edges: 46,
            num_pairs: 14,
            num_agents: 172,
            routes_per_pair: 5,
            seed: 0,
            covariance_rounds: 100,
            mu_h_stop_fraction: 0.30,
        }
    }
}

/// A generated instance: game, population beliefs, and a base signal
/// covariance produced the same way as Σ_h.
#[derive(Debug, Clone)]
pub struct GeneratedNetwork {
    pub game: GameDefinition,
    pub beliefs: BeliefParams,
    pub sigma_s_base: DMatrix<f64>,
}

pub fn generate(spec: &NetworkSpec) -> Result<GeneratedNetwork> {
    if spec.num_edges % 2 != 0 {
        return Err(Error::InfeasibleTopology(
            "directed edge count must be even".into(),
        ));
    }
    let undirected = spec.num_edges / 2;
    let v = spec.num_nodes;
    if v < 2 || undirected < v - 1 || undirected > v * (v - 1) / 2 {
        return Err(Error::InfeasibleTopology(format!(
            "{undirected} undirected edges on {v} nodes"
        )));
    }
    if spec.num_pairs == 0 || spec.num_agents < spec.num_pairs || spec.routes_per_pair == 0 {
        return Err(Error::InfeasibleTopology(
            "need pairs ≥ 1, agents ≥ pairs, routes_per_pair ≥ 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.mu_h_stop_fraction) {
        return Err(Error::InvalidParams("stop fraction outside [0,1]".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    // connected undirected skeleton: random spanning tree, then chords
    let mut pairs = std::collections::BTreeSet::new();
    let mut order: Vec<usize> = (0..v).collect();
    order.shuffle(&mut rng);
    for i in 1..v {
        let parent = order[rng.gen_range(0..i)];
        let node = order[i];
        pairs.insert((parent.min(node), parent.max(node)));
    }
    let mut guard = 0;
    while pairs.len() < undirected {
        let a = rng.gen_range(0..v);
        let b = rng.gen_range(0..v);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
        guard += 1;
        if guard > 100_000 {
            return Err(Error::InfeasibleTopology(
                "could not place requested edge count".into(),
            ));
        }
    }
    let mut edges = Vec::with_capacity(spec.num_edges);
    for &(a, b) in &pairs {
        edges.push((a, b));
        edges.push((b, a));
    }
    let m = edges.len();

    // OD pairs: distinct ordered node pairs, demand split as evenly as
    // integers allow
    let mut od_set = std::collections::BTreeSet::new();
    let mut guard = 0;
    while od_set.len() < spec.num_pairs {
        let o = rng.gen_range(0..v);
        let d = rng.gen_range(0..v);
        if o != d {
            od_set.insert((o, d));
        }
        guard += 1;
        if guard > 100_000 {
            return Err(Error::InfeasibleTopology(
                "could not sample distinct OD pairs".into(),
            ));
        }
    }
    let base = spec.num_agents / spec.num_pairs;
    let extra = spec.num_agents % spec.num_pairs;
    let od_pairs: Vec<OdPair> = od_set
        .into_iter()
        .enumerate()
        .map(|(k, (origin, destination))| OdPair {
            origin,
            destination,
            agents: base + usize::from(k < extra),
        })
        .collect();

    // cost parameters: Λ diagonal in [2,3], offsets in [0,1]
    let lambda = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.gen_range(2.0..3.0)));
    let offset = DVector::from_fn(m, |_, _| rng.gen_range(0.0..1.0));

    let game = GameDefinition::with_enumerated_routes(
        edges,
        od_pairs,
        &vec![spec.routes_per_pair; spec.num_pairs],
        lambda,
        offset,
    )?;

    // Σ_h from uniformly random route choices
    let mut cov_rng = ChaCha12Rng::seed_from_u64(spec.seed);
    cov_rng.set_stream(1);
    let sigma_h = random_choice_covariance(&game, spec.covariance_rounds, &mut cov_rng)?;
    let mut sig_rng = ChaCha12Rng::seed_from_u64(spec.seed);
    sig_rng.set_stream(2);
    let sigma_s_base = random_choice_covariance(&game, spec.covariance_rounds, &mut sig_rng)?;

    // μ_h from a best-response run halted early
    let mu_h = truncated_best_response_flow(&game, spec.mu_h_stop_fraction)?;

    let beliefs = BeliefParams::new(mu_h, sigma_h.clone(), sigma_h)?;
    Ok(GeneratedNetwork {
        game,
        beliefs,
        sigma_s_base,
    })
}

/// Sample covariance of edge flows over rounds of uniformly random route
/// choices.
fn random_choice_covariance(
    game: &GameDefinition,
    rounds: usize,
    rng: &mut ChaCha12Rng,
) -> Result<DMatrix<f64>> {
    if rounds < 2 {
        return Err(Error::InvalidParams(
            "need at least 2 rounds for a covariance".into(),
        ));
    }
    let m = game.num_edges();
    let n = game.num_agents();
    let mut draws = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let mut h = DVector::zeros(game.num_routes());
        for agent in 0..n {
            let (lo, hi) = game.route_range(game.agent_pair(agent));
            h[rng.gen_range(lo..hi)] += 1.0;
        }
        draws.push(game.incidence() * h);
    }
    let mean: DVector<f64> = draws.iter().sum::<DVector<f64>>() / rounds as f64;
    let mut cov = DMatrix::zeros(m, m);
    for f in &draws {
        let d = f - &mean;
        cov += &d * d.transpose();
    }
    Ok(symmetrize(&(cov / (rounds - 1) as f64)))
}

/// Run full-information best-response dynamics to convergence once to count
/// the improving moves, then replay the same deterministic dynamics for the
/// given fraction of those moves and return the edge flow reached.
fn truncated_best_response_flow(
    game: &GameDefinition,
    stop_fraction: f64,
) -> Result<DVector<f64>> {
    let total_moves = best_response_run(game, usize::MAX)?.1;
    let keep = ((total_moves as f64) * stop_fraction).floor() as usize;
    Ok(best_response_run(game, keep)?.0)
}

/// Deterministic round-robin best response from the all-first-route
/// profile, stopping after `move_budget` improving moves. Returns the edge
/// flow and the number of improving moves made.
fn best_response_run(game: &GameDefinition, move_budget: usize) -> Result<(DVector<f64>, usize)> {
    let n = game.num_agents();
    let mut choices: Vec<usize> =
        (0..n).map(|i| game.route_range(game.agent_pair(i)).0).collect();
    let mut h = DVector::zeros(game.num_routes());
    for &r in &choices {
        h[r] += 1.0;
    }
    let mut moves = 0usize;
    let route_cost = |h: &DVector<f64>, route: usize| -> Result<f64> {
        let phi = route_costs(game, &edge_costs(game, &(game.incidence() * h))?)?;
        Ok(phi[route])
    };
    for _sweep in 0..10_000 {
        let mut improved = false;
        for agent in 0..n {
            if moves >= move_budget {
                return Ok((game.incidence() * &h, moves));
            }
            let k = game.agent_pair(agent);
            let (lo, hi) = game.route_range(k);
            let current = choices[agent];
            let current_cost = route_cost(&h, current)?;
            let mut best = current;
            let mut best_cost = current_cost;
            for cand in lo..hi {
                if cand == current {
                    continue;
                }
                h[current] -= 1.0;
                h[cand] += 1.0;
                let cost = route_cost(&h, cand)?;
                h[current] += 1.0;
                h[cand] -= 1.0;
                if cost < best_cost - 1e-12 * (1.0 + best_cost.abs()) {
                    best = cand;
                    best_cost = cost;
                }
            }
            if best != current {
                h[current] -= 1.0;
                h[best] += 1.0;
                choices[agent] = best;
                moves += 1;
                improved = true;
            }
        }
        if !improved {
            return Ok((game.incidence() * &h, moves));
        }
    }
    Err(Error::NoConvergence {
        iterations: 10_000,
        residual: f64::NAN,
    })
}
