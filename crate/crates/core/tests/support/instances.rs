//! Random small segmentation problems checked against the grid oracle.

use changegraph::graph::{ConstraintGraph, Direction, Edge, State, StateId};
use changegraph::solver::{mean_domain, solve, Signal, StartState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid;

pub const GRID_POINTS: usize = 801;

#[derive(Debug, Clone)]
pub struct Instance {
    pub y: Vec<f64>,
    pub graph: ConstraintGraph,
    pub start: StartState,
}

/// A strongly connected graph on 2–4 states: a ring with random directions
/// plus up to two chords. Gaps are whole multiples of `delta`.
pub fn random_graph(rng: &mut ChaCha8Rng, delta: f64) -> ConstraintGraph {
    let n = rng.random_range(2..=4);
    let states = (0..n).map(|k| State { id: StateId(k), name: format!("S{k}") }).collect();
    let mut edges = Vec::new();
    let edge = |rng: &mut ChaCha8Rng, s: usize, t: usize| Edge {
        source: StateId(s),
        target: StateId(t),
        direction: if rng.random_bool(0.5) { Direction::Up } else { Direction::Down },
        gap: rng.random_range(0..=160) as f64 * delta,
        penalty: rng.random_range(0.2..8.0),
    };
    for s in 0..n {
        let e = edge(rng, s, (s + 1) % n);
        edges.push(e);
    }
    for _ in 0..rng.random_range(0..=2) {
        let (s, t) = (rng.random_range(0..n), rng.random_range(0..n));
        let e = edge(rng, s, t);
        if s != t && !edges.iter().any(|o: &Edge| o.source == e.source && o.target == e.target && o.direction == e.direction) {
            edges.push(e);
        }
    }
    let g = ConstraintGraph { states, edges, baseline_state: StateId(0), rpeak_state: StateId(n - 1) };
    assert!(g.validate().is_empty(), "{:?}", g.validate());
    g
}

/// Noisy piecewise-constant signal of at most 60 samples, plus a graph
/// whose gaps sit on the oracle grid for that signal's mean domain.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=60);
    let sigma = rng.random_range(0.02..0.6);
    let mut y = Vec::with_capacity(n);
    let mut level = rng.random_range(-4.0..4.0);
    while y.len() < n {
        let len = rng.random_range(2..=15);
        for _ in 0..len.min(n - y.len()) {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            y.push(level + sigma * z);
        }
        level = rng.random_range(-4.0..4.0);
    }
    let (lo, hi) = mean_domain(&y);
    let delta = grid::spacing(lo, hi, GRID_POINTS);
    let graph = random_graph(&mut rng, delta);
    let start = if rng.random_bool(0.25) {
        StartState::Fixed(StateId(rng.random_range(0..graph.num_states())))
    } else {
        StartState::Free
    };
    Instance { y, graph, start }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    /// Both infeasible.
    Infeasible,
    /// Costs agree and boundary sets are identical.
    Agree,
    /// Costs agree; the boundary sets differ but the solver's is within
    /// the margin of the oracle optimum, so that optimum is not unique
    /// with margin.
    Ambiguous,
}

/// Solves `inst` both ways and checks cost bounds, feasibility and, where
/// the oracle optimum is unique with margin, the boundary sets.
pub fn check(inst: &Instance) -> Result<Outcome, String> {
    let signal = Signal::new(inst.y.clone(), 360.0).map_err(|e| e.to_string())?;
    let (lo, hi) = mean_domain(&inst.y);
    let delta = grid::spacing(lo, hi, GRID_POINTS);
    let start = match inst.start {
        StartState::Free => None,
        StartState::Fixed(s) => Some(s.0),
    };
    let oracle = grid::solve(&inst.y, &inst.graph, lo, delta, GRID_POINTS, start);
    let seg = match (solve(&signal, &inst.graph, inst.start), oracle) {
        (Err(_), None) => return Ok(Outcome::Infeasible),
        (Ok(seg), Some(o)) => (seg, o),
        (Ok(seg), None) => return Err(format!("solver found cost {} but the grid is infeasible", seg.total_cost)),
        (Err(e), Some(o)) => return Err(format!("solver failed ({e}) but the grid has cost {}", o.cost)),
    };
    let (seg, oracle) = seg;
    seg.check(&inst.y, &inst.graph)?;
    let n = inst.y.len();
    let bound = grid::resolution_bound(n, delta, hi - lo);
    let tight = grid::tight_resolution_bound(n, delta, oracle.cost);
    let slack = 1e-9 * oracle.cost.abs().max(1.0);
    if seg.total_cost > oracle.cost + slack {
        return Err(format!("solver cost {} above grid cost {}", seg.total_cost, oracle.cost));
    }
    if tight > bound {
        return Err(format!("tight bound {tight} exceeds worst-case bound {bound}"));
    }
    if seg.total_cost < oracle.cost - tight - slack {
        return Err(format!("solver cost {} more than {tight} below grid cost {}", seg.total_cost, oracle.cost));
    }
    if seg.boundaries == oracle.boundaries {
        return Ok(Outcome::Agree);
    }
    let witness = grid::solve_fixed(&inst.y, &inst.graph, lo, delta, GRID_POINTS, &seg.boundaries, &seg.edges_taken);
    if witness <= oracle.cost + 10.0 * tight + slack {
        Ok(Outcome::Ambiguous)
    } else {
        Err(format!(
            "boundaries {:?} differ from the grid optimum {:?}, which is unique with margin (other set costs {witness} vs {})",
            seg.boundaries, oracle.boundaries, oracle.cost
        ))
    }
}
