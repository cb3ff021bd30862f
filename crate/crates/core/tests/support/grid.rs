//! Exhaustive dynamic program over a uniform grid of candidate means.

use changegraph::graph::{ConstraintGraph, Direction};

#[derive(Debug, Clone)]
pub struct GridSolution {
    pub cost: f64,
    /// Boundary `t` sits between samples `t` and `t + 1` (1-based).
    pub boundaries: Vec<usize>,
    pub states: Vec<usize>,
}

/// Grid spacing for `n_grid` points on `[lo, hi]`.
pub fn spacing(lo: f64, hi: f64, n_grid: usize) -> f64 {
    (hi - lo) / (n_grid - 1) as f64
}

/// Prefix minima (for upward changes: best predecessor at or below `i`) or
/// suffix minima (downward: at or above `i`), with the index attaining them.
fn running_min(cost: &[f64], direction: Direction) -> (Vec<f64>, Vec<usize>) {
    let n = cost.len();
    let mut best = vec![f64::INFINITY; n];
    let mut arg = vec![0; n];
    let order: Vec<usize> = match direction {
        Direction::Up => (0..n).collect(),
        Direction::Down => (0..n).rev().collect(),
    };
    let (mut b, mut a) = (f64::INFINITY, order[0]);
    for i in order {
        if cost[i] < b {
            b = cost[i];
            a = i;
        }
        best[i] = b;
        arg[i] = a;
    }
    (best, arg)
}

/// Gap of an edge as a whole number of grid steps. Panics if the gap is
/// not a multiple of the spacing; tests draw gaps that are.
fn steps(gap: f64, delta: f64) -> usize {
    let k = (gap / delta).round();
    assert!((k * delta - gap).abs() <= 1e-9 * delta.max(gap), "gap {gap} is not a multiple of {delta}");
    k as usize
}

/// Best (state, grid mean) path for `y` under `graph`, means restricted to
/// `lo + j·delta`, `j < n_grid`. `start` fixes the first state.
pub fn solve(y: &[f64], graph: &ConstraintGraph, lo: f64, delta: f64, n_grid: usize, start: Option<usize>) -> Option<GridSolution> {
    let grid: Vec<f64> = (0..n_grid).map(|j| lo + j as f64 * delta).collect();
    let nv = graph.states.len();
    let gaps: Vec<usize> = graph.edges.iter().map(|e| steps(e.gap, delta)).collect();
    let inf = f64::INFINITY;

    let mut cost = vec![vec![inf; n_grid]; nv];
    for v in 0..nv {
        if start.is_none_or(|s| s == v) {
            for j in 0..n_grid {
                cost[v][j] = (y[0] - grid[j]).powi(2);
            }
        }
    }
    // back[t][v][j] = None for stay, Some((edge, i)) for a change from mean index i.
    let mut back: Vec<Vec<Vec<Option<(usize, usize)>>>> = Vec::with_capacity(y.len());
    back.push(vec![vec![None; n_grid]; nv]);
    for &yt in &y[1..] {
        let mut next = cost.clone();
        let mut choice = vec![vec![None; n_grid]; nv];
        for (e, edge) in graph.edges.iter().enumerate() {
            let (u, v, k) = (edge.source.0, edge.target.0, gaps[e]);
            let (best, arg) = running_min(&cost[u], edge.direction);
            for j in 0..n_grid {
                let i = match edge.direction {
                    Direction::Up if j >= k => j - k,
                    Direction::Down if j + k < n_grid => j + k,
                    _ => continue,
                };
                let c = best[i] + edge.penalty;
                if c < next[v][j] {
                    next[v][j] = c;
                    choice[v][j] = Some((e, arg[i]));
                }
            }
        }
        for v in 0..nv {
            for j in 0..n_grid {
                next[v][j] += (yt - grid[j]).powi(2);
            }
        }
        cost = next;
        back.push(choice);
    }
    let (mut v, mut j, best) = (0..nv)
        .flat_map(|v| (0..n_grid).map(move |j| (v, j)))
        .map(|(v, j)| (v, j, cost[v][j]))
        .filter(|x| x.2.is_finite())
        .min_by(|a, b| a.2.total_cmp(&b.2))?;
    let mut boundaries = Vec::new();
    let mut states = vec![v];
    for t in (1..y.len()).rev() {
        if let Some((e, i)) = back[t][v][j] {
            boundaries.push(t);
            v = graph.edges[e].source.0;
            j = i;
            states.push(v);
        }
    }
    boundaries.reverse();
    states.reverse();
    Some(GridSolution { cost: best, boundaries, states })
}

/// Best grid cost among segmentations with exactly the given boundaries and
/// edges (so the state sequence is fixed too).
pub fn solve_fixed(
    y: &[f64],
    graph: &ConstraintGraph,
    lo: f64,
    delta: f64,
    n_grid: usize,
    boundaries: &[usize],
    edges_taken: &[usize],
) -> f64 {
    let grid: Vec<f64> = (0..n_grid).map(|j| lo + j as f64 * delta).collect();
    let mut starts = vec![0];
    starts.extend_from_slice(boundaries);
    let mut ends = boundaries.to_vec();
    ends.push(y.len());
    let seg_cost = |s: usize, e: usize, m: f64| y[s..e].iter().map(|v| (v - m).powi(2)).sum::<f64>();
    let mut cost: Vec<f64> = grid.iter().map(|&m| seg_cost(starts[0], ends[0], m)).collect();
    for k in 1..starts.len() {
        let edge = &graph.edges[edges_taken[k - 1]];
        let steps = steps(edge.gap, delta);
        let mut next = vec![f64::INFINITY; n_grid];
        let (best, _) = running_min(&cost, edge.direction);
        for j in 0..n_grid {
            let i = match edge.direction {
                Direction::Up if j >= steps => j - steps,
                Direction::Down if j + steps < n_grid => j + steps,
                _ => continue,
            };
            next[j] = best[i] + edge.penalty + seg_cost(starts[k], ends[k], grid[j]);
        }
        cost = next;
    }
    cost.into_iter().fold(f64::INFINITY, f64::min)
}

/// Worst-case excess of the grid optimum over the continuous optimum.
/// Rounding every mean of the continuous optimum down to the grid moves it
/// by less than Δ and keeps every gap constraint (gaps are whole steps), so
/// the excess is at most `Σ 2Δ|y_t − m_t| + NΔ²`, and |y − m| never exceeds
/// the domain width.
pub fn resolution_bound(n: usize, delta: f64, width: f64) -> f64 {
    let n = n as f64;
    2.0 * n * delta * width + n * delta * delta
}

/// The same excess bounded through Cauchy–Schwarz instead:
/// `Σ|y_t − m_t| ≤ √(N·data cost) ≤ √(N·optimum) ≤ √(N·grid optimum)`.
pub fn tight_resolution_bound(n: usize, delta: f64, grid_cost: f64) -> f64 {
    let n = n as f64;
    2.0 * delta * (n * grid_cost.max(0.0)).sqrt() + n * delta * delta
}
