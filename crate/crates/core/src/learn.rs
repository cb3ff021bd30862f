//! Greedy constraint-graph learning: enumerate edits of every edge, score
//! each edited graph by detection error on training windows, keep the best
//! strict improvement, repeat.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Window;
use crate::eval::{evaluate_window, evaluate_windows, DetectionReport};
use crate::graph::{ConstraintGraph, Direction, Edge, GraphError, State, StateId};
use crate::stats::{difference_noise_sigma, quantile, robust_sigma};

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("no windows to learn from")]
    NoWindows,
    #[error("invalid learn config: {0}")]
    InvalidConfig(String),
    #[error("invalid initial graph: {0}")]
    InvalidGraph(String),
}

impl From<GraphError> for LearnError {
    fn from(e: GraphError) -> Self {
        LearnError::InvalidGraph(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    SplitSameDir,
    DetourBefore,
    DetourAfter,
    InsertTwoBump,
    DeleteMergeKeepIn,
    DeleteMergeKeepOut,
    PenaltyUp,
    PenaltyDown,
    GapUp,
    GapDown,
}

impl EditKind {
    pub const ALL: [EditKind; 10] = [
        EditKind::SplitSameDir,
        EditKind::DetourBefore,
        EditKind::DetourAfter,
        EditKind::InsertTwoBump,
        EditKind::DeleteMergeKeepIn,
        EditKind::DeleteMergeKeepOut,
        EditKind::PenaltyUp,
        EditKind::PenaltyDown,
        EditKind::GapUp,
        EditKind::GapDown,
    ];

    /// Edits that add one or two states.
    pub fn inserts_nodes(self) -> bool {
        matches!(self, EditKind::SplitSameDir | EditKind::DetourBefore | EditKind::DetourAfter | EditKind::InsertTwoBump)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EditKind::SplitSameDir => "split_same_dir",
            EditKind::DetourBefore => "detour_before",
            EditKind::DetourAfter => "detour_after",
            EditKind::InsertTwoBump => "insert_two_bump",
            EditKind::DeleteMergeKeepIn => "delete_merge_keep_in",
            EditKind::DeleteMergeKeepOut => "delete_merge_keep_out",
            EditKind::PenaltyUp => "penalty_up",
            EditKind::PenaltyDown => "penalty_down",
            EditKind::GapUp => "gap_up",
            EditKind::GapDown => "gap_down",
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditCandidate {
    pub kind: EditKind,
    /// Index of the edited edge in the source graph.
    pub anchor_edge: usize,
    pub resulting_graph: ConstraintGraph,
}

/// An edit that was not generated, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Omission {
    pub kind: EditKind,
    pub anchor_edge: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<EditCandidate>,
    pub omitted: Vec<Omission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub max_iterations: usize,
    pub tolerance_ms: f64,
    pub validation_fraction: f64,
    pub penalty_factor: f64,
    pub gap_factor: f64,
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance_ms: crate::eval::DEFAULT_TOLERANCE_MS,
            validation_fraction: 0.25,
            penalty_factor: 2.0,
            gap_factor: 2.0,
            min_gap: 0.0,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::InvalidConfig(m));
        if !(self.tolerance_ms >= 0.0 && self.tolerance_ms.is_finite()) {
            return bad(format!("tolerance_ms {} must be finite and non-negative", self.tolerance_ms));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} must be in (0, 1)", self.validation_fraction));
        }
        if !(self.penalty_factor > 1.0 && self.penalty_factor.is_finite()) {
            return bad(format!("penalty_factor {} must be > 1", self.penalty_factor));
        }
        if !(self.gap_factor > 1.0 && self.gap_factor.is_finite()) {
            return bad(format!("gap_factor {} must be > 1", self.gap_factor));
        }
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return bad(format!("min_gap {} must be finite and non-negative", self.min_gap));
        }
        Ok(())
    }
}

fn fresh_name(g: &ConstraintGraph) -> String {
    (g.states.len()..).map(|n| format!("S{n}")).find(|n| g.state_by_name(n).is_none()).expect("unbounded")
}

fn add_state(g: &mut ConstraintGraph) -> StateId {
    let id = StateId(g.states.len());
    let name = fresh_name(g);
    g.states.push(State { id, name });
    id
}

/// Replaces edge `k` with `path`, a chain of (direction, gap, penalty) legs
/// through fresh intermediate states.
fn reroute(g: &ConstraintGraph, k: usize, legs: &[(Direction, f64, f64)]) -> ConstraintGraph {
    let mut out = g.clone();
    let e = out.edges.remove(k);
    let mut from = e.source;
    let mut new_edges = Vec::with_capacity(legs.len());
    for (i, &(direction, gap, penalty)) in legs.iter().enumerate() {
        let to = if i + 1 == legs.len() { e.target } else { add_state(&mut out) };
        new_edges.push(Edge { source: from, target: to, direction, gap, penalty });
        from = to;
    }
    out.edges.splice(k..k, new_edges);
    out
}

/// Removes state `v` (and the two edges `k_in`, `k_out` touching it), putting
/// `replacement` at the position of `k_in` and renumbering later states.
fn delete_state(g: &ConstraintGraph, v: StateId, k_in: usize, k_out: usize, replacement: Edge) -> ConstraintGraph {
    let remap = |s: StateId| if s.0 > v.0 { StateId(s.0 - 1) } else { s };
    let mut edges = Vec::with_capacity(g.edges.len() - 1);
    for (k, e) in g.edges.iter().enumerate() {
        if k == k_in {
            edges.push(replacement);
        } else if k != k_out {
            edges.push(*e);
        }
    }
    for e in &mut edges {
        e.source = remap(e.source);
        e.target = remap(e.target);
    }
    let states = g
        .states
        .iter()
        .filter(|s| s.id != v)
        .map(|s| State { id: remap(s.id), name: s.name.clone() })
        .collect();
    ConstraintGraph { states, edges, baseline_state: remap(g.baseline_state), rpeak_state: remap(g.rpeak_state) }
}

fn with_edge(g: &ConstraintGraph, k: usize, f: impl FnOnce(&mut Edge)) -> ConstraintGraph {
    let mut out = g.clone();
    f(&mut out.edges[k]);
    out
}

/// All edit candidates of `g`, ten kinds per edge, minus the inapplicable
/// ones (listed in `omitted`). `gap_step` is the smallest non-zero gap a
/// gap edit produces, normally 5% of the training signals' p5-p95 spread.
pub fn enumerate_candidates(g: &ConstraintGraph, cfg: &LearnConfig, gap_step: f64) -> CandidateSet {
    let mut set = CandidateSet::default();
    for (k, e) in g.edges.iter().enumerate() {
        let (d, gap, pen) = (e.direction, e.gap, e.penalty);
        let dbar = d.opposite();
        let half = gap / 2.0;
        let mut emit = |kind: EditKind, graph: Result<ConstraintGraph, String>| match graph {
            Ok(resulting_graph) => match resulting_graph.validate() {
                v if v.is_empty() => set.candidates.push(EditCandidate { kind, anchor_edge: k, resulting_graph }),
                v => set.omitted.push(Omission {
                    kind,
                    anchor_edge: k,
                    reason: format!("result is invalid: {}", v[0]),
                }),
            },
            Err(reason) => set.omitted.push(Omission { kind, anchor_edge: k, reason }),
        };

        emit(EditKind::SplitSameDir, Ok(reroute(g, k, &[(d, half, pen / 2.0), (d, half, pen / 2.0)])));
        emit(EditKind::DetourBefore, Ok(reroute(g, k, &[(dbar, half, pen), (d, gap, pen)])));
        emit(EditKind::DetourAfter, Ok(reroute(g, k, &[(d, gap, pen), (dbar, half, pen)])));
        emit(EditKind::InsertTwoBump, Ok(reroute(g, k, &[(d, gap, pen), (dbar, half, pen), (d, half, pen)])));

        let deletion = || -> Result<(usize, Edge), String> {
            let v = e.target;
            if v == g.baseline_state || v == g.rpeak_state {
                return Err(format!("state {} is protected", g.state_name(v)));
            }
            let ins: Vec<usize> = g.in_edges(v).collect();
            let outs: Vec<usize> = g.out_edges(v).collect();
            if ins.len() != 1 || outs.len() != 1 {
                return Err(format!("state {} has in-degree {} and out-degree {}", g.state_name(v), ins.len(), outs.len()));
            }
            let next = g.edges[outs[0]].target;
            if next == e.source {
                return Err("merging would create a self-loop".into());
            }
            Ok((outs[0], g.edges[outs[0]]))
        };
        match deletion() {
            Ok((k_out, succ)) => {
                let keep_in = Edge { source: e.source, target: succ.target, ..*e };
                let keep_out = Edge { source: e.source, target: succ.target, ..succ };
                emit(EditKind::DeleteMergeKeepIn, Ok(delete_state(g, e.target, k, k_out, keep_in)));
                emit(EditKind::DeleteMergeKeepOut, Ok(delete_state(g, e.target, k, k_out, keep_out)));
            }
            Err(reason) => {
                emit(EditKind::DeleteMergeKeepIn, Err(reason.clone()));
                emit(EditKind::DeleteMergeKeepOut, Err(reason));
            }
        }

        let unchanged = |what: &str| Err(format!("{what} would not change"));
        let up = pen * cfg.penalty_factor;
        emit(EditKind::PenaltyUp, if up != pen { Ok(with_edge(g, k, |x| x.penalty = up)) } else { unchanged("penalty") });
        let down = pen / cfg.penalty_factor;
        emit(
            EditKind::PenaltyDown,
            if down != pen { Ok(with_edge(g, k, |x| x.penalty = down)) } else { unchanged("penalty") },
        );
        let up = (gap * cfg.gap_factor).max(gap_step).max(cfg.min_gap);
        emit(EditKind::GapUp, if up != gap { Ok(with_edge(g, k, |x| x.gap = up)) } else { unchanged("gap") });
        let mut down = gap / cfg.gap_factor;
        if down < gap_step / 2.0 {
            down = 0.0;
        }
        let down = down.max(cfg.min_gap);
        emit(EditKind::GapDown, if down != gap { Ok(with_edge(g, k, |x| x.gap = down)) } else { unchanged("gap") });
    }
    set
}

/// 5% of the p5-p95 spread of all samples in `windows`.
pub fn gap_step(windows: &[Window]) -> f64 {
    let all: Vec<f64> = windows.iter().flat_map(|w| w.record.signal.samples().iter().copied()).collect();
    0.05 * (quantile(&all, 0.95) - quantile(&all, 0.05))
}

/// Two-state starting graph scaled to the data. Both gaps are 0.3 of the
/// p1-p99 amplitude spread. The penalty is the larger of 20·σ̂² and half
/// the squared spread, where σ̂ is the larger of the white-noise level seen
/// in first differences and the robust spread of the samples about their
/// median. Slow baseline wander raises the penalty instead of being fitted
/// by extra segments; on clean signals the spread term stops the R wave
/// flanks from being cut into a staircase.
pub fn heuristic_initial_graph(windows: &[Window]) -> ConstraintGraph {
    let all: Vec<f64> = windows.iter().flat_map(|w| w.record.signal.samples().iter().copied()).collect();
    let spread = quantile(&all, 0.99) - quantile(&all, 0.01);
    let diff_sigma = {
        let per_window: Vec<f64> = windows.iter().map(|w| difference_noise_sigma(w.record.signal.samples())).collect();
        quantile(&per_window, 0.5)
    };
    let level_sigma = robust_sigma(&all);
    let sigma = diff_sigma.max(level_sigma).max(0.01 * spread);
    let gap = 0.3 * spread;
    let penalty = (20.0 * sigma * sigma).max(0.5 * spread * spread);
    ConstraintGraph::initial(gap, gap, penalty).expect("heuristic values are finite and non-negative")
}

/// Total FN+FP of `g` over `windows`, with the full report. Windows the
/// graph cannot explain count all their labels as misses.
pub fn evaluate_graph(
    g: &ConstraintGraph,
    windows: &[Window],
    cfg: &LearnConfig,
) -> Result<(usize, DetectionReport), LearnError> {
    if windows.is_empty() {
        return Err(LearnError::NoWindows);
    }
    let report = evaluate_windows(g, windows, cfg.tolerance_ms, "graph");
    Ok((report.fn_plus_fp(), report))
}

/// FN+FP over `windows`, or `None` as soon as the running total exceeds `bound`.
fn bounded_errors(g: &ConstraintGraph, windows: &[Window], tolerance_ms: f64, bound: usize) -> Option<usize> {
    let mut total = 0;
    for w in windows {
        total += evaluate_window(g, w, tolerance_ms).0.errors();
        if total > bound {
            return None;
        }
    }
    Some(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Training error reached zero.
    Perfect,
    NoImprovement,
    MaxIterations,
    /// Validation error rose on two consecutive accepted iterations.
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 0 for the starting graph, then 1, 2, ... per accepted edit.
    pub iteration: usize,
    pub kind: Option<EditKind>,
    pub anchor_edge: Option<usize>,
    pub train_fn_fp: usize,
    pub validation_fn_fp: Option<usize>,
    pub candidates_evaluated: usize,
    pub graph: ConstraintGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnTrace {
    pub initial: TraceEntry,
    /// Accepted edits in order.
    pub iterations: Vec<TraceEntry>,
    pub stop_reason: StopReason,
    /// Iteration whose graph was returned.
    pub returned_iteration: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
}

impl LearnTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &TraceEntry> {
        std::iter::once(&self.initial).chain(&self.iterations)
    }

    /// Training error strictly decreases at every accepted iteration.
    pub fn is_strictly_decreasing(&self) -> bool {
        let errs: Vec<usize> = self.entries().map(|e| e.train_fn_fp).collect();
        errs.windows(2).all(|w| w[1] < w[0])
    }

    /// One JSON object per line, starting with iteration 0.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in self.entries() {
            s.push_str(&serde_json::to_string(e).expect("trace serialization is infallible"));
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,train_fn_fp,validation_fn_fp\n");
        for e in self.entries() {
            let v = e.validation_fn_fp.map_or_else(String::new, |v| v.to_string());
            let _ = writeln!(s, "{},{},{}", e.iteration, e.train_fn_fp, v);
        }
        s
    }
}

/// Deterministic train/validation split of window indices.
pub fn split_train_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if n < 2 {
        return ((0..n).collect(), Vec::new());
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn simplicity_key(g: &ConstraintGraph) -> (usize, usize, f64) {
    (g.states.len(), g.edges.len(), g.penalty_sum())
}

/// Greedy hill climbing from `initial`. Each iteration scores every
/// candidate on the training windows and accepts the one with the lowest
/// FN+FP if it beats the current graph; ties go to fewer states, fewer
/// edges, smaller penalty sum, then enumeration order.
pub fn learn(
    initial: &ConstraintGraph,
    windows: &[Window],
    cfg: &LearnConfig,
) -> Result<(ConstraintGraph, LearnTrace), LearnError> {
    cfg.validate()?;
    initial.ensure_valid()?;
    if windows.is_empty() {
        return Err(LearnError::NoWindows);
    }
    let (train_idx, val_idx) = split_train_validation(windows.len(), cfg.validation_fraction, cfg.seed);
    let train: Vec<Window> = train_idx.iter().map(|&i| windows[i].clone()).collect();
    let val: Vec<Window> = val_idx.iter().map(|&i| windows[i].clone()).collect();
    let step = gap_step(&train);
    let tol = cfg.tolerance_ms;
    let val_errors =
        |g: &ConstraintGraph| (!val.is_empty()).then(|| evaluate_windows(g, &val, tol, "validation").fn_plus_fp());

    let mut current = initial.clone();
    let mut train_err = evaluate_windows(&current, &train, tol, "train").fn_plus_fp();
    let initial_entry = TraceEntry {
        iteration: 0,
        kind: None,
        anchor_edge: None,
        train_fn_fp: train_err,
        validation_fn_fp: val_errors(&current),
        candidates_evaluated: 0,
        graph: current.clone(),
    };
    let mut best_val = (initial_entry.validation_fn_fp, 0usize, current.clone());
    let mut rises = 0;
    let mut iterations: Vec<TraceEntry> = Vec::new();

    let stop_reason = loop {
        if train_err == 0 {
            break StopReason::Perfect;
        }
        if iterations.len() >= cfg.max_iterations {
            break StopReason::MaxIterations;
        }
        let set = enumerate_candidates(&current, cfg, step);
        let mut bound = train_err - 1;
        let mut best: Option<(usize, (usize, usize, f64), usize)> = None;
        for (i, c) in set.candidates.iter().enumerate() {
            let Some(err) = bounded_errors(&c.resulting_graph, &train, tol, bound) else { continue };
            let key = simplicity_key(&c.resulting_graph);
            let better = match &best {
                None => true,
                Some((be, bk, _)) => err < *be || (err == *be && key.partial_cmp(bk) == Some(std::cmp::Ordering::Less)),
            };
            if better {
                best = Some((err, key, i));
                bound = err;
            }
        }
        let Some((err, _, i)) = best else { break StopReason::NoImprovement };
        let chosen = &set.candidates[i];
        let prev_val = iterations.last().map_or(initial_entry.validation_fn_fp, |e| e.validation_fn_fp);
        current = chosen.resulting_graph.clone();
        train_err = err;
        let v = val_errors(&current);
        let iteration = iterations.len() + 1;
        iterations.push(TraceEntry {
            iteration,
            kind: Some(chosen.kind),
            anchor_edge: Some(chosen.anchor_edge),
            train_fn_fp: err,
            validation_fn_fp: v,
            candidates_evaluated: set.candidates.len(),
            graph: current.clone(),
        });
        if let (Some(v), Some(p)) = (v, prev_val) {
            rises = if v > p { rises + 1 } else { 0 };
            if best_val.0.is_none_or(|b| v <= b) {
                best_val = (Some(v), iteration, current.clone());
            }
            if rises >= 2 {
                break StopReason::EarlyStop;
            }
        }
    };

    let (graph, returned_iteration) = match stop_reason {
        StopReason::EarlyStop => (best_val.2, best_val.1),
        _ => (current, iterations.len()),
    };
    let trace = LearnTrace {
        initial: initial_entry,
        iterations,
        stop_reason,
        returned_iteration,
        train_windows: train.len(),
        validation_windows: val.len(),
    };
    Ok((graph, trace))
}
