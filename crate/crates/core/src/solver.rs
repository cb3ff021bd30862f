//! Optimal graph-constrained segmentation of a piecewise-constant-mean signal.
//!
//! Minimizes `Σ (y_t − m_t)² + Σ λ_{c_t}` over segment means `m`, hidden
//! states `s` and changepoints `c`, where staying in a state keeps the mean
//! fixed and every change must follow a graph edge and respect its gap.
//!
//! The dynamic program keeps one piecewise-quadratic cost-to-come function per
//! state. At each step it takes the pointwise minimum of the "stay" branch and
//! one envelope per incoming edge, then adds the new sample's squared loss.
//! Per-step decisions are stored as a compact interval list so the optimal
//! path can be recovered afterwards without keeping the functions themselves.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ConstraintGraph, Direction, StateId, Violation};
use crate::pwq::{
    envelope_into, min_pieces_into, push_piece, Argmin, EnvelopeScratch, PiecewiseQuad, PwqError, QuadPiece, Quadratic,
};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("invalid graph: {} violation(s), first: {}", .0.len(), .0[0])]
    InvalidGraph(Vec<Violation>),
    #[error("start state {0} is not in the graph")]
    UnknownStartState(String),
    #[error("model is infeasible: no state admits a mean at sample {time} (first state checked: {state})")]
    Infeasible { time: usize, state: String },
    #[error(transparent)]
    Algebra(#[from] PwqError),
}

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, SolveError> {
        if samples.len() < 2 {
            return Err(SolveError::InvalidSignal(format!("need at least 2 samples, got {}", samples.len())));
        }
        if let Some(k) = samples.iter().position(|y| !y.is_finite()) {
            return Err(SolveError::InvalidSignal(format!("sample {k} is not finite")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SolveError::InvalidSignal(format!("sample rate {sample_rate} must be positive")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sub-signal over `range`; `None` if shorter than two samples.
    pub fn slice(&self, range: Range<usize>) -> Option<Signal> {
        let samples = self.samples.get(range)?.to_vec();
        (samples.len() >= 2).then_some(Signal { samples, sample_rate: self.sample_rate })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartState {
    /// Minimize over every possible initial state.
    #[default]
    Free,
    Fixed(StateId),
}

/// The optimal model: changepoints, segment means and hidden states.
///
/// `boundaries[k]` is the 1-based sample index `i` such that segment `k`
/// ends at sample `i` and segment `k + 1` starts at sample `i + 1`;
/// equivalently, the 0-based index of the first sample of segment `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub boundaries: Vec<usize>,
    pub edges_taken: Vec<usize>,
    pub means: Vec<f64>,
    pub states: Vec<StateId>,
    pub total_cost: f64,
}

impl Segmentation {
    pub fn num_segments(&self) -> usize {
        self.means.len()
    }

    /// 0-based sample range of each segment for a signal of length `n`.
    pub fn segment_ranges(&self, n: usize) -> impl Iterator<Item = Range<usize>> + '_ {
        let starts = std::iter::once(0).chain(self.boundaries.iter().copied());
        let ends = self.boundaries.iter().copied().chain(std::iter::once(n));
        starts.zip(ends).map(|(s, e)| s..e)
    }

    /// Objective value recomputed from the model itself.
    pub fn recompute_cost(&self, samples: &[f64], graph: &ConstraintGraph) -> f64 {
        let data: f64 = self
            .segment_ranges(samples.len())
            .zip(&self.means)
            .map(|(r, m)| samples[r].iter().map(|y| (y - m) * (y - m)).sum::<f64>())
            .sum();
        let penalties: f64 = self.edges_taken.iter().map(|&e| graph.edges[e].penalty).sum();
        data + penalties
    }

    /// Checks the structural invariants against the signal and graph that
    /// produced this segmentation.
    pub fn check(&self, samples: &[f64], graph: &ConstraintGraph) -> Result<(), String> {
        let k = self.boundaries.len();
        if self.means.len() != k + 1 || self.states.len() != k + 1 || self.edges_taken.len() != k {
            return Err(format!(
                "length mismatch: {} boundaries, {} edges, {} means, {} states",
                k,
                self.edges_taken.len(),
                self.means.len(),
                self.states.len()
            ));
        }
        let mut prev = 0;
        for &b in &self.boundaries {
            if b <= prev || b >= samples.len() {
                return Err(format!("boundary {b} out of order or range"));
            }
            prev = b;
        }
        for (j, &e) in self.edges_taken.iter().enumerate() {
            let edge = graph.edges.get(e).ok_or_else(|| format!("edge {e} not in graph"))?;
            if (self.states[j], self.states[j + 1]) != (edge.source, edge.target) {
                return Err(format!("boundary {j} takes edge {e} but states are {:?}", &self.states[j..j + 2]));
            }
            if !edge.admits(self.means[j], self.means[j + 1], 1e-9 * (1.0 + self.means[j].abs())) {
                return Err(format!(
                    "boundary {j}: means {} -> {} violate {} gap {}",
                    self.means[j],
                    self.means[j + 1],
                    edge.direction,
                    edge.gap
                ));
            }
        }
        let recomputed = self.recompute_cost(samples, graph);
        if (recomputed - self.total_cost).abs() > 1e-6 * recomputed.abs().max(1.0) {
            return Err(format!("total cost {} but recomputed {}", self.total_cost, recomputed));
        }
        Ok(())
    }
}

/// Piece-count statistics of the value functions over a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub steps: usize,
    pub max_pieces: usize,
    pub mean_pieces: f64,
    pub decision_intervals: usize,
}

/// Optimization domain for segment means: the data range widened by 1% on
/// each side.
pub fn mean_domain(samples: &[f64]) -> (f64, f64) {
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let eps = if range > 0.0 { 0.01 * range } else { 0.01 * lo.abs().max(1.0) };
    (lo - eps, hi + eps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Stay,
    Change { edge: u32, arg: Argmin },
}

const CODE_INFEASIBLE: u32 = 0;
const CODE_STAY: u32 = 1;
const CODE_EDGE0: u32 = 2;

/// One interval of a per-step decision record. `prev` is the fixed
/// predecessor mean, or NaN when the predecessor sits one gap away.
#[derive(Debug, Clone, Copy)]
struct Span {
    hi: f64,
    prev: f64,
    code: u32,
    owns_hi: bool,
}

fn decision_of(p: &QuadPiece<Origin>) -> (u32, f64) {
    if p.cost.is_none() {
        return (CODE_INFEASIBLE, f64::NAN);
    }
    match p.label {
        Origin::Stay => (CODE_STAY, f64::NAN),
        Origin::Change { edge, arg: Argmin::Shifted } => (CODE_EDGE0 + edge, f64::NAN),
        Origin::Change { edge, arg: Argmin::Fixed(x) } => (CODE_EDGE0 + edge, x),
    }
}

fn preference(code: u32) -> u32 {
    if code == CODE_INFEASIBLE {
        u32::MAX
    } else {
        code
    }
}

fn record_decisions(pieces: &[QuadPiece<Origin>], out: &mut Vec<Span>) {
    let mut k = 0;
    while k < pieces.len() {
        let (code, prev) = decision_of(&pieces[k]);
        let mut j = k;
        while j + 1 < pieces.len() {
            let (c, p) = decision_of(&pieces[j + 1]);
            if c != code || p.to_bits() != prev.to_bits() {
                break;
            }
            j += 1;
        }
        let hi = pieces[j].hi;
        let owns_hi = match pieces.get(j + 1) {
            None => true,
            Some(right) => {
                let (vl, vr) = (pieces[j].eval(hi), right.eval(hi));
                let tol = 1e-12 * (1.0 + vl.abs().min(vr.abs()));
                if vl < vr - tol {
                    true
                } else if vr < vl - tol {
                    false
                } else {
                    preference(code) <= preference(decision_of(right).0)
                }
            }
        };
        out.push(Span { hi, prev, code, owns_hi });
        k = j + 1;
    }
}

struct DecisionLog {
    spans: Vec<Span>,
    offsets: Vec<u32>,
    tol: f64,
}

impl DecisionLog {
    /// Decision at `row` (step × state) for mean `m`.
    fn lookup(&self, row: usize, m: f64) -> Span {
        let spans = &self.spans[self.offsets[row] as usize..self.offsets[row + 1] as usize];
        let last = spans.len() - 1;
        let mut k = spans.partition_point(|s| s.hi < m).min(last);
        let boundary = if k > 0 && m - spans[k - 1].hi <= self.tol {
            Some(k - 1)
        } else if k < last && spans[k].hi - m <= self.tol {
            Some(k)
        } else {
            None
        };
        if let Some(b) = boundary {
            k = if spans[b].owns_hi { b } else { b + 1 };
            if spans[k].code == CODE_INFEASIBLE {
                k = if k == b { b + 1 } else { b };
            }
        }
        spans[k]
    }
}

/// Globally optimal segmentation of `signal` under `graph`.
pub fn solve(signal: &Signal, graph: &ConstraintGraph, start: StartState) -> Result<Segmentation, SolveError> {
    solve_with_stats(signal, graph, start).map(|(seg, _)| seg)
}

pub fn solve_with_stats(
    signal: &Signal,
    graph: &ConstraintGraph,
    start: StartState,
) -> Result<(Segmentation, SolveStats), SolveError> {
    let violations = graph.validate();
    if !violations.is_empty() {
        return Err(SolveError::InvalidGraph(violations));
    }
    if let StartState::Fixed(s) = start {
        if s.0 >= graph.num_states() {
            return Err(SolveError::UnknownStartState(s.to_string()));
        }
    }
    let y = signal.samples();
    let n = y.len();
    let n_states = graph.num_states();
    let (lo, hi) = mean_domain(y);
    let width = hi - lo;

    let in_edges: Vec<Vec<usize>> =
        (0..n_states).map(|v| graph.in_edges(StateId(v)).filter(|&e| graph.edges[e].gap < width).collect()).collect();

    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(PwqError::EmptyDomain { lo, hi }.into());
    }
    let first = [QuadPiece { lo, hi, cost: Some(Quadratic::squared_loss(y[0])), label: () }];
    let infeasible = [QuadPiece { lo, hi, cost: None, label: () }];
    let mut cost: Vec<Vec<QuadPiece>> = (0..n_states)
        .map(|v| match start {
            StartState::Fixed(s) if s.0 != v => infeasible.to_vec(),
            _ => first.to_vec(),
        })
        .collect();
    let mut next: Vec<Vec<QuadPiece>> = vec![Vec::new(); n_states];

    let mut log = DecisionLog {
        spans: Vec::with_capacity(n * n_states * 2),
        offsets: Vec::with_capacity((n - 1) * n_states + 1),
        tol: 1e-10 * width,
    };
    log.offsets.push(0);
    let mut stats = SolveStats { steps: n, ..SolveStats::default() };
    let mut piece_total = 0usize;

    let mut best: Vec<QuadPiece<Origin>> = Vec::new();
    let mut merged: Vec<QuadPiece<Origin>> = Vec::new();
    let mut env: Vec<QuadPiece<Origin>> = Vec::new();
    let mut scratch = EnvelopeScratch::default();
    let infeasible_everywhere = |f: &[QuadPiece]| f.iter().all(|p| p.cost.is_none());
    for (t, &yt) in y.iter().enumerate().skip(1) {
        let loss = Quadratic::squared_loss(yt);
        for v in 0..n_states {
            best.clear();
            best.extend(cost[v].iter().map(|p| QuadPiece { lo: p.lo, hi: p.hi, cost: p.cost, label: Origin::Stay }));
            for &e in &in_edges[v] {
                let edge = &graph.edges[e];
                let src = &cost[edge.source.0];
                if infeasible_everywhere(src) {
                    continue;
                }
                let upward = edge.direction == Direction::Up;
                let label = |arg| Origin::Change { edge: e as u32, arg };
                envelope_into(lo, hi, src, upward, edge.gap, edge.penalty, label, &mut scratch, &mut env)?;
                min_pieces_into(lo, &best, &env, &mut merged);
                std::mem::swap(&mut best, &mut merged);
            }
            record_decisions(&best, &mut log.spans);
            log.offsets.push(log.spans.len() as u32);
            let out = &mut next[v];
            out.clear();
            for p in &best {
                push_piece(out, p.lo, p.hi, p.cost, ());
            }
            for p in out.iter_mut() {
                if let Some(q) = &mut p.cost {
                    *q = q.plus(&loss);
                }
            }
            piece_total += out.len();
            stats.max_pieces = stats.max_pieces.max(out.len());
        }
        if next.iter().all(|f| infeasible_everywhere(f)) {
            return Err(SolveError::Infeasible { time: t, state: graph.state_name(StateId(0)).to_string() });
        }
        std::mem::swap(&mut cost, &mut next);
    }
    stats.mean_pieces = piece_total as f64 / ((n - 1) * n_states).max(1) as f64;
    stats.decision_intervals = log.spans.len();

    let mut end_state = None;
    for (v, c) in cost.into_iter().enumerate() {
        if let Ok((m, value)) = PiecewiseQuad::from_canonical(lo, hi, c).global_min() {
            if end_state.is_none_or(|(_, _, bv)| value < bv) {
                end_state = Some((v, m, value));
            }
        }
    }
    let (mut v, mut m, total_cost) =
        end_state.ok_or_else(|| SolveError::Infeasible { time: n - 1, state: graph.state_name(StateId(0)).into() })?;

    let mut boundaries = Vec::new();
    let mut edges_taken = Vec::new();
    let mut means = vec![m];
    let mut states = vec![StateId(v)];
    for t in (1..n).rev() {
        let span = log.lookup((t - 1) * n_states + v, m);
        match span.code {
            CODE_STAY => {}
            CODE_INFEASIBLE => {
                return Err(SolveError::Infeasible { time: t, state: graph.state_name(StateId(v)).into() });
            }
            code => {
                let e = (code - CODE_EDGE0) as usize;
                let edge = &graph.edges[e];
                let prev = if span.prev.is_nan() {
                    match edge.direction {
                        Direction::Up => m - edge.gap,
                        Direction::Down => m + edge.gap,
                    }
                } else {
                    span.prev
                };
                m = prev.clamp(lo, hi);
                v = edge.source.0;
                boundaries.push(t);
                edges_taken.push(e);
                means.push(m);
                states.push(StateId(v));
            }
        }
    }
    boundaries.reverse();
    edges_taken.reverse();
    means.reverse();
    states.reverse();
    Ok((Segmentation { boundaries, edges_taken, means, states, total_cost }, stats))
}

/// One R-peak sample index per segment in the graph's R state: the extreme
/// sample of the segment in the direction of the change that entered it,
/// earliest on ties.
pub fn extract_rpeaks(seg: &Segmentation, signal: &Signal, graph: &ConstraintGraph) -> Vec<usize> {
    let y = signal.samples();
    let fallback = graph.in_edges(graph.rpeak_state).next().map_or(Direction::Up, |e| graph.edges[e].direction);
    let mut peaks = Vec::new();
    for (k, range) in seg.segment_ranges(y.len()).enumerate() {
        if seg.states[k] != graph.rpeak_state || range.is_empty() {
            continue;
        }
        let direction = match k {
            0 => fallback,
            _ => graph.edges[seg.edges_taken[k - 1]].direction,
        };
        let mut best = range.start;
        for i in range {
            let better = match direction {
                Direction::Up => y[i] > y[best],
                Direction::Down => y[i] < y[best],
            };
            if better {
                best = i;
            }
        }
        peaks.push(best);
    }
    peaks
}

/// Solves with a free start state and returns the R-peak indices.
pub fn detect(signal: &Signal, graph: &ConstraintGraph) -> Result<Vec<usize>, SolveError> {
    let seg = solve(signal, graph, StartState::Free)?;
    Ok(extract_rpeaks(&seg, signal, graph))
}
