//! Piecewise-quadratic functions of one real variable.
//!
//! A [`PiecewiseQuad`] is the value-function representation used by the
//! changepoint solver: a list of closed intervals that tile a fixed domain,
//! each carrying either a convex quadratic `a·m² + b·m + c` or the infeasible
//! marker (`+∞`). Every operation returns a function in canonical form, in
//! which adjacent pieces with matching coefficients and labels are merged.
//!
//! Pieces carry an optional label `L`. The plain algebra uses `L = ()`; the
//! solver attaches labels that record which branch of the recurrence produced
//! each piece, so the optimal path can be traced back afterwards.

use std::fmt;

use thiserror::Error;

/// Relative tolerance for merging coefficients of adjacent pieces.
pub const MERGE_TOL: f64 = 1e-12;
/// Relative tolerance for value agreement at shared breakpoints.
pub const CONTINUITY_TOL: f64 = 1e-9;
/// Relative discriminant cutoff below which two quadratics are tangent.
pub const TANGENCY_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PwqError {
    #[error("empty or non-finite domain [{lo}, {hi}]")]
    EmptyDomain { lo: f64, hi: f64 },
    #[error("domains differ: [{0}, {1}] vs [{2}, {3}]")]
    DomainMismatch(f64, f64, f64, f64),
    #[error("gap {gap} leaves no feasible mean in a domain of width {width}")]
    GapTooWide { gap: f64, width: f64 },
    #[error("gap must be finite and non-negative, got {0}")]
    NegativeGap(f64),
    #[error("function is infeasible everywhere")]
    Infeasible,
    #[error("invalid piece: {0}")]
    InvalidPiece(String),
}

/// `a·m² + b·m + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Quadratic {
    pub const ZERO: Quadratic = Quadratic { a: 0.0, b: 0.0, c: 0.0 };

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub const fn constant(k: f64) -> Self {
        Self { a: 0.0, b: 0.0, c: k }
    }

    /// `(y − m)²`.
    pub fn squared_loss(y: f64) -> Self {
        Self { a: 1.0, b: -2.0 * y, c: y * y }
    }

    #[inline]
    pub fn eval(&self, m: f64) -> f64 {
        (self.a * m + self.b) * m + self.c
    }

    #[inline]
    pub(crate) fn plus(&self, other: &Quadratic) -> Quadratic {
        Quadratic { a: self.a + other.a, b: self.b + other.b, c: self.c + other.c }
    }

    #[inline]
    fn minus(&self, other: &Quadratic) -> Quadratic {
        Quadratic { a: self.a - other.a, b: self.b - other.b, c: self.c - other.c }
    }

    /// The function `m ↦ q(m − delta)`.
    fn shifted(&self, delta: f64) -> Quadratic {
        if delta == 0.0 {
            return *self;
        }
        Quadratic {
            a: self.a,
            b: self.b - 2.0 * self.a * delta,
            c: (self.a * delta - self.b) * delta + self.c,
        }
    }

    /// The function `m ↦ q(−m)`.
    fn reflected(&self) -> Quadratic {
        Quadratic { a: self.a, b: -self.b, c: self.c }
    }

    /// Minimizer and minimum on `[lo, hi]`, ties toward `lo`.
    pub fn min_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let x = if self.a > 0.0 {
            (-self.b / (2.0 * self.a)).clamp(lo, hi)
        } else if self.b < 0.0 {
            hi
        } else {
            lo
        };
        (x, self.eval(x))
    }

    fn approx_eq(&self, other: &Quadratic) -> bool {
        close(self.a, other.a, MERGE_TOL)
            && close(self.b, other.b, MERGE_TOL)
            && close(self.c, other.c, MERGE_TOL)
    }
}

impl fmt::Display for Quadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}·m² + {}·m + {}", self.a, self.b, self.c)
    }
}

#[inline]
fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * 1f64.max(x.abs()).max(y.abs())
}

/// One closed interval of a [`PiecewiseQuad`]. `cost == None` is `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPiece<L = ()> {
    pub lo: f64,
    pub hi: f64,
    pub cost: Option<Quadratic>,
    pub label: L,
}

impl<L> QuadPiece<L> {
    #[inline]
    pub fn eval(&self, m: f64) -> f64 {
        match &self.cost {
            Some(q) => q.eval(m),
            None => f64::INFINITY,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.cost.is_some()
    }
}

/// Where the minimizing argument of an envelope lies, relative to the mean
/// at which the envelope is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Argmin {
    /// The constraint is active: the previous mean sits exactly one gap away.
    Shifted,
    /// The envelope is flat here and attains its value at this mean.
    Fixed(f64),
}

/// A real function on `[lo, hi]` stored as ordered pieces that tile the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseQuad<L = ()> {
    lo: f64,
    hi: f64,
    pieces: Vec<QuadPiece<L>>,
}

fn check_domain(lo: f64, hi: f64) -> Result<(), PwqError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(PwqError::EmptyDomain { lo, hi })
    }
}

impl PiecewiseQuad<()> {
    pub fn quadratic(lo: f64, hi: f64, q: Quadratic) -> Result<Self, PwqError> {
        Self::from_pieces(lo, hi, vec![QuadPiece { lo, hi, cost: Some(q), label: () }])
    }

    pub fn zero(lo: f64, hi: f64) -> Result<Self, PwqError> {
        Self::quadratic(lo, hi, Quadratic::ZERO)
    }

    pub fn constant(lo: f64, hi: f64, k: f64) -> Result<Self, PwqError> {
        Self::quadratic(lo, hi, Quadratic::constant(k))
    }

    pub fn infeasible(lo: f64, hi: f64) -> Result<Self, PwqError> {
        Self::from_pieces(lo, hi, vec![QuadPiece { lo, hi, cost: None, label: () }])
    }
}

impl<L: Copy + PartialEq> PiecewiseQuad<L> {
    /// Builds a function from pieces that must tile `[lo, hi]` exactly.
    pub fn from_pieces(lo: f64, hi: f64, pieces: Vec<QuadPiece<L>>) -> Result<Self, PwqError> {
        check_domain(lo, hi)?;
        let mut expected = lo;
        for (k, p) in pieces.iter().enumerate() {
            if p.lo != expected {
                return Err(PwqError::InvalidPiece(format!(
                    "piece {k} starts at {} but previous ended at {expected}",
                    p.lo
                )));
            }
            if !(p.lo < p.hi) {
                return Err(PwqError::InvalidPiece(format!("piece {k} has lo {} >= hi {}", p.lo, p.hi)));
            }
            if let Some(q) = &p.cost {
                if !(q.a.is_finite() && q.b.is_finite() && q.c.is_finite()) {
                    return Err(PwqError::InvalidPiece(format!("piece {k} has non-finite coefficients")));
                }
                if q.a < 0.0 {
                    return Err(PwqError::InvalidPiece(format!("piece {k} is concave (a = {})", q.a)));
                }
            }
            expected = p.hi;
        }
        if expected != hi {
            return Err(PwqError::InvalidPiece(format!("pieces end at {expected}, domain ends at {hi}")));
        }
        let mut out = Vec::with_capacity(pieces.len());
        for p in pieces {
            push_piece(&mut out, p.lo, p.hi, p.cost, p.label);
        }
        Ok(Self { lo, hi, pieces: out })
    }

    /// Wraps pieces already known to be canonical and to tile `[lo, hi]`.
    pub(crate) fn from_canonical(lo: f64, hi: f64, pieces: Vec<QuadPiece<L>>) -> Self {
        debug_assert!(pieces.first().is_some_and(|p| p.lo == lo) && pieces.last().is_some_and(|p| p.hi == hi));
        Self { lo, hi, pieces }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn pieces(&self) -> &[QuadPiece<L>] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// True when no mean in the domain is feasible.
    pub fn is_infeasible(&self) -> bool {
        self.pieces.iter().all(|p| p.cost.is_none())
    }

    /// Smallest interval containing every feasible piece.
    pub fn feasible_support(&self) -> Option<(f64, f64)> {
        let first = self.pieces.iter().find(|p| p.is_feasible())?;
        let last = self.pieces.iter().rev().find(|p| p.is_feasible())?;
        Some((first.lo, last.hi))
    }

    /// Value at `m`; `+∞` outside the domain or on infeasible pieces. At a
    /// breakpoint the smaller of the two adjacent values is returned.
    pub fn eval(&self, m: f64) -> f64 {
        if !(m >= self.lo && m <= self.hi) {
            return f64::INFINITY;
        }
        let k = self.pieces.partition_point(|p| p.hi < m).min(self.pieces.len() - 1);
        let mut v = self.pieces[k].eval(m);
        if self.pieces[k].hi == m {
            if let Some(next) = self.pieces.get(k + 1) {
                v = v.min(next.eval(m));
            }
        }
        v
    }

    /// `f(m) + (y − m)²`.
    pub fn add_point_loss(&self, y: f64) -> Self {
        let mut out = self.clone();
        out.add_point_loss_in_place(y);
        out
    }

    pub fn add_point_loss_in_place(&mut self, y: f64) {
        self.add_quadratic_in_place(&Quadratic::squared_loss(y));
    }

    /// `f(m) + k`.
    pub fn add_constant(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.add_constant_in_place(k);
        out
    }

    pub fn add_constant_in_place(&mut self, k: f64) {
        if k != 0.0 {
            self.add_quadratic_in_place(&Quadratic::constant(k));
        }
    }

    fn add_quadratic_in_place(&mut self, q: &Quadratic) {
        for p in &mut self.pieces {
            if let Some(cost) = &mut p.cost {
                *cost = cost.plus(q);
            }
        }
    }

    /// `min(f(m), g(m))`. On ties the piece (and label) of `self` wins.
    pub fn pointwise_min(&self, other: &Self) -> Result<Self, PwqError> {
        let mut out = Vec::with_capacity(self.pieces.len() + other.pieces.len() + 2);
        self.pointwise_min_into(other, &mut out)?;
        Ok(Self { lo: self.lo, hi: self.hi, pieces: out })
    }

    pub(crate) fn pointwise_min_into(&self, other: &Self, out: &mut Vec<QuadPiece<L>>) -> Result<(), PwqError> {
        if self.lo != other.lo || self.hi != other.hi {
            return Err(PwqError::DomainMismatch(self.lo, self.hi, other.lo, other.hi));
        }
        min_pieces_into(self.lo, &self.pieces, &other.pieces, out);
        Ok(())
    }

    /// `D(m) = min { f(m') : m' ≤ m − gap }`, the cost of arriving at `m`
    /// through an upward change of at least `gap`. Means below `lo + gap`
    /// have no feasible predecessor and are marked infeasible.
    pub fn min_leq_envelope(&self, gap: f64) -> Result<PiecewiseQuad<()>, PwqError> {
        Ok(self.min_leq_envelope_traced(gap)?.map_labels(|_| ()))
    }

    /// `D(m) = min { f(m') : m' ≥ m + gap }`, the downward mirror of
    /// [`min_leq_envelope`](Self::min_leq_envelope).
    pub fn min_geq_envelope(&self, gap: f64) -> Result<PiecewiseQuad<()>, PwqError> {
        Ok(self.min_geq_envelope_traced(gap)?.map_labels(|_| ()))
    }

    /// As [`min_leq_envelope`](Self::min_leq_envelope), with each piece
    /// labelled by where its minimizing predecessor mean lies.
    pub fn min_leq_envelope_traced(&self, gap: f64) -> Result<PiecewiseQuad<Argmin>, PwqError> {
        let mut out = Vec::with_capacity(self.pieces.len() * 2 + 1);
        let mut running = Vec::with_capacity(self.pieces.len() * 2);
        leq_envelope_into(self.lo, self.hi, &self.pieces, gap, &mut running, &mut out)?;
        Ok(PiecewiseQuad { lo: self.lo, hi: self.hi, pieces: out })
    }

    pub fn min_geq_envelope_traced(&self, gap: f64) -> Result<PiecewiseQuad<Argmin>, PwqError> {
        let reflected = self.reflect();
        let env = reflected.min_leq_envelope_traced(gap)?;
        Ok(env.reflect().map_labels(|arg| match arg {
            Argmin::Fixed(x) => Argmin::Fixed(-x),
            Argmin::Shifted => Argmin::Shifted,
        }))
    }

    /// Minimizer and minimum over the domain, ties toward smaller `m`.
    pub fn global_min(&self) -> Result<(f64, f64), PwqError> {
        let mut best: Option<(f64, f64)> = None;
        for p in &self.pieces {
            if let Some(q) = &p.cost {
                let (x, v) = q.min_on(p.lo, p.hi);
                if best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((x, v));
                }
            }
        }
        best.ok_or(PwqError::Infeasible)
    }

    /// The function `m ↦ f(−m)` on `[−hi, −lo]`.
    pub fn reflect(&self) -> Self {
        let pieces = self
            .pieces
            .iter()
            .rev()
            .map(|p| QuadPiece { lo: -p.hi, hi: -p.lo, cost: p.cost.map(|q| q.reflected()), label: p.label })
            .collect();
        Self { lo: -self.hi, hi: -self.lo, pieces }
    }

    /// Relabels every piece and re-canonicalizes.
    pub fn map_labels<M: Copy + PartialEq>(&self, f: impl Fn(L) -> M) -> PiecewiseQuad<M> {
        let mut out = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            push_piece(&mut out, p.lo, p.hi, p.cost, f(p.label));
        }
        PiecewiseQuad { lo: self.lo, hi: self.hi, pieces: out }
    }

    /// True when neighbouring feasible pieces agree at their shared
    /// breakpoint within `tol` (relative).
    pub fn is_continuous(&self, tol: f64) -> bool {
        self.pieces.windows(2).all(|w| match (&w[0].cost, &w[1].cost) {
            (Some(l), Some(r)) => close(l.eval(w[0].hi), r.eval(w[1].lo), tol),
            _ => true,
        })
    }

    /// Checks tiling, convexity and canonical form.
    pub fn check_invariants(&self) -> Result<(), PwqError> {
        check_domain(self.lo, self.hi)?;
        let first = self.pieces.first().ok_or_else(|| PwqError::InvalidPiece("no pieces".into()))?;
        if first.lo != self.lo || self.pieces.last().map(|p| p.hi) != Some(self.hi) {
            return Err(PwqError::InvalidPiece("pieces do not span the domain".into()));
        }
        for (k, w) in self.pieces.windows(2).enumerate() {
            if w[0].hi != w[1].lo {
                return Err(PwqError::InvalidPiece(format!("gap or overlap after piece {k}")));
            }
            if w[0].label == w[1].label && costs_match(&w[0].cost, &w[1].cost) {
                return Err(PwqError::InvalidPiece(format!("pieces {k} and {} not merged", k + 1)));
            }
        }
        for (k, p) in self.pieces.iter().enumerate() {
            if !(p.lo < p.hi) {
                return Err(PwqError::InvalidPiece(format!("piece {k} is empty")));
            }
            if p.cost.is_some_and(|q| q.a < 0.0) {
                return Err(PwqError::InvalidPiece(format!("piece {k} is concave")));
            }
        }
        Ok(())
    }
}

impl<L> fmt::Display for PiecewiseQuad<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.pieces {
            match &p.cost {
                Some(q) => writeln!(f, "[{}, {}]: {}", p.lo, p.hi, q)?,
                None => writeln!(f, "[{}, {}]: +inf", p.lo, p.hi)?,
            }
        }
        Ok(())
    }
}

fn costs_match(x: &Option<Quadratic>, y: &Option<Quadratic>) -> bool {
    match (x, y) {
        (None, None) => true,
        (Some(p), Some(q)) => p.approx_eq(q),
        _ => false,
    }
}

/// Appends a piece, dropping it if empty and merging it into the previous
/// one when costs and labels match.
#[inline]
pub(crate) fn push_piece<L: Copy + PartialEq>(out: &mut Vec<QuadPiece<L>>, lo: f64, hi: f64, cost: Option<Quadratic>, label: L) {
    if !(hi > lo) {
        return;
    }
    if let Some(last) = out.last_mut() {
        if last.label == label && costs_match(&last.cost, &cost) {
            last.hi = hi;
            return;
        }
    }
    out.push(QuadPiece { lo, hi, cost, label });
}

/// Real roots of `q` strictly inside `(lo, hi)`, ascending.
fn interior_roots(q: &Quadratic, scale_a: f64, lo: f64, hi: f64) -> ([f64; 2], usize) {
    let mut roots = [0.0; 2];
    let mut n = 0;
    let eps = 1e-13 * 1f64.max(lo.abs()).max(hi.abs());
    let keep = |r: f64, roots: &mut [f64; 2], n: &mut usize| {
        if r > lo + eps && r < hi - eps {
            roots[*n] = r;
            *n += 1;
        }
    };
    if q.a.abs() <= MERGE_TOL * scale_a.max(1.0) {
        if q.b != 0.0 {
            keep(-q.c / q.b, &mut roots, &mut n);
        }
    } else {
        let disc = q.b * q.b - 4.0 * q.a * q.c;
        if disc > TANGENCY_TOL * (q.b * q.b).max((4.0 * q.a * q.c).abs()) {
            let s = disc.sqrt();
            let t = -0.5 * (q.b + q.b.signum() * s);
            let (mut r1, mut r2) = if t != 0.0 { (t / q.a, q.c / t) } else { (s / (2.0 * q.a), -s / (2.0 * q.a)) };
            if r1 > r2 {
                std::mem::swap(&mut r1, &mut r2);
            }
            keep(r1, &mut roots, &mut n);
            keep(r2, &mut roots, &mut n);
        }
    }
    (roots, n)
}

fn min_on_interval<L: Copy + PartialEq>(
    x0: f64,
    x1: f64,
    pf: &QuadPiece<L>,
    pg: &QuadPiece<L>,
    out: &mut Vec<QuadPiece<L>>,
) {
    match (&pf.cost, &pg.cost) {
        (None, None) => push_piece(out, x0, x1, None, pf.label),
        (Some(_), None) => push_piece(out, x0, x1, pf.cost, pf.label),
        (None, Some(_)) => push_piece(out, x0, x1, pg.cost, pg.label),
        (Some(qf), Some(qg)) => {
            if qf.approx_eq(qg) {
                push_piece(out, x0, x1, pf.cost, pf.label);
                return;
            }
            let d = qf.minus(qg);
            let (roots, n) = interior_roots(&d, qf.a.max(qg.a), x0, x1);
            let mut lo = x0;
            for k in 0..=n {
                let hi = if k < n { roots[k] } else { x1 };
                let mid = 0.5 * (lo + hi);
                let (vf, vg) = (qf.eval(mid), qg.eval(mid));
                if vf - vg <= MERGE_TOL * (1.0 + vf.abs().max(vg.abs())) {
                    push_piece(out, lo, hi, pf.cost, pf.label);
                } else {
                    push_piece(out, lo, hi, pg.cost, pg.label);
                }
                lo = hi;
            }
        }
    }
}

/// Running minimum `R(x) = min { f(m') : m' ≤ x }` over the pieces' domain.
fn running_min_into<L>(pieces: &[QuadPiece<L>], out: &mut Vec<QuadPiece<Argmin>>) {
    let mut best = f64::INFINITY;
    let mut best_at = f64::NAN;
    for p in pieces {
        let Some(q) = p.cost else {
            if best.is_finite() {
                push_piece(out, p.lo, p.hi, Some(Quadratic::constant(best)), Argmin::Fixed(best_at));
            } else {
                push_piece(out, p.lo, p.hi, None, Argmin::Shifted);
            }
            continue;
        };
        let (turn, q_turn) = q.min_on(p.lo, p.hi);
        if q_turn >= best {
            push_piece(out, p.lo, p.hi, Some(Quadratic::constant(best)), Argmin::Fixed(best_at));
            continue;
        }
        let q_lo = q.eval(p.lo);
        let start = if !best.is_finite() || q_lo <= best + MERGE_TOL * (1.0 + best.abs()) {
            p.lo
        } else {
            // q falls through the current best on its decreasing branch.
            let x = if q.a > 0.0 {
                let vertex = -q.b / (2.0 * q.a);
                let q_vertex = q.eval(vertex);
                vertex - ((best - q_vertex).max(0.0) / q.a).sqrt()
            } else {
                (best - q.c) / q.b
            };
            let x = x.clamp(p.lo, turn);
            push_piece(out, p.lo, x, Some(Quadratic::constant(best)), Argmin::Fixed(best_at));
            x
        };
        push_piece(out, start, turn, Some(q), Argmin::Shifted);
        push_piece(out, turn, p.hi, Some(Quadratic::constant(q_turn)), Argmin::Fixed(turn));
        best = q_turn;
        best_at = turn;
    }
}

fn leq_envelope_into<L>(
    lo: f64,
    hi: f64,
    pieces: &[QuadPiece<L>],
    gap: f64,
    running: &mut Vec<QuadPiece<Argmin>>,
    out: &mut Vec<QuadPiece<Argmin>>,
) -> Result<(), PwqError> {
    if !(gap >= 0.0) || !gap.is_finite() {
        return Err(PwqError::NegativeGap(gap));
    }
    let width = hi - lo;
    if gap >= width {
        return Err(PwqError::GapTooWide { gap, width });
    }
    out.clear();
    running.clear();
    running_min_into(pieces, running);
    if gap == 0.0 {
        out.extend_from_slice(running);
        return Ok(());
    }
    push_piece(out, lo, lo + gap, None, Argmin::Shifted);
    let cut = hi - gap;
    for p in running.iter() {
        if p.lo >= cut {
            break;
        }
        let new_lo = p.lo + gap;
        let new_hi = if p.hi >= cut { hi } else { p.hi + gap };
        push_piece(out, new_lo, new_hi, p.cost.map(|q| q.shifted(gap)), p.label);
    }
    Ok(())
}

/// `min(f, g)` of two tilings of the same domain starting at `lo`.
pub(crate) fn min_pieces_into<L: Copy + PartialEq>(
    lo: f64,
    f: &[QuadPiece<L>],
    g: &[QuadPiece<L>],
    out: &mut Vec<QuadPiece<L>>,
) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    let mut x = lo;
    while i < f.len() && j < g.len() {
        let (pf, pg) = (&f[i], &g[j]);
        let x1 = pf.hi.min(pg.hi);
        min_on_interval(x, x1, pf, pg, out);
        x = x1;
        if pf.hi == x1 {
            i += 1;
        }
        if pg.hi == x1 {
            j += 1;
        }
    }
}

/// Reusable buffers for [`envelope_into`].
#[derive(Debug, Default)]
pub(crate) struct EnvelopeScratch {
    reflected: Vec<QuadPiece<()>>,
    running: Vec<QuadPiece<Argmin>>,
    env: Vec<QuadPiece<Argmin>>,
}

/// Writes the upward (`min_leq`) or downward (`min_geq`) envelope of the
/// tiling `pieces` of `[lo, hi]`, plus `penalty`, into `out`, relabelling
/// each piece through `label`. Same result as the traced envelope methods
/// without intermediate allocations.
#[allow(clippy::too_many_arguments)]
pub(crate) fn envelope_into<M: Copy + PartialEq>(
    lo: f64,
    hi: f64,
    pieces: &[QuadPiece<()>],
    upward: bool,
    gap: f64,
    penalty: f64,
    label: impl Fn(Argmin) -> M,
    s: &mut EnvelopeScratch,
    out: &mut Vec<QuadPiece<M>>,
) -> Result<(), PwqError> {
    out.clear();
    let add = Quadratic::constant(penalty);
    if upward {
        leq_envelope_into(lo, hi, pieces, gap, &mut s.running, &mut s.env)?;
        for p in &s.env {
            push_piece(out, p.lo, p.hi, p.cost.map(|q| q.plus(&add)), label(p.label));
        }
    } else {
        s.reflected.clear();
        s.reflected.extend(pieces.iter().rev().map(|p| QuadPiece {
            lo: -p.hi,
            hi: -p.lo,
            cost: p.cost.map(|q| q.reflected()),
            label: (),
        }));
        leq_envelope_into(-hi, -lo, &s.reflected, gap, &mut s.running, &mut s.env)?;
        for p in s.env.iter().rev() {
            let arg = match p.label {
                Argmin::Fixed(x) => Argmin::Fixed(-x),
                Argmin::Shifted => Argmin::Shifted,
            };
            let cost = p.cost.map(|q| q.reflected().plus(&add));
            push_piece(out, -p.hi, -p.lo, cost, label(arg));
        }
    }
    Ok(())
}
