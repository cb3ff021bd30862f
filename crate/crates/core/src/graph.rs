//! Constraint graphs: hidden states and the changes permitted between them.
//!
//! Each edge allows a changepoint from `source` to `target` whose segment
//! means satisfy `next ≥ prev + gap` (up) or `next ≤ prev − gap` (down), at a
//! cost of `penalty`. Staying in a state is not an edge; the solver handles
//! it as the no-change branch.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense index of a state within its graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct State {
    pub id: StateId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub source: StateId,
    pub target: StateId,
    pub direction: Direction,
    pub gap: f64,
    pub penalty: f64,
}

impl Edge {
    /// Whether a change from mean `prev` to mean `next` satisfies this edge's
    /// constraint, with absolute slack `tol`.
    pub fn admits(&self, prev: f64, next: f64, tol: f64) -> bool {
        match self.direction {
            Direction::Up => next >= prev + self.gap - tol,
            Direction::Down => next <= prev - self.gap + tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintGraph {
    pub states: Vec<State>,
    pub edges: Vec<Edge>,
    pub baseline_state: StateId,
    pub rpeak_state: StateId,
}

/// One broken graph rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonDenseId { position: usize, id: StateId },
    EmptyName { state: StateId },
    DuplicateName { name: String },
    UnknownState { edge: usize, state: StateId },
    SelfLoop { edge: usize },
    NegativePenalty { edge: usize, penalty: f64 },
    NegativeGap { edge: usize, gap: f64 },
    DuplicateEdge { edge: usize, first: usize },
    NoOutgoing { state: String },
    NoIncoming { state: String },
    NotStronglyConnected { unreachable: Vec<String> },
    MissingProtected { role: &'static str, id: StateId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonDenseId { position, id } => {
                write!(f, "state at position {position} has id {id}; ids must be 0..|V|-1 in order")
            }
            Violation::EmptyName { state } => write!(f, "state {state} has an empty name"),
            Violation::DuplicateName { name } => write!(f, "state name {name:?} is used more than once"),
            Violation::UnknownState { edge, state } => write!(f, "edge {edge} refers to unknown state {state}"),
            Violation::SelfLoop { edge } => write!(f, "edge {edge} is a self-loop"),
            Violation::NegativePenalty { edge, penalty } => {
                write!(f, "edge {edge} penalty {penalty} must be finite and non-negative")
            }
            Violation::NegativeGap { edge, gap } => write!(f, "edge {edge} gap {gap} must be finite and non-negative"),
            Violation::DuplicateEdge { edge, first } => write!(f, "edge {edge} duplicates edge {first}"),
            Violation::NoOutgoing { state } => write!(f, "state {state:?} has no outgoing edge"),
            Violation::NoIncoming { state } => write!(f, "state {state:?} has no incoming edge"),
            Violation::NotStronglyConnected { unreachable } => {
                write!(f, "graph is not strongly connected; cut off: {}", unreachable.join(", "))
            }
            Violation::MissingProtected { role, id } => write!(f, "{role} state {id} does not exist"),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph document line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid graph: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("{0} must be finite and non-negative")]
    NegativeArgument(&'static str),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ConstraintGraph {
    /// Two states, baseline `B` and peak `R`, with an upward change into `R`
    /// and a downward change back to `B`.
    pub fn initial(gap_up: f64, gap_down: f64, penalty: f64) -> Result<Self, GraphError> {
        for (name, v) in [("gap_up", gap_up), ("gap_down", gap_down), ("penalty", penalty)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GraphError::NegativeArgument(name));
            }
        }
        let b = StateId(0);
        let r = StateId(1);
        Ok(Self {
            states: vec![State { id: b, name: "B".into() }, State { id: r, name: "R".into() }],
            edges: vec![
                Edge { source: b, target: r, direction: Direction::Up, gap: gap_up, penalty },
                Edge { source: r, target: b, direction: Direction::Down, gap: gap_down, penalty },
            ],
            baseline_state: b,
            rpeak_state: r,
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, id: StateId) -> &str {
        self.states.get(id.0).map_or("?", |s| s.name.as_str())
    }

    pub fn state_by_name(&self, name: &str) -> Option<StateId> {
        self.states.iter().find(|s| s.name == name).map(|s| s.id)
    }

    pub fn penalty_sum(&self) -> f64 {
        self.edges.iter().map(|e| e.penalty).sum()
    }

    /// Indices of edges entering `state`, ascending.
    pub fn in_edges(&self, state: StateId) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.target == state).map(|(k, _)| k)
    }

    pub fn out_edges(&self, state: StateId) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().enumerate().filter(move |(_, e)| e.source == state).map(|(k, _)| k)
    }

    /// Every broken rule; empty when the graph is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.states.len();
        let mut names = HashSet::new();
        for (position, s) in self.states.iter().enumerate() {
            if s.id.0 != position {
                out.push(Violation::NonDenseId { position, id: s.id });
            }
            if s.name.is_empty() {
                out.push(Violation::EmptyName { state: s.id });
            } else if !names.insert(s.name.as_str()) {
                out.push(Violation::DuplicateName { name: s.name.clone() });
            }
        }
        for (role, id) in [("baseline", self.baseline_state), ("rpeak", self.rpeak_state)] {
            if id.0 >= n {
                out.push(Violation::MissingProtected { role, id });
            }
        }
        let mut edges_ok = true;
        for (k, e) in self.edges.iter().enumerate() {
            for s in [e.source, e.target] {
                if s.0 >= n {
                    out.push(Violation::UnknownState { edge: k, state: s });
                    edges_ok = false;
                }
            }
            if e.source == e.target {
                out.push(Violation::SelfLoop { edge: k });
            }
            if !(e.penalty >= 0.0 && e.penalty.is_finite()) {
                out.push(Violation::NegativePenalty { edge: k, penalty: e.penalty });
            }
            if !(e.gap >= 0.0 && e.gap.is_finite()) {
                out.push(Violation::NegativeGap { edge: k, gap: e.gap });
            }
            if let Some(first) = self.edges[..k].iter().position(|o| o == e) {
                out.push(Violation::DuplicateEdge { edge: k, first });
            }
        }
        if !edges_ok || n == 0 {
            return out;
        }
        let mut degree_ok = true;
        for s in &self.states {
            if self.out_edges(s.id).next().is_none() {
                out.push(Violation::NoOutgoing { state: s.name.clone() });
                degree_ok = false;
            }
            if self.in_edges(s.id).next().is_none() {
                out.push(Violation::NoIncoming { state: s.name.clone() });
                degree_ok = false;
            }
        }
        if degree_ok {
            let forward = self.reachable(StateId(0), false);
            let backward = self.reachable(StateId(0), true);
            let unreachable: Vec<String> = self
                .states
                .iter()
                .filter(|s| !(forward[s.id.0] && backward[s.id.0]))
                .map(|s| s.name.clone())
                .collect();
            if !unreachable.is_empty() {
                out.push(Violation::NotStronglyConnected { unreachable });
            }
        }
        out
    }

    fn reachable(&self, from: StateId, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.states.len()];
        let mut queue = VecDeque::from([from]);
        seen[from.0] = true;
        while let Some(s) = queue.pop_front() {
            for e in &self.edges {
                let (a, b) = if reverse { (e.target, e.source) } else { (e.source, e.target) };
                if a == s && !seen[b.0] {
                    seen[b.0] = true;
                    queue.push_back(b);
                }
            }
        }
        seen
    }

    pub fn ensure_valid(&self) -> Result<(), GraphError> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(GraphError::Invalid(violations))
        }
    }

    /// Parses and validates a graph document.
    pub fn parse(document: &str) -> Result<Self, GraphError> {
        let g: ConstraintGraph = serde_json::from_str(document).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        g.ensure_valid()?;
        Ok(g)
    }

    pub fn serialize(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serialization is infallible");
        s.push('\n');
        s
    }
}

impl fmt::Display for ConstraintGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} states:", self.states.len())?;
        for e in &self.edges {
            write!(
                f,
                " {}->{}({} {:.4}, {:.4})",
                self.state_name(e.source),
                self.state_name(e.target),
                e.direction,
                e.gap,
                e.penalty
            )?;
        }
        Ok(())
    }
}
