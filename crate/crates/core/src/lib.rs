//! Graph-constrained changepoint detection for piecewise-constant signals,
//! with constraint-graph learning from R-peak-labelled ECG.
//!
//! The crate is organised bottom-up:
//!
//! - [`pwq`]: piecewise-quadratic value functions and their envelope algebra.
//! - [`graph`]: the constraint graph (states, directed edges with a direction,
//!   a minimum gap and a penalty) and its JSON form.
//! - [`solver`]: the functional dynamic program that finds the globally optimal
//!   constrained segmentation, and R-peak extraction from it.
//! - [`data`]: labelled records, text ingestion and a synthetic ECG generator.
//! - [`eval`]: detection matching, Sen/PPR/DER, cycle splits and cross-validation.
//! - [`learn`]: greedy graph editing driven by detection error.

pub mod data;
pub mod eval;
pub mod graph;
pub mod learn;
pub mod pwq;
pub mod solver;
mod stats;

pub use data::{LabeledRecord, SynthConfig, Window};
pub use eval::{Counts, DetectionReport, MatchResult, Metrics};
pub use graph::{ConstraintGraph, Direction, Edge, State, StateId};
pub use learn::{EditKind, LearnConfig, LearnTrace};
pub use pwq::{PiecewiseQuad, QuadPiece, Quadratic};
pub use solver::{Segmentation, Signal, StartState};
