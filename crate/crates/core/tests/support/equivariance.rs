//! Shift and scale equivariance of the solver.

use changegraph::graph::ConstraintGraph;
use changegraph::solver::{solve, Segmentation, Signal};

use super::instances::Instance;

fn solve_on(y: Vec<f64>, graph: &ConstraintGraph, inst: &Instance) -> Result<Option<Segmentation>, String> {
    let signal = Signal::new(y, 360.0).map_err(|e| e.to_string())?;
    match solve(&signal, graph, inst.start) {
        Ok(seg) => {
            seg.check(signal.samples(), graph)?;
            Ok(Some(seg))
        }
        Err(_) => Ok(None),
    }
}

/// Boundaries must match and means must map. State labels may differ only
/// between exactly tied optima (for example rotations of a ring whose
/// edges repeat the same pattern); returns whether that happened.
fn same_structure(
    a: &Segmentation,
    b: &Segmentation,
    map: impl Fn(f64) -> f64,
    cost_scale: f64,
) -> Result<bool, String> {
    if a.boundaries != b.boundaries {
        return Err(format!("boundaries changed: {:?} vs {:?}", a.boundaries, b.boundaries));
    }
    let relabelled = a.states != b.states || a.edges_taken != b.edges_taken;
    if relabelled && (a.total_cost * cost_scale - b.total_cost).abs() > 1e-9 * b.total_cost.max(1.0) {
        return Err(format!("states changed: {:?} vs {:?}", a.states, b.states));
    }
    for (m, m2) in a.means.iter().zip(&b.means) {
        let expected = map(*m);
        if (m2 - expected).abs() > 1e-6 * expected.abs().max(1.0) {
            return Err(format!("mean {m2}, expected {expected}"));
        }
    }
    Ok(relabelled)
}

/// `solve(y + shift)` and `solve(scale·y)` (gaps ×scale, penalties ×scale²)
/// reproduce the boundaries of `solve(y)` with transformed means. Returns
/// the number of tied optima that came back with different state labels.
pub fn check(inst: &Instance, shift: f64, scale: f64) -> Result<usize, String> {
    let base = solve_on(inst.y.clone(), &inst.graph, inst)?;
    let shifted = solve_on(inst.y.iter().map(|v| v + shift).collect(), &inst.graph, inst)?;
    let mut g = inst.graph.clone();
    for e in &mut g.edges {
        e.gap *= scale;
        e.penalty *= scale * scale;
    }
    let scaled = solve_on(inst.y.iter().map(|v| v * scale).collect(), &g, inst)?;
    match (base, shifted, scaled) {
        (None, None, None) => Ok(0),
        (Some(a), Some(b), Some(c)) => {
            let s = same_structure(&a, &b, |m| m + shift, 1.0).map_err(|e| format!("shift {shift}: {e}"))?;
            let t = same_structure(&a, &c, |m| m * scale, scale * scale).map_err(|e| format!("scale {scale}: {e}"))?;
            Ok(usize::from(s) + usize::from(t))
        }
        _ => Err("feasibility changed".into()),
    }
}
