//! Random compositions of the piecewise operations, run side by side on the
//! canonical representation and on the atom-union oracle.

use changegraph::pwq::{PiecewiseQuad, Quadratic};

use super::atoms::Atoms;

pub const GRID_POINTS: usize = 10_001;
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub enum Op {
    PointLoss(f64),
    Constant(f64),
    /// min with a fresh convex quadratic `a·m² + b·m + c`
    MinQuadratic(f64, f64, f64),
    Leq(f64),
    Geq(f64),
    /// `min(f, envelope(f) + penalty)`, as in one solver step
    Step { up: bool, gap: f64, penalty: f64 },
}

/// Largest atom count before growth-heavy ops are skipped, so the dense
/// grid comparison stays cheap.
const ATOM_CAP: usize = 120;

/// Applies `ops` to the zero function on `[lo, hi]`.
pub fn run(lo: f64, hi: f64, ops: &[Op]) -> (PiecewiseQuad, Atoms) {
    let mut f = PiecewiseQuad::zero(lo, hi).unwrap();
    let mut a = Atoms::quadratic(lo, hi, 0.0, 0.0, 0.0);
    for op in ops {
        match *op {
            Op::PointLoss(y) => {
                f = f.add_point_loss(y);
                a = a.add_point_loss(y);
            }
            Op::Constant(k) => {
                f = f.add_constant(k);
                a = a.add_constant(k);
            }
            Op::MinQuadratic(qa, qb, qc) => {
                let g = PiecewiseQuad::quadratic(lo, hi, Quadratic::new(qa, qb, qc)).unwrap();
                f = f.pointwise_min(&g).unwrap();
                a = a.min(&Atoms::quadratic(lo, hi, qa, qb, qc));
            }
            Op::Leq(gap) if a.atoms.len() <= ATOM_CAP => {
                f = f.min_leq_envelope(gap).unwrap();
                a = a.leq_envelope(gap);
            }
            Op::Geq(gap) if a.atoms.len() <= ATOM_CAP => {
                f = f.min_geq_envelope(gap).unwrap();
                a = a.geq_envelope(gap);
            }
            Op::Step { up, gap, penalty } if a.atoms.len() <= ATOM_CAP / 3 => {
                let env = if up { f.min_leq_envelope(gap) } else { f.min_geq_envelope(gap) }.unwrap();
                f = f.pointwise_min(&env.add_constant(penalty)).unwrap();
                let aenv = if up { a.leq_envelope(gap) } else { a.geq_envelope(gap) };
                a = a.min(&aenv.add_constant(penalty));
            }
            _ => {}
        }
    }
    (f, a)
}

/// First grid point where the two disagree, as a message. A feasibility
/// mismatch is accepted only right at a feasibility boundary.
pub fn compare(f: &PiecewiseQuad, a: &Atoms) -> Result<(), String> {
    f.check_invariants().map_err(|e| format!("invariants: {e}"))?;
    let (lo, hi) = f.domain();
    let width = hi - lo;
    let h = 1e-9 * width;
    for k in 0..GRID_POINTS {
        let m = if k + 1 == GRID_POINTS { hi } else { lo + width * k as f64 / (GRID_POINTS - 1) as f64 };
        let (x, y) = (f.eval(m), a.eval(m));
        let ok = match (x.is_finite(), y.is_finite()) {
            (true, true) => (x - y).abs() <= TOLERANCE,
            (false, false) => true,
            _ => {
                let near = |g: &dyn Fn(f64) -> f64| g(m - h).is_finite() != g(m + h).is_finite();
                near(&|t| f.eval(t)) || near(&|t| a.eval(t))
            }
        };
        if !ok {
            return Err(format!("at m = {m}: canonical {x}, oracle {y}\n{f}"));
        }
    }
    Ok(())
}
