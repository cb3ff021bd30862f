//! Inputs shared by the benchmarks in `benches/`.

use changegraph::data::{generate_synthetic, SynthConfig};
use changegraph::pwq::{PiecewiseQuad, Quadratic};
use changegraph::{ConstraintGraph, Signal};

/// A noisy synthetic ECG of about `n` samples at 360 Hz.
pub fn ecg(n: usize, seed: u64) -> Signal {
    let cfg = SynthConfig {
        n_cycles: n.div_ceil(360).max(1),
        noise_sigma: 0.2,
        baseline_wander_amp: 1.0,
        seed,
        ..SynthConfig::default()
    };
    let rec = generate_synthetic(&cfg).expect("valid config");
    rec.signal.slice(0..n.min(rec.len())).expect("at least two samples")
}

pub fn two_state_graph() -> ConstraintGraph {
    ConstraintGraph::initial(3.0, 3.0, 20.0).expect("valid")
}

/// A cost function with many pieces: repeated solver-like steps over a
/// sawtooth of observations.
pub fn many_pieces(steps: usize) -> PiecewiseQuad {
    let mut f = PiecewiseQuad::quadratic(-10.0, 10.0, Quadratic::squared_loss(0.0)).expect("valid domain");
    for k in 0..steps {
        let y = ((k * 7) % 19) as f64 - 9.0;
        let env = f.min_leq_envelope(0.5).expect("same domain").add_constant(3.0);
        f = f.pointwise_min(&env).expect("same domain").add_point_loss(y);
    }
    f
}
