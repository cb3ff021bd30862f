//! One PASS/FAIL line per acceptance criterion, written straight to
//! standard error so the lines show without `--nocapture`.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use changegraph::data::{generate_synthetic, save_record, SynthConfig};
use changegraph::eval::{cross_validate, metrics, Training};
use changegraph::learn::{heuristic_initial_graph, learn, LearnConfig};
use changegraph::solver::{solve, StartState};
use changegraph::{ConstraintGraph, Signal, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::compose::{self, Op};
use support::instances::{self, Outcome};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_equivalence() -> Verdict {
    let t = Instant::now();
    let (mut agree, mut ambiguous, mut infeasible) = (0, 0, 0);
    for seed in 0..200u64 {
        match instances::check(&instances::random_instance(0xACCE_0000 + seed)) {
            Ok(Outcome::Agree) => agree += 1,
            Ok(Outcome::Ambiguous) => ambiguous += 1,
            Ok(Outcome::Infeasible) => infeasible += 1,
            Err(e) => return Err(format!("instance {seed}: {e}")),
        }
    }
    let elapsed = t.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 instances: {agree} identical boundary sets, {ambiguous} without a unique optimum, {infeasible} infeasible; {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn exact_fit() -> Verdict {
    let y = vec![0.0, 0.0, 0.0, 10.0, 10.0, 0.0, 0.0];
    let g = ConstraintGraph::initial(1.0, 1.0, 1.0).unwrap();
    let seg = solve(&Signal::new(y.clone(), 360.0).unwrap(), &g, StartState::Free).map_err(|e| e.to_string())?;
    ensure(seg.boundaries == [3, 5], || format!("boundaries {:?}", seg.boundaries))?;
    ensure((seg.total_cost - 2.0).abs() <= 1e-9, || format!("cost {}", seg.total_cost))?;
    seg.check(&y, &g)?;
    Ok(format!("cost {}, boundaries {:?}", seg.total_cost, seg.boundaries))
}

fn equivariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ties = 0;
    for k in 0..100u64 {
        let inst = instances::random_instance(0xE0_0000 + k);
        let shift = rng.random_range(-50.0..50.0);
        let scale = rng.random_range(0.05..20.0);
        ties += support::equivariance::check(&inst, shift, scale).map_err(|e| format!("signal {k}: {e}"))?;
    }
    Ok(format!(
        "100 signals, shift and scale: identical boundaries, means within 1e-6 relative ({ties} exactly tied optima relabelled states)"
    ))
}

fn random_op(rng: &mut ChaCha8Rng, width: f64) -> Op {
    let gap = |rng: &mut ChaCha8Rng| rng.random_range(0.0..0.6 * width);
    match rng.random_range(0..9) {
        0..=2 => Op::PointLoss(rng.random_range(-3.0..3.0)),
        3 => Op::Constant(rng.random_range(-5.0..5.0)),
        4 => Op::MinQuadratic(rng.random_range(0.0..2.0), rng.random_range(-4.0..4.0), rng.random_range(-2.0..8.0)),
        5 => Op::Leq(gap(rng)),
        6 => Op::Geq(gap(rng)),
        _ => Op::Step { up: rng.random_bool(0.5), gap: gap(rng), penalty: rng.random_range(0.0..5.0) },
    }
}

fn piecewise_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..1000 {
        let (lo, hi) = (rng.random_range(-4.0..-1.0), rng.random_range(1.0..4.0));
        let n = rng.random_range(1..8);
        let ops: Vec<Op> = (0..n).map(|_| random_op(&mut rng, hi - lo)).collect();
        let (f, a) = compose::run(lo, hi, &ops);
        compose::compare(&f, &a).map_err(|e| format!("composition {k} {ops:?}: {e}"))?;
    }
    Ok(format!("1000 compositions agree on {} points within {:e}", compose::GRID_POINTS, compose::TOLERANCE))
}

fn metric_formulas() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let (tp, fp, fn_) = (rng.random_range(0..100_000usize), rng.random_range(0..5_000usize), rng.random_range(0..5_000usize));
        let m = metrics(tp, fp, fn_);
        let (t, p, n) = (tp as f64, fp as f64, fn_ as f64);
        let want = [
            (t + n > 0.0).then(|| 100.0 * (1.0 - n / (t + n))),
            (t + p > 0.0).then(|| 100.0 * (1.0 - p / (t + p))),
            (t + n > 0.0).then(|| 100.0 * n / (t + n) + 100.0 * p / (t + n)),
        ];
        for (got, want) in [m.sen, m.ppr, m.der].into_iter().zip(want) {
            let ok = match (got, want) {
                (Some(g), Some(w)) => (g - w).abs() <= 1e-12 * w.abs().max(1.0),
                (None, None) => true,
                _ => false,
            };
            ensure(ok, || format!("({tp}, {fp}, {fn_}): {got:?} vs {want:?}"))?;
        }
    }
    let m = metrics(9964, 29, 36);
    let (sen, ppr, der) = (m.sen.unwrap(), m.ppr.unwrap(), m.der.unwrap());
    ensure((sen - 99.64).abs() < 5e-3 && (ppr - 99.71).abs() < 5e-3, || format!("{m}"))?;
    Ok(format!(
        "1000 triples match; (9964, 29, 36) gives Sen {sen:.2} PPR {ppr:.2} DER {der:.2}"
    ))
}

fn end_to_end() -> Verdict {
    let recs = support::corpus::cv_corpus();
    let t = Instant::now();
    let report =
        cross_validate(&recs, 5, &LearnConfig::default(), &Training::PerRecord, None).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let m = report.pooled;
    let (sen, ppr, der) = (m.sen.unwrap_or(0.0), m.ppr.unwrap_or(0.0), m.der.unwrap_or(f64::INFINITY));
    let line = format!(
        "20 records x 60 cycles, 5-fold: Sen {sen:.2} PPR {ppr:.2} DER {der:.2} (TP {} FP {} FN {}), {:.1} s",
        report.total.tp,
        report.total.fp,
        report.total.fn_,
        elapsed.as_secs_f64()
    );
    ensure(sen >= 99.0 && ppr >= 99.0 && der <= 2.0 && elapsed < Duration::from_secs(600), || line.clone())?;
    Ok(line)
}

fn learning_behaviour() -> Verdict {
    let windows = vec![Window::whole(support::corpus::dip_record(60, 7))];
    let g0 = heuristic_initial_graph(&windows);
    let cfg = LearnConfig::default();
    let (best, trace) = learn(&g0, &windows, &cfg).map_err(|e| e.to_string())?;
    let errs: Vec<usize> = trace.entries().map(|e| e.train_fn_fp).collect();
    ensure(!trace.is_empty() && trace.is_strictly_decreasing(), || format!("training FN+FP {errs:?}"))?;
    ensure(best.num_states() > 2, || format!("final graph has {} states", best.num_states()))?;
    let (again, trace2) = learn(&g0, &windows, &cfg).map_err(|e| e.to_string())?;
    ensure(again == best && trace2 == trace, || "re-run differs".into())?;
    let kinds: Vec<String> = trace.iterations.iter().filter_map(|e| e.kind.map(|k| k.to_string())).collect();
    Ok(format!("training FN+FP {errs:?} via {kinds:?}, {} states, re-run identical", best.num_states()))
}

fn scaling() -> Verdict {
    let graph = ConstraintGraph::initial(3.0, 3.0, 20.0).unwrap();
    let mut points = Vec::new();
    for n in [10_000usize, 100_000, 1_000_000] {
        let mut times = Vec::new();
        for seed in 0..3 {
            let rec = generate_synthetic(&SynthConfig {
                n_cycles: n.div_ceil(360),
                noise_sigma: 0.2,
                baseline_wander_amp: 1.0,
                seed,
                ..SynthConfig::default()
            })
            .unwrap();
            let signal = rec.signal.slice(0..n).unwrap();
            let t = Instant::now();
            solve(&signal, &graph, StartState::Free).map_err(|e| e.to_string())?;
            times.push(t.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        points.push((n as f64, times[1]));
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (n * n.ln()).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let timings: Vec<String> = points.iter().map(|(n, t)| format!("N={n:.0}: {:.3} s", t)).collect();
    let line = format!("median times {}; exponent vs N log N {slope:.3}", timings.join(", "));
    ensure((0.8..=1.3).contains(&slope), || line.clone())?;
    Ok(line)
}

fn run_cv(dir: &Path, pairs: &[(std::path::PathBuf, std::path::PathBuf)], out: &Path) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_changegraph"));
    cmd.arg("cv");
    for (s, a) in pairs {
        cmd.arg("--signal").arg(s).arg("--annotations").arg(a);
    }
    let output = cmd.args(["--k", "5", "--out-dir"]).arg(out).current_dir(dir).output().map_err(|e| e.to_string())?;
    ensure(output.status.success(), || String::from_utf8_lossy(&output.stderr).into_owned())?;
    let table = std::fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?;
    let header = table.lines().next().unwrap_or_default().to_string();
    ensure(header.split_whitespace().collect::<Vec<_>>() == ["Method", "Sen", "PPR", "DER"], || header.clone())?;
    table.lines().find(|l| l.contains("(pooled)")).map(str::to_string).ok_or_else(|| table.clone())
}

fn full_data() -> Verdict {
    if let Ok(dir) = std::env::var("MITBIH_DIR") {
        let dir = Path::new(&dir);
        let pairs: Vec<_> = (100..=109)
            .map(|r| (dir.join(format!("{r}.csv")), dir.join(format!("{r}.ann"))))
            .filter(|(s, a)| s.exists() && a.exists())
            .collect();
        ensure(!pairs.is_empty(), || format!("no <record>.csv/<record>.ann pairs for 100-109 in {}", dir.display()))?;
        let out = tempfile::tempdir().map_err(|e| e.to_string())?;
        let row = run_cv(dir, &pairs, out.path())?;
        let cols: Vec<f64> = row.split_whitespace().rev().take(3).filter_map(|v| v.parse().ok()).collect();
        let info = match cols.as_slice() {
            [_, ppr, sen] if *sen >= 99.0 && *ppr >= 99.0 => "Sen and PPR at least 99 (informational)",
            _ => "Sen or PPR below 99 (informational)",
        };
        return Ok(format!("{} record(s): {}; {info}", pairs.len(), row.trim()));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for r in 0..2u64 {
        let rec = generate_synthetic(&SynthConfig {
            record_id: format!("1{r:02}"),
            n_cycles: 15,
            noise_sigma: 0.2,
            seed: r,
            ..SynthConfig::default()
        })
        .unwrap();
        let (s, a) = (dir.path().join(format!("1{r:02}.csv")), dir.path().join(format!("1{r:02}.ann")));
        save_record(&rec, &s, &a).map_err(|e| e.to_string())?;
        pairs.push((s, a));
    }
    let row = run_cv(dir.path(), &pairs, &dir.path().join("out"))?;
    Ok(format!("MITBIH_DIR not set; harness checked on synthetic exports: {}", row.trim()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("exact fit", exact_fit),
        ("equivariance", equivariance),
        ("piecewise algebra", piecewise_algebra),
        ("metrics", metric_formulas),
        ("end-to-end synthetic", end_to_end),
        ("learning behaviour", learning_behaviour),
        ("log-linear scaling", scaling),
        ("full-data harness", full_data),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let line = match verdict {
            Ok(detail) => format!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(detail) => {
                failed.push(i + 1);
                format!("FAIL criterion {} ({name}): {detail}", i + 1)
            }
        };
        let _ = writeln!(std::io::stderr(), "{line}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
