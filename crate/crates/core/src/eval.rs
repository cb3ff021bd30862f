//! Detection matching, Sen/PPR/DER, cycle splits and k-fold cross-validation.

use std::fmt::{self, Write as _};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabeledRecord, Window};
use crate::graph::ConstraintGraph;
use crate::learn::{self, LearnConfig, LearnError};
use crate::solver::detect;

pub const DEFAULT_TOLERANCE_MS: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{which} are not sorted ascending at position {position}")]
    Unsorted { which: &'static str, position: usize },
    #[error("record {record} has {cycles} annotated cycles, at least {needed} required")]
    TooFewCycles { record: String, cycles: usize, needed: usize },
    #[error("k must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("no records given")]
    NoRecords,
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// (label index, detection index) pairs, sorted by label index.
    pub matched_pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn counts(&self) -> Counts {
        Counts { tp: self.tp, fp: self.fp, fn_: self.fn_ }
    }
}

fn check_sorted(v: &[usize], which: &'static str) -> Result<(), EvalError> {
    match v.windows(2).position(|w| w[1] < w[0]) {
        Some(p) => Err(EvalError::Unsorted { which, position: p + 1 }),
        None => Ok(()),
    }
}

fn greedy(mut pairs: Vec<(usize, usize, usize)>, n_labels: usize, n_detections: usize) -> MatchResult {
    pairs.sort_unstable();
    let mut label_used = vec![false; n_labels];
    let mut det_used = vec![false; n_detections];
    let mut matched = Vec::new();
    for (_, i, j) in pairs {
        if !label_used[i] && !det_used[j] {
            label_used[i] = true;
            det_used[j] = true;
            matched.push((i, j));
        }
    }
    matched.sort_unstable();
    let tp = matched.len();
    MatchResult { tp, fp: n_detections - tp, fn_: n_labels - tp, matched_pairs: matched }
}

/// Greedy one-to-one matching of detections to labels within
/// `±tolerance` samples, closest pairs first. Ties in distance go to the
/// lower label index, then the lower detection index.
pub fn match_detections(labels: &[usize], detections: &[usize], tolerance: usize) -> Result<MatchResult, EvalError> {
    check_sorted(labels, "labels")?;
    check_sorted(detections, "detections")?;
    let mut pairs = Vec::new();
    let mut start = 0;
    for (i, &l) in labels.iter().enumerate() {
        while start < detections.len() && detections[start] + tolerance < l {
            start += 1;
        }
        for (j, &d) in detections.iter().enumerate().skip(start) {
            if d > l + tolerance {
                break;
            }
            pairs.push((l.abs_diff(d), i, j));
        }
    }
    Ok(greedy(pairs, labels.len(), detections.len()))
}

/// Band matching: a detection matches a label when it falls inside the
/// label's inclusive band `[lo, hi]`. Closest to the band centre wins.
pub fn match_bands(bands: &[(usize, usize)], detections: &[usize]) -> Result<MatchResult, EvalError> {
    let starts: Vec<usize> = bands.iter().map(|b| b.0).collect();
    check_sorted(&starts, "bands")?;
    check_sorted(detections, "detections")?;
    let mut pairs = Vec::new();
    for (i, &(lo, hi)) in bands.iter().enumerate() {
        let first = detections.partition_point(|&d| d < lo);
        for (j, &d) in detections.iter().enumerate().skip(first) {
            if d > hi {
                break;
            }
            // twice the distance to the centre, kept integral
            pairs.push(((2 * d).abs_diff(lo + hi), i, j));
        }
    }
    Ok(greedy(pairs, bands.len(), detections.len()))
}

/// Samples corresponding to `ms` milliseconds, rounded.
pub fn tolerance_samples(ms: f64, sample_rate: f64) -> usize {
    (ms * sample_rate / 1000.0).round().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn errors(&self) -> usize {
        self.fp + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        metrics(self.tp, self.fp, self.fn_)
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

/// Percentages; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sen: Option<f64>,
    pub ppr: Option<f64>,
    pub der: Option<f64>,
}

/// Sen = TP/(TP+FN), PPR = TP/(TP+FP), DER = (FN+FP)/(TP+FN), all in percent.
pub fn metrics(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let pct = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64 * 100.0);
    Metrics { sen: pct(tp, tp + fn_), ppr: pct(tp, tp + fp), der: pct(fn_ + fp, tp + fn_) }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |v| format!("{v:.2}"))
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sen {} PPR {} DER {}", fmt_pct(self.sen), fmt_pct(self.ppr), fmt_pct(self.der))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub record_id: String,
    pub counts: Counts,
    /// Windows of this record the graph could not explain.
    pub infeasible_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: String,
    pub records: Vec<RecordCounts>,
    /// Counts pooled over all records.
    pub total: Counts,
    /// Metrics of the pooled counts.
    pub pooled: Metrics,
    /// Per-fold counts, cross-validation only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<Counts>,
    /// Mean of the per-fold metrics, cross-validation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_average: Option<Metrics>,
}

impl DetectionReport {
    pub fn new(method: impl Into<String>) -> Self {
        Self {
            method: method.into(),
            records: Vec::new(),
            total: Counts::default(),
            pooled: metrics(0, 0, 0),
            folds: Vec::new(),
            fold_average: None,
        }
    }

    /// Adds counts for a record, merging with an existing entry of the same id.
    pub fn add(&mut self, record_id: &str, counts: Counts, infeasible: bool) {
        let idx = match self.records.iter().position(|r| r.record_id == record_id) {
            Some(i) => i,
            None => {
                self.records.push(RecordCounts {
                    record_id: record_id.to_string(),
                    counts: Counts::default(),
                    infeasible_windows: 0,
                });
                self.records.len() - 1
            }
        };
        let r = &mut self.records[idx];
        r.counts += counts;
        r.infeasible_windows += usize::from(infeasible);
        self.total += counts;
        self.pooled = self.total.metrics();
    }

    pub fn merge(&mut self, other: &DetectionReport) {
        for r in &other.records {
            let before = self.records.iter().position(|x| x.record_id == r.record_id);
            self.add(&r.record_id, r.counts, false);
            let i = before.unwrap_or(self.records.len() - 1);
            self.records[i].infeasible_windows += r.infeasible_windows;
        }
    }

    pub fn fn_plus_fp(&self) -> usize {
        self.total.errors()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }

    /// Fixed-column text table: one row per record, then the pooled row and,
    /// when present, the fold-average row.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, Metrics)> =
            self.records.iter().map(|r| (r.record_id.clone(), r.counts.metrics())).collect();
        rows.push((format!("{} (pooled)", self.method), self.pooled));
        if let Some(avg) = self.fold_average {
            rows.push((format!("{} (fold average)", self.method), avg));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Method".len());
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}  {:>8}", "Method", "Sen", "PPR", "DER");
        for (name, m) in rows {
            let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}  {:>8}", name, fmt_pct(m.sen), fmt_pct(m.ppr), fmt_pct(m.der));
        }
        s
    }
}

/// Counts for one window: detections and labels are restricted to the core.
pub fn evaluate_window(graph: &ConstraintGraph, window: &Window, tolerance_ms: f64) -> (Counts, bool) {
    let labels = window.core_labels();
    let tol = tolerance_samples(tolerance_ms, window.record.sample_rate());
    match detect(&window.record.signal, graph) {
        Ok(peaks) => {
            let dets: Vec<usize> = peaks.into_iter().filter(|p| window.core.contains(p)).collect();
            let m = match_detections(&labels, &dets, tol).expect("labels and peaks are sorted");
            (m.counts(), false)
        }
        Err(_) => (Counts::new(0, 0, labels.len()), true),
    }
}

pub fn evaluate_windows(graph: &ConstraintGraph, windows: &[Window], tolerance_ms: f64, method: &str) -> DetectionReport {
    let mut report = DetectionReport::new(method);
    for w in windows {
        let (c, infeasible) = evaluate_window(graph, w, tolerance_ms);
        report.add(&w.record.record_id, c, infeasible);
    }
    report
}

/// Cycle spans of a record: cycle k runs from the midpoint before
/// annotation k to the midpoint after it; the first and last cycles extend
/// to the record ends.
pub fn cycles(record: &LabeledRecord) -> Vec<Range<usize>> {
    let a = &record.rpeak_annotations;
    let mut out = Vec::with_capacity(a.len());
    let mut start = 0;
    for k in 0..a.len() {
        let end = if k + 1 < a.len() { (a[k] + a[k + 1]).div_ceil(2) } else { record.len() };
        out.push(start..end);
        start = end;
    }
    out
}

/// Context added on each side of a window, as a fraction of the
/// neighbouring cycle. A whole cycle puts window edges at mid-diastole
/// rather than on the neighbouring R waves.
pub const CONTEXT_CYCLES: f64 = 1.0;

/// Groups consecutive selected cycles into windows, each padded on both
/// sides by [`CONTEXT_CYCLES`] of the neighbouring cycle.
pub fn windows_for_cycles(record: &LabeledRecord, selected: &[bool]) -> Vec<Window> {
    windows_for_cycles_padded(record, selected, CONTEXT_CYCLES)
}

/// As [`windows_for_cycles`] with an explicit context fraction in `[0, 1]`.
pub fn windows_for_cycles_padded(record: &LabeledRecord, selected: &[bool], pad: f64) -> Vec<Window> {
    let cyc = cycles(record);
    debug_assert_eq!(cyc.len(), selected.len());
    let mut out = Vec::new();
    let mut k = 0;
    while k < cyc.len() {
        if !selected[k] {
            k += 1;
            continue;
        }
        let first = k;
        while k < cyc.len() && selected[k] {
            k += 1;
        }
        let core = cyc[first].start..cyc[k - 1].end;
        let pad_left = if first > 0 { (cyc[first - 1].len() as f64 * pad) as usize } else { 0 };
        let pad_right = if k < cyc.len() { (cyc[k].len() as f64 * pad) as usize } else { 0 };
        let range = core.start - pad_left..core.end + pad_right;
        if let Ok(w) = Window::excerpt(record, range, core) {
            out.push(w);
        }
    }
    out
}

fn require_cycles(record: &LabeledRecord, needed: usize) -> Result<usize, EvalError> {
    let n = record.rpeak_annotations.len();
    if n < needed {
        return Err(EvalError::TooFewCycles { record: record.record_id.clone(), cycles: n, needed });
    }
    Ok(n)
}

/// Random 3:1 train/test split of a record's cycles under `seed`. The test
/// share is round(n/4) cycles, at least one.
pub fn split_cycles(record: &LabeledRecord, seed: u64) -> Result<(Vec<Window>, Vec<Window>), EvalError> {
    let n = require_cycles(record, 4)?;
    let n_test = ((n as f64 / 4.0).round() as usize).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = vec![false; n];
    for &i in &order[..n_test] {
        test[i] = true;
    }
    let train: Vec<bool> = test.iter().map(|t| !t).collect();
    Ok((windows_for_cycles(record, &train), windows_for_cycles(record, &test)))
}

/// Assignment of each record's cycles to k folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `assignments[r][c]` is the fold of cycle `c` of record `r`.
    pub assignments: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Shuffles each record's cycles with a record-specific stream and deals
    /// them round-robin, so per-record fold sizes differ by at most one.
    pub fn new(records: &[LabeledRecord], k: usize, seed: u64) -> Result<Self, EvalError> {
        if k < 2 {
            return Err(EvalError::BadFoldCount(k));
        }
        let mut assignments = Vec::with_capacity(records.len());
        for (r, rec) in records.iter().enumerate() {
            let n = require_cycles(rec, k)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut fold = vec![0; n];
            for (i, &c) in order.iter().enumerate() {
                fold[c] = i % k;
            }
            assignments.push(fold);
        }
        Ok(Self { k, seed, assignments })
    }

    pub fn windows(&self, records: &[LabeledRecord], fold: usize, held_out: bool) -> Vec<Vec<Window>> {
        records
            .iter()
            .zip(&self.assignments)
            .map(|(rec, a)| {
                let sel: Vec<bool> = a.iter().map(|&f| (f == fold) == held_out).collect();
                windows_for_cycles(rec, &sel)
            })
            .collect()
    }

    pub fn fold_sizes(&self, record: usize) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments[record] {
            sizes[f] += 1;
        }
        sizes
    }
}

/// How graphs are obtained inside each fold.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Training {
    /// Learn one graph per record from its own training cycles.
    #[default]
    PerRecord,
    /// Learn one graph from all records' training cycles.
    Pooled,
    /// No learning; evaluate this graph everywhere.
    Frozen(ConstraintGraph),
}

fn start_graph(initial: Option<&ConstraintGraph>, windows: &[Window]) -> ConstraintGraph {
    initial.cloned().unwrap_or_else(|| learn::heuristic_initial_graph(windows))
}

/// k-fold cross-validation over cycles. Each fold learns on the other k-1
/// folds (per `training`) and is scored on its held-out cycles; counts are
/// pooled and per-fold metrics averaged. Without `initial`, learning starts
/// from the heuristic two-state graph of the training windows.
pub fn cross_validate(
    records: &[LabeledRecord],
    k: usize,
    cfg: &LearnConfig,
    training: &Training,
    initial: Option<&ConstraintGraph>,
) -> Result<DetectionReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let plan = FoldPlan::new(records, k, cfg.seed)?;
    let method = match training {
        Training::PerRecord => "learned per record",
        Training::Pooled => "learned pooled",
        Training::Frozen(_) => "fixed graph",
    };
    let mut report = DetectionReport::new(method);
    let mut fold_metrics = Vec::with_capacity(k);
    for fold in 0..k {
        let train = plan.windows(records, fold, false);
        let test = plan.windows(records, fold, true);
        let mut fold_report = DetectionReport::new(method);
        match training {
            Training::Frozen(g) => {
                for w in &test {
                    fold_report.merge(&evaluate_windows(g, w, cfg.tolerance_ms, method));
                }
            }
            Training::Pooled => {
                let all: Vec<Window> = train.into_iter().flatten().collect();
                let g0 = start_graph(initial, &all);
                let (g, _) = learn::learn(&g0, &all, cfg)?;
                for w in &test {
                    fold_report.merge(&evaluate_windows(&g, w, cfg.tolerance_ms, method));
                }
            }
            Training::PerRecord => {
                for (tr, te) in train.iter().zip(&test) {
                    let g0 = start_graph(initial, tr);
                    let (g, _) = learn::learn(&g0, tr, cfg)?;
                    fold_report.merge(&evaluate_windows(&g, te, cfg.tolerance_ms, method));
                }
            }
        }
        report.folds.push(fold_report.total);
        fold_metrics.push(fold_report.pooled);
        report.merge(&fold_report);
    }
    report.fold_average = Some(average_metrics(&fold_metrics));
    Ok(report)
}

/// Mean of each metric over the folds where it is defined.
pub fn average_metrics(ms: &[Metrics]) -> Metrics {
    let avg = |f: fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = ms.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Metrics { sen: avg(|m| m.sen), ppr: avg(|m| m.ppr), der: avg(|m| m.der) }
}
