//! Command-line front end: detection, graph learning, evaluation,
//! cross-validation and synthetic data.
//!
//! Every command writes `manifest.json` to its output directory before doing
//! any work, then its data files. Progress goes to standard error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use changegraph::data::{self, generate_synthetic, load_record, parse_signal_csv, DataError, SynthConfig};
use changegraph::eval::{cross_validate, evaluate_windows, EvalError, Training};
use changegraph::learn::{heuristic_initial_graph, learn, LearnConfig, LearnError};
use changegraph::solver::{extract_rpeaks, solve, SolveError};
use changegraph::{ConstraintGraph, LabeledRecord, Signal, StartState, Window};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug, Parser, Serialize)]
#[command(name = "changegraph", version, about = "Graph-constrained changepoint detection for ECG R peaks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Segment one signal with a graph and write the R peaks.
    Detect(DetectArgs),
    /// Learn a graph from labelled records.
    Learn(LearnArgs),
    /// Score a fixed graph on labelled records.
    Eval(EvalArgs),
    /// k-fold cross-validation over the cycles of labelled records.
    Cv(CvArgs),
    /// Write a synthetic labelled record.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// Signal CSV (`sample_index,amplitude`).
    #[arg(long)]
    pub signal: PathBuf,
    /// Constraint graph JSON.
    #[arg(long)]
    pub graph: PathBuf,
    /// Name of the state the signal must start in; any state if omitted.
    #[arg(long)]
    pub start_state: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Labelled records, given as matching `--signal`/`--annotations` pairs.
#[derive(Debug, Args, Serialize)]
pub struct RecordArgs {
    #[arg(long, required = true)]
    pub signal: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub annotations: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LearnFlags {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = changegraph::eval::DEFAULT_TOLERANCE_MS)]
    pub tolerance_ms: f64,
    #[arg(long, default_value_t = 20)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 0.25)]
    pub validation_fraction: f64,
}

impl LearnFlags {
    fn config(&self) -> LearnConfig {
        LearnConfig {
            max_iterations: self.max_iterations,
            tolerance_ms: self.tolerance_ms,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
            ..LearnConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LearnArgs {
    #[command(flatten)]
    pub records: RecordArgs,
    /// Starting graph; a two-state graph scaled to the data if omitted.
    #[arg(long)]
    pub initial_graph: Option<PathBuf>,
    #[command(flatten)]
    pub learn: LearnFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub records: RecordArgs,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = changegraph::eval::DEFAULT_TOLERANCE_MS)]
    pub tolerance_ms: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// One graph per record, learned from that record's training cycles.
    PerRecord,
    /// One graph learned from all records' training cycles.
    Pooled,
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub records: RecordArgs,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Evaluate this graph in every fold instead of learning.
    #[arg(long, conflicts_with = "initial_graph")]
    pub graph: Option<PathBuf>,
    /// Starting graph for learning; scaled to each training set if omitted.
    #[arg(long)]
    pub initial_graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TrainingMode::PerRecord)]
    pub training: TrainingMode,
    #[command(flatten)]
    pub learn: LearnFlags,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "synthetic")]
    pub record_id: String,
    #[arg(long, default_value_t = 10)]
    pub n_cycles: usize,
    #[arg(long, default_value_t = 60.0)]
    pub heart_rate_bpm: f64,
    #[arg(long, default_value_t = 360.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 10.0)]
    pub r_amplitude: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub baseline_wander: f64,
    #[arg(long, default_value_t = 0.0)]
    pub pre_r_dip: f64,
    #[arg(long, default_value_t = 0.0)]
    pub post_r_dip: f64,
    #[arg(long)]
    pub invert_qrs: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl CliError {
    fn input(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INPUT, error: error.into() }
    }

    fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INTERNAL, error: error.into() }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        let code = match e {
            SolveError::Infeasible { .. } => EXIT_INFEASIBLE,
            SolveError::InvalidSignal(_) | SolveError::InvalidGraph(_) | SolveError::UnknownStartState(_) => EXIT_INPUT,
            SolveError::Algebra(_) => EXIT_INTERNAL,
        };
        Self { code, error: e.into() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::input(e)
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        Self::input(e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::input(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a Command,
    inputs: Vec<&'a Path>,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Detect(_) => "detect",
            Command::Learn(_) => "learn",
            Command::Eval(_) => "eval",
            Command::Cv(_) => "cv",
            Command::Synth(_) => "synth",
        }
    }

    fn out_dir(&self) -> &Path {
        match self {
            Command::Detect(a) => &a.out_dir,
            Command::Learn(a) => &a.out_dir,
            Command::Eval(a) => &a.out_dir,
            Command::Cv(a) => &a.out_dir,
            Command::Synth(a) => &a.out_dir,
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::Detect(a) => v.extend([a.signal.as_path(), a.graph.as_path()]),
            Command::Learn(a) => {
                v.extend(a.records.signal.iter().chain(&a.records.annotations).map(PathBuf::as_path));
                v.extend(a.initial_graph.as_deref());
            }
            Command::Eval(a) => {
                v.extend(a.records.signal.iter().chain(&a.records.annotations).map(PathBuf::as_path));
                v.push(&a.graph);
            }
            Command::Cv(a) => {
                v.extend(a.records.signal.iter().chain(&a.records.annotations).map(PathBuf::as_path));
                v.extend(a.graph.as_deref());
                v.extend(a.initial_graph.as_deref());
            }
            Command::Synth(_) => {}
        }
        v
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::Learn(a) => Some(a.learn.seed),
            Command::Cv(a) => Some(a.learn.seed),
            Command::Synth(a) => Some(a.seed),
            Command::Detect(_) | Command::Eval(_) => None,
        }
    }

    fn outputs(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Command::Detect(_) => &["segmentation.json", "peaks.txt"],
            Command::Learn(_) => &["graph.json", "trace.jsonl", "trace.csv"],
            Command::Eval(_) | Command::Cv(_) => &["report.json", "report.txt"],
            Command::Synth(a) => return vec![format!("{}.csv", a.record_id), format!("{}.ann", a.record_id)],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code. Errors are reported on standard error.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    let out = command.out_dir();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(CliError::input)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        config: command,
        inputs: command.inputs(),
        seed: command.seed(),
        outputs: command.outputs().iter().map(|n| out.join(n)).collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    match command {
        Command::Detect(a) => detect(a),
        Command::Learn(a) => learn_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Cv(a) => cv(a),
        Command::Synth(a) => synth(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(CliError::internal)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    s.push('\n');
    write(path, &s)
}

fn read_graph(path: &Path) -> Result<ConstraintGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(CliError::input)?;
    ConstraintGraph::parse(&text).with_context(|| format!("graph {}", path.display())).map_err(CliError::input)
}

fn read_records(r: &RecordArgs) -> Result<Vec<LabeledRecord>> {
    if r.signal.len() != r.annotations.len() {
        return Err(CliError::input(anyhow!(
            "{} --signal files but {} --annotations files; give them in pairs",
            r.signal.len(),
            r.annotations.len()
        )));
    }
    let mut out = Vec::with_capacity(r.signal.len());
    for (s, a) in r.signal.iter().zip(&r.annotations) {
        out.push(load_record(s, a)?);
    }
    eprintln!("loaded {} record(s)", out.len());
    Ok(out)
}

fn detect(a: &DetectArgs) -> Result<()> {
    let text = fs::read_to_string(&a.signal)
        .with_context(|| format!("reading {}", a.signal.display()))
        .map_err(CliError::input)?;
    let file = parse_signal_csv(&text, &a.signal.display().to_string())?;
    let signal = Signal::new(file.samples, file.sample_rate.unwrap_or(data::DEFAULT_SAMPLE_RATE))?;
    let graph = read_graph(&a.graph)?;
    let start = match &a.start_state {
        None => StartState::Free,
        Some(name) => StartState::Fixed(
            graph.state_by_name(name).ok_or_else(|| CliError::from(SolveError::UnknownStartState(name.clone())))?,
        ),
    };
    eprintln!("solving {} samples with {} states", signal.len(), graph.num_states());
    let seg = solve(&signal, &graph, start)?;
    let peaks = extract_rpeaks(&seg, &signal, &graph);
    write_json(&a.out_dir.join("segmentation.json"), &seg)?;
    let text: String = peaks.iter().map(|p| format!("{p}\n")).collect();
    write(&a.out_dir.join("peaks.txt"), &text)?;
    eprintln!("{} peak(s), cost {}", peaks.len(), seg.total_cost);
    Ok(())
}

fn learn_cmd(a: &LearnArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let windows: Vec<Window> = records.into_iter().map(Window::whole).collect();
    let initial = match &a.initial_graph {
        Some(p) => read_graph(p)?,
        None => heuristic_initial_graph(&windows),
    };
    let (graph, trace) = learn(&initial, &windows, &a.learn.config())?;
    write(&a.out_dir.join("graph.json"), &graph.serialize())?;
    write(&a.out_dir.join("trace.jsonl"), &trace.to_jsonl())?;
    write(&a.out_dir.join("trace.csv"), &trace.to_csv())?;
    eprintln!(
        "{} accepted edit(s), stopped: {:?}, training FN+FP {} -> {}",
        trace.len(),
        trace.stop_reason,
        trace.initial.train_fn_fp,
        trace.iterations.last().map_or(trace.initial.train_fn_fp, |e| e.train_fn_fp)
    );
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let graph = read_graph(&a.graph)?;
    let mut report = changegraph::DetectionReport::new("fixed graph");
    for r in records {
        report.merge(&evaluate_windows(&graph, &[Window::whole(r)], a.tolerance_ms, "fixed graph"));
    }
    write(&a.out_dir.join("report.json"), &report.to_json())?;
    write(&a.out_dir.join("report.txt"), &report.to_table())?;
    eprint!("{}", report.to_table());
    Ok(())
}

fn cv(a: &CvArgs) -> Result<()> {
    let records = read_records(&a.records)?;
    let cfg = a.learn.config();
    let training = match (&a.graph, a.training) {
        (Some(p), _) => Training::Frozen(read_graph(p)?),
        (None, TrainingMode::PerRecord) => Training::PerRecord,
        (None, TrainingMode::Pooled) => Training::Pooled,
    };
    let initial = a.initial_graph.as_deref().map(read_graph).transpose()?;
    eprintln!("{}-fold cross-validation", a.k);
    let report = cross_validate(&records, a.k, &cfg, &training, initial.as_ref())?;
    write(&a.out_dir.join("report.json"), &report.to_json())?;
    write(&a.out_dir.join("report.txt"), &report.to_table())?;
    eprint!("{}", report.to_table());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        record_id: a.record_id.clone(),
        n_cycles: a.n_cycles,
        heart_rate_bpm: a.heart_rate_bpm,
        sample_rate: a.sample_rate,
        r_amplitude: a.r_amplitude,
        noise_sigma: a.noise_sigma,
        baseline_wander_amp: a.baseline_wander,
        pre_r_dip: a.pre_r_dip,
        post_r_dip: a.post_r_dip,
        invert_qrs: a.invert_qrs,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let record = generate_synthetic(&cfg)?;
    let signal = a.out_dir.join(format!("{}.csv", a.record_id));
    let annotations = a.out_dir.join(format!("{}.ann", a.record_id));
    data::save_record(&record, &signal, &annotations).map_err(CliError::internal)?;
    eprintln!("wrote {} samples, {} R peaks", record.len(), record.rpeak_annotations.len());
    Ok(())
}
