//! The `dpmon` command line.

pub mod experiments;
pub mod generate;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::privacy::{compile_checked, select_barriers, CompileOptions, Heuristic, PlanOptions, PrivacyError};
use crate::rational::{format_rational, parse_rational, Rational};
use crate::runtime::{EvalError, EvalOptions, Evaluator, NoiseMode};
use crate::semantics::{CheckedSpec, Trace};
use crate::sensitivity::{AnalysisOptions, Analyzer, Segment, SensitivityReport};
use crate::speclang::{lexer::duration_unit, parse_compiled, parse_specification, RATINGS_SPEC};
use experiments::{
    casestudy_experiment, casestudy_spec, variance_experiment, CaseStudyConfig, ExperimentError, VarianceConfig,
};

/// Exit status for bad input: unreadable files, malformed specs, rejected flags.
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    User(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn user(m: impl std::fmt::Display) -> Self {
        CliError::User(m.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) => write!(f, "error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Internal(m) => CliError::Internal(m),
            other => CliError::user(other),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Eval(e) => e.into(),
            other => CliError::user(other),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "dpmon", version, about = "Differentially private stream monitoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sensitivity report, dependency graph and barrier plans of every heuristic.
    Analyze(AnalyzeArgs),
    /// Place barriers and inject noise.
    Compile(CompileArgs),
    /// Evaluate a compiled specification over a trace.
    Run(RunArgs),
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Write a synthetic trace as CSV.
    GenTrace(GenTraceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
pub struct AnalysisFlags {
    /// Count window endpoints as inside the window.
    #[arg(long)]
    pub closed_windows: bool,
    /// Hide up to N consecutive events of an input.
    #[arg(long = "w", value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
    pub group_size: Option<u32>,
    #[arg(long, value_enum, default_value = "off")]
    pub tree_aggregation: Switch,
}

impl AnalysisFlags {
    fn options(&self) -> AnalysisOptions {
        AnalysisOptions {
            closed_windows: self.closed_windows,
            tree_aggregation: self.tree_aggregation == Switch::On,
            group_size: self.group_size,
        }
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub spec: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    #[arg(long, default_value = "1", value_parser = parse_epsilon)]
    pub epsilon: Rational,
    /// Directory for report.json, graph.dot and plans.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompileArgs {
    pub spec: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    #[arg(long, default_value = "1", value_parser = parse_epsilon)]
    pub epsilon: Rational,
    #[arg(long, default_value = "deep")]
    pub heuristic: Heuristic,
    /// Relative budget weights, e.g. `davg=2,score=1`.
    #[arg(long, value_parser = parse_weights)]
    pub budget_weights: Option<BTreeMap<String, Rational>>,
    #[arg(long)]
    pub renormalize_tree_budget: bool,
    /// Compiled specification; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Barrier sidecar JSON; defaults to the output path with `.json` appended.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    All,
    /// Public streams only.
    #[value(alias = "private-only")]
    PublicOnly,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// A specification produced by `compile`.
    pub spec: PathBuf,
    /// CSV trace with a `time` column and one column per input.
    pub trace: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// End of the run in seconds or as a duration (`30s`, `2d`); defaults to the last event.
    #[arg(long, value_parser = parse_horizon)]
    pub horizon: Option<Rational>,
    #[arg(long, value_enum, default_value = "all")]
    pub emit: Emit,
    #[arg(long)]
    pub closed_windows: bool,
    /// Disable noise entirely.
    #[arg(long)]
    pub no_noise: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCmd {
    /// Variance of the released average per method, window and event rate.
    Variance(VarianceArgs),
    /// Hourly crowdedness of three bus lines.
    Casestudy(CaseStudyArgs),
}

#[derive(Args, Debug)]
pub struct VarianceArgs {
    #[arg(long, default_value_t = 200)]
    pub runs: u32,
    #[arg(long, default_value = "1", value_parser = parse_epsilon)]
    pub epsilon: Rational,
    /// Window sizes in seconds, comma separated or `a..b`.
    #[arg(long, default_value = "1..15", value_parser = parse_list)]
    pub windows: NumList,
    /// Values per bucket.
    #[arg(long, default_value = "1,10,100", value_parser = parse_list)]
    pub vpb: NumList,
    /// Trace length in seconds.
    #[arg(long, default_value_t = 30)]
    pub horizon: u32,
    #[arg(long, default_value_t = 7)]
    pub trace_seed: u64,
    /// First noise seed; runs use consecutive seeds.
    #[arg(long, default_value_t = 1000)]
    pub seed: u64,
    #[arg(long)]
    pub renormalize_tree_budget: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CaseStudyArgs {
    #[arg(long, default_value_t = 200)]
    pub runs: u32,
    #[arg(long, default_value = "1", value_parser = parse_epsilon)]
    pub epsilon: Rational,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub days: u32,
    #[arg(long, default_value_t = 2024)]
    pub trace_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "deep")]
    pub heuristic: Heuristic,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also write the trace and the compiled monitor next to the CSV.
    #[arg(long)]
    pub keep_artifacts: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceKind {
    Casestudy,
    Ratings,
}

#[derive(Args, Debug)]
pub struct GenTraceArgs {
    #[arg(value_enum)]
    pub kind: TraceKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub days: u32,
    /// Events per second for `ratings`.
    #[arg(long, default_value_t = 1)]
    pub vpb: u32,
    /// Seconds of `ratings` events.
    #[arg(long, default_value_t = 30)]
    pub horizon: u32,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

fn parse_epsilon(s: &str) -> Result<Rational, String> {
    match parse_rational(s) {
        Some(r) if r > Rational::from_integer(0.into()) => Ok(r),
        Some(_) => Err("epsilon must be positive".into()),
        None => Err(format!("`{s}` is not a number")),
    }
}

fn parse_weights(s: &str) -> Result<BTreeMap<String, Rational>, String> {
    let mut out = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (name, w) = part.split_once('=').ok_or_else(|| format!("`{part}` is not name=weight"))?;
        let w = parse_rational(w.trim()).ok_or_else(|| format!("bad weight `{w}`"))?;
        out.insert(name.trim().to_string(), w);
    }
    Ok(out)
}

/// Seconds as a rational, or a number with an `s`, `m`, `h` or `d` suffix.
pub fn parse_horizon(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    let split = s.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n = parse_rational(num).ok_or_else(|| format!("bad horizon `{s}`"))?;
    let mult = if unit.is_empty() { 1 } else { duration_unit(unit).ok_or_else(|| format!("unknown unit `{unit}`"))? };
    if n < Rational::from_integer(0.into()) {
        return Err("horizon must not be negative".into());
    }
    Ok(n * Rational::from_integer(mult.into()))
}

/// Comma-separated numbers and inclusive `a..b` ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NumList(pub Vec<u32>);

fn parse_list(s: &str) -> Result<NumList, String> {
    let num = |x: &str| x.trim().parse::<u32>().map_err(|_| format!("bad number `{x}`"));
    let mut out = vec![];
    for part in s.split(',') {
        match part.split_once("..") {
            Some((lo, hi)) => out.extend(num(lo)?..=num(hi)?),
            None => out.push(num(part)?),
        }
    }
    Ok(NumList(out))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::user(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string())),
    }
}

fn load_spec(path: &Path) -> CliResult<CheckedSpec> {
    let text = read(path)?;
    let spec = parse_specification(&text).map_err(|e| CliError::user(format!("{}:{e}", path.display())))?;
    CheckedSpec::new(spec).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn privacy_err(path: &Path, e: PrivacyError) -> CliError {
    match e {
        PrivacyError::Spec(e) => CliError::user(format!("{}:{e}", path.display())),
        other => CliError::user(format!("{}: {other}", path.display())),
    }
}

/// Sensitivity report as JSON; infinite values are written as `"inf"`.
pub fn report_json(checked: &CheckedSpec, report: &SensitivityReport) -> serde_json::Value {
    let g = &checked.graph;
    let publics = g.publics();
    let streams: Vec<_> = report
        .streams
        .iter()
        .enumerate()
        .filter_map(|(id, r)| r.as_ref().map(|r| (id, r)))
        .map(|(id, r)| {
            json!({
                "name": r.name,
                "kind": if g.is_input(id) { "input" } else { "output" },
                "public": publics.contains(&id),
                "range": [r.range.lo.to_string(), r.range.hi.to_string()],
                "influence": r.influence.to_string(),
                "bound": r.bound.to_string(),
                "segment": match r.segment {
                    Segment::Private => "private",
                    Segment::PostProcessed => "post-processed",
                },
                "tree_only": r.tree_only,
            })
        })
        .collect();
    json!({
        "group_size": report.group_size,
        "closed_windows": report.options.closed_windows,
        "tree_aggregation": report.options.tree_aggregation,
        "streams": streams,
    })
}

fn analyze(a: &AnalyzeArgs) -> CliResult {
    let start = Instant::now();
    let checked = load_spec(&a.spec)?;
    if checked.graph.publics().is_empty() {
        return Err(privacy_err(&a.spec, PrivacyError::NoPublicOutput));
    }
    let options = a.analysis.options();
    let compile_opts = CompileOptions {
        plan: PlanOptions { tree_aggregation: options.tree_aggregation, ..Default::default() },
        closed_windows: options.closed_windows,
        group_size: options.group_size,
        ..Default::default()
    };
    // with trees on, running sums are split first so their plans are meaningful
    let analysed = compile_checked(checked.clone(), &compile_opts).map(|c| c.analysed).unwrap_or(checked);
    let report = Analyzer::new(&analysed, options).report();
    let mut plans = serde_json::Map::new();
    for h in Heuristic::ALL {
        let v = match select_barriers(&analysed, &report, h, &a.epsilon, &compile_opts.plan) {
            Ok(p) => p.to_json(),
            Err(e) => json!({ "heuristic": h.name(), "error": e.to_string() }),
        };
        plans.insert(h.name().to_string(), v);
    }
    let elapsed = start.elapsed();
    let bounds = report.bounds().into_iter().collect();
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::user(format!("{}: {e}", a.out_dir.display())))?;
    let report_text = serde_json::to_string_pretty(&report_json(&analysed, &report)).unwrap() + "\n";
    write_out(Some(&a.out_dir.join("report.json")), &report_text)?;
    write_out(Some(&a.out_dir.join("graph.dot")), &analysed.graph.to_dot(Some(&bounds)))?;
    write_out(Some(&a.out_dir.join("plans.json")), &(serde_json::to_string_pretty(&plans).unwrap() + "\n"))?;
    for r in report.iter() {
        let seg = if r.segment == Segment::Private { "private" } else { "post-processed" };
        println!("{:<16} bound {:<8} n {:<6} {seg}", r.name, r.bound.to_string(), r.influence.to_string());
    }
    println!("analysis time: {:.3} ms", elapsed.as_secs_f64() * 1e3);
    Ok(())
}

fn compile_cmd(a: &CompileArgs) -> CliResult {
    let checked = load_spec(&a.spec)?;
    let opts = CompileOptions {
        heuristic: a.heuristic,
        epsilon: a.epsilon.clone(),
        plan: PlanOptions {
            tree_aggregation: a.analysis.tree_aggregation == Switch::On,
            weights: a.budget_weights.clone(),
            renormalize_tree: a.renormalize_tree_budget,
        },
        closed_windows: a.analysis.closed_windows,
        group_size: a.analysis.group_size,
    };
    let compiled = compile_checked(checked, &opts).map_err(|e| privacy_err(&a.spec, e))?;
    let sidecar = serde_json::to_string_pretty(&compiled.sidecar()).unwrap() + "\n";
    write_out(a.output.as_deref(), &compiled.text)?;
    let sidecar_path = a.sidecar.clone().or_else(|| {
        a.output.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".json");
            PathBuf::from(s)
        })
    });
    match sidecar_path {
        Some(p) => write_out(Some(&p), &sidecar),
        None => {
            eprint!("{sidecar}");
            Ok(())
        }
    }
}

fn run_cmd(a: &RunArgs) -> CliResult {
    let text = read(&a.spec)?;
    let spec = parse_compiled(&text).map_err(|e| CliError::user(format!("{}:{e}", a.spec.display())))?;
    let checked = CheckedSpec::new(spec).map_err(|e| CliError::user(format!("{}: {e}", a.spec.display())))?;
    let trace = Trace::from_csv(&checked.spec, &read(&a.trace)?)
        .map_err(|e| CliError::user(format!("{}: {e}", a.trace.display())))?;
    if trace.clamped > 0 {
        eprintln!("warning: {} input values clamped to their declared ranges", trace.clamped);
    }
    let horizon = match &a.horizon {
        Some(h) => h.clone(),
        None => trace.last_time().cloned().unwrap_or_else(|| Rational::from_integer(0.into())),
    };
    let ev = Evaluator::new(&checked, &trace, &horizon, EvalOptions { closed_windows: a.closed_windows })?;
    let noise = if a.no_noise { NoiseMode::Off } else { NoiseMode::Seeded(a.seed) };
    let model = ev.run(noise);
    write_out(a.output.as_deref(), &model.to_jsonl(a.emit == Emit::PublicOnly))
}

fn variance_cmd(a: &VarianceArgs) -> CliResult {
    let cfg = VarianceConfig {
        runs: a.runs,
        epsilon: a.epsilon.clone(),
        windows: a.windows.0.clone(),
        vpb: a.vpb.0.clone(),
        horizon: a.horizon,
        trace_seed: a.trace_seed,
        seed_base: a.seed,
        renormalize_tree: a.renormalize_tree_budget,
    };
    let start = Instant::now();
    let rows = variance_experiment(&cfg)?;
    let mut w = csv::Writer::from_writer(vec![]);
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    write_out(a.output.as_deref(), &text)?;
    // plot-ready table: one row per window, one column per (method, vpb)
    let mut cols: Vec<(&str, u32)> = rows.iter().map(|r| (r.method, r.vpb)).collect();
    cols.dedup();
    cols.sort_by_key(|c| (c.1, c.0));
    cols.dedup();
    eprint!("{:>6}", "window");
    for (m, v) in &cols {
        eprint!(" {:>16}", format!("{m}/{v}"));
    }
    eprintln!();
    for &win in &cfg.windows {
        eprint!("{win:>6}");
        for (m, v) in &cols {
            let var = rows.iter().find(|r| r.method == *m && r.vpb == *v && r.window == win).map(|r| r.variance);
            eprint!(" {:>16.1}", var.unwrap_or(f64::NAN));
        }
        eprintln!();
    }
    eprintln!("{} configurations in {:.1} s", rows.len(), start.elapsed().as_secs_f64());
    Ok(())
}

fn casestudy_cmd(a: &CaseStudyArgs) -> CliResult {
    let cfg = CaseStudyConfig {
        runs: a.runs,
        epsilon: a.epsilon.clone(),
        days: a.days,
        trace_seed: a.trace_seed,
        seed_base: a.seed,
        heuristic: a.heuristic,
    };
    let start = Instant::now();
    let study = casestudy_experiment(&cfg)?;
    let mut w = csv::Writer::from_writer(vec![]);
    for r in &study.rows {
        w.serialize(r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    write_out(a.output.as_deref(), &text)?;
    if a.keep_artifacts {
        let base = a.output.clone().unwrap_or_else(|| PathBuf::from("casestudy.csv"));
        let with = |ext: &str| base.with_extension(ext);
        let trace = generate::casestudy_trace(cfg.trace_seed, cfg.days);
        write_out(Some(&with("trace.csv")), &trace.to_csv(&study.compiled.analysed.spec))?;
        write_out(Some(&with("spec")), &casestudy_spec())?;
        write_out(Some(&with("compiled.spec")), &study.compiled.text)?;
    }
    let barriers: Vec<String> = study
        .compiled
        .plan
        .barriers
        .iter()
        .map(|b| format!("{} (scale {})", b.name, format_rational(&b.scale())))
        .collect();
    eprintln!("barriers: {}", barriers.join(", "));
    for line in generate::LINES {
        let rows: Vec<_> = study.rows.iter().filter(|r| r.line == line && r.sd.is_some()).collect();
        let mean_sd = rows.iter().filter_map(|r| r.sd).sum::<f64>() / rows.len().max(1) as f64;
        eprintln!("{line:<11} {:>2} released hours, mean sd {mean_sd:.2}", rows.len());
    }
    eprintln!("{} runs in {:.1} s", cfg.runs, start.elapsed().as_secs_f64());
    Ok(())
}

fn gen_trace(a: &GenTraceArgs) -> CliResult {
    let (trace, spec) = match a.kind {
        TraceKind::Casestudy => (generate::casestudy_trace(a.seed, a.days), casestudy_spec()),
        TraceKind::Ratings => (generate::ratings_trace(a.seed, a.vpb, a.horizon), RATINGS_SPEC.to_string()),
    };
    let spec = parse_specification(&spec).map_err(|e| CliError::Internal(e.to_string()))?;
    write_out(a.output.as_deref(), &trace.to_csv(&spec))
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Compile(a) => compile_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Experiment(ExperimentCmd::Variance(a)) => variance_cmd(a),
        Command::Experiment(ExperimentCmd::Casestudy(a)) => casestudy_cmd(a),
        Command::GenTrace(a) => gen_trace(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}
