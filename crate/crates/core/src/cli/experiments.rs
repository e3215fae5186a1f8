//! Variance study and bus case study.

use rayon::prelude::*;
use serde::Serialize;

use super::generate::{casestudy_trace, ratings_trace, LINES};
use crate::privacy::{compile, CompileOptions, Compiled, Heuristic, PlanOptions, PrivacyError};
use crate::rational::{int, to_f64, Rational};
use crate::runtime::{EvalError, EvalOptions, Evaluator, NoiseMode};
use crate::semantics::Trace;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    InputOnly,
    Regular,
    Tree,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::InputOnly, Method::Regular, Method::Tree];

    pub fn name(self) -> &'static str {
        match self {
            Method::InputOnly => "input-only",
            Method::Regular => "regular",
            Method::Tree => "tree",
        }
    }

    fn options(self, epsilon: &Rational, renormalize: bool) -> CompileOptions {
        let (heuristic, tree) = match self {
            Method::InputOnly => (Heuristic::InputOnly, false),
            Method::Regular => (Heuristic::Deep, false),
            Method::Tree => (Heuristic::Deep, true),
        };
        CompileOptions {
            heuristic,
            epsilon: epsilon.clone(),
            plan: PlanOptions { tree_aggregation: tree, weights: None, renormalize_tree: renormalize },
            ..Default::default()
        }
    }
}

/// The ratings monitor with a one-second period and a `window`-second average.
pub fn variance_spec(window: u32) -> String {
    format!(
        "input score : Int64 range [1, 6]
input conf : Int64 range [-1, 1]
output adj := (6 - score) * 3 + conf + 1
output davg @1s := adj.aggregate(over: {window}s, using: avg).defaults(to: 0.0)
output low @1s := min(low.offset(by: -1).defaults(to: 15.0), davg)
output high @1s := max(high.offset(by: -1).defaults(to: 0.0), davg)
#[public] output range @1s := (low, high)
"
    )
}

#[derive(Clone, Debug)]
pub struct VarianceConfig {
    pub runs: u32,
    pub epsilon: Rational,
    pub windows: Vec<u32>,
    pub vpb: Vec<u32>,
    /// Trace length in seconds.
    pub horizon: u32,
    pub trace_seed: u64,
    pub seed_base: u64,
    pub renormalize_tree: bool,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        VarianceConfig {
            runs: 200,
            epsilon: int(1),
            windows: (1..=15).collect(),
            vpb: vec![1, 10, 100],
            horizon: 30,
            trace_seed: 7,
            seed_base: 1000,
            renormalize_tree: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceRow {
    pub method: &'static str,
    pub window: u32,
    pub vpb: u32,
    pub variance: f64,
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Per-firing variance of `stream` across seeded runs, averaged over firings at or after `from` seconds.
pub fn release_variance(
    compiled: &Compiled,
    trace: &Trace,
    horizon: &Rational,
    stream: &str,
    from: f64,
    seeds: std::ops::Range<u64>,
) -> Result<f64, ExperimentError> {
    let ev = Evaluator::new(&compiled.output, trace, horizon, EvalOptions::default())?;
    let runs: Vec<Vec<(f64, f64)>> = seeds.into_par_iter().map(|s| ev.run(NoiseMode::Seeded(s)).series(stream)).collect();
    let firings = runs[0].len();
    let mut acc = vec![];
    for k in 0..firings {
        if runs[0][k].0 < from {
            continue;
        }
        let xs: Vec<f64> = runs.iter().map(|r| r[k].1).collect();
        acc.push(sample_variance(&xs));
    }
    if acc.is_empty() {
        return Err(ExperimentError::Config(format!("`{stream}` never fires after {from} s")));
    }
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// Variance of the released `davg` for every method, window size and event rate.
pub fn variance_experiment(cfg: &VarianceConfig) -> Result<Vec<VarianceRow>, ExperimentError> {
    if cfg.runs < 2 {
        return Err(ExperimentError::Config("variance needs at least two runs".into()));
    }
    let mut jobs = vec![];
    for &method in &Method::ALL {
        for &w in &cfg.windows {
            for &v in &cfg.vpb {
                jobs.push((method, w, v));
            }
        }
    }
    let horizon = int(cfg.horizon as i64);
    jobs.into_par_iter()
        .map(|(method, window, vpb)| {
            let compiled = compile(&variance_spec(window), &method.options(&cfg.epsilon, cfg.renormalize_tree))?;
            let trace = ratings_trace(cfg.trace_seed, vpb, cfg.horizon);
            let seeds = cfg.seed_base..cfg.seed_base + cfg.runs as u64;
            let variance = release_variance(&compiled, &trace, &horizon, "davg", window as f64, seeds)?;
            Ok(VarianceRow { method: method.name(), window, vpb, variance })
        })
        .collect()
}

/// Variance of plain Laplace noise at the `davg` barrier: 2·(m·b/ε)².
pub fn regular_variance(window: u32, epsilon: f64) -> f64 {
    let scale = window as f64 * 17.0 / epsilon;
    2.0 * scale * scale
}

/// Hourly sum, count and gated average per bus line.
pub fn casestudy_spec() -> String {
    let mut s = String::new();
    for l in LINES {
        s.push_str(&format!("input {l} : Int64 range [1, 10]\n"));
    }
    for l in LINES {
        s.push_str(&format!(
            "output sum_{l} @1h := {l}.aggregate(over: 1h, using: sum)
output count_{l} @1h := {l}.aggregate(over: 1h, using: count)
output avg_{l} @1h := sum_{l} / count_{l}
output clipped_{l} @1h := clamp(avg_{l}, 0, 10)
#[public] output release_{l} @1h := if count_{l} > 5 then clipped_{l}
"
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct CaseStudyConfig {
    pub runs: u32,
    pub epsilon: Rational,
    pub days: u32,
    pub trace_seed: u64,
    pub seed_base: u64,
    pub heuristic: Heuristic,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig { runs: 200, epsilon: int(1), days: 1, trace_seed: 2024, seed_base: 1, heuristic: Heuristic::Deep }
    }
}

/// Statistics of one line's release at the end of one hour.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HourRow {
    /// Hours since the trace start; the hour of day is `hour % 24`.
    pub hour: u32,
    pub line: &'static str,
    /// Noise-free release, `None` where the gate holds it back.
    pub truth: Option<f64>,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub releases: u32,
}

#[derive(Clone, Debug)]
pub struct CaseStudy {
    pub rows: Vec<HourRow>,
    pub compiled: Compiled,
}

impl CaseStudy {
    pub fn row(&self, line: &str, hour: u32) -> Option<&HourRow> {
        self.rows.iter().find(|r| r.line == line && r.hour == hour)
    }
}

/// Runs the private bus monitor `runs` times over one synthetic trace.
pub fn casestudy_experiment(cfg: &CaseStudyConfig) -> Result<CaseStudy, ExperimentError> {
    let opts = CompileOptions { heuristic: cfg.heuristic, epsilon: cfg.epsilon.clone(), ..Default::default() };
    let compiled = compile(&casestudy_spec(), &opts)?;
    let trace = casestudy_trace(cfg.trace_seed, cfg.days);
    let horizon = int(cfg.days as i64 * 86400);
    let ev = Evaluator::new(&compiled.output, &trace, &horizon, EvalOptions::default())?;
    let truth = ev.run(NoiseMode::Off);
    let runs: Vec<_> = (cfg.seed_base..cfg.seed_base + cfg.runs as u64)
        .into_par_iter()
        .map(|s| ev.run(NoiseMode::Seeded(s)))
        .collect();
    let mut rows = vec![];
    for line in LINES {
        let name = format!("release_{line}");
        let stream = truth.stream(&name).expect("declared");
        for (k, &t) in stream.times.iter().enumerate() {
            // the release at the end of hour h covers (h, h+1]
            let secs = to_f64(&truth.timemap[t]);
            if secs == 0.0 {
                continue;
            }
            let hour = (secs / 3600.0) as u32 - 1;
            let xs: Vec<f64> = runs.iter().filter_map(|r| r.stream(&name).unwrap().values[k]).collect();
            let (mean, sd) = if xs.is_empty() {
                (None, None)
            } else {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                (Some(m), Some(sample_variance(&xs).sqrt()))
            };
            rows.push(HourRow { hour, line, truth: stream.values[k], mean, sd, releases: xs.len() as u32 });
        }
    }
    Ok(CaseStudy { rows, compiled })
}
