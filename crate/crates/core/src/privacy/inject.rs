use std::collections::BTreeSet;

use crate::rational::{Bound, Rational};
use crate::semantics::{CheckedSpec, ResolvedPacing};
use crate::sensitivity::{AnalysisOptions, Analyzer, SensitivityReport};
use crate::speclang::{
    parse_compiled, parse_specification, render_specification, AggrFunc, BinOp, OutputBody, OutputDecl, Pacing,
    Specification, StreamExpr, TreeAggregate, Window,
};

use super::barriers::{select_barriers, tree_func};
use super::{BarrierPlan, Heuristic, Mechanism, PlanOptions, PrivacyError};

/// A barrier defined by one sliding aggregation, optionally under `defaults`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlidingForm {
    pub stream: String,
    pub window: Rational,
    pub func: AggrFunc,
    /// Bound of the aggregated stream: the L1 change of all leaves together.
    pub sensitivity: Rational,
    pub buckets: Rational,
}

fn body_of<'s>(spec: &'s Specification, name: &str) -> Option<&'s StreamExpr> {
    spec.output(name)?.expr()
}

fn aggregate_site(e: &StreamExpr) -> Option<&StreamExpr> {
    match e {
        StreamExpr::Aggregate { .. } => Some(e),
        StreamExpr::Default { expr, .. } if matches!(**expr, StreamExpr::Aggregate { .. }) => Some(expr),
        _ => None,
    }
}

/// Recognises `y.aggregate(over: W, using: sum|avg|count)` with W a multiple of the period.
pub fn sliding_tree_form(checked: &CheckedSpec, report: &SensitivityReport, id: usize) -> Result<SlidingForm, PrivacyError> {
    let name = checked.graph.name(id);
    let bad = |reason: &str| PrivacyError::NotTreeRewritable { stream: name.to_string(), reason: reason.to_string() };
    let e = body_of(&checked.spec, name).ok_or_else(|| bad("not a value stream"))?;
    let Some(StreamExpr::Aggregate { stream, window: Window::Span(w), func }) = aggregate_site(e) else {
        return Err(bad("not a single sliding aggregation"));
    };
    if !tree_func(*func) {
        return Err(bad("aggregation function has no tree form"));
    }
    let delta = checked.pacing[id].period().ok_or_else(|| bad("not periodic"))?;
    let buckets = w / delta;
    if !buckets.is_integer() {
        return Err(bad("window is not a multiple of the period"));
    }
    let y = report.get(stream).ok_or_else(|| bad("aggregated stream has no bound"))?;
    let Bound::Fin(b) = &y.bound else { return Err(bad("aggregated stream is unbounded")) };
    if y.tree_only {
        return Err(bad("aggregated stream is itself a tree release"));
    }
    Ok(SlidingForm { stream: stream.clone(), window: w.clone(), func: *func, sensitivity: b.clone(), buckets })
}

fn pacing_annotation(p: &ResolvedPacing) -> Option<Pacing> {
    match p {
        ResolvedPacing::EventBased(s) => Some(Pacing::EventBased(s.clone())),
        ResolvedPacing::Periodic(d) => Some(Pacing::Periodic(d.clone())),
        _ => None,
    }
}

/// `x.offset(by: -1).defaults(to: 0)` for the given `x`.
fn is_previous_or_zero(e: &StreamExpr, x: &str) -> bool {
    match e {
        StreamExpr::Default { expr, fallback } => {
            matches!(&**expr, StreamExpr::Offset { stream, by: 1 } if stream == x)
                && matches!(&**fallback, StreamExpr::Const(c) if *c == Rational::from_integer(0.into()))
        }
        _ => false,
    }
}

/// Splits running sums `x := x.offset(by: -1).defaults(to: 0) + e` into `x_inc := e` and an all-aggregation.
pub fn rewrite_running_sums(checked: &CheckedSpec) -> (Specification, Vec<String>) {
    let mut spec = checked.spec.clone();
    let mut rewritten = vec![];
    let mut analyzer = Analyzer::new(checked, AnalysisOptions::default());
    let g = &checked.graph;
    for o in &checked.spec.outputs {
        let Some(StreamExpr::Bin { op: BinOp::Add, lhs, rhs }) = o.expr() else { continue };
        let x = &o.name;
        let inc = if is_previous_or_zero(lhs, x) {
            rhs
        } else if is_previous_or_zero(rhs, x) {
            lhs
        } else {
            continue;
        };
        let id = g.id(x).unwrap();
        // the increment must neither reach x nor be ⊥
        let mut reaches_x = false;
        inc.visit(&mut |s| {
            if let Some(y) = s.accessed() {
                let yid = g.id(y).unwrap();
                reaches_x |= yid == id || depends_on(checked, yid, id);
            }
        });
        if reaches_x || !analyzer.expr_info(id, inc).total {
            continue;
        }
        let Some(pacing) = pacing_annotation(&checked.pacing[id]) else { continue };
        let inc_name = spec.fresh_name(&format!("{x}_inc"));
        let pos = spec.outputs.iter().position(|d| d.name == *x).unwrap();
        let inc_decl = OutputDecl {
            name: inc_name.clone(),
            pacing: Some(pacing.clone()),
            body: OutputBody::Expr((**inc).clone()),
            public: false,
        };
        let d = &mut spec.outputs[pos];
        d.pacing = Some(pacing);
        d.body = OutputBody::Expr(StreamExpr::Aggregate { stream: inc_name, window: Window::All, func: AggrFunc::Sum });
        spec.outputs.insert(pos, inc_decl);
        rewritten.push(x.clone());
    }
    (spec, rewritten)
}

fn depends_on(checked: &CheckedSpec, from: usize, target: usize) -> bool {
    let g = &checked.graph;
    let mut seen = BTreeSet::new();
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == target {
            return true;
        }
        if seen.insert(v) {
            stack.extend(g.dependencies(v));
        }
    }
    false
}

/// Replaces a barrier's aggregation by a tree release.
pub fn rewrite_tree_aggregation(
    checked: &CheckedSpec,
    report: &SensitivityReport,
    barrier: &str,
    epsilon: &Rational,
    renormalize: bool,
) -> Result<Specification, PrivacyError> {
    let id = checked.graph.id(barrier).ok_or_else(|| PrivacyError::UnknownStream(barrier.into()))?;
    let bad = |reason: &str| PrivacyError::NotTreeRewritable { stream: barrier.to_string(), reason: reason.to_string() };
    let mut spec = checked.spec.clone();
    let r = report.streams[id].as_ref().ok_or_else(|| bad("not a value stream"))?;
    let tree = if r.tree_only {
        let Some(StreamExpr::Aggregate { stream, window: Window::All, func: AggrFunc::Sum }) = body_of(&spec, barrier) else {
            return Err(bad("not an all-aggregation"));
        };
        let Bound::Fin(b) = &r.bound else { return Err(bad("unbounded")) };
        TreeAggregate {
            stream: stream.clone(),
            window: Window::All,
            func: AggrFunc::Sum,
            sensitivity: b.clone(),
            epsilon: epsilon.clone(),
            renormalize: false,
        }
    } else {
        let f = sliding_tree_form(checked, report, id)?;
        TreeAggregate {
            stream: f.stream,
            window: Window::Span(f.window),
            func: f.func,
            sensitivity: f.sensitivity,
            epsilon: epsilon.clone(),
            renormalize,
        }
    };
    let OutputBody::Expr(e) = &mut spec.output_mut(barrier).unwrap().body else { unreachable!() };
    let site = match e {
        StreamExpr::Default { expr, .. } => expr.as_mut(),
        other => other,
    };
    *site = StreamExpr::Tree(tree);
    Ok(spec)
}

/// Adds calibrated noise at every barrier.
pub fn inject_noise(
    checked: &CheckedSpec,
    plan: &BarrierPlan,
    report: &SensitivityReport,
    renormalize: bool,
) -> Result<Specification, PrivacyError> {
    let mut spec = checked.spec.clone();
    let mut fresh_inputs = vec![];
    for b in &plan.barriers {
        let scale = b.scale();
        match b.mechanism {
            Mechanism::PlainLaplace if b.bound == Rational::from_integer(0.into()) => {}
            Mechanism::PlainLaplace if spec.is_input(&b.name) => {
                let noisy = spec.fresh_name(&format!("{}_noisy", b.name));
                let body = StreamExpr::bin(BinOp::Add, StreamExpr::Sync(b.name.clone()), StreamExpr::Laplace { scale });
                fresh_inputs.push((b.name.clone(), OutputDecl { name: noisy, pacing: None, body: OutputBody::Expr(body), public: false }));
            }
            Mechanism::PlainLaplace => {
                let decl = spec.output_mut(&b.name).ok_or_else(|| PrivacyError::UnknownStream(b.name.clone()))?;
                let OutputBody::Expr(e) = &mut decl.body else { unreachable!() };
                let raw = std::mem::replace(e, StreamExpr::Const(Rational::from_integer(0.into())));
                *e = StreamExpr::bin(BinOp::Add, raw, StreamExpr::Laplace { scale });
            }
            Mechanism::TreeAll | Mechanism::TreeSliding => {
                let rewritten = rewrite_tree_aggregation(checked, report, &b.name, &b.epsilon, renormalize)?;
                *spec.output_mut(&b.name).unwrap() = rewritten.output(&b.name).unwrap().clone();
            }
        }
    }
    for (input, decl) in fresh_inputs.iter().rev() {
        for o in spec.outputs.iter_mut() {
            if let OutputBody::Expr(e) = &mut o.body {
                e.visit_mut(&mut |s| {
                    if let Some(name) = s.accessed_mut() {
                        if name == input {
                            *name = decl.name.clone();
                        }
                    }
                });
            }
        }
        spec.outputs.insert(0, decl.clone());
    }
    Ok(spec)
}

#[derive(Clone, Debug)]
pub struct CompileOptions {
    pub heuristic: Heuristic,
    pub epsilon: Rational,
    pub plan: PlanOptions,
    pub closed_windows: bool,
    pub group_size: Option<u32>,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            heuristic: Heuristic::Deep,
            epsilon: Rational::from_integer(1.into()),
            plan: PlanOptions::default(),
            closed_windows: false,
            group_size: None,
        }
    }
}

impl CompileOptions {
    pub fn analysis(&self) -> AnalysisOptions {
        AnalysisOptions {
            closed_windows: self.closed_windows,
            tree_aggregation: self.plan.tree_aggregation,
            group_size: self.group_size,
        }
    }
}

/// Everything the compiler produced for one specification.
#[derive(Clone, Debug)]
pub struct Compiled {
    /// The analysed specification (after running-sum rewriting, if enabled).
    pub analysed: CheckedSpec,
    pub report: SensitivityReport,
    pub plan: BarrierPlan,
    pub output: CheckedSpec,
    pub text: String,
}

impl Compiled {
    pub fn sidecar(&self) -> serde_json::Value {
        self.plan.to_json()
    }
}

/// Parses, analyses, places barriers and injects noise.
pub fn compile(source: &str, options: &CompileOptions) -> Result<Compiled, PrivacyError> {
    let checked = CheckedSpec::new(parse_specification(source)?)?;
    compile_checked(checked, options)
}

pub fn compile_checked(checked: CheckedSpec, options: &CompileOptions) -> Result<Compiled, PrivacyError> {
    let analysed = if options.plan.tree_aggregation {
        let (spec, rewritten) = rewrite_running_sums(&checked);
        if rewritten.is_empty() {
            checked
        } else {
            CheckedSpec::new(spec)?
        }
    } else {
        checked
    };
    let report = Analyzer::new(&analysed, options.analysis()).report();
    let plan = select_barriers(&analysed, &report, options.heuristic, &options.epsilon, &options.plan)?;
    let spec = inject_noise(&analysed, &plan, &report, options.plan.renormalize_tree)?;
    let text = render_specification(&spec);
    let output = CheckedSpec::new(parse_compiled(&text)?)?;
    Ok(Compiled { analysed, report, plan, output, text })
}
