//! Dynamic per-event sensitivity and the brute-force adjacent-run oracle.

use std::collections::{BTreeMap, HashMap};

use num_traits::Zero;
use thiserror::Error;

use super::analysis::{AnalysisOptions, Analyzer, ExprInfo, Segment};
use crate::rational::{to_f64, Bound, Rational};
use crate::runtime::{EvalError, EvalOptions, Evaluator, NoiseMode};
use crate::semantics::{CheckedSpec, NodeKind, PacingModel, Trace, TraceRecord};
use crate::speclang::{AggrFunc, BinOp, HoldBound, OutputBody, StreamExpr};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("record {0} does not exist")]
    NoSuchRecord(usize),
    #[error("`{input}` has no value in record {record}")]
    InputAbsent { input: String, record: usize },
    #[error("perturbed value of `{input}` leaves its declared range")]
    PerturbationOutOfRange { input: String },
    #[error("`{0}` is not an input")]
    NotAnInput(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-event sensitivity Δ of every stream at every timestamp, for one changed timestamp.
pub struct PerEventOracle<'a> {
    checked: &'a CheckedSpec,
    model: &'a PacingModel,
    changed: usize,
    closed: bool,
    distances: Vec<Bound>,
    infos: HashMap<*const StreamExpr, ExprInfo>,
    delta_memo: HashMap<(usize, usize), Bound>,
    infl_memo: HashMap<(usize, usize), bool>,
}

impl<'a> PerEventOracle<'a> {
    pub fn new(checked: &'a CheckedSpec, model: &'a PacingModel, changed: usize, options: &AnalysisOptions) -> Self {
        let mut analyzer = Analyzer::new(checked, options.clone());
        let g = &checked.graph;
        let distances = (0..g.len())
            .map(|id| if g.is_input(id) { analyzer.input_distance(g.name(id)) } else { Bound::zero() })
            .collect();
        let mut infos = HashMap::new();
        for id in 0..g.len() {
            if let Some(e) = Self::body(checked, id) {
                e.visit(&mut |sub| {
                    infos.insert(sub as *const StreamExpr, analyzer.expr_info(id, sub));
                });
            }
        }
        PerEventOracle {
            checked,
            model,
            changed,
            closed: options.closed_windows,
            distances,
            infos,
            delta_memo: HashMap::new(),
            infl_memo: HashMap::new(),
        }
    }

    fn body(checked: &CheckedSpec, id: usize) -> Option<&StreamExpr> {
        if checked.graph.nodes[id].kind != NodeKind::Output {
            return None;
        }
        match &checked.spec.output(checked.graph.name(id))?.body {
            OutputBody::Expr(e) => Some(e),
            OutputBody::Tuple(_) => None,
        }
    }

    fn info(&self, e: &StreamExpr) -> &ExprInfo {
        &self.infos[&(e as *const StreamExpr)]
    }

    /// Δ of stream `x` at timestamp `t`.
    pub fn delta(&mut self, x: usize, t: usize) -> Bound {
        if !self.model.fires_at(x, t) {
            return Bound::zero();
        }
        if let Some(d) = self.delta_memo.get(&(x, t)) {
            return d.clone();
        }
        let d = if self.checked.graph.is_input(x) {
            if t == self.changed {
                self.distances[x].clone()
            } else {
                Bound::zero()
            }
        } else {
            match Self::body(self.checked, x) {
                Some(e) => self.delta_expr(x, e, t),
                None => Bound::Inf,
            }
        };
        self.delta_memo.insert((x, t), d.clone());
        d
    }

    /// Sum of Δ over all firings of `x`.
    pub fn total(&mut self, x: usize) -> Bound {
        let fires = self.model.fires[x].clone();
        fires.into_iter().fold(Bound::zero(), |acc, t| acc.add(&self.delta(x, t)))
    }

    /// Whether the changed timestamp can influence `x` at `t`.
    pub fn influenced(&mut self, x: usize, t: usize) -> bool {
        if !self.model.fires_at(x, t) {
            return false;
        }
        if let Some(b) = self.infl_memo.get(&(x, t)) {
            return *b;
        }
        let b = if self.checked.graph.is_input(x) {
            t == self.changed
        } else {
            match Self::body(self.checked, x) {
                Some(e) => self.expr_influenced(x, e, t),
                None => true,
            }
        };
        self.infl_memo.insert((x, t), b);
        b
    }

    fn id(&self, name: &str) -> usize {
        self.checked.graph.id(name).expect("checked reference")
    }

    fn hold_target(&self, x: usize, y: usize, bound: &HoldBound, t: usize) -> Option<usize> {
        let t2 = self.model.last_event(y, t, 0)?;
        match bound {
            HoldBound::Reads(k) if self.model.holdn(x, y, t) > *k as usize => None,
            _ => Some(t2),
        }
    }

    fn expr_influenced(&mut self, x: usize, e: &StreamExpr, t: usize) -> bool {
        match e {
            StreamExpr::Const(_) | StreamExpr::Laplace { .. } => false,
            StreamExpr::Sync(y) => self.influenced(self.id(y), t),
            StreamExpr::Offset { stream, by } => {
                let y = self.id(stream);
                self.model.last_event(y, t, *by).is_some_and(|t2| self.influenced(y, t2))
            }
            StreamExpr::Hold { stream, bound } => {
                let y = self.id(stream);
                self.hold_target(x, y, bound, t).is_some_and(|t2| self.influenced(y, t2))
            }
            StreamExpr::Aggregate { func: AggrFunc::Count, .. } => false,
            StreamExpr::Aggregate { stream, window, .. } => {
                let y = self.id(stream);
                self.model.window_times(y, t, window, self.closed).into_iter().any(|t2| self.influenced(y, t2))
            }
            StreamExpr::Tree(tree) => {
                let y = self.id(&tree.stream);
                self.model.fires[y].clone().into_iter().take_while(|&s| s <= t).any(|t2| self.influenced(y, t2))
            }
            _ => e.children().into_iter().any(|c| self.expr_influenced(x, c, t)),
        }
    }

    /// Value-dependent bound: the width of the range if influenced.
    fn value_dependent(&mut self, x: usize, e: &StreamExpr, t: usize) -> Bound {
        if self.expr_influenced(x, e, t) {
            self.info(e).range.width()
        } else {
            Bound::zero()
        }
    }

    fn delta_expr(&mut self, x: usize, e: &StreamExpr, t: usize) -> Bound {
        match e {
            StreamExpr::Const(_) | StreamExpr::Laplace { .. } => Bound::zero(),
            StreamExpr::Tree(_) => Bound::Inf,
            StreamExpr::Sync(y) => self.delta(self.id(y), t),
            StreamExpr::Offset { stream, by } => {
                let y = self.id(stream);
                match self.model.last_event(y, t, *by) {
                    Some(t2) => self.delta(y, t2),
                    None => Bound::zero(),
                }
            }
            StreamExpr::Hold { stream, bound } => {
                let y = self.id(stream);
                match self.hold_target(x, y, bound, t) {
                    Some(t2) => self.delta(y, t2),
                    None => Bound::zero(),
                }
            }
            StreamExpr::Aggregate { stream, window, func } => {
                let y = self.id(stream);
                let times = self.model.window_times(y, t, window, self.closed);
                match func {
                    AggrFunc::Count => Bound::zero(),
                    AggrFunc::Last => times.last().map_or(Bound::zero(), |&t2| self.delta(y, t2)),
                    AggrFunc::Sum | AggrFunc::Avg => {
                        times.into_iter().fold(Bound::zero(), |acc, t2| acc.add(&self.delta(y, t2)))
                    }
                }
            }
            StreamExpr::Default { expr, fallback } => {
                let a = self.delta_expr(x, expr, t);
                let b = self.delta_expr(x, fallback, t);
                a.max_of(&b)
            }
            StreamExpr::Bin { op, lhs, rhs } => {
                let a = self.delta_expr(x, lhs, t);
                let b = self.delta_expr(x, rhs, t);
                let (pl, pr) = (self.info(lhs).range.as_point().cloned(), self.info(rhs).range.as_point().cloned());
                match op {
                    BinOp::Add | BinOp::Sub => a.add(&b),
                    BinOp::Mul => match (pl, pr) {
                        (Some(c), _) => b.scale(&c),
                        (_, Some(c)) => a.scale(&c),
                        _ => self.value_dependent(x, e, t),
                    },
                    BinOp::Div => match pr {
                        Some(c) if !c.is_zero() => a.scale(&c.recip()),
                        _ => self.value_dependent(x, e, t),
                    },
                    BinOp::Min | BinOp::Max => a.add(&b).min_of(&self.value_dependent(x, e, t)),
                }
            }
            StreamExpr::Clamp { expr, .. } => {
                let a = self.delta_expr(x, expr, t);
                a.min_of(&self.value_dependent(x, e, t))
            }
            StreamExpr::Ite { cond, then, otherwise } => {
                let cond_influenced = self.expr_influenced(x, &cond.lhs, t) || self.expr_influenced(x, &cond.rhs, t);
                let a = self.delta_expr(x, then, t);
                match otherwise {
                    Some(o) => {
                        let b = self.delta_expr(x, o, t);
                        if !cond_influenced {
                            a.max_of(&b).min_of(&self.value_dependent(x, e, t))
                        } else if self.info(then).total && self.info(o).total {
                            self.value_dependent(x, e, t)
                        } else {
                            Bound::Inf
                        }
                    }
                    None if !cond_influenced => a,
                    None => Bound::Inf,
                }
            }
        }
    }
}

/// Per-event Δ summed over all firings, for every private stream.
pub fn per_event_sensitivity(
    checked: &CheckedSpec,
    model: &PacingModel,
    changed: usize,
    options: &AnalysisOptions,
) -> BTreeMap<String, Bound> {
    let report = Analyzer::new(checked, options.clone()).report();
    let mut oracle = PerEventOracle::new(checked, model, changed, options);
    report
        .iter()
        .filter(|s| s.segment == Segment::Private && !s.tree_only)
        .map(|s| (s.name.clone(), oracle.total(checked.graph.id(&s.name).unwrap())))
        .collect()
}

/// Replaces input values of one record by `value + delta`.
pub fn perturb_trace(
    checked: &CheckedSpec,
    trace: &Trace,
    record: usize,
    perturbation: &BTreeMap<String, f64>,
) -> Result<Trace, OracleError> {
    let mut records: Vec<TraceRecord> = trace.records.clone();
    let r = records.get_mut(record).ok_or(OracleError::NoSuchRecord(record))?;
    for (input, delta) in perturbation {
        let decl = checked.spec.input(input).ok_or_else(|| OracleError::NotAnInput(input.clone()))?;
        let v = r
            .values
            .get_mut(input)
            .ok_or_else(|| OracleError::InputAbsent { input: input.clone(), record })?;
        let nv = *v + delta;
        if let Some((lo, hi)) = &decl.range {
            if nv < to_f64(lo) || nv > to_f64(hi) {
                return Err(OracleError::PerturbationOutOfRange { input: input.clone() });
            }
        }
        *v = nv;
    }
    Ok(Trace { records, clamped: 0 })
}

/// Noise-free L1 difference per private stream between the trace and its perturbation at `record`.
/// A release present in one run and absent in the other counts as ∞.
pub fn check_adjacent_traces(
    checked: &CheckedSpec,
    trace: &Trace,
    record: usize,
    perturbation: &BTreeMap<String, f64>,
    horizon: &Rational,
    options: &AnalysisOptions,
) -> Result<BTreeMap<String, f64>, OracleError> {
    let other = perturb_trace(checked, trace, record, perturbation)?;
    let eval_opts = EvalOptions { closed_windows: options.closed_windows };
    let a = Evaluator::new(checked, trace, horizon, eval_opts)?.run(NoiseMode::Off);
    let b = Evaluator::new(checked, &other, horizon, eval_opts)?.run(NoiseMode::Off);
    let report = Analyzer::new(checked, options.clone()).report();
    let mut out = BTreeMap::new();
    for s in report.iter().filter(|s| s.segment == Segment::Private && !s.tree_only) {
        let (va, vb) = (&a.stream(&s.name).unwrap().values, &b.stream(&s.name).unwrap().values);
        let diff = va
            .iter()
            .zip(vb)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => (x - y).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            })
            .sum();
        out.insert(s.name.clone(), diff);
    }
    Ok(out)
}

/// Timestamp of a trace record in the pacing model.
pub fn record_timestamp(model: &PacingModel, record: usize) -> Option<usize> {
    model.record_at.iter().position(|r| *r == Some(record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;
    use crate::speclang::{parse_specification, RATINGS_SPEC};

    fn ratings() -> CheckedSpec {
        CheckedSpec::new(parse_specification(RATINGS_SPEC).unwrap()).unwrap()
    }

    fn one_record(score: f64, conf: f64) -> Trace {
        let values = [("score".to_string(), score), ("conf".to_string(), conf)].into_iter().collect();
        Trace { records: vec![TraceRecord { time: int(0), values }], clamped: 0 }
    }

    #[test]
    fn input_delta() {
        let c = ratings();
        let trace = one_record(3.0, 0.0);
        let model = c.pacing_model(&trace, &int(3 * 86400));
        let mut o = PerEventOracle::new(&c, &model, 0, &AnalysisOptions::default());
        let score = c.graph.id("score").unwrap();
        assert_eq!(o.delta(score, 0), Bound::of(5));
        assert_eq!(o.delta(score, 1), Bound::zero());
    }

    #[test]
    fn davg_delta_spreads_over_three_deadlines() {
        let c = ratings();
        let trace = one_record(3.0, 0.0);
        let model = c.pacing_model(&trace, &int(3 * 86400));
        let mut o = PerEventOracle::new(&c, &model, 0, &AnalysisOptions::default());
        let davg = c.graph.id("davg").unwrap();
        let per: Vec<Bound> = (0..model.len()).map(|t| o.delta(davg, t)).collect();
        assert_eq!(per, vec![Bound::of(17), Bound::of(17), Bound::of(17), Bound::zero()]);
        assert_eq!(o.total(davg), Bound::of(51));
    }

    #[test]
    fn extremal_adjacent_runs() {
        let c = ratings();
        let trace = one_record(1.0, 1.0);
        let p = [("score".to_string(), 5.0), ("conf".to_string(), -2.0)].into_iter().collect();
        let d = check_adjacent_traces(&c, &trace, 0, &p, &int(3 * 86400), &AnalysisOptions::default()).unwrap();
        assert_eq!(d["adj"], 17.0);
        assert_eq!(d["davg"], 51.0);
        assert!(!d.contains_key("low"));

        let zero = BTreeMap::new();
        let d = check_adjacent_traces(&c, &trace, 0, &zero, &int(3 * 86400), &AnalysisOptions::default()).unwrap();
        assert!(d.values().all(|v| *v == 0.0));

        let bad = [("score".to_string(), 6.0)].into_iter().collect();
        assert_eq!(
            check_adjacent_traces(&c, &trace, 0, &bad, &int(10), &AnalysisOptions::default()),
            Err(OracleError::PerturbationOutOfRange { input: "score".into() })
        );
    }
}
