use std::collections::BTreeMap;

use num_traits::Zero;
use serde::Serialize;

use crate::rational::{ceil_div, floor_div, int, Bound, Ext, Rational, ValueRange};
use crate::semantics::{CheckedSpec, NodeKind};
use crate::speclang::{AggrFunc, BinOp, HoldBound, OutputBody, StreamExpr, Window};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// Closed windows `[t−W, t]`, i.e. multiplier ⌊W/δ⌋+1 instead of ⌈W/δ⌉.
    pub closed_windows: bool,
    /// Admit `over: all` sums as tree-released private streams.
    pub tree_aggregation: bool,
    /// Overrides the specification's group size.
    pub group_size: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Segment {
    Private,
    PostProcessed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamReport {
    pub name: String,
    pub range: ValueRange,
    /// Influence count; ∞ when unbounded.
    pub influence: Bound,
    pub bound: Bound,
    pub segment: Segment,
    /// Private only when released through a tree mechanism.
    pub tree_only: bool,
    /// The value is never ⊥ when the stream fires.
    pub total: bool,
}

/// Static facts about one expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExprInfo {
    pub range: ValueRange,
    pub influence: Bound,
    pub bound: Bound,
    pub total: bool,
}

impl ExprInfo {
    fn unbounded() -> Self {
        ExprInfo { range: ValueRange::full(), influence: Bound::Inf, bound: Bound::Inf, total: false }
    }

    fn value_dependent(&self) -> Bound {
        self.influence.mul(&self.range.width())
    }
}

/// Per-stream ranges, influence counts, bounds and segments.
#[derive(Clone, Debug)]
pub struct SensitivityReport {
    /// Indexed by dependency-graph node id; `None` for alias nodes.
    pub streams: Vec<Option<StreamReport>>,
    pub group_size: u32,
    pub options: AnalysisOptions,
}

impl SensitivityReport {
    pub fn get(&self, name: &str) -> Option<&StreamReport> {
        self.streams.iter().flatten().find(|s| s.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StreamReport> {
        self.streams.iter().flatten()
    }

    pub fn segment_of(&self, id: usize) -> Segment {
        self.streams[id].as_ref().map_or(Segment::PostProcessed, |s| s.segment)
    }

    pub fn bounds(&self) -> BTreeMap<String, Bound> {
        self.iter().map(|s| (s.name.clone(), s.bound.clone())).collect()
    }
}

pub struct Analyzer<'a> {
    pub checked: &'a CheckedSpec,
    pub options: AnalysisOptions,
    group: Rational,
    cyclic: Vec<bool>,
    memo: Vec<Option<StreamReport>>,
}

impl<'a> Analyzer<'a> {
    pub fn new(checked: &'a CheckedSpec, options: AnalysisOptions) -> Self {
        let w = options.group_size.unwrap_or(checked.spec.group_size).max(1);
        let cyclic = checked.graph.cyclic_nodes();
        let n = checked.graph.len();
        let mut a = Analyzer { checked, options, group: int(w as i64), cyclic, memo: vec![None; n] };
        for id in 0..n {
            a.stream(id);
        }
        a
    }

    pub fn group_size(&self) -> u32 {
        self.options.group_size.unwrap_or(self.checked.spec.group_size).max(1)
    }

    pub fn report(&self) -> SensitivityReport {
        let streams = (0..self.checked.graph.len())
            .map(|id| (self.checked.graph.nodes[id].kind != NodeKind::Alias).then(|| self.memo[id].clone().unwrap()))
            .collect();
        SensitivityReport { streams, group_size: self.group_size(), options: self.options.clone() }
    }

    pub fn stream_report(&self, id: usize) -> &StreamReport {
        self.memo[id].as_ref().expect("analysed")
    }

    /// Per-event distance of an input: w · (hi − lo).
    pub fn input_distance(&self, name: &str) -> Bound {
        match &self.checked.spec.input(name).and_then(|i| i.range.clone()) {
            Some((lo, hi)) => Bound::Fin((hi - lo) * &self.group),
            None => Bound::Inf,
        }
    }

    fn stream(&mut self, id: usize) -> StreamReport {
        if let Some(r) = &self.memo[id] {
            return r.clone();
        }
        let g = &self.checked.graph;
        let name = g.name(id).to_string();
        let report = match g.nodes[id].kind {
            NodeKind::Input => {
                let decl = self.checked.spec.input(&name).unwrap();
                let range = match &decl.range {
                    Some((lo, hi)) => ValueRange::finite(lo.clone(), hi.clone()),
                    None => ValueRange::full(),
                };
                let bound = self.input_distance(&name);
                let segment = if bound.is_finite() { Segment::Private } else { Segment::PostProcessed };
                StreamReport {
                    name,
                    range,
                    influence: Bound::Fin(self.group.clone()),
                    bound,
                    segment,
                    tree_only: false,
                    total: true,
                }
            }
            NodeKind::Alias => StreamReport {
                name,
                range: ValueRange::full(),
                influence: Bound::Inf,
                bound: Bound::Inf,
                segment: Segment::PostProcessed,
                tree_only: false,
                total: false,
            },
            NodeKind::Output if self.cyclic[id] => StreamReport {
                name,
                range: ValueRange::full(),
                influence: Bound::Inf,
                bound: Bound::Inf,
                segment: Segment::PostProcessed,
                tree_only: false,
                total: false,
            },
            NodeKind::Output => {
                let expr = match &self.checked.spec.output(&name).unwrap().body {
                    OutputBody::Expr(e) => e.clone(),
                    OutputBody::Tuple(_) => unreachable!(),
                };
                let deps = g.dependencies(id);
                let deps_private = deps.iter().all(|&d| self.stream(d).segment == Segment::Private);
                if let Some(r) = self.tree_view(id, &name, &expr) {
                    r
                } else {
                    let info = self.expr_info(id, &expr);
                    let private = deps_private && info.bound.is_finite();
                    StreamReport {
                        name,
                        range: info.range,
                        influence: if private { info.influence } else { Bound::Inf },
                        bound: if private { info.bound } else { Bound::Inf },
                        segment: if private { Segment::Private } else { Segment::PostProcessed },
                        tree_only: false,
                        total: info.total,
                    }
                }
            }
        };
        self.memo[id] = Some(report.clone());
        report
    }

    /// `y.aggregate(over: all, using: sum)` is private in tree mode, with y's bound.
    fn tree_view(&mut self, _id: usize, name: &str, e: &StreamExpr) -> Option<StreamReport> {
        if !self.options.tree_aggregation {
            return None;
        }
        let StreamExpr::Aggregate { stream, window: Window::All, func: AggrFunc::Sum } = e else { return None };
        let y = self.checked.graph.id(stream)?;
        let ry = self.stream(y);
        if ry.segment != Segment::Private || ry.tree_only {
            return None;
        }
        Some(StreamReport {
            name: name.to_string(),
            range: ValueRange::full(),
            influence: Bound::Inf,
            bound: ry.bound,
            segment: Segment::Private,
            tree_only: true,
            total: true,
        })
    }

    /// Window multiplier for an aggregation inside stream `x`.
    pub fn window_multiplier(&self, x: usize, window: &Window) -> Bound {
        let Window::Span(w) = window else { return Bound::Inf };
        let Some(delta) = self.checked.pacing[x].period() else { return Bound::Inf };
        let m = if self.options.closed_windows { floor_div(w, delta) + int(1) } else { ceil_div(w, delta) };
        Bound::Fin(m)
    }

    fn access(&mut self, y: &str) -> Option<StreamReport> {
        let id = self.checked.graph.id(y)?;
        let r = self.stream(id);
        (!r.tree_only).then_some(r)
    }

    /// Range, influence, bound and totality of `e` evaluated in stream `x`.
    pub fn expr_info(&mut self, x: usize, e: &StreamExpr) -> ExprInfo {
        match e {
            StreamExpr::Const(c) => ExprInfo {
                range: ValueRange::point(c.clone()),
                influence: Bound::zero(),
                bound: Bound::zero(),
                total: true,
            },
            StreamExpr::Laplace { .. } => {
                ExprInfo { range: ValueRange::full(), influence: Bound::zero(), bound: Bound::zero(), total: true }
            }
            StreamExpr::Tree(_) => ExprInfo::unbounded(),
            StreamExpr::Sync(y) => match self.access(y) {
                Some(r) => ExprInfo { range: r.range, influence: r.influence, bound: r.bound, total: r.total },
                None => ExprInfo::unbounded(),
            },
            StreamExpr::Offset { stream, .. } => match self.access(stream) {
                Some(r) => ExprInfo { range: r.range, influence: r.influence, bound: r.bound, total: false },
                None => ExprInfo::unbounded(),
            },
            StreamExpr::Hold { stream, bound } => match (self.access(stream), bound) {
                (Some(r), HoldBound::Reads(k)) => {
                    let k = Bound::of(*k as i64);
                    ExprInfo { range: r.range, influence: k.mul(&r.influence), bound: k.mul(&r.bound), total: false }
                }
                (Some(r), HoldBound::Unbounded) => {
                    ExprInfo { range: r.range, influence: Bound::Inf, bound: Bound::Inf, total: false }
                }
                (None, _) => ExprInfo::unbounded(),
            },
            StreamExpr::Aggregate { stream, window, func } => {
                if *func == AggrFunc::Count {
                    return ExprInfo {
                        range: ValueRange::non_negative(),
                        influence: Bound::zero(),
                        bound: Bound::zero(),
                        total: true,
                    };
                }
                let Some(r) = self.access(stream) else { return ExprInfo::unbounded() };
                let m = self.window_multiplier(x, window);
                let (range, total) = match func {
                    AggrFunc::Sum => (ValueRange::full(), true),
                    _ => (r.range.clone(), false),
                };
                ExprInfo { range, influence: m.mul(&r.influence), bound: m.mul(&r.bound), total }
            }
            StreamExpr::Default { expr, fallback } => {
                let a = self.expr_info(x, expr);
                let b = self.expr_info(x, fallback);
                ExprInfo {
                    range: a.range.hull(&b.range),
                    influence: a.influence.add(&b.influence),
                    bound: a.bound.add(&b.bound),
                    total: a.total || b.total,
                }
            }
            StreamExpr::Bin { op, lhs, rhs } => {
                let a = self.expr_info(x, lhs);
                let b = self.expr_info(x, rhs);
                let influence = a.influence.add(&b.influence);
                let total = a.total && b.total;
                match op {
                    BinOp::Add | BinOp::Sub => ExprInfo {
                        range: if *op == BinOp::Add { a.range.add(&b.range) } else { a.range.sub(&b.range) },
                        influence,
                        bound: a.bound.add(&b.bound),
                        total,
                    },
                    BinOp::Mul => {
                        let range = a.range.mul(&b.range);
                        let bound = match (a.range.as_point(), b.range.as_point()) {
                            (Some(c), _) => b.bound.scale(c),
                            (_, Some(c)) => a.bound.scale(c),
                            _ => influence.mul(&range.width()),
                        };
                        ExprInfo { range, influence, bound, total }
                    }
                    BinOp::Div => {
                        let range = a.range.div(&b.range);
                        let nonzero = b.range.lo > Ext::zero() || b.range.hi < Ext::zero();
                        let bound = match b.range.as_point() {
                            Some(c) if !c.is_zero() => a.bound.scale(&c.recip()),
                            _ => influence.mul(&range.width()),
                        };
                        ExprInfo { range, influence, bound, total: total && nonzero }
                    }
                    BinOp::Min | BinOp::Max => {
                        let range = if *op == BinOp::Min { a.range.min_with(&b.range) } else { a.range.max_with(&b.range) };
                        let info = ExprInfo { range, influence, bound: Bound::Inf, total };
                        let bound = a.bound.add(&b.bound).min_of(&info.value_dependent());
                        ExprInfo { bound, ..info }
                    }
                }
            }
            StreamExpr::Clamp { expr, lo, hi } => {
                let a = self.expr_info(x, expr);
                let range = ValueRange::finite(lo.clone(), hi.clone());
                let bound = a.bound.min_of(&a.influence.mul(&range.width()));
                ExprInfo { range, influence: a.influence, bound, total: a.total }
            }
            StreamExpr::Ite { cond, then, otherwise } => {
                let l = self.expr_info(x, &cond.lhs);
                let r = self.expr_info(x, &cond.rhs);
                let a = self.expr_info(x, then);
                let n_cond = l.influence.add(&r.influence);
                let cond_total = l.total && r.total;
                match otherwise {
                    Some(o) => {
                        let b = self.expr_info(x, o);
                        let range = a.range.hull(&b.range);
                        let influence = n_cond.add(&a.influence).add(&b.influence);
                        let mut bound = influence.mul(&range.width());
                        if n_cond.is_zero() {
                            bound = bound.min_of(&a.bound.add(&b.bound));
                        } else if !(a.total && b.total) {
                            bound = Bound::Inf;
                        }
                        ExprInfo { range, influence, bound, total: cond_total && a.total && b.total }
                    }
                    None => {
                        let influence = n_cond.add(&a.influence);
                        let bound = if n_cond.is_zero() {
                            a.bound.min_of(&influence.mul(&a.range.width()))
                        } else {
                            Bound::Inf
                        };
                        ExprInfo { range: a.range, influence, bound, total: false }
                    }
                }
            }
        }
    }
}

/// Ranges of every value stream.
pub fn compute_value_ranges(checked: &CheckedSpec, options: &AnalysisOptions) -> BTreeMap<String, ValueRange> {
    Analyzer::new(checked, options.clone()).report().iter().map(|s| (s.name.clone(), s.range.clone())).collect()
}

/// Influence counts of every value stream; ∞ marks unbounded influence.
pub fn compute_influence_bounds(checked: &CheckedSpec, options: &AnalysisOptions) -> BTreeMap<String, Bound> {
    Analyzer::new(checked, options.clone()).report().iter().map(|s| (s.name.clone(), s.influence.clone())).collect()
}

pub fn compute_sensitivity_bounds(checked: &CheckedSpec, options: &AnalysisOptions) -> SensitivityReport {
    Analyzer::new(checked, options.clone()).report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::frac;
    use crate::speclang::{parse_specification, RATINGS_SPEC};

    fn checked(src: &str) -> CheckedSpec {
        CheckedSpec::new(parse_specification(src).unwrap()).unwrap()
    }

    #[test]
    fn ratings_bounds() {
        let c = checked(RATINGS_SPEC);
        let r = compute_sensitivity_bounds(&c, &AnalysisOptions::default());
        let b = |n: &str| r.get(n).unwrap().bound.clone();
        assert_eq!(b("score"), Bound::of(5));
        assert_eq!(b("conf"), Bound::of(2));
        assert_eq!(b("adj"), Bound::of(17));
        assert_eq!(b("davg"), Bound::of(51));
        assert_eq!(b("low"), Bound::Inf);
        assert_eq!(r.get("adj").unwrap().influence, Bound::of(2));
        assert_eq!(r.get("adj").unwrap().range, ValueRange::finite(int(0), int(17)));
        assert_eq!(r.get("high").unwrap().segment, Segment::PostProcessed);
        assert_eq!(r.get("davg").unwrap().segment, Segment::Private);
        assert!(r.get("range").is_none());

        let closed = AnalysisOptions { closed_windows: true, ..Default::default() };
        assert_eq!(compute_sensitivity_bounds(&c, &closed).get("davg").unwrap().bound, Bound::of(68));
        let grouped = AnalysisOptions { group_size: Some(3), ..Default::default() };
        assert_eq!(compute_sensitivity_bounds(&c, &grouped).get("adj").unwrap().bound, Bound::of(51));
    }

    #[test]
    fn operator_rules() {
        let c = checked(
            "input x : Int64 range [0, 1000]
             input y : Int64 range [0, 1]
             output c := clamp(x, 0, 10)
             output h := x.hold(for: 5).defaults(to: 0)
             output n @1s := x.aggregate(over: 10s, using: count)
             output s @1s := y.aggregate(over: 5/2s, using: sum)
             output u := x.hold()
             output v := x / 4
             output w := if y > 0 then x else 0
             #[public] output p := c + h + u + v + w
             #[public] output q @1s := n + s",
        );
        let r = compute_sensitivity_bounds(&c, &AnalysisOptions::default());
        let g = |n: &str| r.get(n).unwrap();
        assert_eq!(g("c").bound, Bound::of(10));
        assert_eq!(g("c").range, ValueRange::finite(int(0), int(10)));
        assert_eq!(g("h").influence, Bound::of(5));
        assert_eq!(g("h").bound, Bound::of(5000));
        assert_eq!(g("n").bound, Bound::zero());
        assert_eq!(g("n").range, ValueRange::non_negative());
        assert_eq!(g("s").bound, Bound::of(3));
        assert_eq!(g("s").range, ValueRange::full());
        assert_eq!(g("u").bound, Bound::Inf);
        assert_eq!(g("u").segment, Segment::PostProcessed);
        assert_eq!(g("v").bound, Bound::of(250));
        assert_eq!(g("v").range, ValueRange::finite(int(0), int(250)));
        // influenced condition: n = 2, width 1000
        assert_eq!(g("w").bound, Bound::of(2000));
        assert_eq!(g("p").segment, Segment::PostProcessed);
        let _ = frac(1, 2);
    }

    #[test]
    fn tree_mode_admits_all_sums() {
        let src = "input x : Int64 range [0, 3]
                   output inc := x * 2
                   #[public] output acc := inc.aggregate(over: all, using: sum)";
        let spec = crate::speclang::parse_compiled(src).unwrap();
        let c = CheckedSpec::new(spec).unwrap();
        let off = compute_sensitivity_bounds(&c, &AnalysisOptions::default());
        assert_eq!(off.get("acc").unwrap().bound, Bound::Inf);
        let on = compute_sensitivity_bounds(&c, &AnalysisOptions { tree_aggregation: true, ..Default::default() });
        let acc = on.get("acc").unwrap();
        assert_eq!((acc.bound.clone(), acc.segment, acc.tree_only), (Bound::of(6), Segment::Private, true));
    }
}
