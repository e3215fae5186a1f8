//! Dependency graph, pacing types, traces and the timing helpers shared by
//! the evaluator and the sensitivity oracle.

pub mod graph;
pub mod model;
pub mod pacing;

use thiserror::Error;

pub use graph::{build_dependency_graph, AccessKind, DependencyGraph, Edge, Node, NodeKind};
pub use model::{derive_pacing_model, last_event, PacingModel, Trace, TraceRecord};
pub use pacing::{check_pacing_types, ResolvedPacing};

use crate::rational::Rational;
use crate::speclang::Specification;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SemanticError {
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("illegal cycle without offset or hold: {}", .0.join(" -> "))]
    IllegalCycle(Vec<String>),
    #[error("pacing mismatch on access {from} -> {to}: {reason}")]
    PacingMismatch { from: String, to: String, reason: String },
    #[error("`{0}` aggregates a window but is not periodic")]
    WindowInEventBased(String),
    #[error("cannot infer a pacing for `{0}`; annotate it with @")]
    UnresolvableInference(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(String),
    #[error("the first column must be `time`")]
    MissingTimeColumn,
    #[error("row {row}: bad value in column `{column}`")]
    BadValue { row: usize, column: String },
    #[error("row {row}: times must be strictly increasing")]
    NotIncreasing { row: usize },
    #[error("row {row}: negative time")]
    NegativeTime { row: usize },
    #[error("`{0}` is not a declared input")]
    UnknownInput(String),
}

/// A specification that passed graph and pacing checks.
#[derive(Clone, Debug)]
pub struct CheckedSpec {
    pub spec: Specification,
    pub graph: DependencyGraph,
    pub pacing: Vec<ResolvedPacing>,
}

impl CheckedSpec {
    pub fn new(spec: Specification) -> Result<Self, SemanticError> {
        let graph = build_dependency_graph(&spec)?;
        let pacing = check_pacing_types(&spec, &graph)?;
        Ok(CheckedSpec { spec, graph, pacing })
    }

    pub fn pacing_model(&self, trace: &Trace, horizon: &Rational) -> PacingModel {
        derive_pacing_model(&self.graph, &self.pacing, trace, horizon)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::rational::{frac, int};
    use crate::speclang::{parse_specification, AggrFunc, Window, RATINGS_SPEC};

    fn ratings() -> CheckedSpec {
        CheckedSpec::new(parse_specification(RATINGS_SPEC).unwrap()).unwrap()
    }

    #[test]
    fn ratings_graph_edges() {
        let c = ratings();
        let g = &c.graph;
        assert_eq!(g.len(), 7);
        let edge = |a: &str, b: &str| {
            g.edges.iter().filter(|e| g.name(e.from) == a && g.name(e.to) == b).map(|e| e.kind.clone()).collect::<Vec<_>>()
        };
        assert_eq!(edge("adj", "score"), vec![AccessKind::Sync]);
        assert_eq!(edge("adj", "conf"), vec![AccessKind::Sync]);
        assert_eq!(edge("davg", "adj"), vec![AccessKind::Window(Window::Span(int(259200)), AggrFunc::Avg)]);
        assert_eq!(edge("low", "davg"), vec![AccessKind::Sync]);
        assert_eq!(edge("low", "low"), vec![AccessKind::Offset(1)]);
        assert_eq!(edge("high", "high"), vec![AccessKind::Offset(1)]);
        let value_edges = g.edges.iter().filter(|e| g.nodes[e.from].kind != NodeKind::Alias).count();
        assert_eq!(value_edges, 7);
        assert!(g.to_dot(None).contains("\"low\" -> \"low\" [label=\"-1\"]"));
    }

    #[test]
    fn illegal_cycle() {
        let s = parse_specification("output a @1s := b\noutput b @1s := a").unwrap();
        assert!(matches!(build_dependency_graph(&s), Err(SemanticError::IllegalCycle(_))));
        let s = parse_specification("output x := 1").unwrap();
        let g = build_dependency_graph(&s).unwrap();
        assert_eq!((g.len(), g.edges.len()), (1, 0));
    }

    #[test]
    fn ratings_pacing() {
        let c = ratings();
        let id = |n: &str| c.graph.id(n).unwrap();
        assert_eq!(
            c.pacing[id("adj")],
            ResolvedPacing::EventBased(["conf".to_string(), "score".to_string()].into_iter().collect())
        );
        for s in ["davg", "low", "high"] {
            assert_eq!(c.pacing[id(s)], ResolvedPacing::Periodic(int(86400)));
        }
    }

    #[test]
    fn pacing_errors() {
        let s = parse_specification("input x : Int64 range [0, 1]\noutput y @1d := x").unwrap();
        let g = build_dependency_graph(&s).unwrap();
        assert!(matches!(check_pacing_types(&s, &g), Err(SemanticError::PacingMismatch { .. })));
        let s = parse_specification("input x : Int64 range [0, 1]\noutput y := x.aggregate(over: 3s, using: sum)").unwrap();
        let g = build_dependency_graph(&s).unwrap();
        assert!(matches!(check_pacing_types(&s, &g), Err(SemanticError::WindowInEventBased(_))));
        let s = parse_specification("output a @2s := 1\noutput b @3s := a").unwrap();
        let g = build_dependency_graph(&s).unwrap();
        assert!(matches!(check_pacing_types(&s, &g), Err(SemanticError::PacingMismatch { .. })));
        let s = parse_specification("output a @2s := 1\noutput b @4s := a").unwrap();
        let g = build_dependency_graph(&s).unwrap();
        assert!(check_pacing_types(&s, &g).is_ok());
    }

    fn record(t: Rational, vals: &[(&str, f64)]) -> TraceRecord {
        TraceRecord { time: t, values: vals.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>() }
    }

    #[test]
    fn ratings_pacing_model() {
        let c = ratings();
        let trace = Trace::ingest(
            &c.spec,
            vec![record(frac(1, 2), &[("score", 3.0), ("conf", 1.0)]), record(frac(17, 10), &[("score", 4.0), ("conf", 0.0)])],
        )
        .unwrap();
        let m = c.pacing_model(&trace, &int(3 * 86400));
        let times = |n: &str| m.fires[c.graph.id(n).unwrap()].iter().map(|&t| m.timemap[t].clone()).collect::<Vec<_>>();
        assert_eq!(times("davg"), vec![int(0), int(86400), int(172800), int(259200)]);
        assert_eq!(times("adj"), vec![frac(1, 2), frac(17, 10)]);

        let empty = c.pacing_model(&Trace::default(), &int(0));
        assert_eq!(empty.fires[c.graph.id("davg").unwrap()], vec![0]);
        assert!(empty.fires[c.graph.id("adj").unwrap()].is_empty());

        let only_score = Trace::ingest(&c.spec, vec![record(int(1), &[("score", 2.0)])]).unwrap();
        let m = c.pacing_model(&only_score, &int(0));
        assert!(m.fires[c.graph.id("adj").unwrap()].is_empty());
        assert_eq!(m.fires[c.graph.id("score").unwrap()].len(), 1);
    }

    #[test]
    fn ingest_clamps_and_rejects() {
        let c = ratings();
        let t = Trace::ingest(&c.spec, vec![record(int(0), &[("score", 9.0)])]).unwrap();
        assert_eq!((t.records[0].values["score"], t.clamped), (6.0, 1));
        assert!(Trace::ingest(&c.spec, vec![record(int(1), &[]), record(int(1), &[])]).is_err());
        let csv = "time,score,conf\n0.5,3,1\n1.7,,0\n";
        let t = Trace::from_csv(&c.spec, csv).unwrap();
        assert_eq!(t.records.len(), 2);
        assert!(!t.records[1].values.contains_key("score"));
        assert_eq!(Trace::from_csv(&c.spec, &t.to_csv(&c.spec)).unwrap(), t);
        assert!(Trace::from_csv(&c.spec, "time,bogus\n0,1\n").is_err());
    }

    #[test]
    fn timing_helpers() {
        let fires = [1, 3, 5];
        assert_eq!(last_event(&fires, 6, 1), Some(5));
        assert_eq!(last_event(&fires, 1, 1), None);
        assert_eq!(last_event(&fires, 3, 0), Some(3));
        assert_eq!(last_event(&fires, 6, 2), Some(3));

        let m = PacingModel {
            timemap: (0..4).map(int).collect(),
            fires: vec![vec![0, 1, 2, 3]],
            record_at: vec![None; 4],
        };
        assert_eq!(m.window_times(0, 3, &Window::Span(int(3)), false), vec![1, 2, 3]);
        assert_eq!(m.window_times(0, 3, &Window::Span(int(3)), true), vec![0, 1, 2, 3]);
        assert_eq!(m.window_times(0, 3, &Window::Span(frac(1, 2)), false), vec![3]);
        assert_eq!(m.window_times(0, 3, &Window::Span(int(10)), false), vec![0, 1, 2, 3]);
    }
}
