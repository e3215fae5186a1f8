//! Barrier placement, budget split and noise injection.

pub mod barriers;
pub mod inject;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde_json::json;
use thiserror::Error;

use crate::rational::{format_rational, Rational};
use crate::semantics::SemanticError;
use crate::speclang::SpecError;

pub use barriers::{
    allocate_budget, barrier_set, choose_mechanism, partition_segments, select_barriers, validate_barriers, Violation,
};
pub use inject::{
    compile, compile_checked, inject_noise, rewrite_running_sums, rewrite_tree_aggregation, sliding_tree_form,
    CompileOptions, Compiled, SlidingForm,
};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum PrivacyError {
    #[error("specification has no public output")]
    NoPublicOutput,
    #[error("no valid barrier: input `{input}` reaches public `{output}` only through unbounded streams")]
    NoValidBarrier { output: String, input: String },
    #[error("private stream `{stream}` depends on post-processed `{dependency}`")]
    SegmentNotClosed { stream: String, dependency: String },
    #[error("`{stream}` cannot use a tree mechanism: {reason}")]
    NotTreeRewritable { stream: String, reason: String },
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("budget weight for `{0}`, which is not a barrier")]
    UnknownWeight(String),
    #[error("budget weights must be positive")]
    InvalidWeight,
    #[error("epsilon must be positive")]
    InvalidEpsilon,
    #[error("barrier `{0}` has no finite bound")]
    UnboundedBarrier(String),
    #[error("barrier plan violates exactly-one-crossing on {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heuristic {
    InputOnly,
    Deep,
    PostAggregation,
    MinimalBarriers,
}

impl Heuristic {
    pub const ALL: [Heuristic; 4] =
        [Heuristic::InputOnly, Heuristic::Deep, Heuristic::PostAggregation, Heuristic::MinimalBarriers];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::InputOnly => "input-only",
            Heuristic::Deep => "deep",
            Heuristic::PostAggregation => "post-aggregation",
            Heuristic::MinimalBarriers => "minimal",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Heuristic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| format!("unknown heuristic `{s}` (input-only, deep, post-aggregation, minimal)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    PlainLaplace,
    TreeAll,
    TreeSliding,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::PlainLaplace => "plain-laplace",
            Mechanism::TreeAll => "tree-all",
            Mechanism::TreeSliding => "tree-sliding",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Barrier {
    pub name: String,
    /// Sensitivity the noise is calibrated to; for trees, the per-level sensitivity.
    pub bound: Rational,
    pub epsilon: Rational,
    pub mechanism: Mechanism,
}

impl Barrier {
    /// Laplace scale `bound / ε_i` (the level-one base scale for trees).
    pub fn scale(&self) -> Rational {
        &self.bound / &self.epsilon
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BarrierPlan {
    pub heuristic: Heuristic,
    pub epsilon: Rational,
    pub barriers: Vec<Barrier>,
}

impl BarrierPlan {
    pub fn names(&self) -> BTreeSet<String> {
        self.barriers.iter().map(|b| b.name.clone()).collect()
    }

    pub fn spent(&self) -> Rational {
        self.barriers.iter().map(|b| b.epsilon.clone()).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "heuristic": self.heuristic.name(),
            "epsilon": format_rational(&self.epsilon),
            "barriers": self.barriers.iter().map(|b| json!({
                "barrier": b.name,
                "bound": format_rational(&b.bound),
                "epsilon_i": format_rational(&b.epsilon),
                "scale": format_rational(&b.scale()),
                "mechanism": b.mechanism.name(),
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlanOptions {
    pub tree_aggregation: bool,
    /// Relative budget weights per barrier; missing barriers weigh 1.
    pub weights: Option<BTreeMap<String, Rational>>,
    /// Spread a sliding tree's budget over its finite depth.
    pub renormalize_tree: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};
    use crate::semantics::CheckedSpec;
    use crate::sensitivity::{AnalysisOptions, Analyzer, Segment};
    use crate::speclang::{parse_specification, render_specification, RATINGS_SPEC};

    fn ratings() -> CheckedSpec {
        CheckedSpec::new(parse_specification(RATINGS_SPEC).unwrap()).unwrap()
    }

    fn names(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn plan(c: &CheckedSpec, h: Heuristic, eps: Rational) -> BarrierPlan {
        let r = Analyzer::new(c, AnalysisOptions::default()).report();
        select_barriers(c, &r, h, &eps, &PlanOptions::default()).unwrap()
    }

    #[test]
    fn ratings_segments() {
        let c = ratings();
        let r = Analyzer::new(&c, AnalysisOptions::default()).report();
        let seg = partition_segments(&c.graph, &r).unwrap();
        let private: Vec<&str> =
            (0..c.graph.len()).filter(|&i| seg[i] == Segment::Private).map(|i| c.graph.name(i)).collect();
        assert_eq!(private, ["score", "conf", "adj", "davg"]);
    }

    #[test]
    fn ratings_validation() {
        let g = &ratings().graph;
        assert!(validate_barriers(g, &names(&["davg"])).is_ok());
        assert!(validate_barriers(g, &names(&["score", "conf"])).is_ok());
        let v = validate_barriers(g, &names(&["score"])).unwrap_err();
        assert_eq!((v.path[0].as_str(), v.crossings), ("conf", 0));
        let v = validate_barriers(g, &names(&["adj", "davg"])).unwrap_err();
        assert_eq!(v.crossings, 2);
        assert_eq!(v.path.last().map(|s| s.as_str()), Some("low"));
    }

    #[test]
    fn ratings_heuristics() {
        let c = ratings();
        let one = int(1);
        assert_eq!(plan(&c, Heuristic::InputOnly, one.clone()).names(), names(&["score", "conf"]));
        for h in [Heuristic::Deep, Heuristic::PostAggregation, Heuristic::MinimalBarriers] {
            assert_eq!(plan(&c, h, one.clone()).names(), names(&["davg"]), "{h}");
        }
        let p = plan(&c, Heuristic::InputOnly, int(2));
        let scales: Vec<Rational> = p.barriers.iter().map(|b| b.scale()).collect();
        assert_eq!(scales, [int(5), int(2)]);
        assert_eq!(p.spent(), int(2));
    }

    #[test]
    fn budget_split_is_exact() {
        let n: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let eq = allocate_budget(&n, &int(1), None).unwrap();
        assert_eq!(eq, vec![frac(1, 3); 3]);
        let w = [("a".to_string(), int(2))].into_iter().collect();
        let split = allocate_budget(&n, &int(1), Some(&w)).unwrap();
        assert_eq!(split, vec![frac(1, 2), frac(1, 4), frac(1, 4)]);
        assert_eq!(split.iter().sum::<Rational>(), int(1));
        let bad = [("zz".to_string(), int(1))].into_iter().collect();
        assert!(allocate_budget(&n, &int(1), Some(&bad)).is_err());
    }

    #[test]
    fn deep_injection() {
        let out = compile(RATINGS_SPEC, &CompileOptions::default()).unwrap();
        assert!(out.text.contains("output davg @1d := adj.aggregate(over: 3d, using: avg).defaults(to: 0) + laplace(51)"));
        assert_eq!(out.sidecar()["barriers"][0]["scale"], "51");

        let opts = CompileOptions { heuristic: Heuristic::InputOnly, epsilon: int(2), ..Default::default() };
        let out = compile(RATINGS_SPEC, &opts).unwrap();
        assert!(out.text.contains("output score_noisy := score + laplace(5)"));
        assert!(out.text.contains("(6 - score_noisy) * 3 + conf_noisy + 1"));
    }

    #[test]
    fn zero_bound_barrier_is_untouched() {
        let src = "input x : Int64 range [0, 4]
                   #[public] output n @1s := x.aggregate(over: 5s, using: count)";
        let out = compile(src, &CompileOptions::default()).unwrap();
        assert_eq!(out.plan.barriers[0].scale(), int(0));
        assert_eq!(render_specification(&out.output.spec), render_specification(&out.analysed.spec));
    }

    #[test]
    fn tree_mechanisms() {
        let opts = CompileOptions {
            plan: PlanOptions { tree_aggregation: true, ..Default::default() },
            ..Default::default()
        };
        let out = compile(RATINGS_SPEC, &opts).unwrap();
        let b = &out.plan.barriers[0];
        assert_eq!((b.mechanism, b.bound.clone()), (Mechanism::TreeSliding, int(17)));
        assert!(out.text.contains("adj.tree_aggregate(over: 3d, using: avg, sensitivity: 17, epsilon: 1).defaults(to: 0)"));

        let src = "input x : Int64 range [0, 3]
                   #[public] output total := total.last(or: 0) + 2 * x";
        let out = compile(src, &opts).unwrap();
        assert_eq!(out.plan.names(), names(&["total"]));
        assert_eq!(out.plan.barriers[0].mechanism, Mechanism::TreeAll);
        assert_eq!(out.plan.barriers[0].bound, int(6));
        assert!(out.text.contains("output total_inc @x := 2 * x"));
        assert!(out.text.contains("total_inc.tree_aggregate(over: all, using: sum, sensitivity: 6, epsilon: 1)"));
        // without trees the running sum is unbounded and the input carries the noise
        let out = compile(src, &CompileOptions::default()).unwrap();
        assert_eq!(out.plan.names(), names(&["x"]));
    }
}
