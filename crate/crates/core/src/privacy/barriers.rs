use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::rational::{Bound, Rational};
use crate::semantics::{CheckedSpec, DependencyGraph, NodeKind};
use crate::sensitivity::{Segment, SensitivityReport};
use crate::speclang::{AggrFunc, OutputBody, StreamExpr};

use super::{Barrier, BarrierPlan, Heuristic, Mechanism, PlanOptions, PrivacyError};

/// Segment of every graph node; alias nodes count as post-processed.
pub fn partition_segments(graph: &DependencyGraph, report: &SensitivityReport) -> Result<Vec<Segment>, PrivacyError> {
    let seg: Vec<Segment> = (0..graph.len()).map(|id| report.segment_of(id)).collect();
    for id in 0..graph.len() {
        if seg[id] == Segment::Private {
            if let Some(&d) = graph.dependencies(id).iter().find(|&&d| seg[d] == Segment::PostProcessed) {
                return Err(PrivacyError::SegmentNotClosed { stream: graph.name(id).into(), dependency: graph.name(d).into() });
            }
        }
    }
    let flow = Flow::new(graph);
    for &o in &flow.publics {
        for i in graph.inputs() {
            if seg[i] == Segment::PostProcessed && flow.reaches(i, o) {
                return Err(PrivacyError::NoValidBarrier { output: graph.name(o).into(), input: graph.name(i).into() });
            }
        }
    }
    Ok(seg)
}

/// Data-flow view: successors are consumers, alias nodes dropped.
pub(crate) struct Flow {
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    pub publics: Vec<usize>,
    pub inputs: Vec<usize>,
}

impl Flow {
    pub fn new(g: &DependencyGraph) -> Self {
        let n = g.len();
        let alias = |i: usize| g.nodes[i].kind == NodeKind::Alias;
        let mut succ = vec![vec![]; n];
        let mut pred = vec![vec![]; n];
        for v in 0..n {
            if alias(v) {
                continue;
            }
            for d in g.dependencies(v) {
                if !alias(d) {
                    succ[d].push(v);
                    pred[v].push(d);
                }
            }
        }
        Flow { succ, pred, publics: g.publics().into_iter().collect(), inputs: g.inputs() }
    }

    fn closure(&self, from: &[usize], forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.succ.len()];
        let mut queue: VecDeque<usize> = from.iter().copied().collect();
        for &s in from {
            seen[s] = true;
        }
        while let Some(v) = queue.pop_front() {
            let next = if forward { &self.succ[v] } else { &self.pred[v] };
            for &u in next {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }

    pub fn reaches(&self, a: usize, b: usize) -> bool {
        self.closure(&[a], true)[b]
    }

    /// Nodes on some input-to-public path.
    pub fn relevant(&self) -> Vec<bool> {
        let down = self.closure(&self.inputs, true);
        let up = self.closure(&self.publics, false);
        down.iter().zip(&up).map(|(a, b)| *a && *b).collect()
    }

    /// Longest distance from any input along relevant nodes (graph restricted to acyclic part).
    fn depth(&self, relevant: &[bool], order: &[usize]) -> Vec<usize> {
        let mut d = vec![0usize; self.succ.len()];
        for &v in order {
            if !relevant[v] {
                continue;
            }
            for &p in &self.pred[v] {
                if relevant[p] && p != v {
                    d[v] = d[v].max(d[p] + 1);
                }
            }
        }
        d
    }
}

/// A path from an input to a public output that does not cross exactly one barrier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub path: Vec<String>,
    pub crossings: usize,
}

/// Checks that every input-to-public path crosses exactly one barrier.
pub fn validate_barriers(graph: &DependencyGraph, barriers: &BTreeSet<String>) -> Result<(), Violation> {
    let flow = Flow::new(graph);
    let is_barrier: Vec<bool> = (0..graph.len()).map(|i| barriers.contains(graph.name(i))).collect();
    let is_public: Vec<bool> = (0..graph.len()).map(|i| graph.nodes[i].public).collect();
    // state = (node, crossings capped at 2)
    let mut parent: HashMap<(usize, usize), Option<(usize, usize)>> = HashMap::new();
    let mut queue = VecDeque::new();
    for &i in &flow.inputs {
        let s = (i, is_barrier[i] as usize);
        parent.insert(s, None);
        queue.push_back(s);
    }
    // first pass finds barrier-free paths, the second over-crossed ones
    for wanted in [0usize, 2] {
        let mut q = queue.clone();
        let mut par = parent.clone();
        while let Some((v, c)) = q.pop_front() {
            if is_public[v] && c == wanted {
                let mut path = vec![];
                let mut cur = Some((v, c));
                while let Some(s) = cur {
                    path.push(graph.name(s.0).to_string());
                    cur = par[&s];
                }
                path.reverse();
                let crossings = path.iter().filter(|n| barriers.contains(*n)).count();
                return Err(Violation { path, crossings });
            }
            for &u in &flow.succ[v] {
                let nc = (c + is_barrier[u] as usize).min(2);
                if wanted == 0 && nc > 0 {
                    continue;
                }
                let s = (u, nc);
                if let std::collections::hash_map::Entry::Vacant(e) = par.entry(s) {
                    e.insert(Some((v, c)));
                    q.push_back(s);
                }
            }
        }
    }
    Ok(())
}

/// Whether the defining expression aggregates a window.
fn aggregates(checked: &CheckedSpec, id: usize) -> bool {
    let Some(o) = checked.spec.output(checked.graph.name(id)) else { return false };
    let OutputBody::Expr(e) = &o.body else { return false };
    let mut found = false;
    e.visit(&mut |s| {
        if matches!(s, StreamExpr::Aggregate { .. } | StreamExpr::Tree(_)) {
            found = true;
        }
    });
    found
}

/// Shrinks an upstream set until every barrier has all its relevant consumers outside it.
fn settle(flow: &Flow, relevant: &[bool], mut inside: Vec<bool>) -> Vec<bool> {
    let n = inside.len();
    let is_public: Vec<bool> = (0..n).map(|v| flow.publics.contains(&v)).collect();
    // closed under predecessors
    loop {
        let mut changed = false;
        for v in 0..n {
            if inside[v] && flow.pred[v].iter().any(|&p| relevant[p] && !inside[p]) {
                inside[v] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        let mut evict = vec![];
        for v in 0..n {
            if !inside[v] {
                continue;
            }
            let cons: Vec<usize> = flow.succ[v].iter().copied().filter(|&u| relevant[u]).collect();
            let leaves = is_public[v] || cons.iter().any(|&u| !inside[u]);
            if leaves {
                evict.extend(cons.into_iter().filter(|&u| inside[u]));
            }
        }
        if evict.is_empty() {
            return inside;
        }
        let gone = flow.closure(&evict, true);
        for v in 0..n {
            if gone[v] {
                inside[v] = false;
            }
        }
    }
}

fn frontier(flow: &Flow, relevant: &[bool], inside: &[bool]) -> BTreeSet<usize> {
    (0..inside.len())
        .filter(|&v| {
            inside[v]
                && relevant[v]
                && (flow.publics.contains(&v) || flow.succ[v].iter().any(|&u| relevant[u] && !inside[u]))
        })
        .collect()
}

/// Barrier nodes chosen by a heuristic, before budgets.
pub fn barrier_set(
    checked: &CheckedSpec,
    report: &SensitivityReport,
    heuristic: Heuristic,
) -> Result<BTreeSet<usize>, PrivacyError> {
    let g = &checked.graph;
    if g.publics().is_empty() {
        return Err(PrivacyError::NoPublicOutput);
    }
    let segments = partition_segments(g, report)?;
    let flow = Flow::new(g);
    let relevant = flow.relevant();
    let private: Vec<bool> = (0..g.len()).map(|v| relevant[v] && segments[v] == Segment::Private).collect();
    let deep = || frontier(&flow, &relevant, &settle(&flow, &relevant, private.clone()));
    let set = match heuristic {
        Heuristic::InputOnly => (0..g.len()).filter(|&v| g.is_input(v) && relevant[v]).collect(),
        Heuristic::Deep => deep(),
        Heuristic::PostAggregation => {
            let aggr: Vec<usize> = (0..g.len()).filter(|&v| private[v] && aggregates(checked, v)).collect();
            let below = flow.closure(&aggr, true);
            let inside: Vec<bool> = (0..g.len()).map(|v| private[v] && (!below[v] || aggr.contains(&v))).collect();
            frontier(&flow, &relevant, &settle(&flow, &relevant, inside))
        }
        Heuristic::MinimalBarriers => minimal(checked, &flow, &relevant, &private).unwrap_or_else(deep),
    };
    Ok(set)
}

/// Subsets examined before the minimal search gives up.
const SEARCH_BUDGET: usize = 200_000;

fn minimal(checked: &CheckedSpec, flow: &Flow, relevant: &[bool], private: &[bool]) -> Option<BTreeSet<usize>> {
    let g = &checked.graph;
    let candidates: Vec<usize> = (0..g.len()).filter(|&v| private[v]).collect();
    let depth = flow.depth(relevant, g.order());
    let mut examined = 0usize;
    for size in 1..=candidates.len() {
        let mut best: Option<(usize, Vec<usize>)> = None;
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            examined += 1;
            if examined > SEARCH_BUDGET {
                return None;
            }
            let chosen: Vec<usize> = combo.iter().map(|&i| candidates[i]).collect();
            let names: BTreeSet<String> = chosen.iter().map(|&v| g.name(v).to_string()).collect();
            if validate_barriers(g, &names).is_ok() {
                let score: usize = chosen.iter().map(|&v| depth[v]).sum();
                // combos are enumerated in lexicographic order, so ties keep the earliest
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, chosen));
                }
            }
            if !next_combination(&mut combo, candidates.len()) {
                break;
            }
        }
        if let Some((_, set)) = best {
            return Some(set.into_iter().collect());
        }
    }
    None
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Splits `epsilon` over the barriers, equally or by weight.
pub fn allocate_budget(
    names: &[String],
    epsilon: &Rational,
    weights: Option<&BTreeMap<String, Rational>>,
) -> Result<Vec<Rational>, PrivacyError> {
    if names.is_empty() {
        return Ok(vec![]);
    }
    let w: Vec<Rational> = match weights {
        None => vec![Rational::from_integer(1.into()); names.len()],
        Some(map) => {
            if let Some(unknown) = map.keys().find(|k| !names.contains(k)) {
                return Err(PrivacyError::UnknownWeight(unknown.clone()));
            }
            names.iter().map(|n| map.get(n).cloned().unwrap_or_else(|| Rational::from_integer(1.into()))).collect()
        }
    };
    if w.iter().any(|x| *x <= Rational::from_integer(0.into())) {
        return Err(PrivacyError::InvalidWeight);
    }
    let total: Rational = w.iter().sum();
    Ok(w.iter().map(|x| epsilon * x / &total).collect())
}

/// Mechanism for a barrier: trees only when requested and the definition has a tree form.
pub fn choose_mechanism(checked: &CheckedSpec, report: &SensitivityReport, id: usize, tree: bool) -> Mechanism {
    let r = report.streams[id].as_ref().expect("value stream");
    if !tree || r.bound.is_zero() {
        return Mechanism::PlainLaplace;
    }
    if r.tree_only {
        return Mechanism::TreeAll;
    }
    match super::inject::sliding_tree_form(checked, report, id) {
        Ok(_) => Mechanism::TreeSliding,
        Err(_) => Mechanism::PlainLaplace,
    }
}

/// Chooses barriers, budgets and mechanisms.
pub fn select_barriers(
    checked: &CheckedSpec,
    report: &SensitivityReport,
    heuristic: Heuristic,
    epsilon: &Rational,
    options: &PlanOptions,
) -> Result<BarrierPlan, PrivacyError> {
    if *epsilon <= Rational::from_integer(0.into()) {
        return Err(PrivacyError::InvalidEpsilon);
    }
    let ids = barrier_set(checked, report, heuristic)?;
    let g = &checked.graph;
    let names: Vec<String> = ids.iter().map(|&v| g.name(v).to_string()).collect();
    let budgets = allocate_budget(&names, epsilon, options.weights.as_ref())?;
    let mut barriers = vec![];
    for ((&id, name), eps) in ids.iter().zip(names).zip(budgets) {
        let r = report.streams[id].as_ref().expect("value stream");
        let mechanism = choose_mechanism(checked, report, id, options.tree_aggregation);
        let bound = match (&mechanism, &r.bound) {
            (Mechanism::TreeSliding, _) => super::inject::sliding_tree_form(checked, report, id).expect("checked").sensitivity,
            (_, Bound::Fin(b)) => b.clone(),
            (_, Bound::Inf) => return Err(PrivacyError::UnboundedBarrier(name)),
        };
        barriers.push(Barrier { name, bound, epsilon: eps, mechanism });
    }
    let plan = BarrierPlan { heuristic, epsilon: epsilon.clone(), barriers };
    if let Err(v) = validate_barriers(g, &plan.names()) {
        return Err(PrivacyError::InvalidPlan(v.path.join(" -> ")));
    }
    Ok(plan)
}

/// Aggregation functions with a tree form.
pub(crate) fn tree_func(f: AggrFunc) -> bool {
    matches!(f, AggrFunc::Sum | AggrFunc::Avg | AggrFunc::Count)
}
