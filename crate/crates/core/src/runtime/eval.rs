use std::fmt::Write;
use std::ops::Range;

use num_traits::ToPrimitive;
use thiserror::Error;

use super::rng::{term_substream, KeyedRng};
use super::tree::{TreeKind, TreeState};
use crate::rational::{format_rational, to_f64, Rational};
use crate::semantics::{CheckedSpec, NodeKind, PacingModel, Trace};
use crate::speclang::{AggrFunc, BinOp, CmpOp, HoldBound, OutputBody, StreamExpr, Window};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("tree aggregation in `{stream}`: {reason}")]
    BadTree { stream: String, reason: String },
    #[error("internal: {0}")]
    Internal(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Seeded(u64),
    /// Every noise draw is 0.
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub closed_windows: bool,
}

/// Values of one stream at its firings.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamValues {
    pub name: String,
    pub kind: NodeKind,
    pub public: bool,
    pub times: Vec<usize>,
    pub values: Vec<Option<f64>>,
}

/// The result of one monitor run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationModel {
    pub timemap: Vec<Rational>,
    pub streams: Vec<StreamValues>,
}

impl EvaluationModel {
    pub fn stream(&self, name: &str) -> Option<&StreamValues> {
        self.streams.iter().find(|s| s.name == name)
    }

    /// `(real time, value)` pairs of non-⊥ values.
    pub fn series(&self, name: &str) -> Vec<(f64, f64)> {
        let Some(s) = self.stream(name) else { return vec![] };
        s.times.iter().zip(&s.values).filter_map(|(&t, v)| v.map(|v| (to_f64(&self.timemap[t]), v))).collect()
    }

    pub fn value_at(&self, name: &str, t: usize) -> Option<f64> {
        let s = self.stream(name)?;
        let k = s.times.binary_search(&t).ok()?;
        s.values[k]
    }

    /// One JSON object per release, in time order then declaration order.
    pub fn to_jsonl(&self, public_only: bool) -> String {
        let mut out = String::new();
        let mut cursors = vec![0usize; self.streams.len()];
        for t in 0..self.timemap.len() {
            let time = json_time(&self.timemap[t]);
            for (i, s) in self.streams.iter().enumerate() {
                if s.kind == NodeKind::Alias {
                    continue;
                }
                let k = cursors[i];
                if s.times.get(k) != Some(&t) {
                    continue;
                }
                cursors[i] += 1;
                if public_only && !s.public {
                    continue;
                }
                if let Some(v) = s.values[k].filter(|v| v.is_finite()) {
                    writeln!(out, "{{\"t\":{},\"stream\":{},\"value\":{}}}", time, serde_json::Value::from(s.name.as_str()), v)
                        .unwrap();
                }
            }
        }
        out
    }
}

fn json_time(t: &Rational) -> String {
    let s = format_rational(t);
    if s.contains('/') {
        format!("{}", to_f64(t))
    } else {
        s
    }
}

#[derive(Clone, Debug)]
enum Ir {
    Const(f64),
    Input,
    Sync(usize),
    Offset(usize, u32),
    Hold { y: usize, site: usize, reads: Option<u32> },
    Window { y: usize, site: usize, func: AggrFunc },
    Default(Box<Ir>, Box<Ir>),
    Ite { op: CmpOp, lhs: Box<Ir>, rhs: Box<Ir>, then: Box<Ir>, otherwise: Option<Box<Ir>> },
    Bin(BinOp, Box<Ir>, Box<Ir>),
    Clamp(Box<Ir>, f64, f64),
    Laplace { scale: f64, term: u32 },
    Tree { y: usize, site: usize, tree: usize, func: AggrFunc },
}

#[derive(Clone, Debug)]
struct TreeSpec {
    kind: TreeKind,
    sensitivity: f64,
    epsilon: f64,
    renormalize: bool,
    stream: usize,
}

/// A specification bound to one trace: timing is fixed, only noise varies between runs.
pub struct Evaluator<'a> {
    pub checked: &'a CheckedSpec,
    pub model: PacingModel,
    programs: Vec<Ir>,
    /// Per window site, the index range into the accessed stream's firings at each firing of the accessor.
    windows: Vec<Vec<Range<usize>>>,
    hold_sites: usize,
    trees: Vec<TreeSpec>,
    /// Input values per timestamp for each input id.
    inputs: Vec<Vec<f64>>,
}

struct Builder<'b, 'a> {
    ev: &'b mut Evaluator<'a>,
    closed: bool,
}

impl<'a> Evaluator<'a> {
    pub fn new(checked: &'a CheckedSpec, trace: &Trace, horizon: &Rational, opts: EvalOptions) -> Result<Self, EvalError> {
        let model = checked.pacing_model(trace, horizon);
        let g = &checked.graph;
        let mut inputs = vec![vec![]; g.len()];
        for id in 0..g.len() {
            if g.is_input(id) {
                inputs[id] = model.fires[id]
                    .iter()
                    .map(|&t| trace.records[model.record_at[t].unwrap()].values[g.name(id)])
                    .collect();
            }
        }
        let mut ev = Evaluator { checked, model, programs: vec![], windows: vec![], hold_sites: 0, trees: vec![], inputs };
        let mut programs = vec![];
        for id in 0..g.len() {
            let ir = match g.nodes[id].kind {
                NodeKind::Input => Ir::Input,
                NodeKind::Alias => Ir::Const(0.0),
                NodeKind::Output => {
                    let OutputBody::Expr(e) = &checked.spec.output(g.name(id)).unwrap().body else { unreachable!() };
                    let mut b = Builder { ev: &mut ev, closed: opts.closed_windows };
                    let mut term = 0;
                    b.lower(id, e, &mut term)?
                }
            };
            programs.push(ir);
        }
        ev.programs = programs;
        Ok(ev)
    }

    pub fn run(&self, noise: NoiseMode) -> EvaluationModel {
        let g = &self.checked.graph;
        let n = g.len();
        let mut state = RunState {
            values: (0..n).map(|i| Vec::with_capacity(self.model.fires[i].len())).collect(),
            holds: vec![(None, 0); self.hold_sites],
            trees: self
                .trees
                .iter()
                .enumerate()
                .map(|(i, t)| TreeState::new(t.kind, t.sensitivity, t.epsilon, t.renormalize, t.stream, i as u32))
                .collect(),
            rng: match noise {
                NoiseMode::Seeded(s) => Some(KeyedRng::new(s)),
                NoiseMode::Off => None,
            },
        };
        let order = g.order();
        for t in 0..self.model.len() {
            for &x in order {
                let k = state.values[x].len();
                if self.model.fires[x].get(k) != Some(&t) {
                    continue;
                }
                let v = match &self.programs[x] {
                    Ir::Input => Some(self.inputs[x][k]),
                    ir => self.eval(ir, x, k, t, &mut state),
                };
                state.values[x].push(v);
            }
        }
        let publics = g.publics();
        EvaluationModel {
            timemap: self.model.timemap.clone(),
            streams: state
                .values
                .into_iter()
                .enumerate()
                .map(|(i, values)| StreamValues {
                    name: g.name(i).to_string(),
                    kind: g.nodes[i].kind,
                    public: publics.contains(&i),
                    times: self.model.fires[i].clone(),
                    values,
                })
                .collect(),
        }
    }

    /// Evaluates `ir` inside stream `x` at its `k`-th firing, timestamp `t`.
    fn eval(&self, ir: &Ir, x: usize, k: usize, t: usize, st: &mut RunState) -> Option<f64> {
        match ir {
            Ir::Const(c) => Some(*c),
            Ir::Input => unreachable!(),
            Ir::Sync(y) => {
                let vals = &st.values[*y];
                match vals.len().checked_sub(1) {
                    Some(j) if self.model.fires[*y][j] == t => vals[j],
                    _ => None,
                }
            }
            Ir::Offset(y, o) => {
                let vals = &st.values[*y];
                let mut before = vals.len();
                if before > 0 && self.model.fires[*y][before - 1] == t {
                    before -= 1;
                }
                before.checked_sub(*o as usize).and_then(|j| vals[j])
            }
            Ir::Hold { y, site, reads } => {
                let j = st.values[*y].len().checked_sub(1)?;
                let v = st.values[*y][j];
                if let Some(limit) = reads {
                    let (seen, count) = &mut st.holds[*site];
                    if *seen == Some(j) {
                        *count += 1;
                    } else {
                        *seen = Some(j);
                        *count = 1;
                    }
                    if *count > *limit {
                        return None;
                    }
                }
                v
            }
            Ir::Window { y, site, func } => {
                let r = self.windows[*site][k].clone();
                aggregate(&st.values[*y][r], *func)
            }
            Ir::Default(e, d) => {
                let a = self.eval(e, x, k, t, st);
                let b = self.eval(d, x, k, t, st);
                a.or(b)
            }
            Ir::Ite { op, lhs, rhs, then, otherwise } => {
                let l = self.eval(lhs, x, k, t, st);
                let r = self.eval(rhs, x, k, t, st);
                let a = self.eval(then, x, k, t, st);
                let b = match otherwise {
                    Some(o) => self.eval(o, x, k, t, st),
                    None => None,
                };
                if op.holds(l?, r?) {
                    a
                } else {
                    b
                }
            }
            Ir::Bin(op, a, b) => {
                let a = self.eval(a, x, k, t, st);
                let b = self.eval(b, x, k, t, st);
                let (a, b) = (a?, b?);
                match op {
                    BinOp::Add => Some(a + b),
                    BinOp::Sub => Some(a - b),
                    BinOp::Mul => Some(a * b),
                    BinOp::Div => (b != 0.0).then(|| a / b),
                    BinOp::Min => Some(a.min(b)),
                    BinOp::Max => Some(a.max(b)),
                }
            }
            Ir::Clamp(e, lo, hi) => self.eval(e, x, k, t, st).map(|v| v.clamp(*lo, *hi)),
            Ir::Laplace { scale, term } => match st.rng.as_mut() {
                Some(r) => Some(r.laplace(*scale, term_substream(x, *term), k as u64)),
                None => Some(0.0),
            },
            Ir::Tree { y, site, tree, func } => {
                let r = self.windows[*site][k].clone();
                let leaf = &st.values[*y][r];
                let sum: f64 = leaf.iter().flatten().sum();
                let count = leaf.iter().flatten().count() as u64;
                let state = &mut st.trees[*tree];
                state.push_leaf(sum, count);
                let rel = state.release(st.rng.as_mut());
                match func {
                    AggrFunc::Sum => Some(rel.sum),
                    AggrFunc::Count => Some(rel.count as f64),
                    AggrFunc::Avg => (rel.count > 0).then(|| rel.sum / rel.count as f64),
                    AggrFunc::Last => unreachable!("rejected when lowering"),
                }
            }
        }
    }
}

struct RunState {
    values: Vec<Vec<Option<f64>>>,
    holds: Vec<(Option<usize>, u32)>,
    trees: Vec<TreeState>,
    rng: Option<KeyedRng>,
}

fn aggregate(vals: &[Option<f64>], func: AggrFunc) -> Option<f64> {
    match func {
        AggrFunc::Sum => Some(vals.iter().flatten().sum()),
        AggrFunc::Count => Some(vals.iter().flatten().count() as f64),
        AggrFunc::Avg => {
            let n = vals.iter().flatten().count();
            (n > 0).then(|| vals.iter().flatten().sum::<f64>() / n as f64)
        }
        AggrFunc::Last => vals.last().copied().flatten(),
    }
}

impl Builder<'_, '_> {
    fn id(&self, name: &str) -> Result<usize, EvalError> {
        self.ev.checked.graph.id(name).ok_or_else(|| EvalError::Internal(format!("unknown stream {name}")))
    }

    fn window_site(&mut self, x: usize, y: usize, w: &Window) -> usize {
        let m = &self.ev.model;
        let ranges = m.fires[x].iter().map(|&t| m.window_range(y, t, w, self.closed)).collect();
        self.ev.windows.push(ranges);
        self.ev.windows.len() - 1
    }

    /// Firings of `y` since the previous firing of `x` (exclusive) up to the current one.
    fn leaf_site(&mut self, x: usize, y: usize) -> usize {
        let m = &self.ev.model;
        let fy = &m.fires[y];
        let mut prev_end = 0;
        let ranges = m.fires[x]
            .iter()
            .map(|&t| {
                let end = fy.partition_point(|&s| s <= t);
                let r = prev_end..end;
                prev_end = end;
                r
            })
            .collect();
        self.ev.windows.push(ranges);
        self.ev.windows.len() - 1
    }

    fn lower(&mut self, x: usize, e: &StreamExpr, term: &mut u32) -> Result<Ir, EvalError> {
        Ok(match e {
            StreamExpr::Const(c) => Ir::Const(to_f64(c)),
            StreamExpr::Sync(y) => Ir::Sync(self.id(y)?),
            StreamExpr::Offset { stream, by } => Ir::Offset(self.id(stream)?, *by),
            StreamExpr::Hold { stream, bound } => {
                let site = self.ev.hold_sites;
                self.ev.hold_sites += 1;
                let reads = match bound {
                    HoldBound::Unbounded => None,
                    HoldBound::Reads(k) => Some(*k),
                };
                Ir::Hold { y: self.id(stream)?, site, reads }
            }
            StreamExpr::Aggregate { stream, window, func } => {
                let y = self.id(stream)?;
                Ir::Window { y, site: self.window_site(x, y, window), func: *func }
            }
            StreamExpr::Default { expr, fallback } => {
                Ir::Default(Box::new(self.lower(x, expr, term)?), Box::new(self.lower(x, fallback, term)?))
            }
            StreamExpr::Ite { cond, then, otherwise } => Ir::Ite {
                op: cond.op,
                lhs: Box::new(self.lower(x, &cond.lhs, term)?),
                rhs: Box::new(self.lower(x, &cond.rhs, term)?),
                then: Box::new(self.lower(x, then, term)?),
                otherwise: match otherwise {
                    Some(o) => Some(Box::new(self.lower(x, o, term)?)),
                    None => None,
                },
            },
            StreamExpr::Bin { op, lhs, rhs } => {
                Ir::Bin(*op, Box::new(self.lower(x, lhs, term)?), Box::new(self.lower(x, rhs, term)?))
            }
            StreamExpr::Clamp { expr, lo, hi } => Ir::Clamp(Box::new(self.lower(x, expr, term)?), to_f64(lo), to_f64(hi)),
            StreamExpr::Laplace { scale } => {
                *term += 1;
                Ir::Laplace { scale: to_f64(scale), term: *term - 1 }
            }
            StreamExpr::Tree(tree) => {
                let name = self.ev.checked.graph.name(x).to_string();
                let bad = |reason: &str| EvalError::BadTree { stream: name.clone(), reason: reason.to_string() };
                let y = self.id(&tree.stream)?;
                if tree.func == AggrFunc::Last {
                    return Err(bad("`last` has no tree form"));
                }
                let kind = match &tree.window {
                    Window::All => TreeKind::All,
                    Window::Span(w) => {
                        let delta = self.ev.checked.pacing[x].period().ok_or_else(|| bad("sliding trees need a period"))?;
                        let m = w / delta;
                        if !m.is_integer() {
                            return Err(bad("window is not a multiple of the period"));
                        }
                        let m = m.to_integer().to_u64().ok_or_else(|| bad("window too long"))?;
                        // a closed window also covers the bucket ending at t − W
                        TreeKind::Sliding(m + self.closed as u64)
                    }
                };
                self.ev.trees.push(TreeSpec {
                    kind,
                    sensitivity: to_f64(&tree.sensitivity),
                    epsilon: to_f64(&tree.epsilon),
                    renormalize: tree.renormalize,
                    stream: x,
                });
                let site = self.leaf_site(x, y);
                Ir::Tree { y, site, tree: self.ev.trees.len() - 1, func: tree.func }
            }
        })
    }
}

/// Derives the pacing model and runs the monitor once.
pub fn evaluate(checked: &CheckedSpec, trace: &Trace, horizon: &Rational, seed: u64) -> Result<EvaluationModel, EvalError> {
    Ok(Evaluator::new(checked, trace, horizon, EvalOptions::default())?.run(NoiseMode::Seeded(seed)))
}

/// Noise-free run.
pub fn evaluate_exact(checked: &CheckedSpec, trace: &Trace, horizon: &Rational) -> Result<EvaluationModel, EvalError> {
    Ok(Evaluator::new(checked, trace, horizon, EvalOptions::default())?.run(NoiseMode::Off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::int;
    use crate::semantics::TraceRecord;
    use crate::speclang::{parse_compiled, parse_specification, RATINGS_SPEC};

    fn rec(t: i64, vals: &[(&str, f64)]) -> TraceRecord {
        TraceRecord { time: int(t), values: vals.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    #[test]
    fn ratings_hand_values() {
        let c = CheckedSpec::new(parse_specification(RATINGS_SPEC).unwrap()).unwrap();
        let trace = Trace::ingest(&c.spec, vec![rec(0, &[("score", 3.0), ("conf", 1.0)])]).unwrap();
        let m = evaluate_exact(&c, &trace, &int(86400)).unwrap();
        assert_eq!(m.series("adj"), vec![(0.0, 11.0)]);
        assert_eq!(m.series("davg"), vec![(0.0, 11.0), (86400.0, 11.0)]);
        assert_eq!(m.series("low"), vec![(0.0, 11.0), (86400.0, 11.0)]);
        assert_eq!(m.series("high"), vec![(0.0, 11.0), (86400.0, 11.0)]);

        let empty = Trace::ingest(&c.spec, vec![]).unwrap();
        let m = evaluate_exact(&c, &empty, &int(86400)).unwrap();
        assert_eq!(m.series("davg"), vec![(0.0, 0.0), (86400.0, 0.0)]);
        assert_eq!(m.series("low"), vec![(0.0, 0.0), (86400.0, 0.0)]);
        let out = m.to_jsonl(true);
        assert_eq!(out.lines().next().unwrap(), r#"{"t":0,"stream":"low","value":0}"#);
        assert_eq!(out.lines().count(), 4);
    }

    #[test]
    fn bottom_propagation_and_holds() {
        let c = CheckedSpec::new(
            parse_specification(
                "input a : Int64 range [0, 10]
                 input b : Int64 range [0, 10]
                 output p := a.offset(by: -1) + 1
                 output q := a.offset(by: -1).defaults(to: -1)
                 output r @a := b.hold(for: 2).defaults(to: 0)
                 output d := a / (a - 2)
                 #[public] output z := p",
            )
            .unwrap(),
        )
        .unwrap();
        let trace = Trace::ingest(
            &c.spec,
            vec![rec(1, &[("a", 2.0), ("b", 5.0)]), rec(2, &[("a", 4.0)]), rec(3, &[("a", 6.0)]), rec(4, &[("a", 1.0)])],
        )
        .unwrap();
        let m = evaluate_exact(&c, &trace, &int(4)).unwrap();
        assert_eq!(m.stream("p").unwrap().values, vec![None, Some(3.0), Some(5.0), Some(7.0)]);
        assert_eq!(m.stream("q").unwrap().values, vec![Some(-1.0), Some(2.0), Some(4.0), Some(6.0)]);
        assert_eq!(m.stream("r").unwrap().values, vec![Some(5.0), Some(5.0), Some(0.0), Some(0.0)]);
        assert_eq!(m.stream("d").unwrap().values, vec![None, Some(2.0), Some(1.5), Some(-1.0)]);
    }

    #[test]
    fn noise_is_keyed_and_trees_are_exact_without_noise() {
        let c = CheckedSpec::new(
            parse_compiled(
                "input x : Int64 range [0, 5]
                 output s @1s := x.aggregate(over: 4s, using: sum) + laplace(3)
                 output t @1s := x.tree_aggregate(over: 4s, using: sum, sensitivity: 5, epsilon: 1)
                 output u @1s := x.aggregate(over: 4s, using: sum)
                 #[public] output z @1s := s",
            )
            .unwrap(),
        )
        .unwrap();
        let recs = (0..20).map(|i| rec(i, &[("x", (i % 5) as f64)])).collect();
        let trace = Trace::ingest(&c.spec, recs).unwrap();
        let ev = Evaluator::new(&c, &trace, &int(20), EvalOptions::default()).unwrap();
        let a = ev.run(NoiseMode::Seeded(4));
        assert_eq!(a, ev.run(NoiseMode::Seeded(4)));
        assert_ne!(a.stream("s"), ev.run(NoiseMode::Seeded(5)).stream("s"));
        let exact = ev.run(NoiseMode::Off);
        assert_eq!(exact.stream("t").unwrap().values, exact.stream("u").unwrap().values);
    }
}
