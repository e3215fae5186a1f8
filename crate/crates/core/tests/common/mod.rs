//! Random well-typed specifications and traces for the property suites.
//!
//! Generation reads decisions from a vector of numbers so proptest can
//! shrink a failing case toward simpler choices (every decision prefers 0).

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dpmon::rational::{frac, int, to_f64, Rational};
use dpmon::semantics::{Trace, TraceRecord};
use dpmon::speclang::{
    AggrFunc, BinOp, Cmp, CmpOp, HoldBound, InputDecl, OutputBody, OutputDecl, Pacing, Specification, StreamExpr,
    Window,
};
use proptest::prelude::*;

pub const RATINGS: &str = "input score : Int64 range [1, 6]
input conf : Int64 range [-1, 1]
output adj := (6 - score) * 3 + conf + 1
output davg @1d := adj.aggregate(over: 3d, using: avg).defaults(to: 0.0)
output low @1d := min(low.offset(by: -1).defaults(to: 15.0), davg)
output high @1d := max(high.offset(by: -1).defaults(to: 0.0), davg)
#[public] output range @1d := (low, high)
";

pub struct Choices {
    v: Vec<u32>,
    i: usize,
}

impl Choices {
    pub fn new(v: Vec<u32>) -> Self {
        Choices { v, i: 0 }
    }

    /// A number in `0..n`; 0 once the vector is used up.
    pub fn pick(&mut self, n: u32) -> u32 {
        let x = self.v.get(self.i).copied().unwrap_or(0);
        self.i += 1;
        if n == 0 {
            0
        } else {
            x % n
        }
    }

    pub fn chance(&mut self, one_in: u32) -> bool {
        self.pick(one_in) == 0
    }

    fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        lo + self.pick((hi - lo + 1) as u32) as i64
    }
}

pub fn choices(len: usize) -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::vec(any::<u32>(), len)
}

#[derive(Clone, Debug)]
enum Kind {
    Input,
    Event(BTreeSet<String>),
    Periodic(i64),
}

struct Gen<'a> {
    c: &'a mut Choices,
    streams: Vec<(String, Kind)>,
}

impl Gen<'_> {
    fn constant(&mut self) -> Rational {
        if self.c.chance(5) {
            frac(self.c.int_in(-9, 9), 2)
        } else {
            int(self.c.int_in(-5, 5))
        }
    }

    /// Streams `x` may access synchronously.
    fn sync_targets(&self, kind: &Kind) -> Vec<String> {
        self.streams
            .iter()
            .filter(|(name, k)| match (kind, k) {
                (Kind::Event(t), Kind::Input) => t.contains(name),
                (Kind::Event(t), Kind::Event(s)) => s.is_subset(t),
                (Kind::Periodic(p), Kind::Periodic(q)) => p % q == 0,
                _ => false,
            })
            .map(|(n, _)| n.clone())
            .collect()
    }

    fn any_stream(&mut self) -> String {
        let i = self.c.pick(self.streams.len() as u32) as usize;
        self.streams[i].0.clone()
    }

    fn leaf(&mut self, me: &str, kind: &Kind) -> StreamExpr {
        let sync = self.sync_targets(kind);
        let periodic = matches!(kind, Kind::Periodic(_));
        match self.c.pick(6) {
            0 => StreamExpr::Const(self.constant()),
            1 | 2 if !sync.is_empty() => {
                let y = sync[self.c.pick(sync.len() as u32) as usize].clone();
                StreamExpr::Sync(y)
            }
            3 => {
                let own = self.c.chance(3) || sync.is_empty();
                let stream = if own { me.to_string() } else { sync[self.c.pick(sync.len() as u32) as usize].clone() };
                let by = 1 + self.c.pick(2);
                let fallback = StreamExpr::Const(self.constant());
                StreamExpr::default_to(StreamExpr::Offset { stream, by }, fallback)
            }
            4 => {
                let stream = self.any_stream();
                let bound = if self.c.chance(6) { HoldBound::Unbounded } else { HoldBound::Reads(1 + self.c.pick(3)) };
                let fallback = StreamExpr::Const(self.constant());
                StreamExpr::default_to(StreamExpr::Hold { stream, bound }, fallback)
            }
            5 if periodic => {
                let stream = self.any_stream();
                let window = Window::Span(int([1, 2, 3, 5][self.c.pick(4) as usize]));
                let func = [AggrFunc::Sum, AggrFunc::Count, AggrFunc::Avg, AggrFunc::Last][self.c.pick(4) as usize];
                let agg = StreamExpr::Aggregate { stream, window, func };
                match func {
                    AggrFunc::Avg | AggrFunc::Last => StreamExpr::default_to(agg, StreamExpr::Const(self.constant())),
                    _ => agg,
                }
            }
            _ => StreamExpr::Const(self.constant()),
        }
    }

    fn expr(&mut self, me: &str, kind: &Kind, depth: u32) -> StreamExpr {
        if depth == 0 || self.c.chance(3) {
            return self.leaf(me, kind);
        }
        let d = depth - 1;
        let sub = |g: &mut Self| g.expr(me, kind, d);
        match self.c.pick(10) {
            0 => StreamExpr::bin(BinOp::Add, sub(self), sub(self)),
            1 => StreamExpr::bin(BinOp::Sub, sub(self), sub(self)),
            2 => StreamExpr::bin(BinOp::Mul, StreamExpr::Const(self.constant()), sub(self)),
            3 => StreamExpr::bin(BinOp::Mul, sub(self), sub(self)),
            4 => {
                let k = self.c.int_in(1, 4) * if self.c.chance(2) { 1 } else { -1 };
                StreamExpr::bin(BinOp::Div, sub(self), StreamExpr::Const(int(k)))
            }
            5 => StreamExpr::bin(BinOp::Min, sub(self), sub(self)),
            6 => StreamExpr::bin(BinOp::Max, sub(self), sub(self)),
            7 => {
                let lo = self.c.int_in(-4, 4);
                let hi = lo + self.c.int_in(0, 6);
                StreamExpr::Clamp { expr: Box::new(sub(self)), lo: int(lo), hi: int(hi) }
            }
            8 => {
                let op = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Gt, CmpOp::Ge][self.c.pick(5) as usize];
                let cond = Cmp { op, lhs: sub(self), rhs: sub(self) };
                StreamExpr::Ite { cond: Box::new(cond), then: Box::new(sub(self)), otherwise: Some(Box::new(sub(self))) }
            }
            _ => StreamExpr::default_to(sub(self), StreamExpr::Const(self.constant())),
        }
    }
}

/// A specification that passes the semantic checks by construction.
pub fn random_spec(c: &mut Choices) -> Specification {
    let names = ["a", "b", "c"];
    let n_in = 1 + c.pick(3) as usize;
    let mut spec = Specification::default();
    let mut g = Gen { c, streams: vec![] };
    for name in &names[..n_in] {
        let lo = g.c.int_in(-3, 3);
        let hi = lo + g.c.int_in(0, 5);
        spec.inputs.push(InputDecl { name: name.to_string(), ty: "Int64".into(), range: Some((int(lo), int(hi))) });
        g.streams.push((name.to_string(), Kind::Input));
    }
    let n_out = 1 + g.c.pick(6) as usize;
    for j in 0..n_out {
        let name = format!("o{j}");
        let kind = if g.c.chance(3) {
            Kind::Periodic(1 + g.c.pick(2) as i64)
        } else {
            let mut t: BTreeSet<String> =
                names[..n_in].iter().filter(|_| g.c.chance(2)).map(|s| s.to_string()).collect();
            if t.is_empty() {
                t.insert(names[g.c.pick(n_in as u32) as usize].to_string());
            }
            Kind::Event(t)
        };
        let expr = g.expr(&name, &kind, 3);
        let pacing = match &kind {
            Kind::Periodic(p) => Pacing::Periodic(int(*p)),
            Kind::Event(t) => Pacing::EventBased(t.clone()),
            Kind::Input => unreachable!(),
        };
        let public = j + 1 == n_out || g.c.chance(3);
        spec.outputs.push(OutputDecl { name: name.clone(), pacing: Some(pacing), body: OutputBody::Expr(expr), public });
        g.streams.push((name, kind));
    }
    spec
}

/// Records with strictly increasing times and in-range integer values.
pub fn random_trace(c: &mut Choices, spec: &Specification) -> (Trace, Rational) {
    let n = 1 + c.pick(10) as usize;
    let mut t = Rational::from_integer(0.into());
    let mut records = vec![];
    for k in 0..n {
        if k > 0 || c.chance(2) {
            t += frac(1 + c.pick(4) as i64, 2);
        }
        let mut values = BTreeMap::new();
        for i in &spec.inputs {
            if c.pick(3) != 0 {
                let (lo, hi) = i.range.clone().unwrap();
                let v = to_f64(&lo) as i64 + c.pick((to_f64(&(hi - lo)) as u32) + 1) as i64;
                values.insert(i.name.clone(), v as f64);
            }
        }
        if values.is_empty() {
            let i = &spec.inputs[c.pick(spec.inputs.len() as u32) as usize];
            values.insert(i.name.clone(), to_f64(&i.range.as_ref().unwrap().0));
        }
        records.push(TraceRecord { time: t.clone(), values });
    }
    let horizon = t + int(c.pick(4) as i64);
    (Trace { records, clamped: 0 }, horizon)
}

/// Moves every input of `record` to another in-range value where the range allows it.
pub fn random_perturbation(c: &mut Choices, spec: &Specification, trace: &Trace, record: usize) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (name, v) in &trace.records[record].values {
        let (lo, hi) = spec.input(name).unwrap().range.clone().unwrap();
        let (lo, hi) = (to_f64(&lo) as i64, to_f64(&hi) as i64);
        // extremes make violations likelier than uniform picks
        let target = match c.pick(3) {
            0 => lo,
            1 => hi,
            _ => lo + c.pick((hi - lo + 1) as u32) as i64,
        };
        out.insert(name.clone(), target as f64 - v);
    }
    out
}

/// 64-bit FNV-1a, for frozen digests of byte outputs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
