use std::fmt::Write;

use num_traits::Signed;

use super::ast::*;
use crate::rational::{format_rational, int, Rational};

pub fn format_duration(secs: &Rational) -> String {
    for (unit, suffix) in [(86400, "d"), (3600, "h"), (60, "m")] {
        let q = secs / int(unit);
        if q.is_integer() {
            return format!("{}{}", format_rational(&q), suffix);
        }
    }
    format!("{}s", format_rational(secs))
}

fn format_pacing(p: &Pacing) -> String {
    match p {
        Pacing::Periodic(d) => format!("@{}", format_duration(d)),
        Pacing::EventBased(set) if set.len() == 1 => format!("@{}", set.iter().next().unwrap()),
        Pacing::EventBased(set) => format!("@({})", set.iter().cloned().collect::<Vec<_>>().join(" & ")),
    }
}

pub fn render_specification(spec: &Specification) -> String {
    let mut out = String::new();
    if spec.group_size != 1 {
        writeln!(out, "#![group_size = {}]", spec.group_size).unwrap();
    }
    for i in &spec.inputs {
        write!(out, "input {} : {}", i.name, i.ty).unwrap();
        if let Some((lo, hi)) = &i.range {
            write!(out, " range [{}, {}]", format_rational(lo), format_rational(hi)).unwrap();
        }
        out.push('\n');
    }
    for o in &spec.outputs {
        if o.public {
            out.push_str("#[public]\n");
        }
        write!(out, "output {}", o.name).unwrap();
        if let Some(p) = &o.pacing {
            write!(out, " {}", format_pacing(p)).unwrap();
        }
        out.push_str(" := ");
        match &o.body {
            OutputBody::Expr(e) => out.push_str(&render_expr(e)),
            OutputBody::Tuple(m) => write!(out, "({})", m.join(", ")).unwrap(),
        }
        out.push('\n');
    }
    out
}

const ITE: u8 = 0;
const ADD: u8 = 1;
const MUL: u8 = 2;
const UNARY: u8 = 3;
const ATOM: u8 = 4;

fn level(e: &StreamExpr) -> u8 {
    match e {
        StreamExpr::Ite { .. } => ITE,
        StreamExpr::Bin { op: BinOp::Add | BinOp::Sub, .. } => ADD,
        StreamExpr::Bin { op: BinOp::Mul | BinOp::Div, .. } => MUL,
        StreamExpr::Const(c) if c.is_negative() => UNARY,
        _ => ATOM,
    }
}

fn at(e: &StreamExpr, min: u8) -> String {
    let s = render_expr(e);
    if level(e) < min {
        format!("({s})")
    } else {
        s
    }
}

pub fn render_expr(e: &StreamExpr) -> String {
    match e {
        StreamExpr::Const(c) => format_rational(c),
        StreamExpr::Sync(s) => s.clone(),
        StreamExpr::Offset { stream, by } => format!("{stream}.offset(by: -{by})"),
        StreamExpr::Hold { stream, bound: HoldBound::Unbounded } => format!("{stream}.hold()"),
        StreamExpr::Hold { stream, bound: HoldBound::Reads(k) } => format!("{stream}.hold(for: {k})"),
        StreamExpr::Aggregate { stream, window, func } => {
            format!("{stream}.aggregate(over: {}, using: {})", render_window(window), func.keyword())
        }
        StreamExpr::Tree(t) => {
            let mut s = format!(
                "{}.tree_aggregate(over: {}, using: {}, sensitivity: {}, epsilon: {}",
                t.stream,
                render_window(&t.window),
                t.func.keyword(),
                format_rational(&t.sensitivity),
                format_rational(&t.epsilon)
            );
            if t.renormalize {
                s.push_str(", renormalize: true");
            }
            s.push(')');
            s
        }
        StreamExpr::Laplace { scale } => format!("laplace({})", format_rational(scale)),
        StreamExpr::Default { expr, fallback } => format!("{}.defaults(to: {})", at(expr, ATOM), render_expr(fallback)),
        StreamExpr::Clamp { expr, lo, hi } => {
            format!("clamp({}, {}, {})", render_expr(expr), format_rational(lo), format_rational(hi))
        }
        StreamExpr::Ite { cond, then, otherwise } => {
            let mut s = format!(
                "if {} {} {} then {}",
                at(&cond.lhs, ADD),
                cond.op.symbol(),
                at(&cond.rhs, ADD),
                at(then, ADD)
            );
            if let Some(o) = otherwise {
                write!(s, " else {}", render_expr(o)).unwrap();
            }
            s
        }
        StreamExpr::Bin { op: BinOp::Min, lhs, rhs } => format!("min({}, {})", render_expr(lhs), render_expr(rhs)),
        StreamExpr::Bin { op: BinOp::Max, lhs, rhs } => format!("max({}, {})", render_expr(lhs), render_expr(rhs)),
        StreamExpr::Bin { op, lhs, rhs } => {
            let (sym, l, r) = match op {
                BinOp::Add => ("+", ADD, MUL),
                BinOp::Sub => ("-", ADD, MUL),
                BinOp::Mul => ("*", MUL, UNARY),
                _ => ("/", MUL, UNARY),
            };
            format!("{} {} {}", at(lhs, l), sym, at(rhs, r))
        }
    }
}

fn render_window(w: &Window) -> String {
    match w {
        Window::Span(d) => format_duration(d),
        Window::All => "all".into(),
    }
}
