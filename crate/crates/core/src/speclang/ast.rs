use std::collections::BTreeSet;

use crate::rational::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggrFunc {
    Sum,
    Avg,
    Count,
    Last,
}

impl AggrFunc {
    pub fn keyword(self) -> &'static str {
        match self {
            AggrFunc::Sum => "sum",
            AggrFunc::Avg => "avg",
            AggrFunc::Count => "count",
            AggrFunc::Last => "last",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum HoldBound {
    Unbounded,
    Reads(u32),
}

/// Window length in seconds, or the whole history (compiler output only).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Window {
    Span(Rational),
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Cmp {
    pub op: CmpOp,
    pub lhs: StreamExpr,
    pub rhs: StreamExpr,
}

/// Tree-mechanism release of an aggregation; emitted by the compiler.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TreeAggregate {
    pub stream: String,
    pub window: Window,
    pub func: AggrFunc,
    pub sensitivity: Rational,
    pub epsilon: Rational,
    pub renormalize: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum StreamExpr {
    Const(Rational),
    Sync(String),
    Offset { stream: String, by: u32 },
    Hold { stream: String, bound: HoldBound },
    Aggregate { stream: String, window: Window, func: AggrFunc },
    Default { expr: Box<StreamExpr>, fallback: Box<StreamExpr> },
    Ite { cond: Box<Cmp>, then: Box<StreamExpr>, otherwise: Option<Box<StreamExpr>> },
    Bin { op: BinOp, lhs: Box<StreamExpr>, rhs: Box<StreamExpr> },
    Clamp { expr: Box<StreamExpr>, lo: Rational, hi: Rational },
    Laplace { scale: Rational },
    Tree(TreeAggregate),
}

impl StreamExpr {
    pub fn bin(op: BinOp, lhs: StreamExpr, rhs: StreamExpr) -> Self {
        StreamExpr::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn default_to(expr: StreamExpr, fallback: StreamExpr) -> Self {
        StreamExpr::Default { expr: Box::new(expr), fallback: Box::new(fallback) }
    }

    /// Direct children, conditions included.
    pub fn children(&self) -> Vec<&StreamExpr> {
        match self {
            StreamExpr::Default { expr, fallback } => vec![expr, fallback],
            StreamExpr::Ite { cond, then, otherwise } => {
                let mut v = vec![&cond.lhs, &cond.rhs, then.as_ref()];
                if let Some(o) = otherwise {
                    v.push(o);
                }
                v
            }
            StreamExpr::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            StreamExpr::Clamp { expr, .. } => vec![expr],
            _ => vec![],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut StreamExpr> {
        match self {
            StreamExpr::Default { expr, fallback } => vec![expr, fallback],
            StreamExpr::Ite { cond, then, otherwise } => {
                let Cmp { lhs, rhs, .. } = cond.as_mut();
                let mut v = vec![lhs, rhs, then.as_mut()];
                if let Some(o) = otherwise {
                    v.push(o);
                }
                v
            }
            StreamExpr::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            StreamExpr::Clamp { expr, .. } => vec![expr],
            _ => vec![],
        }
    }

    /// The stream accessed by this node, if it is an access.
    pub fn accessed(&self) -> Option<&str> {
        match self {
            StreamExpr::Sync(s)
            | StreamExpr::Offset { stream: s, .. }
            | StreamExpr::Hold { stream: s, .. }
            | StreamExpr::Aggregate { stream: s, .. } => Some(s),
            StreamExpr::Tree(t) => Some(&t.stream),
            _ => None,
        }
    }

    pub fn accessed_mut(&mut self) -> Option<&mut String> {
        match self {
            StreamExpr::Sync(s)
            | StreamExpr::Offset { stream: s, .. }
            | StreamExpr::Hold { stream: s, .. }
            | StreamExpr::Aggregate { stream: s, .. } => Some(s),
            StreamExpr::Tree(t) => Some(&mut t.stream),
            _ => None,
        }
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a StreamExpr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut StreamExpr)) {
        f(self);
        for c in self.children_mut() {
            c.visit_mut(f);
        }
    }

    /// Whether a sliding (duration) window occurs.
    pub fn contains_window(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| match e {
            StreamExpr::Aggregate { window: Window::Span(_), .. } => found = true,
            StreamExpr::Tree(t) if matches!(t.window, Window::Span(_)) => found = true,
            _ => {}
        });
        found
    }

    pub fn contains_compiler_forms(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| match e {
            StreamExpr::Laplace { .. } | StreamExpr::Tree(_) => found = true,
            StreamExpr::Aggregate { window: Window::All, .. } => found = true,
            _ => {}
        });
        found
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Pacing {
    EventBased(BTreeSet<String>),
    Periodic(Rational),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputDecl {
    pub name: String,
    pub ty: String,
    /// `None` means unbounded.
    pub range: Option<(Rational, Rational)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputBody {
    Expr(StreamExpr),
    /// A named group of outputs; not a value stream.
    Tuple(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputDecl {
    pub name: String,
    pub pacing: Option<Pacing>,
    pub body: OutputBody,
    pub public: bool,
}

impl OutputDecl {
    pub fn expr(&self) -> Option<&StreamExpr> {
        match &self.body {
            OutputBody::Expr(e) => Some(e),
            OutputBody::Tuple(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Specification {
    pub inputs: Vec<InputDecl>,
    pub outputs: Vec<OutputDecl>,
    pub group_size: u32,
}

impl Default for Specification {
    fn default() -> Self {
        Specification { inputs: vec![], outputs: vec![], group_size: 1 }
    }
}

impl Specification {
    pub fn input(&self, name: &str) -> Option<&InputDecl> {
        self.inputs.iter().find(|i| i.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&OutputDecl> {
        self.outputs.iter().find(|o| o.name == name)
    }

    pub fn output_mut(&mut self, name: &str) -> Option<&mut OutputDecl> {
        self.outputs.iter_mut().find(|o| o.name == name)
    }

    pub fn is_input(&self, name: &str) -> bool {
        self.input(name).is_some()
    }

    pub fn stream_names(&self) -> Vec<String> {
        self.inputs.iter().map(|i| i.name.clone()).chain(self.outputs.iter().map(|o| o.name.clone())).collect()
    }

    /// Value outputs that are public, directly or as members of a public tuple.
    pub fn public_set(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        for o in &self.outputs {
            match &o.body {
                OutputBody::Expr(_) if o.public => {
                    set.insert(o.name.clone());
                }
                OutputBody::Tuple(members) if o.public => {
                    set.extend(members.iter().cloned());
                }
                _ => {}
            }
        }
        set
    }

    pub fn fresh_name(&self, base: &str) -> String {
        let taken = self.stream_names();
        if !taken.iter().any(|n| n == base) {
            return base.to_string();
        }
        (2..).map(|i| format!("{base}{i}")).find(|c| !taken.contains(c)).expect("unbounded counter")
    }
}
