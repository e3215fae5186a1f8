use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;

use crate::rational::{format_rational, Bound};
use crate::speclang::{AggrFunc, HoldBound, OutputBody, Specification, StreamExpr, Window};

use super::SemanticError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Output,
    /// A named group of outputs without a value of its own.
    Alias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub public: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Sync,
    Offset(u32),
    Hold(HoldBound),
    Window(Window, AggrFunc),
}

impl AccessKind {
    /// Whether the accessed value must be computed before the accessor within a timestamp.
    pub fn orders(&self) -> bool {
        matches!(self, AccessKind::Sync | AccessKind::Window(..))
    }
}

/// Edge from accessor `from` to accessed `to`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: AccessKind,
}

#[derive(Clone, Debug)]
pub struct DependencyGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    index: HashMap<String, usize>,
    order: Vec<usize>,
}

fn collect_accesses(e: &StreamExpr, out: &mut Vec<(String, AccessKind)>) {
    e.visit(&mut |n| {
        let item = match n {
            StreamExpr::Sync(s) => Some((s.clone(), AccessKind::Sync)),
            StreamExpr::Offset { stream, by } => Some((stream.clone(), AccessKind::Offset(*by))),
            StreamExpr::Hold { stream, bound } => Some((stream.clone(), AccessKind::Hold(bound.clone()))),
            StreamExpr::Aggregate { stream, window, func } => {
                Some((stream.clone(), AccessKind::Window(window.clone(), *func)))
            }
            StreamExpr::Tree(t) => Some((t.stream.clone(), AccessKind::Window(t.window.clone(), t.func))),
            _ => None,
        };
        if let Some(i) = item {
            if !out.contains(&i) {
                out.push(i);
            }
        }
    });
}

pub fn build_dependency_graph(spec: &Specification) -> Result<DependencyGraph, SemanticError> {
    let publics = spec.public_set();
    let mut nodes = vec![];
    for i in &spec.inputs {
        nodes.push(Node { name: i.name.clone(), kind: NodeKind::Input, public: false });
    }
    for o in &spec.outputs {
        let kind = match o.body {
            OutputBody::Expr(_) => NodeKind::Output,
            OutputBody::Tuple(_) => NodeKind::Alias,
        };
        let public = kind == NodeKind::Output && publics.contains(&o.name);
        nodes.push(Node { name: o.name.clone(), kind, public });
    }
    let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
    let mut edges = vec![];
    for o in &spec.outputs {
        let from = index[&o.name];
        let mut acc = vec![];
        match &o.body {
            OutputBody::Expr(e) => collect_accesses(e, &mut acc),
            OutputBody::Tuple(m) => acc.extend(m.iter().map(|s| (s.clone(), AccessKind::Sync))),
        }
        for (name, kind) in acc {
            let to = *index.get(&name).ok_or_else(|| SemanticError::UnknownStream(name.clone()))?;
            edges.push(Edge { from, to, kind });
        }
    }
    let mut g = DependencyGraph { nodes, edges, index, order: vec![] };
    g.order = g.evaluation_order()?;
    Ok(g)
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.nodes[id].name
    }

    pub fn is_input(&self, id: usize) -> bool {
        self.nodes[id].kind == NodeKind::Input
    }

    pub fn publics(&self) -> BTreeSet<usize> {
        (0..self.len()).filter(|&i| self.nodes[i].public).collect()
    }

    pub fn inputs(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_input(i)).collect()
    }

    /// Accessed streams of `id` (deduplicated, declaration order).
    pub fn dependencies(&self, id: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.edges.iter().filter(|e| e.from == id).map(|e| e.to).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Streams accessing `id`.
    pub fn consumers(&self, id: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.edges.iter().filter(|e| e.to == id).map(|e| e.from).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn edges_from(&self, id: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == id)
    }

    /// Order in which streams are computed within one timestamp.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Topological order over Sync/Window edges, plus Hold edges that do not close a cycle.
    fn evaluation_order(&self) -> Result<Vec<usize>, SemanticError> {
        let n = self.len();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for e in &self.edges {
            if e.kind.orders() {
                adj[e.from].insert(e.to);
            }
        }
        if let Some(cycle) = find_cycle(&adj) {
            return Err(SemanticError::IllegalCycle(cycle.iter().map(|&i| self.name(i).to_string()).collect()));
        }
        for e in &self.edges {
            if matches!(e.kind, AccessKind::Hold(_)) && e.from != e.to && !reaches(&adj, e.to, e.from) {
                adj[e.from].insert(e.to);
            }
        }
        // dependencies first, ties by declaration order
        let mut indeg: Vec<usize> = (0..n).map(|i| adj[i].len()).collect();
        let mut rev: Vec<Vec<usize>> = vec![vec![]; n];
        for (i, a) in adj.iter().enumerate() {
            for &j in a {
                rev[j].push(i);
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = vec![];
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &k in &rev[i] {
                indeg[k] -= 1;
                if indeg[k] == 0 {
                    ready.insert(k);
                }
            }
        }
        debug_assert_eq!(order.len(), n);
        Ok(order)
    }

    /// Strongly connected components over all edges; `true` for nodes on any cycle.
    pub fn cyclic_nodes(&self) -> Vec<bool> {
        let n = self.len();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for e in &self.edges {
            adj[e.from].insert(e.to);
        }
        (0..n).map(|i| adj[i].iter().any(|&j| j == i || reaches(&adj, j, i))).collect()
    }

    /// Graphviz rendering with access labels and optional bound annotations.
    pub fn to_dot(&self, bounds: Option<&HashMap<String, Bound>>) -> String {
        let mut s = String::from("digraph spec {\n  rankdir=BT;\n");
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::Input => "box",
                NodeKind::Output => "ellipse",
                NodeKind::Alias => "note",
            };
            let mut attrs = format!("shape={shape}");
            if n.public {
                attrs.push_str(", peripheries=2");
            }
            if let Some(b) = bounds.and_then(|m| m.get(&n.name)) {
                write!(attrs, ", xlabel=\"{b}\"").unwrap();
            }
            writeln!(s, "  \"{}\" [{}];", n.name, attrs).unwrap();
        }
        for e in &self.edges {
            let label = match &e.kind {
                AccessKind::Sync => "0".to_string(),
                AccessKind::Offset(o) => format!("-{o}"),
                AccessKind::Hold(HoldBound::Unbounded) => "hold".to_string(),
                AccessKind::Hold(HoldBound::Reads(k)) => format!("hold {k}"),
                AccessKind::Window(Window::Span(w), f) => format!("{}s {}", format_rational(w), f.keyword()),
                AccessKind::Window(Window::All, f) => format!("all {}", f.keyword()),
            };
            writeln!(s, "  \"{}\" -> \"{}\" [label=\"{}\"];", self.name(e.from), self.name(e.to), label).unwrap();
        }
        s.push_str("}\n");
        s
    }
}

fn reaches(adj: &[BTreeSet<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![from];
    while let Some(i) = stack.pop() {
        if i == to {
            return true;
        }
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        stack.extend(adj[i].iter().copied());
    }
    false
}

fn find_cycle(adj: &[BTreeSet<usize>]) -> Option<Vec<usize>> {
    // 0 = new, 1 = on stack, 2 = done
    fn dfs(i: usize, adj: &[BTreeSet<usize>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[i] = 1;
        stack.push(i);
        for &j in &adj[i] {
            if state[j] == 1 {
                let k = stack.iter().position(|&x| x == j).unwrap();
                return Some(stack[k..].to_vec());
            }
            if state[j] == 0 {
                if let Some(c) = dfs(j, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[i] = 2;
        None
    }
    let mut state = vec![0u8; adj.len()];
    for i in 0..adj.len() {
        if state[i] == 0 {
            if let Some(c) = dfs(i, adj, &mut state, &mut vec![]) {
                return Some(c);
            }
        }
    }
    None
}
