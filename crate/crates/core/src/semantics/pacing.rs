use std::collections::BTreeSet;

use crate::rational::{format_rational, Rational};
use crate::speclang::{OutputBody, Pacing, Specification};

use super::graph::{AccessKind, DependencyGraph, NodeKind};
use super::SemanticError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResolvedPacing {
    Input,
    EventBased(BTreeSet<String>),
    Periodic(Rational),
    Alias,
}

impl ResolvedPacing {
    pub fn period(&self) -> Option<&Rational> {
        match self {
            ResolvedPacing::Periodic(d) => Some(d),
            _ => None,
        }
    }

    fn triggers(&self, name: &str) -> Option<BTreeSet<String>> {
        match self {
            ResolvedPacing::Input => Some(BTreeSet::from([name.to_string()])),
            ResolvedPacing::EventBased(s) => Some(s.clone()),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ResolvedPacing::Input => "input".into(),
            ResolvedPacing::EventBased(s) => format!("event-based on {}", s.iter().cloned().collect::<Vec<_>>().join(" & ")),
            ResolvedPacing::Periodic(d) => format!("periodic every {}s", format_rational(d)),
            ResolvedPacing::Alias => "alias".into(),
        }
    }
}

/// Resolves every stream's pacing (indexed by graph node id) and checks the typing rules.
pub fn check_pacing_types(spec: &Specification, graph: &DependencyGraph) -> Result<Vec<ResolvedPacing>, SemanticError> {
    let n = graph.len();
    let mut resolved: Vec<Option<ResolvedPacing>> = vec![None; n];
    for id in 0..n {
        let node = &graph.nodes[id];
        resolved[id] = match node.kind {
            NodeKind::Input => Some(ResolvedPacing::Input),
            NodeKind::Alias => Some(ResolvedPacing::Alias),
            NodeKind::Output => match &spec.output(&node.name).unwrap().pacing {
                Some(Pacing::EventBased(s)) => Some(ResolvedPacing::EventBased(s.clone())),
                Some(Pacing::Periodic(d)) => Some(ResolvedPacing::Periodic(d.clone())),
                None => None,
            },
        };
    }
    infer(graph, &mut resolved)?;
    let resolved: Vec<ResolvedPacing> = resolved.into_iter().map(|p| p.unwrap()).collect();

    for o in &spec.outputs {
        let OutputBody::Expr(e) = &o.body else { continue };
        let x = graph.id(&o.name).unwrap();
        if e.contains_window() && resolved[x].period().is_none() {
            return Err(SemanticError::WindowInEventBased(o.name.clone()));
        }
    }
    for edge in &graph.edges {
        if !matches!(edge.kind, AccessKind::Sync | AccessKind::Offset(_)) || edge.from == edge.to {
            continue;
        }
        let (x, y) = (edge.from, edge.to);
        if graph.nodes[x].kind == NodeKind::Alias {
            continue;
        }
        let ok = match (&resolved[x], &resolved[y]) {
            (ResolvedPacing::EventBased(sx), target) => match target.triggers(graph.name(y)) {
                Some(sy) => sy.is_subset(sx),
                None => false,
            },
            (ResolvedPacing::Periodic(dx), ResolvedPacing::Periodic(dy)) => (dx / dy).is_integer(),
            _ => false,
        };
        if !ok {
            return Err(SemanticError::PacingMismatch {
                from: graph.name(x).to_string(),
                to: graph.name(y).to_string(),
                reason: format!(
                    "`{}` is {} but accesses `{}` which is {}",
                    graph.name(x),
                    resolved[x].describe(),
                    graph.name(y),
                    resolved[y].describe()
                ),
            });
        }
    }
    Ok(resolved)
}

fn infer(graph: &DependencyGraph, resolved: &mut [Option<ResolvedPacing>]) -> Result<(), SemanticError> {
    loop {
        let mut progress = false;
        let mut pending = false;
        for x in 0..graph.len() {
            if resolved[x].is_some() {
                continue;
            }
            pending = true;
            let sync: Vec<usize> = graph
                .edges_from(x)
                .filter(|e| matches!(e.kind, AccessKind::Sync | AccessKind::Offset(_)) && e.to != x)
                .map(|e| e.to)
                .collect();
            let targets = if sync.is_empty() {
                graph
                    .edges_from(x)
                    .filter(|e| matches!(e.kind, AccessKind::Hold(_) | AccessKind::Window(..)) && e.to != x)
                    .map(|e| e.to)
                    .collect()
            } else {
                sync
            };
            if targets.is_empty() {
                return Err(SemanticError::UnresolvableInference(graph.name(x).to_string()));
            }
            if targets.iter().any(|&y| resolved[y].is_none()) {
                continue;
            }
            let mut set = BTreeSet::new();
            for &y in &targets {
                match resolved[y].as_ref().unwrap().triggers(graph.name(y)) {
                    Some(s) => set.extend(s),
                    None => return Err(SemanticError::UnresolvableInference(graph.name(x).to_string())),
                }
            }
            resolved[x] = Some(ResolvedPacing::EventBased(set));
            progress = true;
        }
        if !pending {
            return Ok(());
        }
        if !progress {
            let stuck = (0..graph.len()).find(|&x| resolved[x].is_none()).unwrap();
            return Err(SemanticError::UnresolvableInference(graph.name(stuck).to_string()));
        }
    }
}
