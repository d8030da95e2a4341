use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Component, Path};

use serde_json::Value;

use super::template::{self, OUTDIR};
use super::{is_identifier, Capture, Kind, PortType, Source, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    InvalidIdentifier,
    DuplicateId,
    DuplicatePort,
    DanglingReference,
    PlaceholderMismatch,
    InvalidCapture,
    InvalidDefault,
    TypeMismatch,
    Scatter,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Steps the diagnostic is about; for cycles, every step on the cycle in order.
    pub steps: Vec<String>,
    pub message: String,
}

impl Diagnostic {
    fn new(kind: DiagnosticKind, steps: Vec<String>, message: impl Into<String>) -> Self {
        Diagnostic { kind, steps, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Checks every structural invariant of a workflow. An empty result means the
/// workflow is a well-formed DAG and can be handed to the engine.
pub fn validate(w: &Workflow) -> Vec<Diagnostic> {
    use DiagnosticKind::*;
    let mut diags = Vec::new();

    let mut seen_inputs = HashSet::new();
    for input in &w.inputs {
        if !is_identifier(&input.name) {
            diags.push(Diagnostic::new(InvalidIdentifier, vec![], format!("invalid input name `{}`", input.name)));
        }
        if !seen_inputs.insert(input.name.as_str()) {
            diags.push(Diagnostic::new(DuplicatePort, vec![], format!("duplicate workflow input `{}`", input.name)));
        }
        match &input.default {
            None => diags.push(Diagnostic::new(
                InvalidDefault,
                vec![],
                format!("workflow input `{}` has no default", input.name),
            )),
            Some(value) if !default_matches(value, input.port_type) => {
                diags.push(Diagnostic::new(
                    InvalidDefault,
                    vec![],
                    format!("default of workflow input `{}` is not a {}", input.name, input.port_type),
                ))
            }
            Some(_) => {}
        }
    }

    let mut ids = HashSet::new();
    for step in &w.steps {
        let one = || vec![step.id.clone()];
        if !is_identifier(&step.id) || step.id == "inputs" {
            diags.push(Diagnostic::new(InvalidIdentifier, one(), format!("invalid step id `{}`", step.id)));
        }
        if !ids.insert(step.id.as_str()) {
            diags.push(Diagnostic::new(DuplicateId, one(), format!("duplicate step id `{}`", step.id)));
        }

        let mut names = HashSet::new();
        for port in &step.inputs {
            if !is_identifier(&port.name) || port.name == OUTDIR {
                diags.push(Diagnostic::new(
                    InvalidIdentifier,
                    one(),
                    format!("step `{}`: invalid input port name `{}`", step.id, port.name),
                ));
            }
            if !names.insert(port.name.as_str()) {
                diags.push(Diagnostic::new(
                    DuplicatePort,
                    one(),
                    format!("step `{}`: duplicate input port `{}`", step.id, port.name),
                ));
            }
            match w.source_type(&port.from) {
                None => diags.push(Diagnostic::new(
                    DanglingReference,
                    one(),
                    format!("step `{}` input `{}` references unknown `{}`", step.id, port.name, port.from),
                )),
                Some(src) if src.kind != port.port_type.kind || src.list_depth > port.port_type.list_depth => {
                    diags.push(Diagnostic::new(
                        TypeMismatch,
                        one(),
                        format!(
                            "step `{}` input `{}` has type {} but `{}` produces {}",
                            step.id, port.name, port.port_type, port.from, src
                        ),
                    ))
                }
                Some(_) => {}
            }
        }

        let mut out_names = HashSet::new();
        for port in &step.outputs {
            if !is_identifier(&port.name) {
                diags.push(Diagnostic::new(
                    InvalidIdentifier,
                    one(),
                    format!("step `{}`: invalid output port name `{}`", step.id, port.name),
                ));
            }
            if !out_names.insert(port.name.as_str()) {
                diags.push(Diagnostic::new(
                    DuplicatePort,
                    one(),
                    format!("step `{}`: duplicate output port `{}`", step.id, port.name),
                ));
            }
            if let Capture::File(path) = &port.capture {
                if !is_confined_relative(path) {
                    diags.push(Diagnostic::new(
                        InvalidCapture,
                        one(),
                        format!("step `{}` output `{}`: capture path `{path}` must be relative without `..`", step.id, port.name),
                    ));
                }
            }
            if port.port_type.kind == Kind::File && port.port_type.is_list() {
                diags.push(Diagnostic::new(
                    InvalidCapture,
                    one(),
                    format!("step `{}` output `{}`: a captured file cannot be a list", step.id, port.name),
                ));
            }
        }

        match template::placeholders(&step.command) {
            Err(e) => diags.push(Diagnostic::new(
                PlaceholderMismatch,
                one(),
                format!("step `{}`: {e}", step.id),
            )),
            Ok(placeholders) => {
                for name in placeholders {
                    if name != OUTDIR && step.input(&name).is_none() {
                        diags.push(Diagnostic::new(
                            PlaceholderMismatch,
                            one(),
                            format!("step `{}`: placeholder `{{{name}}}` names no input port", step.id),
                        ));
                    }
                }
            }
        }

        let mut scattered = HashSet::new();
        for name in &step.scatter {
            if !scattered.insert(name.as_str()) {
                diags.push(Diagnostic::new(Scatter, one(), format!("step `{}`: `{name}` scattered twice", step.id)));
                continue;
            }
            match step.input(name) {
                None => diags.push(Diagnostic::new(
                    Scatter,
                    one(),
                    format!("step `{}`: scatter port `{name}` is not an input", step.id),
                )),
                Some(port) if !port.port_type.is_list() => diags.push(Diagnostic::new(
                    Scatter,
                    one(),
                    format!("step `{}`: scatter port `{name}` has non-list type {}", step.id, port.port_type),
                )),
                Some(_) => {}
            }
        }
    }

    for (name, port_ref) in &w.outputs {
        if w.step(&port_ref.step).and_then(|s| s.output(&port_ref.port)).is_none() {
            diags.push(Diagnostic::new(
                DanglingReference,
                vec![],
                format!("workflow output `{name}` references unknown `{port_ref}`"),
            ));
        }
    }

    diags.extend(find_cycles(w).into_iter().map(|cycle| {
        let message = format!("dependency cycle: {}", cycle.join(" -> "));
        Diagnostic::new(Cycle, cycle, message)
    }));
    diags
}

fn default_matches(value: &Value, ty: PortType) -> bool {
    if ty.list_depth == 0 {
        return match ty.kind {
            Kind::Value => true,
            Kind::File => value.is_string(),
        };
    }
    let inner = PortType { kind: ty.kind, list_depth: ty.list_depth - 1 };
    value.as_array().is_some_and(|items| items.iter().all(|v| default_matches(v, inner)))
}

fn is_confined_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
        && p.components().any(|c| matches!(c, Component::Normal(_)))
}

/// Deduplicated `(producer, consumer)` edges in order of first appearance.
pub fn dependency_edges(w: &Workflow) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for step in &w.steps {
        for port in &step.inputs {
            if let Source::StepOutput { step: producer, .. } = &port.from {
                if w.step(producer).is_some() && seen.insert((producer.as_str(), step.id.as_str())) {
                    edges.push((producer.clone(), step.id.clone()));
                }
            }
        }
    }
    edges
}

/// Kahn's algorithm, ties broken by declaration order. Returns the steps left
/// over when the graph has a cycle.
pub fn topological_order(w: &Workflow) -> Result<Vec<String>, Vec<String>> {
    let index: HashMap<&str, usize> = w.steps.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut indegree = vec![0usize; w.steps.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); w.steps.len()];
    for (from, to) in dependency_edges(w) {
        let (f, t) = (index[from.as_str()], index[to.as_str()]);
        succ[f].push(t);
        indegree[t] += 1;
    }
    let mut ready: std::collections::BTreeSet<usize> =
        (0..w.steps.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(w.steps.len());
    while let Some(i) = ready.pop_first() {
        order.push(w.steps[i].id.clone());
        for &j in &succ[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() == w.steps.len() {
        Ok(order)
    } else {
        let done: HashSet<&String> = order.iter().collect();
        Err(w.steps.iter().map(|s| &s.id).filter(|id| !done.contains(id)).cloned().collect())
    }
}

/// One cycle per back edge found by an iterative depth-first search.
fn find_cycles(w: &Workflow) -> Vec<Vec<String>> {
    let index: HashMap<&str, usize> = w.steps.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let n = w.steps.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for step in &w.steps {
        let to = index[step.id.as_str()];
        for port in &step.inputs {
            if let Some(&from) = port.from.step().and_then(|p| index.get(p)) {
                if !succ[from].contains(&to) {
                    succ[from].push(to);
                }
            }
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let mut color = vec![Color::White; n];
    let mut cycles = Vec::new();
    for root in 0..n {
        if color[root] != Color::White {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = Color::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < succ[node].len() {
                let child = succ[node][*next];
                *next += 1;
                match color[child] {
                    Color::White => {
                        color[child] = Color::Grey;
                        stack.push((child, 0));
                    }
                    Color::Grey => {
                        let start = stack.iter().position(|&(v, _)| v == child).unwrap_or(0);
                        cycles.push(stack[start..].iter().map(|&(v, _)| w.steps[v].id.clone()).collect());
                    }
                    Color::Black => {}
                }
            } else {
                color[node] = Color::Black;
                stack.pop();
            }
        }
    }
    cycles
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{InPort, OutPort, Step};

    fn step(id: &str, deps: &[&str]) -> Step {
        Step {
            id: id.into(),
            command: "true".into(),
            shell: false,
            inputs: deps
                .iter()
                .enumerate()
                .map(|(i, d)| InPort {
                    name: format!("in{i}"),
                    port_type: PortType::VALUE,
                    from: Source::StepOutput { step: d.to_string(), port: "out".into() },
                })
                .collect(),
            outputs: vec![OutPort { name: "out".into(), port_type: PortType::VALUE, capture: Capture::Stdout }],
            scatter: vec![],
            scatter_method: Default::default(),
        }
    }

    fn wf(steps: Vec<Step>) -> Workflow {
        Workflow { name: "t".into(), inputs: vec![], steps, outputs: Default::default() }
    }

    #[test]
    fn chain_is_clean() {
        let w = wf(vec![step("A", &[]), step("B", &["A"]), step("C", &["B"])]);
        assert!(validate(&w).is_empty());
        assert_eq!(topological_order(&w).unwrap(), vec!["A", "B", "C"]);
    }

    #[test]
    fn two_cycle_names_both_steps() {
        let w = wf(vec![step("A", &["B"]), step("B", &["A"])]);
        let diags = validate(&w);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].kind, DiagnosticKind::Cycle);
        let mut members = diags[0].steps.clone();
        members.sort();
        assert_eq!(members, vec!["A", "B"]);
        assert!(topological_order(&w).is_err());
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let w = wf(vec![step("A", &["A"])]);
        let diags = validate(&w);
        assert_eq!(diags[0].steps, vec!["A"]);
    }

    #[test]
    fn edges_are_deduplicated() {
        let w = wf(vec![step("A", &[]), step("B", &["A", "A"])]);
        assert_eq!(dependency_edges(&w), vec![("A".to_string(), "B".to_string())]);
    }

    #[test]
    fn diamond_edges() {
        let w = wf(vec![step("A", &[]), step("B", &["A"]), step("C", &["A"]), step("D", &["B", "C"])]);
        let edges: HashSet<(String, String)> = dependency_edges(&w).into_iter().collect();
        let expected: HashSet<(String, String)> = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(edges, expected);
    }

    #[test]
    fn scatter_port_must_be_a_list() {
        let mut s = step("A", &[]);
        s.inputs.push(InPort {
            name: "x".into(),
            port_type: PortType::VALUE,
            from: Source::WorkflowInput("xs".into()),
        });
        s.scatter = vec!["x".into(), "missing".into()];
        let mut w = wf(vec![s]);
        w.inputs.push(crate::workflow::WorkflowInput {
            name: "xs".into(),
            port_type: PortType::VALUE,
            default: Some(serde_json::json!([1, 2])),
        });
        let kinds: Vec<_> = validate(&w).into_iter().map(|d| d.kind).collect();
        assert_eq!(kinds, vec![DiagnosticKind::Scatter, DiagnosticKind::Scatter]);
    }

    #[test]
    fn list_into_scalar_port_is_a_type_error() {
        let mut w = wf(vec![step("A", &[])]);
        w.inputs.push(crate::workflow::WorkflowInput {
            name: "xs".into(),
            port_type: PortType::VALUE.list_of(),
            default: Some(serde_json::json!([1])),
        });
        w.steps[0].inputs.push(InPort {
            name: "x".into(),
            port_type: PortType::VALUE,
            from: Source::WorkflowInput("xs".into()),
        });
        assert_eq!(validate(&w)[0].kind, DiagnosticKind::TypeMismatch);
    }
}
