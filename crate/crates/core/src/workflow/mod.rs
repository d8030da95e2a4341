//! Static workflow model: steps, ports and their wiring.
//!
//! A workflow is a directed acyclic graph whose nodes are [`Step`]s and whose
//! edges are port wirings (`in.from` references). Parsing and serialization
//! live in [`parse`], structural checks in [`validate`].

mod parse;
pub mod template;
mod validate;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde_json::Value;

pub use parse::{parse_workflow, to_yaml, ParseError};
pub use validate::{dependency_edges, topological_order, validate, Diagnostic, DiagnosticKind};

/// Element kind of a port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    /// Inline JSON datum that travels inside tokens.
    Value,
    /// File that lives on an execution site and is staged by the data manager.
    File,
}

/// Port type: a base kind wrapped in zero or more list levels (`file[]`, `value[][]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortType {
    pub kind: Kind,
    pub list_depth: usize,
}

impl PortType {
    pub const VALUE: PortType = PortType { kind: Kind::Value, list_depth: 0 };
    pub const FILE: PortType = PortType { kind: Kind::File, list_depth: 0 };

    pub fn list_of(self) -> PortType {
        PortType { kind: self.kind, list_depth: self.list_depth + 1 }
    }

    pub fn is_list(&self) -> bool {
        self.list_depth > 0
    }
}

impl fmt::Display for PortType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            Kind::Value => f.write_str("value")?,
            Kind::File => f.write_str("file")?,
        }
        for _ in 0..self.list_depth {
            f.write_str("[]")?;
        }
        Ok(())
    }
}

impl FromStr for PortType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut base = s.trim();
        let mut list_depth = 0;
        while let Some(inner) = base.strip_suffix("[]") {
            base = inner;
            list_depth += 1;
        }
        let kind = match base {
            "value" => Kind::Value,
            "file" => Kind::File,
            other => return Err(format!("unknown port type `{other}`")),
        };
        Ok(PortType { kind, list_depth })
    }
}

/// Where an input port takes its token from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    /// `inputs.<name>`
    WorkflowInput(String),
    /// `<step>.<port>`
    StepOutput { step: String, port: String },
}

impl Source {
    pub fn step(&self) -> Option<&str> {
        match self {
            Source::WorkflowInput(_) => None,
            Source::StepOutput { step, .. } => Some(step),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::WorkflowInput(name) => write!(f, "inputs.{name}"),
            Source::StepOutput { step, port } => write!(f, "{step}.{port}"),
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, tail) = s
            .split_once('.')
            .ok_or_else(|| format!("reference `{s}` is not of the form `step.port`"))?;
        if !is_identifier(head) || !is_identifier(tail) {
            return Err(format!("reference `{s}` is not of the form `step.port`"));
        }
        if head == "inputs" {
            Ok(Source::WorkflowInput(tail.to_string()))
        } else {
            Ok(Source::StepOutput { step: head.to_string(), port: tail.to_string() })
        }
    }
}

/// Reference to a step output port, used by workflow outputs.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortRef {
    pub step: String,
    pub port: String,
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.step, self.port)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowInput {
    pub name: String,
    pub port_type: PortType,
    pub default: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InPort {
    pub name: String,
    pub port_type: PortType,
    pub from: Source,
}

/// How a step output is captured once the command exits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Capture {
    Stdout,
    /// Path relative to the instance output directory.
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutPort {
    pub name: String,
    pub port_type: PortType,
    pub capture: Capture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScatterMethod {
    #[default]
    Dot,
    Cross,
}

impl ScatterMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScatterMethod::Dot => "dot",
            ScatterMethod::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub id: String,
    pub command: String,
    pub shell: bool,
    pub inputs: Vec<InPort>,
    pub outputs: Vec<OutPort>,
    pub scatter: Vec<String>,
    pub scatter_method: ScatterMethod,
}

impl Step {
    pub fn input(&self, name: &str) -> Option<&InPort> {
        self.inputs.iter().find(|p| p.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&OutPort> {
        self.outputs.iter().find(|p| p.name == name)
    }

    pub fn is_scattered(&self) -> bool {
        !self.scatter.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workflow {
    pub name: String,
    pub inputs: Vec<WorkflowInput>,
    pub steps: Vec<Step>,
    pub outputs: IndexMap<String, PortRef>,
}

impl Workflow {
    pub fn step(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    pub fn input(&self, name: &str) -> Option<&WorkflowInput> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// Type of the datum a [`Source`] produces, if it resolves.
    pub fn source_type(&self, source: &Source) -> Option<PortType> {
        match source {
            Source::WorkflowInput(name) => self.input(name).map(|i| i.port_type),
            Source::StepOutput { step, port } => {
                self.step(step).and_then(|s| s.output(port)).map(|p| p.port_type)
            }
        }
    }
}

/// `[A-Za-z_][A-Za-z0-9_-]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_type_round_trips_through_text() {
        for text in ["value", "file", "value[]", "file[][]"] {
            let t: PortType = text.parse().unwrap();
            assert_eq!(t.to_string(), text);
        }
        assert!("blob".parse::<PortType>().is_err());
    }

    #[test]
    fn source_references() {
        assert_eq!(
            "inputs.xs".parse::<Source>().unwrap(),
            Source::WorkflowInput("xs".into())
        );
        assert_eq!(
            "a.out".parse::<Source>().unwrap(),
            Source::StepOutput { step: "a".into(), port: "out".into() }
        );
        assert!("a.b.c".parse::<Source>().is_err());
        assert!("nodot".parse::<Source>().is_err());
    }
}
