use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::validate::{validate, DiagnosticKind};
use super::{
    Capture, InPort, OutPort, PortRef, PortType, ScatterMethod, Source, Step, Workflow,
    WorkflowInput,
};

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{0}")]
    Schema(String),
    #[error("duplicate step id `{0}`")]
    DuplicateId(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("placeholder mismatch: {0}")]
    PlaceholderMismatch(String),
    #[error("invalid workflow: {0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkflow {
    name: String,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    inputs: IndexMap<String, RawInput>,
    #[serde(default)]
    steps: Vec<RawStep>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    outputs: IndexMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    #[serde(rename = "type")]
    ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    id: String,
    command: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    shell: bool,
    #[serde(rename = "in", default, skip_serializing_if = "IndexMap::is_empty")]
    inputs: IndexMap<String, RawIn>,
    #[serde(rename = "out", default, skip_serializing_if = "IndexMap::is_empty")]
    outputs: IndexMap<String, RawOut>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    scatter: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scatter_method: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIn {
    from: String,
    #[serde(rename = "type", default = "default_type")]
    ty: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOut {
    #[serde(rename = "type", default = "default_type")]
    ty: String,
    capture: String,
}

fn default_type() -> String {
    "value".to_string()
}

fn port_type(ty: &str, context: &str) -> Result<PortType, ParseError> {
    ty.parse().map_err(|e| ParseError::Schema(format!("{context}: {e}")))
}

/// Parses a workflow file and checks that every reference resolves.
///
/// Cycles and scatter typing are left to [`validate`].
pub fn parse_workflow(text: &str) -> Result<Workflow, ParseError> {
    let raw: RawWorkflow = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        ParseError::Syntax { line, column, message: e.to_string() }
    })?;
    let workflow = from_raw(raw)?;
    for diag in validate(&workflow) {
        let err = match diag.kind {
            DiagnosticKind::DuplicateId => ParseError::DuplicateId(diag.steps.join(", ")),
            DiagnosticKind::DanglingReference => ParseError::DanglingReference(diag.message),
            DiagnosticKind::PlaceholderMismatch => ParseError::PlaceholderMismatch(diag.message),
            DiagnosticKind::InvalidIdentifier
            | DiagnosticKind::DuplicatePort
            | DiagnosticKind::InvalidCapture
            | DiagnosticKind::InvalidDefault => ParseError::Invalid(diag.message),
            DiagnosticKind::Cycle | DiagnosticKind::Scatter | DiagnosticKind::TypeMismatch => {
                continue
            }
        };
        return Err(err);
    }
    Ok(workflow)
}

fn from_raw(raw: RawWorkflow) -> Result<Workflow, ParseError> {
    let mut inputs = Vec::new();
    for (name, input) in raw.inputs {
        let port_type = port_type(&input.ty, &format!("input `{name}`"))?;
        inputs.push(WorkflowInput { name, port_type, default: input.default });
    }

    let mut steps = Vec::new();
    for raw_step in raw.steps {
        let id = raw_step.id;
        let mut step_inputs = Vec::new();
        for (name, port) in raw_step.inputs {
            let context = format!("step `{id}` input `{name}`");
            let from: Source = port
                .from
                .parse()
                .map_err(|e: String| ParseError::Schema(format!("{context}: {e}")))?;
            step_inputs.push(InPort { port_type: port_type(&port.ty, &context)?, name, from });
        }
        let mut step_outputs = Vec::new();
        for (name, port) in raw_step.outputs {
            let context = format!("step `{id}` output `{name}`");
            let capture = match port.capture.as_str() {
                "stdout" => Capture::Stdout,
                path => Capture::File(path.to_string()),
            };
            step_outputs.push(OutPort { port_type: port_type(&port.ty, &context)?, name, capture });
        }
        let scatter_method = match raw_step.scatter_method.as_deref() {
            None | Some("dot") => ScatterMethod::Dot,
            Some("cross") => ScatterMethod::Cross,
            Some(other) => {
                return Err(ParseError::Schema(format!(
                    "step `{id}`: scatter_method must be `dot` or `cross`, got `{other}`"
                )))
            }
        };
        steps.push(Step {
            id,
            command: raw_step.command,
            shell: raw_step.shell,
            inputs: step_inputs,
            outputs: step_outputs,
            scatter: raw_step.scatter,
            scatter_method,
        });
    }

    let mut outputs = IndexMap::new();
    for (name, reference) in raw.outputs {
        let port_ref = match reference.parse::<Source>() {
            Ok(Source::StepOutput { step, port }) => PortRef { step, port },
            _ => {
                return Err(ParseError::Schema(format!(
                    "output `{name}`: `{reference}` must reference a step output"
                )))
            }
        };
        outputs.insert(name, port_ref);
    }

    Ok(Workflow { name: raw.name, inputs, steps, outputs })
}

/// Serializes a workflow back to the YAML file format.
pub fn to_yaml(workflow: &Workflow) -> String {
    let raw = RawWorkflow {
        name: workflow.name.clone(),
        inputs: workflow
            .inputs
            .iter()
            .map(|i| {
                (i.name.clone(), RawInput { ty: i.port_type.to_string(), default: i.default.clone() })
            })
            .collect(),
        steps: workflow
            .steps
            .iter()
            .map(|s| RawStep {
                id: s.id.clone(),
                command: s.command.clone(),
                shell: s.shell,
                inputs: s
                    .inputs
                    .iter()
                    .map(|p| {
                        (p.name.clone(), RawIn { from: p.from.to_string(), ty: p.port_type.to_string() })
                    })
                    .collect(),
                outputs: s
                    .outputs
                    .iter()
                    .map(|p| {
                        let capture = match &p.capture {
                            Capture::Stdout => "stdout".to_string(),
                            Capture::File(path) => path.clone(),
                        };
                        (p.name.clone(), RawOut { ty: p.port_type.to_string(), capture })
                    })
                    .collect(),
                scatter: s.scatter.clone(),
                scatter_method: s.is_scattered().then(|| s.scatter_method.as_str().to_string()),
            })
            .collect(),
        outputs: workflow.outputs.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
    };
    serde_yaml::to_string(&raw).expect("workflow model always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = r#"
name: chain
inputs:
  greeting: {type: value, default: hello}
steps:
  - id: A
    command: echo {msg}
    in:
      msg: {from: inputs.greeting}
    out:
      out: {type: value, capture: stdout}
  - id: B
    command: echo {x} world
    in:
      x: {from: A.out, type: value}
    out:
      out: {capture: stdout}
outputs:
  result: B.out
"#;

    #[test]
    fn parses_minimal_chain() {
        let wf = parse_workflow(CHAIN).unwrap();
        assert_eq!(wf.steps.len(), 2);
        assert_eq!(
            wf.steps[1].inputs[0].from,
            Source::StepOutput { step: "A".into(), port: "out".into() }
        );
        assert_eq!(super::super::dependency_edges(&wf), vec![("A".to_string(), "B".to_string())]);
        assert_eq!(wf.outputs["result"], PortRef { step: "B".into(), port: "out".into() });
    }

    #[test]
    fn round_trips() {
        let wf = parse_workflow(CHAIN).unwrap();
        let again = parse_workflow(&to_yaml(&wf)).unwrap();
        assert_eq!(wf, again);
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let text = CHAIN.replace("A.out", "C.out");
        assert!(matches!(parse_workflow(&text), Err(ParseError::DanglingReference(_))));
    }

    #[test]
    fn duplicate_step_is_rejected() {
        let text = CHAIN.replace("id: B", "id: A").replace("B.out", "A.out");
        assert!(matches!(parse_workflow(&text), Err(ParseError::DuplicateId(_))));
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let text = CHAIN.replace("echo {x} world", "echo {y} world");
        assert!(matches!(parse_workflow(&text), Err(ParseError::PlaceholderMismatch(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = CHAIN.replace("    command: echo {msg}", "    command: echo {msg}\n    retries: 3");
        let err = parse_workflow(&text).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }), "{err}");
        assert!(err.to_string().contains("retries"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_workflow("name: x\nsteps: [\n").unwrap_err();
        match err {
            ParseError::Syntax { line, .. } => assert!(line >= 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn upward_capture_is_rejected() {
        let text = CHAIN.replace("out: {capture: stdout}", "out: {type: file, capture: ../x}");
        assert!(matches!(parse_workflow(&text), Err(ParseError::Invalid(_))));
    }
}
