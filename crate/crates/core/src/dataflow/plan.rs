//! Symbolic unfolding: scatter depth of every step and the classification of
//! each input edge, computed before any cardinality is known.
//!
//! Every scatter level is named by the step that opened it. A step's levels
//! are its context (the deepest level path visible on its inputs) plus one
//! level when it scatters. An input port typed `k` list levels deeper than
//! its source gathers the source's innermost `k` levels.

use std::fmt;

use indexmap::IndexMap;

use super::DataflowError;
use crate::workflow::{self, Source, Workflow};

/// A scatter level, named after the step that opened it.
pub type LevelId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeClass {
    /// Producer and consumer share every level; tags match one to one.
    ElementWise,
    /// Consumer collects one or more of the producer's innermost levels.
    Gather,
    /// Producer is shallower; one token feeds every consumer instance below it.
    Broadcast,
    /// The port is split by the consumer's own scatter.
    Scatter,
}

impl fmt::Display for EdgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeClass::ElementWise => "element-wise",
            EdgeClass::Gather => "gather",
            EdgeClass::Broadcast => "broadcast",
            EdgeClass::Scatter => "scatter",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgePlan {
    pub port: String,
    pub source: Source,
    /// Levels of the tokens on the source port.
    pub source_levels: Vec<LevelId>,
    /// Levels collected into the port value before anything else.
    pub gather_levels: usize,
    pub scattered: bool,
    pub class: EdgeClass,
}

impl EdgePlan {
    /// Depth at which the (possibly gathered) value is looked up.
    pub fn visible_depth(&self) -> usize {
        self.source_levels.len() - self.gather_levels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub step: String,
    /// Levels before the step's own scatter.
    pub context: Vec<LevelId>,
    /// Levels of every instance (and output token) of the step.
    pub levels: Vec<LevelId>,
    /// Level created by this step's scatter, `None` when it continues one
    /// already opened upstream or does not scatter.
    pub opens: Option<LevelId>,
    pub inputs: Vec<EdgePlan>,
}

impl StepPlan {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn scatters(&self) -> bool {
        self.levels.len() > self.context.len()
    }

    pub fn input(&self, port: &str) -> Option<&EdgePlan> {
        self.inputs.iter().find(|e| e.port == port)
    }
}

/// Per-step plans in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedPlan {
    pub steps: IndexMap<String, StepPlan>,
}

impl UnfoldedPlan {
    pub fn step(&self, id: &str) -> Option<&StepPlan> {
        self.steps.get(id)
    }

    /// Levels of the tokens on a source port.
    pub fn source_levels(&self, source: &Source) -> Vec<LevelId> {
        match source.step() {
            None => Vec::new(),
            Some(step) => self.steps.get(step).map(|p| p.levels.clone()).unwrap_or_default(),
        }
    }
}

pub fn unfold_plan(w: &Workflow) -> Result<UnfoldedPlan, DataflowError> {
    let diags = workflow::validate(w);
    if !diags.is_empty() {
        return Err(DataflowError::Invalid(diags.into_iter().map(|d| d.message).collect()));
    }
    let order = workflow::topological_order(w).map_err(DataflowError::Cycle)?;
    let mut steps: IndexMap<String, StepPlan> = IndexMap::new();

    for id in order {
        let step = w.step(&id).expect("topological order lists known steps");
        let nesting = |message: String| DataflowError::InconsistentNesting { step: id.clone(), message };

        let mut raws = Vec::new();
        for port in &step.inputs {
            let source_levels = match &port.from {
                Source::WorkflowInput(_) => Vec::new(),
                Source::StepOutput { step: producer, .. } => steps[producer.as_str()].levels.clone(),
            };
            let source_type = w.source_type(&port.from).expect("validated reference");
            let gather = port.port_type.list_depth - source_type.list_depth;
            if gather > source_levels.len() {
                return Err(nesting(format!(
                    "input `{}` gathers {gather} level(s) but `{}` is only {} level(s) deep",
                    port.name,
                    port.from,
                    source_levels.len()
                )));
            }
            raws.push(RawEdge {
                port: port.name.clone(),
                source: port.from.clone(),
                source_levels,
                gather,
                scattered: step.scatter.contains(&port.name),
            });
        }

        let context: Vec<LevelId> = raws
            .iter()
            .map(RawEdge::visible)
            .max_by_key(|levels| levels.len())
            .map(|l| l.to_vec())
            .unwrap_or_default();
        for raw in &raws {
            if !context.starts_with(raw.visible()) {
                return Err(nesting(format!(
                    "input `{}` lives under levels {:?}, incompatible with {:?}",
                    raw.port,
                    raw.visible(),
                    context
                )));
            }
        }

        let mut levels = context.clone();
        let mut opens = None;
        if step.is_scattered() {
            let scattered: Vec<&RawEdge> = raws.iter().filter(|r| r.scattered).collect();
            let continued: Option<&LevelId> = scattered.first().and_then(|first| {
                let candidate = continued_level(first, &context)?;
                let single_or_dot =
                    scattered.len() == 1 || step.scatter_method == workflow::ScatterMethod::Dot;
                (single_or_dot && scattered.iter().all(|r| continued_level(r, &context) == Some(candidate)))
                    .then_some(candidate)
            });
            match continued {
                Some(level) => levels.push(level.clone()),
                None => {
                    levels.push(step.id.clone());
                    opens = Some(step.id.clone());
                }
            }
        }

        let inputs = raws
            .into_iter()
            .map(|raw| {
                let class = if raw.scattered {
                    EdgeClass::Scatter
                } else if raw.gather > 0 {
                    EdgeClass::Gather
                } else if raw.source_levels.len() < levels.len() {
                    EdgeClass::Broadcast
                } else {
                    EdgeClass::ElementWise
                };
                EdgePlan {
                    port: raw.port,
                    source: raw.source,
                    source_levels: raw.source_levels,
                    gather_levels: raw.gather,
                    scattered: raw.scattered,
                    class,
                }
            })
            .collect();

        steps.insert(id.clone(), StepPlan { step: id, context, levels, opens, inputs });
    }
    Ok(UnfoldedPlan { steps })
}

/// A scattered port that gathers a level and splits it again under the same
/// context continues that level instead of opening a new one.
fn continued_level<'a>(raw: &'a RawEdge, context: &[LevelId]) -> Option<&'a LevelId> {
    let visible = raw.source_levels.len() - raw.gather;
    (raw.gather >= 1 && visible == context.len()).then(|| &raw.source_levels[visible])
}

struct RawEdge {
    port: String,
    source: Source,
    source_levels: Vec<LevelId>,
    gather: usize,
    scattered: bool,
}

impl RawEdge {
    fn visible(&self) -> &[LevelId] {
        &self.source_levels[..self.source_levels.len() - self.gather]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::parse_workflow;

    /// Variant scatter, fold scatter nested inside it, and two reduces.
    const NESTED: &str = r#"
name: nested
inputs:
  variants: {type: "value[]", default: [a, b]}
  folds: {type: "value[]", default: [0, 1, 2]}
steps:
  - id: augment
    command: echo {v}
    in: {v: {from: inputs.variants, type: "value[]"}}
    out: {out: {capture: stdout}}
    scatter: [v]
  - id: pretrain
    command: echo {x}
    in: {x: {from: augment.out}}
    out: {weights: {capture: stdout}}
  - id: classify
    command: echo {w} {k}
    in:
      w: {from: pretrain.weights}
      k: {from: inputs.folds, type: "value[]"}
    out: {metric: {capture: stdout}}
    scatter: [k]
  - id: fold_reduce
    command: echo {ms}
    in: {ms: {from: classify.metric, type: "value[]"}}
    out: {mean: {capture: stdout}}
  - id: rank
    command: echo {means}
    in: {means: {from: fold_reduce.mean, type: "value[]"}}
    out: {ranking: {capture: stdout}}
outputs:
  ranking: rank.ranking
"#;

    #[test]
    fn classifies_broadcast_and_gathers() {
        let plan = unfold_plan(&parse_workflow(NESTED).unwrap()).unwrap();
        let depth = |s: &str| plan.step(s).unwrap().depth();
        assert_eq!(
            ["augment", "pretrain", "classify", "fold_reduce", "rank"].map(depth),
            [1, 1, 2, 1, 0]
        );
        let class = |s: &str, p: &str| plan.step(s).unwrap().input(p).unwrap().class;
        assert_eq!(class("pretrain", "x"), EdgeClass::ElementWise);
        assert_eq!(class("classify", "w"), EdgeClass::Broadcast);
        assert_eq!(class("classify", "k"), EdgeClass::Scatter);
        assert_eq!(class("fold_reduce", "ms"), EdgeClass::Gather);
        assert_eq!(class("rank", "means"), EdgeClass::Gather);
        assert_eq!(plan.step("classify").unwrap().levels, vec!["augment", "classify"]);
    }

    #[test]
    fn unscattered_chain_is_depth_zero() {
        let text = r#"
name: chain
steps:
  - id: A
    command: echo a
    out: {out: {capture: stdout}}
  - id: B
    command: echo {x}
    in: {x: {from: A.out}}
    out: {out: {capture: stdout}}
"#;
        let plan = unfold_plan(&parse_workflow(text).unwrap()).unwrap();
        assert_eq!(plan.step("B").unwrap().depth(), 0);
        assert_eq!(plan.step("B").unwrap().inputs[0].class, EdgeClass::ElementWise);
    }

    #[test]
    fn rescattering_a_gathered_port_continues_the_level() {
        let text = NESTED.replace(
            "    in: {x: {from: augment.out}}\n    out: {weights: {capture: stdout}}",
            "    in: {x: {from: augment.out, type: \"value[]\"}}\n    out: {weights: {capture: stdout}}\n    scatter: [x]",
        );
        let plan = unfold_plan(&parse_workflow(&text).unwrap()).unwrap();
        let pretrain = plan.step("pretrain").unwrap();
        assert_eq!(pretrain.levels, vec!["augment"]);
        assert_eq!(pretrain.opens, None);
    }

    #[test]
    fn independent_scatters_cannot_be_joined() {
        let text = r#"
name: bad
inputs:
  xs: {type: "value[]", default: [1, 2]}
  ys: {type: "value[]", default: [1, 2, 3]}
steps:
  - id: A
    command: echo {x}
    in: {x: {from: inputs.xs, type: "value[]"}}
    out: {out: {capture: stdout}}
    scatter: [x]
  - id: B
    command: echo {y}
    in: {y: {from: inputs.ys, type: "value[]"}}
    out: {out: {capture: stdout}}
    scatter: [y]
  - id: C
    command: echo {a} {b}
    in:
      a: {from: A.out}
      b: {from: B.out}
    out: {out: {capture: stdout}}
"#;
        let err = unfold_plan(&parse_workflow(text).unwrap()).unwrap_err();
        assert!(matches!(err, DataflowError::InconsistentNesting { ref step, .. } if step == "C"), "{err}");
    }

    #[test]
    fn cannot_gather_above_the_root() {
        let text = r#"
name: bad
steps:
  - id: A
    command: echo a
    out: {out: {capture: stdout}}
  - id: B
    command: echo {x}
    in: {x: {from: A.out, type: "value[]"}}
    out: {out: {capture: stdout}}
"#;
        assert!(matches!(
            unfold_plan(&parse_workflow(text).unwrap()),
            Err(DataflowError::InconsistentNesting { .. })
        ));
    }
}
