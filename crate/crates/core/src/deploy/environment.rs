use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Binding, ConnectorConfig, DeploymentPlan, EnvError, Model, Service, SimBatchConfig};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    deployments: IndexMap<String, RawModel>,
    #[serde(default)]
    bindings: Vec<RawBinding>,
    staging_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    connector: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_yaml::Value>,
    services: IndexMap<String, RawService>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    resources: usize,
    slots: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBinding {
    step: String,
    target: String,
    #[serde(default = "one")]
    resources: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SandboxConfig {
    root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimBatch {
    root: PathBuf,
    max_concurrent_jobs: usize,
    #[serde(default)]
    submit_delay_ms: u64,
    #[serde(default = "default_poll")]
    poll_interval_ms: u64,
}

fn default_poll() -> u64 {
    50
}

fn syntax(e: serde_yaml::Error) -> EnvError {
    let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
    EnvError::Syntax { line, column, message: e.to_string() }
}

fn config<T: for<'de> Deserialize<'de>>(model: &str, value: Option<serde_yaml::Value>) -> Result<T, EnvError> {
    let value = value.unwrap_or(serde_yaml::Value::Mapping(Default::default()));
    serde_yaml::from_value(value).map_err(|e| EnvError::Invalid(format!("model `{model}` config: {e}")))
}

/// Parses an environment file. Relative paths are resolved against `base_dir`
/// (normally the directory holding the file).
pub fn parse_environment(text: &str, base_dir: &Path) -> Result<DeploymentPlan, EnvError> {
    let raw: RawEnvironment = serde_yaml::from_str(text).map_err(syntax)?;
    let abs = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };

    let mut models = Vec::new();
    for (name, model) in raw.deployments {
        let connector = match model.connector.as_str() {
            "local" => {
                let c: LocalConfig = config(&name, model.config)?;
                ConnectorConfig::Local { root: c.root.map(abs) }
            }
            "sandbox" => {
                let c: SandboxConfig = config(&name, model.config)?;
                ConnectorConfig::Sandbox { root: abs(c.root) }
            }
            "sim-batch" => {
                let c: RawSimBatch = config(&name, model.config)?;
                ConnectorConfig::SimBatch(SimBatchConfig {
                    root: abs(c.root),
                    max_concurrent_jobs: c.max_concurrent_jobs,
                    submit_delay_ms: c.submit_delay_ms,
                    poll_interval_ms: c.poll_interval_ms,
                })
            }
            other => {
                return Err(EnvError::Invalid(format!(
                    "model `{name}`: unknown connector `{other}` (expected local, sandbox or sim-batch)"
                )))
            }
        };
        let services = model
            .services
            .into_iter()
            .map(|(name, s)| Service { name, resource_count: s.resources, slots_per_resource: s.slots })
            .collect();
        models.push(Model { name, connector, services });
    }

    let mut bindings = Vec::new();
    for b in raw.bindings {
        let (model, service) = b
            .target
            .split_once('/')
            .filter(|(m, s)| !m.is_empty() && !s.is_empty() && !s.contains('/'))
            .ok_or_else(|| EnvError::Invalid(format!("binding target `{}` is not model/service", b.target)))?;
        bindings.push(Binding {
            selector: b.step,
            model: model.to_string(),
            service: service.to_string(),
            resources: b.resources,
        });
    }

    let plan = DeploymentPlan { models, bindings, staging_dir: abs(raw.staging_dir) };
    let problems = super::validate_plan(&plan);
    if !problems.is_empty() {
        return Err(EnvError::Invalid(problems.join("; ")));
    }
    Ok(plan)
}

pub fn environment_to_yaml(plan: &DeploymentPlan) -> String {
    let deployments = plan
        .models
        .iter()
        .map(|m| {
            let (connector, config) = match &m.connector {
                ConnectorConfig::Local { root } => {
                    ("local", root.as_ref().map(|r| yaml(&LocalConfig { root: Some(r.clone()) })))
                }
                ConnectorConfig::Sandbox { root } => {
                    ("sandbox", Some(yaml(&SandboxConfig { root: root.clone() })))
                }
                ConnectorConfig::SimBatch(c) => (
                    "sim-batch",
                    Some(yaml(&RawSimBatch {
                        root: c.root.clone(),
                        max_concurrent_jobs: c.max_concurrent_jobs,
                        submit_delay_ms: c.submit_delay_ms,
                        poll_interval_ms: c.poll_interval_ms,
                    })),
                ),
            };
            let services = m
                .services
                .iter()
                .map(|s| (s.name.clone(), RawService { resources: s.resource_count, slots: s.slots_per_resource }))
                .collect();
            (m.name.clone(), RawModel { connector: connector.to_string(), config, services })
        })
        .collect();
    let raw = RawEnvironment {
        deployments,
        bindings: plan
            .bindings
            .iter()
            .map(|b| RawBinding { step: b.selector.clone(), target: b.target(), resources: b.resources })
            .collect(),
        staging_dir: plan.staging_dir.clone(),
    };
    serde_yaml::to_string(&raw).expect("environment always serializes")
}

fn yaml<T: Serialize>(value: &T) -> serde_yaml::Value {
    serde_yaml::to_value(value).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const ENV: &str = r#"
deployments:
  hpc:
    connector: sim-batch
    config: {root: sites/hpc, max_concurrent_jobs: 2, submit_delay_ms: 5, poll_interval_ms: 10}
    services:
      gpu: {resources: 2, slots: 1}
  cloud:
    connector: local
    services:
      host: {resources: 1, slots: 4}
bindings:
  - {step: "classify_*", target: hpc/gpu}
  - {step: rank, target: cloud/host}
staging_dir: staging
"#;

    #[test]
    fn parses_and_resolves_paths() {
        let plan = parse_environment(ENV, Path::new("/base")).unwrap();
        assert_eq!(plan.staging_dir, PathBuf::from("/base/staging"));
        assert_eq!(plan.models.len(), 2);
        match &plan.models[0].connector {
            ConnectorConfig::SimBatch(c) => {
                assert_eq!(c.root, PathBuf::from("/base/sites/hpc"));
                assert_eq!(c.max_concurrent_jobs, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(plan.bindings[0].resources, 1);
        assert_eq!(plan.bindings[1].target(), "cloud/host");
    }

    #[test]
    fn round_trips() {
        let plan = parse_environment(ENV, Path::new("/base")).unwrap();
        let again = parse_environment(&environment_to_yaml(&plan), Path::new("/elsewhere")).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn closed_schema() {
        let text = ENV.replace("staging_dir: staging", "staging_dir: staging\nextra: 1");
        assert!(matches!(parse_environment(&text, Path::new("/")), Err(EnvError::Syntax { .. })));
        let text = ENV.replace("poll_interval_ms: 10", "poll_interval_ms: 10, gpus: 3");
        assert!(matches!(parse_environment(&text, Path::new("/")), Err(EnvError::Invalid(_))));
    }

    #[test]
    fn rejects_bad_targets_and_counts() {
        let text = ENV.replace("target: cloud/host", "target: cloud/nope");
        assert!(parse_environment(&text, Path::new("/")).is_err());
        let text = ENV.replace("{step: \"classify_*\", target: hpc/gpu}", "{step: x, target: hpc/gpu, resources: 3}");
        assert!(parse_environment(&text, Path::new("/")).is_err());
        let text = ENV.replace("gpu: {resources: 2, slots: 1}", "gpu: {resources: 0, slots: 1}");
        assert!(parse_environment(&text, Path::new("/")).is_err());
    }
}
