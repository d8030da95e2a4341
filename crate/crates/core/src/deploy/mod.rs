//! Deployment hierarchy and scheduling.
//!
//! A [`Model`] is deployed as a whole, a [`Service`] is what a step binds to,
//! and a resource (one replica of a service) is what an instance is scheduled
//! on. The environment file maps step selectors onto `model/service` targets.

mod bindings;
mod environment;
mod lifecycle;
mod scheduler;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

pub use bindings::{resolve_bindings, validate_plan};
pub use environment::{environment_to_yaml, parse_environment};
pub use lifecycle::{default_factory, ConnectorFactory, Deployments};
pub use scheduler::{select_resources, Reservation, Scheduler, Ticket};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectorKind {
    Local,
    Sandbox,
    SimBatch,
}

impl ConnectorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConnectorKind::Local => "local",
            ConnectorKind::Sandbox => "sandbox",
            ConnectorKind::SimBatch => "sim-batch",
        }
    }
}

impl fmt::Display for ConnectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimBatchConfig {
    pub root: PathBuf,
    pub max_concurrent_jobs: usize,
    pub submit_delay_ms: u64,
    pub poll_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConnectorConfig {
    /// Runs on the controller host; `root` defaults to `<staging>/sites/<model>`.
    Local { root: Option<PathBuf> },
    Sandbox { root: PathBuf },
    SimBatch(SimBatchConfig),
}

impl ConnectorConfig {
    pub fn kind(&self) -> ConnectorKind {
        match self {
            ConnectorConfig::Local { .. } => ConnectorKind::Local,
            ConnectorConfig::Sandbox { .. } => ConnectorKind::Sandbox,
            ConnectorConfig::SimBatch(_) => ConnectorKind::SimBatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Service {
    pub name: String,
    pub resource_count: usize,
    pub slots_per_resource: usize,
}

/// Unit of deployment: all of its services come up together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model {
    pub name: String,
    pub connector: ConnectorConfig,
    pub services: Vec<Service>,
}

impl Model {
    pub fn service(&self, name: &str) -> Option<&Service> {
        self.services.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    /// Exact step id or glob pattern (`*`, `?`, `[..]`).
    pub selector: String,
    pub model: String,
    pub service: String,
    pub resources: usize,
}

impl Binding {
    pub fn is_glob(&self) -> bool {
        self.selector.contains(['*', '?', '['])
    }

    pub fn target(&self) -> String {
        format!("{}/{}", self.model, self.service)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentPlan {
    pub models: Vec<Model>,
    pub bindings: Vec<Binding>,
    /// Controller-side staging area.
    pub staging_dir: PathBuf,
}

impl DeploymentPlan {
    pub fn model(&self, name: &str) -> Option<&Model> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn service(&self, model: &str, service: &str) -> Option<&Service> {
        self.model(model).and_then(|m| m.service(service))
    }
}

/// One replica of a service: `model/service/index`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceId {
    pub model: String,
    pub service: String,
    pub index: usize,
}

impl ResourceId {
    pub fn new(model: impl Into<String>, service: impl Into<String>, index: usize) -> Self {
        ResourceId { model: model.into(), service: service.into(), index }
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model, self.service, self.index)
    }
}

impl FromStr for ResourceId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('/');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(m), Some(sv), Some(i), None) if !m.is_empty() && !sv.is_empty() => {
                let index = i.parse().map_err(|_| format!("bad resource index in `{s}`"))?;
                Ok(ResourceId::new(m, sv, index))
            }
            _ => Err(format!("`{s}` is not of the form model/service/index")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid environment: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("invalid deployment plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),
    #[error("unbound step(s): {}", .0.join(", "))]
    Unbound(Vec<String>),
    #[error("binding for `{step}` requests {requested} resources but {target} has {available}")]
    TooManyResources { step: String, target: String, requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeployError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("deployment of model `{model}` failed: {message}")]
    Failed { model: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("unknown service `{0}`")]
    UnknownService(String),
    #[error("{requested} resources requested but `{service}` has {available}")]
    TooMany { service: String, requested: usize, available: usize },
    #[error("cancelled while waiting for resources")]
    Cancelled,
}
