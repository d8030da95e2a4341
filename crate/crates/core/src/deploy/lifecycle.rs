use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};

use super::{DeployError, DeploymentPlan, Model};
use crate::connectors::{build_connector, Connector};
use crate::provenance::{now, DeploymentRecord, ServiceRecord};

/// Creates the connector for a model. The default builds from the model's
/// configuration; tests substitute their own.
pub type ConnectorFactory = Arc<dyn Fn(&Model, &Path) -> Arc<dyn Connector> + Send + Sync>;

pub fn default_factory() -> ConnectorFactory {
    Arc::new(|model, staging| build_connector(model, staging))
}

enum State {
    Deploying,
    Ready(Arc<dyn Connector>),
    Failed(String),
}

/// Lazily deployed models of one run.
pub struct Deployments {
    plan: DeploymentPlan,
    factory: ConnectorFactory,
    states: Mutex<HashMap<String, State>>,
    changed: Condvar,
    records: Mutex<Vec<DeploymentRecord>>,
}

impl Deployments {
    pub fn new(plan: DeploymentPlan, factory: ConnectorFactory) -> Self {
        Deployments {
            plan,
            factory,
            states: Mutex::new(HashMap::new()),
            changed: Condvar::new(),
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn plan(&self) -> &DeploymentPlan {
        &self.plan
    }

    /// Returns the model's connector, deploying the model first if this is its
    /// first use. All services come up before any caller gets the connector;
    /// concurrent callers wait for the one deploying.
    pub fn ensure(&self, model: &str) -> Result<Arc<dyn Connector>, DeployError> {
        let spec = self.plan.model(model).ok_or_else(|| DeployError::UnknownModel(model.to_string()))?;
        let mut states = self.states.lock().expect("deployment lock poisoned");
        loop {
            match states.get(model) {
                Some(State::Ready(c)) => return Ok(c.clone()),
                Some(State::Failed(message)) => {
                    return Err(DeployError::Failed { model: model.to_string(), message: message.clone() })
                }
                Some(State::Deploying) => states = self.changed.wait(states).expect("deployment lock poisoned"),
                None => break,
            }
        }
        states.insert(model.to_string(), State::Deploying);
        drop(states);

        let deployed_at = now();
        let connector = (self.factory)(spec, &self.plan.staging_dir);
        let result = connector.initialize(spec);

        let mut states = self.states.lock().expect("deployment lock poisoned");
        let outcome = match result {
            Ok(inits) => {
                let services = spec
                    .services
                    .iter()
                    .map(|s| ServiceRecord {
                        name: s.name.clone(),
                        resources: s.resource_count,
                        slots: s.slots_per_resource,
                        initialized_at: inits.iter().find(|i| i.service == s.name).map(|i| i.initialized_at),
                    })
                    .collect();
                self.records.lock().expect("record lock poisoned").push(DeploymentRecord {
                    model: model.to_string(),
                    connector: connector.kind().as_str().to_string(),
                    deployed_at,
                    undeployed_at: None,
                    services,
                });
                states.insert(model.to_string(), State::Ready(connector.clone()));
                Ok(connector)
            }
            Err(e) => {
                let message = e.to_string();
                states.insert(model.to_string(), State::Failed(message.clone()));
                Err(DeployError::Failed { model: model.to_string(), message })
            }
        };
        self.changed.notify_all();
        outcome
    }

    /// Connector of an already deployed model.
    pub fn connector(&self, model: &str) -> Option<Arc<dyn Connector>> {
        match self.states.lock().expect("deployment lock poisoned").get(model) {
            Some(State::Ready(c)) => Some(c.clone()),
            _ => None,
        }
    }

    pub fn is_deployed(&self, model: &str) -> bool {
        self.connector(model).is_some()
    }

    /// Tears down every deployed model, in deployment order.
    pub fn undeploy_all(&self) -> Vec<DeployError> {
        let mut errors = Vec::new();
        let mut records = self.records.lock().expect("record lock poisoned");
        let mut states = self.states.lock().expect("deployment lock poisoned");
        for record in records.iter_mut().filter(|r| r.undeployed_at.is_none()) {
            if let Some(State::Ready(connector)) = states.remove(&record.model) {
                if let Err(e) = connector.teardown() {
                    errors.push(DeployError::Failed { model: record.model.clone(), message: e.to_string() });
                }
                record.undeployed_at = Some(now());
            }
        }
        errors
    }

    pub fn records(&self) -> Vec<DeploymentRecord> {
        self.records.lock().expect("record lock poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deploy::{ConnectorConfig, Service};

    fn plan(root: &Path) -> DeploymentPlan {
        let model = |name: &str, services: &[&str]| Model {
            name: name.into(),
            connector: ConnectorConfig::Sandbox { root: root.join(name) },
            services: services
                .iter()
                .map(|s| Service { name: s.to_string(), resource_count: 1, slots_per_resource: 1 })
                .collect(),
        };
        DeploymentPlan {
            models: vec![model("app", &["db", "worker"]), model("idle", &["x"]), model("other", &["y"])],
            bindings: vec![],
            staging_dir: root.join("staging"),
        }
    }

    #[test]
    fn one_deploy_event_covering_every_service() {
        let dir = tempfile::tempdir().unwrap();
        let d = Deployments::new(plan(dir.path()), default_factory());
        assert!(!d.is_deployed("app"));
        let threads: Vec<_> = (0..4)
            .map(|_| {
                let d = &d;
                move || d.ensure("app").map(|_| ())
            })
            .collect();
        std::thread::scope(|s| {
            let handles: Vec<_> = threads.into_iter().map(|t| s.spawn(t)).collect();
            handles.into_iter().for_each(|h| h.join().unwrap().unwrap());
        });
        d.ensure("other").unwrap();
        let records = d.records();
        assert_eq!(records.len(), 2);
        let names: Vec<_> = records[0].services.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["db", "worker"]);
        assert!(records[0].services.iter().all(|s| s.initialized_at.is_some()));
        assert!(dir.path().join("app/db/0").is_dir());
        assert!(!dir.path().join("idle").exists());

        assert!(d.undeploy_all().is_empty());
        assert!(d.records().iter().all(|r| r.undeployed_at.is_some()));
        assert!(d.undeploy_all().is_empty());
    }

    #[test]
    fn initialization_failure_is_sticky() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("app");
        std::fs::write(&blocker, "not a directory").unwrap();
        let d = Deployments::new(plan(dir.path()), default_factory());
        assert!(matches!(d.ensure("app"), Err(DeployError::Failed { .. })));
        assert!(matches!(d.ensure("app"), Err(DeployError::Failed { .. })));
        assert!(d.records().is_empty());
        assert!(matches!(d.ensure("nope"), Err(DeployError::UnknownModel(_))));
    }
}
