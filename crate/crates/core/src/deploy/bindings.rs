use std::collections::HashSet;

use indexmap::IndexMap;

use super::{Binding, BindingError, DeploymentPlan};
use crate::workflow::Workflow;

/// Structural problems with a plan, independent of any workflow.
pub fn validate_plan(plan: &DeploymentPlan) -> Vec<String> {
    let mut problems = Vec::new();
    let mut models = HashSet::new();
    for model in &plan.models {
        if !models.insert(model.name.as_str()) {
            problems.push(format!("duplicate model `{}`", model.name));
        }
        if model.services.is_empty() {
            problems.push(format!("model `{}` has no services", model.name));
        }
        let mut services = HashSet::new();
        for service in &model.services {
            if !services.insert(service.name.as_str()) {
                problems.push(format!("model `{}`: duplicate service `{}`", model.name, service.name));
            }
            if service.resource_count == 0 || service.slots_per_resource == 0 {
                problems.push(format!(
                    "service `{}/{}` needs at least one resource and one slot",
                    model.name, service.name
                ));
            }
        }
        if let super::ConnectorConfig::SimBatch(c) = &model.connector {
            if c.max_concurrent_jobs == 0 || c.poll_interval_ms == 0 {
                problems.push(format!(
                    "model `{}`: max_concurrent_jobs and poll_interval_ms must be positive",
                    model.name
                ));
            }
        }
    }

    let mut selectors = HashSet::new();
    for binding in &plan.bindings {
        if !selectors.insert(binding.selector.as_str()) {
            problems.push(format!("duplicate binding for selector `{}`", binding.selector));
        }
        if binding.is_glob() && glob::Pattern::new(&binding.selector).is_err() {
            problems.push(format!("invalid glob `{}`", binding.selector));
        }
        match plan.service(&binding.model, &binding.service) {
            None => problems.push(format!("binding `{}` targets unknown `{}`", binding.selector, binding.target())),
            Some(service) if binding.resources == 0 || binding.resources > service.resource_count => {
                problems.push(format!(
                    "binding `{}` requests {} resource(s); `{}` has {}",
                    binding.selector,
                    binding.resources,
                    binding.target(),
                    service.resource_count
                ))
            }
            Some(_) => {}
        }
    }
    problems
}

fn matches(binding: &Binding, step: &str) -> bool {
    if binding.is_glob() {
        glob::Pattern::new(&binding.selector).is_ok_and(|p| p.matches(step))
    } else {
        binding.selector == step
    }
}

/// Binds every step to exactly one target. Exact selectors beat globs; among
/// equally specific matches the later declaration wins.
pub fn resolve_bindings(w: &Workflow, plan: &DeploymentPlan) -> Result<IndexMap<String, Binding>, BindingError> {
    let problems = validate_plan(plan);
    if !problems.is_empty() {
        return Err(BindingError::InvalidPlan(problems));
    }
    let mut map = IndexMap::new();
    let mut unbound = Vec::new();
    for step in &w.steps {
        let best = plan
            .bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| matches(b, &step.id))
            .max_by_key(|(i, b)| (!b.is_glob(), *i))
            .map(|(_, b)| b.clone());
        match best {
            Some(b) => {
                map.insert(step.id.clone(), b);
            }
            None => unbound.push(step.id.clone()),
        }
    }
    if unbound.is_empty() {
        Ok(map)
    } else {
        Err(BindingError::Unbound(unbound))
    }
}
