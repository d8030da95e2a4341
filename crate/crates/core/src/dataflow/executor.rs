//! Token-driven execution.
//!
//! One event loop owns the token store and the scatter-size registry; worker
//! threads run instances (deploy, reserve, stage in, run, capture) and report
//! back over a channel. An instance is created as soon as every input value
//! for its context tag can be assembled, so independent branches and sibling
//! instances run in parallel up to `max_concurrency`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use indexmap::IndexMap;
use serde_json::Value;
use thiserror::Error;

use super::plan::{unfold_plan, LevelId, UnfoldedPlan};
use super::token::{Payload, PortKey, Tag};
use super::{dot_cross_product, DataflowError};
use crate::cancel::CancelToken;
use crate::connectors::{Connector, ExecRequest, RemotePath};
use crate::data::DataManager;
use crate::deploy::{
    default_factory, resolve_bindings, Binding, BindingError, ConnectorFactory, DeploymentPlan, Deployments,
    Reservation, ScheduleError, Scheduler, Ticket,
};
use crate::provenance::{
    now, BindingRecord, InstanceStatus, ProvenanceRecord, Report, RunInfo, Timestamp, TransferRecord,
};
use crate::workflow::template::{render_argv, Rendered, OUTDIR};
use crate::workflow::{Capture, Kind, Step, Workflow};

#[derive(Clone)]
pub struct RunOptions {
    /// Global cap on concurrently executing instances; `None` is unlimited.
    pub max_concurrency: Option<usize>,
    /// Extra attempts per failed instance.
    pub retries: u32,
    pub seed: u64,
    /// Cancel everything in flight on the first failure.
    pub fail_fast: bool,
    /// Where workflow outputs are collected; defaults to `<run staging>/outputs`.
    pub outdir: Option<PathBuf>,
    /// Skip transfers to resources that already hold a datum.
    pub elide_transfers: bool,
    /// Harness switch: when false, inputs are never staged in and commands see
    /// paths to files that were never delivered.
    pub stage_inputs: bool,
    pub factory: Option<ConnectorFactory>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_concurrency: None,
            retries: 0,
            seed: 0,
            fail_fast: true,
            outdir: None,
            elide_transfers: true,
            stage_inputs: true,
            factory: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    Failed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Success => "success",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub workflow_outputs: IndexMap<String, Payload>,
    pub provenance: Vec<ProvenanceRecord>,
    pub errors: Vec<String>,
    pub report: Report,
}

/// Problems that stop a run before anything executes.
#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Plan(#[from] DataflowError),
    #[error(transparent)]
    Bindings(#[from] BindingError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

/// Claims a fresh `run-NNNN` directory under the staging area.
fn claim_run_dir(staging: &Path) -> Result<(String, PathBuf), SetupError> {
    let io = |context: String| move |source| SetupError::Io { context, source };
    std::fs::create_dir_all(staging).map_err(io(format!("creating {}", staging.display())))?;
    let mut n = 1;
    loop {
        let id = format!("run-{n:04}");
        let dir = staging.join(&id);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(io(format!("creating {}", dir.display()))(e)),
        }
    }
}

struct Job {
    step: usize,
    tag: Tag,
    inputs: IndexMap<String, Payload>,
}

#[derive(Debug, Clone)]
struct Attempted {
    status: InstanceStatus,
    resources: Vec<usize>,
    started: Option<Timestamp>,
    finished: Option<Timestamp>,
    exit_code: Option<i32>,
    attempts: u32,
    transfers: Vec<TransferRecord>,
    outputs: IndexMap<String, Payload>,
    error: Option<String>,
}

impl Attempted {
    fn new() -> Self {
        Attempted {
            status: InstanceStatus::Failed,
            resources: Vec::new(),
            started: None,
            finished: None,
            exit_code: None,
            attempts: 0,
            transfers: Vec::new(),
            outputs: IndexMap::new(),
            error: None,
        }
    }
}

struct Failure {
    exit_code: Option<i32>,
    message: String,
    cancelled: bool,
}

impl Failure {
    fn new(message: impl Into<String>) -> Self {
        Failure { exit_code: None, message: message.into(), cancelled: false }
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::new(e.to_string())
    }
}

/// Everything workers share.
struct Engine<'a> {
    workflow: &'a Workflow,
    bindings: IndexMap<String, Binding>,
    deployments: Deployments,
    scheduler: Scheduler,
    data: DataManager,
    run_id: String,
    run_dir: PathBuf,
    options: &'a RunOptions,
    cancel: CancelToken,
}

pub fn execute(workflow: &Workflow, env: &DeploymentPlan, options: &RunOptions) -> Result<RunOutcome, SetupError> {
    let plan = unfold_plan(workflow)?;
    let bindings = resolve_bindings(workflow, env)?;
    let (run_id, run_dir) = claim_run_dir(&env.staging_dir)?;
    let factory = options.factory.clone().unwrap_or_else(default_factory);
    let engine = Engine {
        workflow,
        bindings,
        deployments: Deployments::new(env.clone(), factory),
        scheduler: Scheduler::new(env),
        data: DataManager::new(&run_id, run_dir.clone()).with_elision(options.elide_transfers),
        run_id,
        run_dir,
        options,
        cancel: CancelToken::new(),
    };
    Ok(engine.run(&plan))
}

/// Token store and scatter sizes, owned by the event loop.
#[derive(Default)]
struct Store {
    tokens: HashMap<PortKey, HashMap<Tag, Payload>>,
    sizes: HashMap<(LevelId, Tag), usize>,
}

impl Store {
    /// Every fully resolved tag over `levels`.
    fn tags(&self, levels: &[LevelId]) -> Vec<Tag> {
        let mut frontier = vec![Tag::root()];
        for level in levels {
            let mut next = Vec::new();
            for prefix in frontier {
                if let Some(&n) = self.sizes.get(&(level.clone(), prefix.clone())) {
                    next.extend((0..n).map(|i| prefix.child(i)));
                }
            }
            frontier = next;
        }
        frontier
    }

    /// The value on `port` at `base`, with `gather` inner levels collected
    /// into index-ordered lists. `None` until every piece has arrived.
    fn collect(&self, port: &PortKey, levels: &[LevelId], base: &Tag, gather: usize) -> Option<Payload> {
        if gather == 0 {
            return self.tokens.get(port)?.get(base).cloned();
        }
        let n = *self.sizes.get(&(levels[base.depth()].clone(), base.clone()))?;
        (0..n)
            .map(|i| self.collect(port, levels, &base.child(i), gather - 1))
            .collect::<Option<Vec<_>>>()
            .map(Payload::List)
    }
}

fn source_key(source: &crate::workflow::Source) -> PortKey {
    match source {
        crate::workflow::Source::WorkflowInput(name) => PortKey::new("inputs", name),
        crate::workflow::Source::StepOutput { step, port } => PortKey::new(step, port),
    }
}

fn tag_dir(tag: &Tag) -> String {
    if tag.0.is_empty() {
        "_".to_string()
    } else {
        tag.0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
    }
}

fn ref_id(step: &str, port: &str, tag: &Tag) -> String {
    if tag.0.is_empty() {
        format!("{step}.{port}")
    } else {
        format!("{step}.{port}-{}", tag_dir(tag))
    }
}

impl Engine<'_> {
    fn run(self, plan: &UnfoldedPlan) -> RunOutcome {
        let started = now();
        let w = self.workflow;
        let steps: Vec<&Step> = plan.steps.keys().map(|id| w.step(id).expect("planned step exists")).collect();
        let mut store = Store::default();
        for input in &w.inputs {
            let default = input.default.clone().unwrap_or(Value::Null);
            if let Some(payload) = Payload::from_json(&default, input.port_type.list_depth) {
                store.tokens.entry(PortKey::new("inputs", &input.name)).or_default().insert(Tag::root(), payload);
            }
        }

        let mut fired: Vec<HashSet<Tag>> = vec![HashSet::new(); steps.len()];
        let mut jobs: Vec<std::sync::Arc<Job>> = Vec::new();
        let mut records: Vec<ProvenanceRecord> = Vec::new();
        let mut ready: VecDeque<usize> = VecDeque::new();
        let mut errors: Vec<String> = Vec::new();
        let mut stopping = false;
        let mut failed = false;
        let limit = self.options.max_concurrency.unwrap_or(usize::MAX).max(1);

        let (tx, rx) = mpsc::channel::<(usize, Attempted)>();
        std::thread::scope(|scope| {
            let mut running = 0usize;
            loop {
                if !stopping {
                    match self.expand(plan, &steps, &mut store, &mut fired) {
                        Ok(new) => {
                            for job in new {
                                let binding = &self.bindings[&steps[job.step].id];
                                records.push(ProvenanceRecord {
                                    step: steps[job.step].id.clone(),
                                    tag: job.tag.0.clone(),
                                    status: InstanceStatus::Pending,
                                    binding: BindingRecord {
                                        model: binding.model.clone(),
                                        service: binding.service.clone(),
                                        resources_requested: binding.resources,
                                    },
                                    resources: Vec::new(),
                                    queued: now(),
                                    started: None,
                                    finished: None,
                                    exit_code: None,
                                    attempts: 0,
                                    transfers: Vec::new(),
                                    outputs: Vec::new(),
                                    error: None,
                                });
                                ready.push_back(jobs.len());
                                jobs.push(std::sync::Arc::new(job));
                            }
                        }
                        Err(e) => {
                            errors.push(e.to_string());
                            failed = true;
                            stopping = true;
                            self.cancel.cancel();
                        }
                    }
                }
                while !stopping && running < limit {
                    let Some(index) = ready.pop_front() else { break };
                    records[index].status = InstanceStatus::Scheduled;
                    let (tx, engine, job) = (tx.clone(), &self, jobs[index].clone());
                    let step = steps[job.step];
                    let binding = &self.bindings[&step.id];
                    // queue positions follow dispatch order, not thread start order
                    let ticket = self.scheduler.enqueue(&binding.model, &binding.service);
                    running += 1;
                    scope.spawn(move || {
                        let _ = tx.send((index, engine.run_instance(step, &job, ticket)));
                    });
                }
                if running == 0 {
                    break;
                }
                let (index, result) = rx.recv().expect("workers hold a sender");
                running -= 1;
                let job = &jobs[index];
                let step = steps[job.step];
                let record = &mut records[index];
                record.status = result.status;
                record.resources = result.resources;
                record.started = result.started;
                record.finished = result.finished;
                record.exit_code = result.exit_code;
                record.attempts = result.attempts;
                record.transfers = result.transfers;
                record.error = result.error.clone();
                match result.status {
                    InstanceStatus::Done => {
                        for (port, payload) in result.outputs {
                            record.outputs.extend(payload.file_refs().into_iter().map(String::from));
                            store.tokens.entry(PortKey::new(&step.id, port)).or_default().insert(job.tag.clone(), payload);
                        }
                    }
                    InstanceStatus::Cancelled => {}
                    _ => {
                        failed = true;
                        errors.push(format!(
                            "{}{}: {}",
                            step.id,
                            job.tag,
                            result.error.unwrap_or_else(|| "failed".into())
                        ));
                        if self.options.fail_fast {
                            stopping = true;
                            self.cancel.cancel();
                        }
                    }
                }
            }
        });
        for index in ready {
            records[index].status = InstanceStatus::Cancelled;
        }

        let mut workflow_outputs = IndexMap::new();
        if !failed {
            for (name, port) in &w.outputs {
                let levels = &plan.steps[&port.step].levels;
                match store.collect(&PortKey::new(&port.step, &port.port), levels, &Tag::root(), levels.len()) {
                    Some(payload) => {
                        workflow_outputs.insert(name.clone(), payload);
                    }
                    None => {
                        failed = true;
                        errors.push(format!("workflow output `{name}` was never produced"));
                    }
                }
            }
        }

        let mut collection = Vec::new();
        let mut output_paths = IndexMap::new();
        if !failed {
            let outdir = self.options.outdir.clone().unwrap_or_else(|| self.run_dir.join("outputs"));
            for (name, payload) in &workflow_outputs {
                match self.write_output(&outdir, name, payload, &mut collection) {
                    Ok(path) => {
                        output_paths.insert(name.clone(), path.display().to_string());
                    }
                    Err(e) => {
                        failed = true;
                        errors.push(format!("collecting output `{name}`: {}", e.message));
                    }
                }
            }
        }

        for e in self.deployments.undeploy_all() {
            errors.push(e.to_string());
        }

        let order: HashMap<&str, usize> = steps.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        records.sort_by(|a, b| (order[a.step.as_str()], &a.tag).cmp(&(order[b.step.as_str()], &b.tag)));
        let status = if failed { RunStatus::Failed } else { RunStatus::Success };
        let report = Report {
            run: RunInfo {
                id: self.run_id.clone(),
                workflow: w.name.clone(),
                seed: self.options.seed,
                started,
                finished: now(),
                status: status.as_str().to_string(),
                staging_dir: self.run_dir.display().to_string(),
            },
            deployments: self.deployments.records(),
            instances: records.clone(),
            outputs: output_paths,
            collection,
        };
        RunOutcome { status, workflow_outputs, provenance: records, errors, report }
    }

    /// Creates every instance whose inputs have all arrived.
    fn expand(
        &self,
        plan: &UnfoldedPlan,
        steps: &[&Step],
        store: &mut Store,
        fired: &mut [HashSet<Tag>],
    ) -> Result<Vec<Job>, DataflowError> {
        let mut jobs = Vec::new();
        for (index, step) in steps.iter().enumerate() {
            let sp = &plan.steps[&step.id];
            let mut contexts = store.tags(&sp.context);
            contexts.sort();
            for context in contexts {
                if fired[index].contains(&context) {
                    continue;
                }
                let mut values = IndexMap::new();
                for edge in &sp.inputs {
                    let base = context.prefix(edge.visible_depth());
                    match store.collect(&source_key(&edge.source), &edge.source_levels, &base, edge.gather_levels) {
                        Some(v) => {
                            values.insert(edge.port.clone(), v);
                        }
                        None => break,
                    }
                }
                if values.len() < sp.inputs.len() {
                    continue;
                }
                fired[index].insert(context.clone());

                if !sp.scatters() {
                    jobs.push(Job { step: index, tag: context, inputs: values });
                    continue;
                }
                let mut lists = Vec::new();
                for port in &step.scatter {
                    let items = values[port].as_list().ok_or_else(|| DataflowError::NotAList {
                        port: format!("{}.{port}", step.id),
                        tag: context.to_string(),
                    })?;
                    lists.push(items.to_vec());
                }
                let combos = dot_cross_product(&lists, step.scatter_method)?;
                let level = sp.levels.last().expect("scattering step has a level").clone();
                let key = (level, context.clone());
                match store.sizes.get(&key) {
                    Some(&n) if n != combos.len() => {
                        return Err(DataflowError::Gather(format!(
                            "step `{}` re-splits a level of size {n} into {} elements",
                            step.id,
                            combos.len()
                        )))
                    }
                    _ => {
                        store.sizes.insert(key, combos.len());
                    }
                }
                for (i, combo) in combos.into_iter().enumerate() {
                    let mut inputs = values.clone();
                    for (port, item) in step.scatter.iter().zip(combo) {
                        inputs.insert(port.clone(), item);
                    }
                    jobs.push(Job { step: index, tag: context.child(i), inputs });
                }
            }
        }
        Ok(jobs)
    }

    fn run_instance(&self, step: &Step, job: &Job, ticket: Result<Ticket, ScheduleError>) -> Attempted {
        let mut a = Attempted::new();
        let ticket = match ticket {
            Ok(t) => t,
            Err(e) => {
                a.error = Some(e.to_string());
                return a;
            }
        };
        if self.cancel.is_cancelled() {
            self.scheduler.withdraw(ticket);
            a.status = InstanceStatus::Cancelled;
            return a;
        }
        let binding = &self.bindings[&step.id];
        let connector = match self.deployments.ensure(&binding.model) {
            Ok(c) => c,
            Err(e) => {
                self.scheduler.withdraw(ticket);
                a.error = Some(e.to_string());
                return a;
            }
        };
        let refs: Vec<String> =
            job.inputs.values().flat_map(|p| p.file_refs()).map(String::from).collect::<Vec<_>>();
        let locality = |n: usize| {
            let ids: Vec<&str> = refs.iter().map(String::as_str).collect();
            self.data.locality(&ids, &binding.model, &binding.service, n)
        };
        let reservation =
            match self.scheduler.reserve_ticket(ticket, binding.resources, &locality, &self.cancel) {
                Ok(r) => r,
                Err(ScheduleError::Cancelled) => {
                    a.status = InstanceStatus::Cancelled;
                    return a;
                }
                Err(e) => {
                    a.error = Some(e.to_string());
                    return a;
                }
            };
        a.resources = reservation.resources.clone();
        a.started = Some(now());
        for attempt in 1..=1 + self.options.retries {
            if self.cancel.is_cancelled() {
                a.status = InstanceStatus::Cancelled;
                break;
            }
            a.attempts = attempt;
            match self.attempt(step, job, connector.as_ref(), &reservation, &refs, attempt, &mut a.transfers) {
                Ok(outputs) => {
                    a.status = InstanceStatus::Done;
                    a.exit_code = Some(0);
                    a.outputs = outputs;
                    a.error = None;
                    break;
                }
                Err(f) => {
                    a.exit_code = f.exit_code;
                    a.error = Some(f.message);
                    if f.cancelled {
                        a.status = InstanceStatus::Cancelled;
                        break;
                    }
                }
            }
        }
        a.finished = Some(now());
        self.scheduler.release(&reservation);
        a
    }

    #[allow(clippy::too_many_arguments)]
    fn attempt(
        &self,
        step: &Step,
        job: &Job,
        connector: &dyn Connector,
        reservation: &Reservation,
        refs: &[String],
        attempt: u32,
        transfers: &mut Vec<TransferRecord>,
    ) -> Result<IndexMap<String, Payload>, Failure> {
        let rank0 = reservation.rank0();
        let mut paths: HashMap<String, String> = HashMap::new();
        for id in refs {
            if paths.contains_key(id) {
                continue;
            }
            let path = if self.options.stage_inputs {
                let (path, t) = self.data.ensure_at(id, &rank0, &self.deployments)?;
                transfers.extend(t);
                path
            } else {
                let name = self.data.get(id).map(|d| d.file_name).unwrap_or_default();
                connector.site_path(&rank0, &RemotePath::new(format!("{}/data/{id}/{name}", self.run_id))?)?
            };
            paths.insert(id.clone(), path.display().to_string());
        }

        let workdir = RemotePath::new(format!("{}/work/{}/{}/a{attempt}", self.run_id, step.id, tag_dir(&job.tag)))?;
        let outdir = connector.site_path(&rank0, &workdir)?.display().to_string();
        let argv = render_argv(&step.command, step.shell, |name| {
            if name == OUTDIR {
                Some(Rendered::Scalar(outdir.clone()))
            } else {
                job.inputs.get(name).map(|p| render(p, &paths))
            }
        })?;
        let resources: Vec<String> = reservation.resource_ids().iter().map(|r| r.to_string()).collect();
        let env = vec![
            ("HF_SEED".to_string(), self.options.seed.to_string()),
            ("HF_RESOURCES".to_string(), resources.join(",")),
        ];
        let result = connector.run(&ExecRequest {
            resource: &rank0,
            argv: &argv,
            env: &env,
            workdir: &workdir,
            cancel: &self.cancel,
        })?;
        if result.cancelled {
            return Err(Failure { exit_code: None, message: "cancelled".into(), cancelled: true });
        }
        if !result.success() {
            let stderr = String::from_utf8_lossy(&result.stderr);
            let tail: String = stderr.trim_end().lines().last().unwrap_or("").chars().take(200).collect();
            let status = result.exit_code.map_or("a signal".to_string(), |c| format!("status {c}"));
            let mut message = format!("command exited with {status}");
            if !tail.is_empty() {
                message = format!("{message}: {tail}");
            }
            return Err(Failure { exit_code: result.exit_code, message, cancelled: false });
        }

        for port in &step.outputs {
            if let Capture::File(path) = &port.capture {
                let remote = workdir.join(path)?;
                if connector.stat(&rank0, &remote)?.is_none() {
                    return Err(Failure::new(format!("output not produced: `{path}` for port `{}`", port.name)));
                }
            }
        }
        let mut outputs = IndexMap::new();
        for port in &step.outputs {
            let id = ref_id(&step.id, &port.name, &job.tag);
            let origin = (step.id.as_str(), &job.tag, port.name.as_str());
            let payload = match (&port.capture, port.port_type.kind) {
                (Capture::Stdout, Kind::Value) => parse_value(&result.stdout, port.port_type.list_depth, &port.name)?,
                (Capture::Stdout, Kind::File) => {
                    let local = self.data.controller_path(&id, "stdout");
                    write_file(&local, &result.stdout)?;
                    self.data.register_controller_file(&id, origin, &local)?;
                    Payload::File(id)
                }
                (Capture::File(path), Kind::File) => {
                    let remote = workdir.join(path)?;
                    self.data.register_site_output(&id, origin, &rank0, &remote, &self.deployments)?;
                    Payload::File(id)
                }
                (Capture::File(path), Kind::Value) => {
                    let remote = workdir.join(path)?;
                    let local = self.run_dir.join("values").join(&id);
                    transfers.push(connector.get(&rank0, &remote, &local)?);
                    let bytes = std::fs::read(&local)?;
                    parse_value(&bytes, port.port_type.list_depth, &port.name)?
                }
            };
            outputs.insert(port.name.clone(), payload);
        }
        Ok(outputs)
    }

    /// Brings a workflow output back to the controller and writes it under
    /// `outdir`: `<name>.json` holds the value, with file entries replaced by
    /// paths relative to `outdir`, and files go under `<name>/`.
    fn write_output(
        &self,
        outdir: &Path,
        name: &str,
        payload: &Payload,
        collection: &mut Vec<TransferRecord>,
    ) -> Result<PathBuf, Failure> {
        let json = self.materialize(outdir, name, payload, &mut Vec::new(), collection)?;
        let path = outdir.join(format!("{name}.json"));
        let text = serde_json::to_string_pretty(&json).expect("json value serializes");
        write_file(&path, format!("{text}\n").as_bytes())?;
        Ok(path)
    }

    fn materialize(
        &self,
        outdir: &Path,
        name: &str,
        payload: &Payload,
        index: &mut Vec<usize>,
        collection: &mut Vec<TransferRecord>,
    ) -> Result<Value, Failure> {
        Ok(match payload {
            Payload::Value(v) => v.clone(),
            Payload::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    index.push(i);
                    out.push(self.materialize(outdir, name, item, index, collection)?);
                    index.pop();
                }
                Value::Array(out)
            }
            Payload::File(id) => {
                let (local, transfers) = self.data.ensure_controller(id, &self.deployments)?;
                collection.extend(transfers);
                let data = self.data.get(id).ok_or_else(|| Failure::new(format!("unknown data `{id}`")))?;
                let mut relative = PathBuf::from(name);
                for i in index.iter() {
                    relative.push(i.to_string());
                }
                relative.push(&data.file_name);
                let target = outdir.join(&relative);
                if let Some(parent) = target.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::copy(&local, &target)?;
                Value::String(relative.display().to_string())
            }
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)
}

/// Stdout (or a captured file) as a value: trimmed, JSON when it parses,
/// otherwise the text itself.
fn parse_value(bytes: &[u8], list_depth: usize, port: &str) -> Result<Payload, Failure> {
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim();
    let value = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()));
    Payload::from_json(&value, list_depth)
        .ok_or_else(|| Failure::new(format!("output `{port}` is not a list nested {list_depth} level(s) deep")))
}

fn render(payload: &Payload, paths: &HashMap<String, String>) -> Rendered {
    match payload {
        Payload::Value(Value::String(s)) => Rendered::Scalar(s.clone()),
        Payload::Value(v) => Rendered::Scalar(v.to_string()),
        Payload::File(id) => Rendered::Scalar(paths.get(id).cloned().unwrap_or_default()),
        Payload::List(items) => Rendered::List(items.iter().map(|p| render(p, paths)).collect()),
    }
}
