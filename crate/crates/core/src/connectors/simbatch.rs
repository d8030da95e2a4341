//! Simulated batch scheduler: a FIFO job queue with a concurrency cap and a
//! submission delay, in front of a sandbox-style directory site.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::process::{run_process, ProcessSpec};
use super::site::DirectorySite;
use super::{Connector, ConnectorError, ExecRequest, ExecResult, FileInfo, RemotePath, ServiceInit};
use crate::cancel::CancelToken;
use crate::deploy::{ConnectorKind, Model, ResourceId, SimBatchConfig};
use crate::provenance::TransferRecord;

pub type JobId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobState {
    Queued,
    Running,
    Done,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRecord {
    pub id: JobId,
    pub state: JobState,
    pub submitted_at: Instant,
    pub started_at: Option<Instant>,
    pub finished_at: Option<Instant>,
}

type Work = Box<dyn FnOnce(&CancelToken) -> Result<ExecResult, ConnectorError> + Send>;
type Outcome = Result<ExecResult, ConnectorError>;

struct Job {
    record: JobRecord,
    work: Option<Work>,
    cancel: CancelToken,
    outcome: Option<Outcome>,
}

#[derive(Default)]
struct Table {
    jobs: HashMap<JobId, Job>,
    order: Vec<JobId>,
    queue: VecDeque<JobId>,
    running: usize,
    next_id: JobId,
    closed: bool,
}

struct Shared {
    table: Mutex<Table>,
    changed: Condvar,
}

pub struct SimBatchQueue {
    shared: Arc<Shared>,
    max_running: usize,
    submit_delay: Duration,
    poll_interval: Duration,
    dispatcher: Mutex<Option<JoinHandle<()>>>,
}

impl std::fmt::Debug for SimBatchQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimBatchQueue")
            .field("max_running", &self.max_running)
            .field("submit_delay", &self.submit_delay)
            .field("poll_interval", &self.poll_interval)
            .finish()
    }
}

impl SimBatchQueue {
    pub fn new(max_running: usize, submit_delay: Duration, poll_interval: Duration) -> Self {
        let shared = Arc::new(Shared { table: Mutex::new(Table::default()), changed: Condvar::new() });
        let dispatcher = {
            let shared = shared.clone();
            thread::spawn(move || dispatch(shared, max_running.max(1), submit_delay))
        };
        SimBatchQueue {
            shared,
            max_running: max_running.max(1),
            submit_delay,
            poll_interval,
            dispatcher: Mutex::new(Some(dispatcher)),
        }
    }

    pub fn submit(&self, work: Work) -> Result<JobId, ConnectorError> {
        let mut table = self.shared.table.lock().expect("queue lock poisoned");
        if table.closed {
            return Err(ConnectorError::Cancelled);
        }
        let id = table.next_id;
        table.next_id += 1;
        let record = JobRecord { id, state: JobState::Queued, submitted_at: Instant::now(), started_at: None, finished_at: None };
        table.jobs.insert(id, Job { record, work: Some(work), cancel: CancelToken::new(), outcome: None });
        table.order.push(id);
        table.queue.push_back(id);
        self.shared.changed.notify_all();
        Ok(id)
    }

    /// Polls the job table every poll interval until the job has finished.
    /// Cancelling `cancel` withdraws a queued job or kills a running one.
    pub fn wait(&self, id: JobId, cancel: &CancelToken) -> Outcome {
        let mut withdrawn = false;
        loop {
            {
                let mut table = self.shared.table.lock().expect("queue lock poisoned");
                let job = table.jobs.get_mut(&id).ok_or(ConnectorError::UnknownJob(id))?;
                if matches!(job.record.state, JobState::Done | JobState::Cancelled) {
                    return job.outcome.take().unwrap_or(Err(ConnectorError::Cancelled));
                }
                if cancel.is_cancelled() && !withdrawn {
                    withdrawn = true;
                    job.cancel.cancel();
                    if job.record.state == JobState::Queued {
                        job.record.state = JobState::Cancelled;
                        job.work = None;
                        table.queue.retain(|&j| j != id);
                        self.shared.changed.notify_all();
                        return Err(ConnectorError::Cancelled);
                    }
                }
            }
            thread::sleep(self.poll_interval);
        }
    }

    /// Snapshot of every job in submission order.
    pub fn jobs(&self) -> Vec<JobRecord> {
        let table = self.shared.table.lock().expect("queue lock poisoned");
        table.order.iter().map(|id| table.jobs[id].record.clone()).collect()
    }

    pub fn running(&self) -> usize {
        self.shared.table.lock().expect("queue lock poisoned").running
    }

    pub fn max_running(&self) -> usize {
        self.max_running
    }

    pub fn poll_interval(&self) -> Duration {
        self.poll_interval
    }

    /// Refuses new submissions, cancels queued jobs, kills running ones and
    /// waits for them to exit.
    pub fn shutdown(&self) {
        {
            let mut table = self.shared.table.lock().expect("queue lock poisoned");
            table.closed = true;
            let queued: Vec<JobId> = table.queue.drain(..).collect();
            for id in queued {
                let job = table.jobs.get_mut(&id).expect("queued job exists");
                job.record.state = JobState::Cancelled;
                job.work = None;
                job.outcome = Some(Err(ConnectorError::Cancelled));
            }
            for job in table.jobs.values() {
                if job.record.state == JobState::Running {
                    job.cancel.cancel();
                }
            }
            self.shared.changed.notify_all();
        }
        if let Some(handle) = self.dispatcher.lock().expect("dispatcher lock poisoned").take() {
            let _ = handle.join();
        }
        let mut table = self.shared.table.lock().expect("queue lock poisoned");
        while table.running > 0 {
            table = self.shared.changed.wait(table).expect("queue lock poisoned");
        }
    }
}

impl Drop for SimBatchQueue {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn dispatch(shared: Arc<Shared>, max_running: usize, submit_delay: Duration) {
    let mut table = shared.table.lock().expect("queue lock poisoned");
    loop {
        if table.closed {
            return;
        }
        let head = table.queue.front().copied();
        let Some(id) = head.filter(|_| table.running < max_running) else {
            table = shared.changed.wait(table).expect("queue lock poisoned");
            continue;
        };
        let eligible_at = table.jobs[&id].record.submitted_at + submit_delay;
        let now = Instant::now();
        if now < eligible_at {
            table = shared.changed.wait_timeout(table, eligible_at - now).expect("queue lock poisoned").0;
            continue;
        }
        table.queue.pop_front();
        table.running += 1;
        let job = table.jobs.get_mut(&id).expect("queued job exists");
        job.record.state = JobState::Running;
        job.record.started_at = Some(now);
        let work = job.work.take().expect("queued job has work");
        let cancel = job.cancel.clone();
        let shared_job = shared.clone();
        thread::spawn(move || {
            let outcome = work(&cancel);
            let mut table = shared_job.table.lock().expect("queue lock poisoned");
            table.running -= 1;
            let job = table.jobs.get_mut(&id).expect("running job exists");
            job.record.state = JobState::Done;
            job.record.finished_at = Some(Instant::now());
            job.outcome = Some(outcome);
            shared_job.changed.notify_all();
        });
    }
}

/// Connector whose every command goes through a [`SimBatchQueue`].
#[derive(Debug)]
pub struct SimBatch {
    site: DirectorySite,
    queue: SimBatchQueue,
}

impl SimBatch {
    pub fn new(model: &str, config: &SimBatchConfig) -> Self {
        SimBatch {
            site: DirectorySite::new(model, config.root.clone(), true),
            queue: SimBatchQueue::new(
                config.max_concurrent_jobs,
                Duration::from_millis(config.submit_delay_ms),
                Duration::from_millis(config.poll_interval_ms),
            ),
        }
    }

    pub fn queue(&self) -> &SimBatchQueue {
        &self.queue
    }
}

impl Connector for SimBatch {
    fn kind(&self) -> ConnectorKind {
        ConnectorKind::SimBatch
    }

    fn initialize(&self, model: &Model) -> Result<Vec<ServiceInit>, ConnectorError> {
        self.site.initialize(model)
    }

    fn teardown(&self) -> Result<(), ConnectorError> {
        self.queue.shutdown();
        self.site.teardown();
        Ok(())
    }

    fn available_resources(&self, service: &str) -> Vec<usize> {
        self.site.available_resources(service)
    }

    fn run(&self, request: &ExecRequest<'_>) -> Result<ExecResult, ConnectorError> {
        let home = self.site.resource_dir(request.resource)?;
        let workdir: PathBuf = home.join(request.workdir.as_str());
        std::fs::create_dir_all(&workdir)
            .map_err(|e| ConnectorError::io(format!("creating {}", workdir.display()), e))?;
        let argv = request.argv.to_vec();
        let mut env = request.env.to_vec();
        env.push(("HOME".into(), home.display().to_string()));
        let id = self.queue.submit(Box::new(move |cancel| {
            let spec = ProcessSpec { argv: &argv, env: &env, clear_env: true, workdir: &workdir };
            run_process(&spec, cancel)
        }))?;
        self.queue.wait(id, request.cancel)
    }

    fn put(&self, local: &Path, resource: &ResourceId, remote: &RemotePath) -> Result<TransferRecord, ConnectorError> {
        self.site.put(local, resource, remote)
    }

    fn get(&self, resource: &ResourceId, remote: &RemotePath, local: &Path) -> Result<TransferRecord, ConnectorError> {
        self.site.get(resource, remote, local)
    }

    fn site_path(&self, resource: &ResourceId, remote: &RemotePath) -> Result<PathBuf, ConnectorError> {
        self.site.site_path(resource, remote)
    }

    fn stat(&self, resource: &ResourceId, remote: &RemotePath) -> Result<Option<FileInfo>, ConnectorError> {
        self.site.stat(resource, remote)
    }
}
