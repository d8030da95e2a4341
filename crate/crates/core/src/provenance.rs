//! Machine-readable run report and the invariant validators that read it.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub type Timestamp = DateTime<Utc>;

/// Current time truncated to whole milliseconds, the report's resolution.
pub fn now() -> Timestamp {
    let t = Utc::now();
    Utc.timestamp_millis_opt(t.timestamp_millis()).single().unwrap_or(t)
}

fn epoch() -> Timestamp {
    Utc.timestamp_millis_opt(0).single().expect("epoch is representable")
}

mod iso {
    use super::Timestamp;
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

    pub fn serialize<S: Serializer>(t: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let text = String::deserialize(d)?;
        chrono::DateTime::parse_from_rfc3339(&text)
            .map(|t| t.with_timezone(&chrono::Utc))
            .map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;
        use serde::Serialize;

        pub fn serialize<S: Serializer>(t: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            t.map(|t| t.format(FORMAT).to_string()).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|text| {
                    chrono::DateTime::parse_from_rfc3339(&text)
                        .map(|t| t.with_timezone(&chrono::Utc))
                        .map_err(serde::de::Error::custom)
                })
                .transpose()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Controller to site (stage-in).
    In,
    /// Site to controller (stage-out).
    Out,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub direction: Direction,
    /// `model/service/index` of the site end.
    pub resource: String,
    /// Controller end.
    pub local_path: String,
    /// Site end, relative to the resource directory.
    pub remote_path: String,
    pub bytes: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub name: String,
    pub resources: usize,
    pub slots: usize,
    #[serde(with = "iso::option")]
    pub initialized_at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub model: String,
    pub connector: String,
    #[serde(with = "iso")]
    pub deployed_at: Timestamp,
    #[serde(with = "iso::option")]
    pub undeployed_at: Option<Timestamp>,
    pub services: Vec<ServiceRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceStatus {
    Pending,
    Scheduled,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl InstanceStatus {
    /// Allowed moves: pending -> scheduled -> running -> {done, failed, cancelled},
    /// plus cancellation before running.
    pub fn can_move_to(self, next: InstanceStatus) -> bool {
        use InstanceStatus::*;
        matches!(
            (self, next),
            (Pending, Scheduled)
                | (Scheduled, Running)
                | (Running, Done | Failed | Cancelled)
                | (Pending | Scheduled, Cancelled | Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, InstanceStatus::Done | InstanceStatus::Failed | InstanceStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingRecord {
    pub model: String,
    pub service: String,
    pub resources_requested: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub step: String,
    pub tag: Vec<usize>,
    pub status: InstanceStatus,
    pub binding: BindingRecord,
    /// Resource indices reserved by the last attempt; the command ran on the first.
    pub resources: Vec<usize>,
    #[serde(with = "iso")]
    pub queued: Timestamp,
    #[serde(with = "iso::option")]
    pub started: Option<Timestamp>,
    #[serde(with = "iso::option")]
    pub finished: Option<Timestamp>,
    pub exit_code: Option<i32>,
    pub attempts: u32,
    pub transfers: Vec<TransferRecord>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub id: String,
    pub workflow: String,
    pub seed: u64,
    #[serde(with = "iso")]
    pub started: Timestamp,
    #[serde(with = "iso")]
    pub finished: Timestamp,
    pub status: String,
    /// Controller staging directory of this run; every transfer's local end lives under it.
    pub staging_dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub run: RunInfo,
    pub deployments: Vec<DeploymentRecord>,
    pub instances: Vec<ProvenanceRecord>,
    pub outputs: IndexMap<String, String>,
    /// Stage-out transfers that brought workflow outputs back to the controller.
    #[serde(default)]
    pub collection: Vec<TransferRecord>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Report, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json() + "\n")
    }

    /// Zeroes every timestamp and duration so reports can be compared byte for byte.
    pub fn normalize_times(&mut self) {
        let zero = epoch();
        self.run.started = zero;
        self.run.finished = zero;
        for d in &mut self.deployments {
            d.deployed_at = zero;
            d.undeployed_at = d.undeployed_at.map(|_| zero);
            for s in &mut d.services {
                s.initialized_at = s.initialized_at.map(|_| zero);
            }
        }
        let transfers = self
            .instances
            .iter_mut()
            .flat_map(|i| {
                i.queued = zero;
                i.started = i.started.map(|_| zero);
                i.finished = i.finished.map(|_| zero);
                i.transfers.iter_mut()
            })
            .chain(self.collection.iter_mut());
        for t in transfers {
            t.wall_ms = 0;
        }
    }

    pub fn all_transfers(&self) -> impl Iterator<Item = &TransferRecord> {
        self.instances.iter().flat_map(|i| i.transfers.iter()).chain(self.collection.iter())
    }
}

/// Report validators. Each returns the list of violations found.
pub mod check {
    use super::*;

    /// Every transfer has the controller as one endpoint: its local end lies
    /// in the run's staging directory and its remote end is a known resource.
    pub fn star_topology(report: &Report) -> Vec<String> {
        let models: HashMap<&str, &DeploymentRecord> =
            report.deployments.iter().map(|d| (d.model.as_str(), d)).collect();
        let staging = Path::new(&report.run.staging_dir);
        let mut problems = Vec::new();
        for t in report.all_transfers() {
            if !Path::new(&t.local_path).starts_with(staging) {
                problems.push(format!("transfer {} <-> {} bypasses the controller", t.resource, t.local_path));
            }
            let known = t
                .resource
                .parse::<crate::deploy::ResourceId>()
                .ok()
                .and_then(|r| {
                    let d = models.get(r.model.as_str())?;
                    d.services.iter().find(|s| s.name == r.service && r.index < s.resources)
                })
                .is_some();
            if !known {
                problems.push(format!("transfer endpoint `{}` is not a deployed resource", t.resource));
            }
            if Path::new(&t.remote_path).is_absolute() || t.remote_path.split('/').any(|c| c == "..") {
                problems.push(format!("remote path `{}` escapes its resource", t.remote_path));
            }
        }
        problems
    }

    /// At no instant does a resource run more instances than it has slots, and
    /// every instance holds exactly the resources its binding requested.
    pub fn slot_conservation(report: &Report) -> Vec<String> {
        let mut slots = HashMap::new();
        for d in &report.deployments {
            for s in &d.services {
                slots.insert((d.model.as_str(), s.name.as_str()), s.slots);
            }
        }
        let mut problems = Vec::new();
        let mut events: BTreeMap<(String, String, usize), Vec<(i64, i32)>> = BTreeMap::new();
        for inst in &report.instances {
            let b = &inst.binding;
            if inst.started.is_some() && inst.resources.len() != b.resources_requested {
                problems.push(format!(
                    "{}{:?} holds {} resources, requested {}",
                    inst.step,
                    inst.tag,
                    inst.resources.len(),
                    b.resources_requested
                ));
            }
            let mut unique = inst.resources.clone();
            unique.sort_unstable();
            unique.dedup();
            if unique.len() != inst.resources.len() {
                problems.push(format!("{}{:?} reserved a resource twice", inst.step, inst.tag));
            }
            if let (Some(s), Some(f)) = (inst.started, inst.finished) {
                for &r in &inst.resources {
                    let e = events.entry((b.model.clone(), b.service.clone(), r)).or_default();
                    e.push((s.timestamp_millis(), 1));
                    e.push((f.timestamp_millis(), -1));
                }
            }
        }
        for ((model, service, index), mut evs) in events {
            // half-open intervals: a release at t happens before an acquire at t
            evs.sort();
            let limit = slots.get(&(model.as_str(), service.as_str())).copied().unwrap_or(0);
            let mut running = 0;
            for (t, delta) in evs {
                running += delta;
                if running > limit as i32 {
                    problems.push(format!("{model}/{service}/{index} ran {running} instances at t={t}ms, {limit} slot(s)"));
                    break;
                }
            }
        }
        problems
    }

    /// Each touched model was deployed once, with every service initialized
    /// before any instance on that model started.
    pub fn co_allocation(report: &Report) -> Vec<String> {
        let mut problems = Vec::new();
        let mut count: HashMap<&str, usize> = HashMap::new();
        for d in &report.deployments {
            *count.entry(d.model.as_str()).or_default() += 1;
        }
        for (model, n) in &count {
            if *n != 1 {
                problems.push(format!("model `{model}` has {n} deploy events"));
            }
        }
        for d in &report.deployments {
            let first_start = report
                .instances
                .iter()
                .filter(|i| i.binding.model == d.model)
                .filter_map(|i| i.started)
                .min();
            for s in &d.services {
                match (s.initialized_at, first_start) {
                    (None, _) => problems.push(format!("service `{}/{}` never initialized", d.model, s.name)),
                    (Some(init), Some(start)) if init > start => problems.push(format!(
                        "service `{}/{}` initialized after the model's first instance started",
                        d.model, s.name
                    )),
                    _ => {}
                }
            }
        }
        for i in &report.instances {
            if i.started.is_some() && !count.contains_key(i.binding.model.as_str()) {
                problems.push(format!("{}{:?} ran on undeployed model `{}`", i.step, i.tag, i.binding.model));
            }
        }
        problems
    }

    /// queued <= started <= finished, and terminal records have attempts >= 1.
    pub fn timestamps(report: &Report) -> Vec<String> {
        let mut problems = Vec::new();
        for i in &report.instances {
            let ordered = match (i.started, i.finished) {
                (Some(s), Some(f)) => i.queued <= s && s <= f,
                (Some(s), None) => i.queued <= s,
                (None, Some(f)) => i.queued <= f,
                (None, None) => true,
            };
            if !ordered {
                problems.push(format!("{}{:?}: timestamps out of order", i.step, i.tag));
            }
            if i.status.is_terminal() && i.attempts == 0 && i.started.is_some() {
                problems.push(format!("{}{:?}: terminal record without attempts", i.step, i.tag));
            }
        }
        problems
    }

    pub fn all(report: &Report) -> Vec<String> {
        let mut problems = star_topology(report);
        problems.extend(slot_conservation(report));
        problems.extend(co_allocation(report));
        problems.extend(timestamps(report));
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(ms: i64) -> Timestamp {
        Utc.timestamp_millis_opt(ms).single().unwrap()
    }

    fn report() -> Report {
        Report {
            run: RunInfo {
                id: "r".into(),
                workflow: "w".into(),
                seed: 7,
                started: ts(1000),
                finished: ts(9000),
                status: "success".into(),
                staging_dir: "/stage/r".into(),
            },
            deployments: vec![DeploymentRecord {
                model: "hpc".into(),
                connector: "sandbox".into(),
                deployed_at: ts(1000),
                undeployed_at: Some(ts(9000)),
                services: vec![
                    ServiceRecord { name: "gpu".into(), resources: 2, slots: 1, initialized_at: Some(ts(1001)) },
                    ServiceRecord { name: "db".into(), resources: 1, slots: 1, initialized_at: Some(ts(1001)) },
                ],
            }],
            instances: vec![
                instance(vec![0], 2000, 3000),
                instance(vec![0], 3000, 4000),
                instance(vec![1], 2500, 3500),
            ],
            outputs: IndexMap::new(),
            collection: vec![],
        }
    }

    fn instance(resources: Vec<usize>, start: i64, finish: i64) -> ProvenanceRecord {
        ProvenanceRecord {
            step: "s".into(),
            tag: vec![],
            status: InstanceStatus::Done,
            binding: BindingRecord { model: "hpc".into(), service: "gpu".into(), resources_requested: resources.len() },
            resources,
            queued: ts(1500),
            started: Some(ts(start)),
            finished: Some(ts(finish)),
            exit_code: Some(0),
            attempts: 1,
            transfers: vec![TransferRecord {
                direction: Direction::In,
                resource: "hpc/gpu/0".into(),
                local_path: "/stage/r/data/x".into(),
                remote_path: "r/data/x".into(),
                bytes: 3,
                wall_ms: 1,
            }],
            outputs: vec![],
            error: None,
        }
    }

    #[test]
    fn clean_report_passes_every_check() {
        assert_eq!(check::all(&report()), Vec::<String>::new());
    }

    #[test]
    fn json_round_trip_and_normalization() {
        let mut r = report();
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        r.normalize_times();
        let json = r.to_json();
        assert!(json.contains("1970-01-01T00:00:00.000Z"));
        assert!(!json.contains("1970-01-01T00:00:01"));
    }

    #[test]
    fn detects_direct_site_transfer() {
        let mut r = report();
        r.instances[0].transfers[0].local_path = "/sites/other/x".into();
        assert_eq!(check::star_topology(&r).len(), 1);
    }

    #[test]
    fn detects_slot_overuse() {
        let mut r = report();
        r.instances.push(instance(vec![0], 2100, 2200));
        assert_eq!(check::slot_conservation(&r).len(), 1);
    }

    #[test]
    fn detects_late_service_init() {
        let mut r = report();
        r.deployments[0].services[1].initialized_at = Some(ts(2001));
        assert_eq!(check::co_allocation(&r).len(), 1);
        r.deployments[0].services[1].initialized_at = None;
        assert_eq!(check::co_allocation(&r).len(), 1);
    }

    #[test]
    fn status_transitions() {
        use InstanceStatus::*;
        assert!(Pending.can_move_to(Scheduled));
        assert!(Running.can_move_to(Done));
        assert!(!Done.can_move_to(Running));
        assert!(!Pending.can_move_to(Running));
    }
}
