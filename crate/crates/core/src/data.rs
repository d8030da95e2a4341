//! Location registry and controller-relayed staging.
//!
//! Every file datum of a run is a [`DataRef`] with one or more locations.
//! Moving a datum to a resource that does not hold it always goes through the
//! controller's staging directory: one `get` from a holder (unless the
//! controller already has a copy) followed by one `put` to the target.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::connectors::{ConnectorError, FileInfo, RemotePath};
use crate::dataflow::Tag;
use crate::deploy::{Deployments, ResourceId};
use crate::provenance::TransferRecord;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Location {
    Controller(PathBuf),
    Site { resource: ResourceId, path: RemotePath },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataRef {
    pub id: String,
    pub step: String,
    pub tag: Tag,
    pub port: String,
    pub file_name: String,
    pub size_bytes: u64,
    /// sha256 computed at registration.
    pub checksum: String,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown data reference `{0}`")]
    UnknownRef(String),
    #[error("duplicate data reference `{0}`")]
    DuplicateRef(String),
    #[error("output not produced: `{0}`")]
    OutputNotProduced(String),
    #[error("no reachable holder for `{0}`")]
    NoHolder(String),
    #[error("model `{0}` is not deployed")]
    NotDeployed(String),
    #[error(transparent)]
    Connector(#[from] ConnectorError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

#[derive(Debug)]
struct Entry {
    data: DataRef,
    locations: Vec<Location>,
}

/// One in-flight transfer per datum and destination (`None` is the controller).
type FlightKey = (String, Option<ResourceId>);

/// Registry of every file datum of one run.
#[derive(Debug)]
pub struct DataManager {
    run_id: String,
    staging: PathBuf,
    elide: bool,
    entries: Mutex<HashMap<String, Entry>>,
    flights: Mutex<HashMap<FlightKey, Arc<Mutex<()>>>>,
    copies: AtomicU64,
}

impl DataManager {
    /// `staging` is this run's controller directory; site-side copies go
    /// under `<run_id>/data/` on each resource.
    pub fn new(run_id: &str, staging: PathBuf) -> Self {
        DataManager {
            run_id: run_id.to_string(),
            staging,
            elide: true,
            entries: Mutex::new(HashMap::new()),
            flights: Mutex::new(HashMap::new()),
            copies: AtomicU64::new(0),
        }
    }

    /// With elision off, every `ensure_at` performs a fresh put even when the
    /// target already holds the datum.
    pub fn with_elision(mut self, elide: bool) -> Self {
        self.elide = elide;
        self
    }

    pub fn staging(&self) -> &Path {
        &self.staging
    }

    pub fn controller_path(&self, id: &str, file_name: &str) -> PathBuf {
        self.staging.join("data").join(id).join(file_name)
    }

    fn site_path_for(&self, id: &str, file_name: &str) -> Result<RemotePath, ConnectorError> {
        if self.elide {
            RemotePath::new(format!("{}/data/{id}/{file_name}", self.run_id))
        } else {
            let n = self.copies.fetch_add(1, Ordering::SeqCst);
            RemotePath::new(format!("{}/data/{id}/{n}/{file_name}", self.run_id))
        }
    }

    fn insert(&self, data: DataRef, location: Location) -> Result<DataRef, DataError> {
        let mut entries = self.entries.lock().expect("registry lock poisoned");
        if entries.contains_key(&data.id) {
            return Err(DataError::DuplicateRef(data.id));
        }
        entries.insert(data.id.clone(), Entry { data: data.clone(), locations: vec![location] });
        Ok(data)
    }

    /// Registers a file an instance left on its resource.
    pub fn register_site_output(
        &self,
        id: &str,
        origin: (&str, &Tag, &str),
        resource: &ResourceId,
        path: &RemotePath,
        deployments: &Deployments,
    ) -> Result<DataRef, DataError> {
        let connector =
            deployments.connector(&resource.model).ok_or_else(|| DataError::NotDeployed(resource.model.clone()))?;
        let info = connector
            .stat(resource, path)?
            .ok_or_else(|| DataError::OutputNotProduced(path.file_name().to_string()))?;
        let data = data_ref(id, origin, path.file_name(), info);
        self.insert(data, Location::Site { resource: resource.clone(), path: path.clone() })
    }

    /// Registers a file already in controller staging (captured stdout).
    pub fn register_controller_file(&self, id: &str, origin: (&str, &Tag, &str), path: &Path) -> Result<DataRef, DataError> {
        let info = FileInfo::of(path).map_err(|source| DataError::Io { context: format!("reading {}", path.display()), source })?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| id.to_string());
        self.insert(data_ref(id, origin, &name, info), Location::Controller(path.to_path_buf()))
    }

    pub fn get(&self, id: &str) -> Option<DataRef> {
        self.entries.lock().expect("registry lock poisoned").get(id).map(|e| e.data.clone())
    }

    pub fn locations(&self, id: &str) -> Vec<Location> {
        self.entries.lock().expect("registry lock poisoned").get(id).map(|e| e.locations.clone()).unwrap_or_default()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.lock().expect("registry lock poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn add_location(&self, id: &str, location: Location) {
        let mut entries = self.entries.lock().expect("registry lock poisoned");
        if let Some(e) = entries.get_mut(id) {
            if !e.locations.contains(&location) {
                e.locations.push(location);
            }
        }
    }

    fn flight(&self, id: &str, target: Option<&ResourceId>) -> Arc<Mutex<()>> {
        self.flights
            .lock()
            .expect("flight lock poisoned")
            .entry((id.to_string(), target.cloned()))
            .or_default()
            .clone()
    }

    /// Makes sure the controller holds a copy; returns its path and the get
    /// performed, if any.
    pub fn ensure_controller(&self, id: &str, deployments: &Deployments) -> Result<(PathBuf, Vec<TransferRecord>), DataError> {
        let flight = self.flight(id, None);
        let _guard = flight.lock().expect("flight lock poisoned");
        let data = self.get(id).ok_or_else(|| DataError::UnknownRef(id.to_string()))?;
        let locations = self.locations(id);
        if let Some(path) = locations.iter().find_map(|l| match l {
            Location::Controller(p) => Some(p.clone()),
            _ => None,
        }) {
            return Ok((path, Vec::new()));
        }
        let mut last_error = None;
        for location in &locations {
            let Location::Site { resource, path } = location else { continue };
            let Some(connector) = deployments.connector(&resource.model) else { continue };
            let local = self.controller_path(id, &data.file_name);
            match connector.get(resource, path, &local) {
                Ok(record) => {
                    self.add_location(id, Location::Controller(local.clone()));
                    return Ok((local, vec![record]));
                }
                Err(e) => last_error = Some(e),
            }
        }
        Err(last_error.map(DataError::from).unwrap_or_else(|| DataError::NoHolder(id.to_string())))
    }

    /// Makes the datum available on `target`, relaying through the controller
    /// when the target does not hold it. Returns the path commands on the
    /// target use, and every transfer performed by this call.
    pub fn ensure_at(
        &self,
        id: &str,
        target: &ResourceId,
        deployments: &Deployments,
    ) -> Result<(PathBuf, Vec<TransferRecord>), DataError> {
        let connector = deployments.connector(&target.model).ok_or_else(|| DataError::NotDeployed(target.model.clone()))?;
        let flight = self.flight(id, Some(target));
        let _guard = flight.lock().expect("flight lock poisoned");
        let data = self.get(id).ok_or_else(|| DataError::UnknownRef(id.to_string()))?;
        if self.elide {
            let held = self.locations(id).into_iter().find_map(|l| match l {
                Location::Site { resource, path } if &resource == target => Some(path),
                _ => None,
            });
            if let Some(path) = held {
                return Ok((connector.site_path(target, &path)?, Vec::new()));
            }
        }
        let (local, mut transfers) = self.ensure_controller(id, deployments)?;
        let remote = self.site_path_for(id, &data.file_name)?;
        transfers.push(connector.put(&local, target, &remote)?);
        self.add_location(id, Location::Site { resource: target.clone(), path: remote.clone() });
        Ok((connector.site_path(target, &remote)?, transfers))
    }

    /// True iff the bytes at `location` match the checksum taken at registration.
    pub fn checksum_verify(&self, id: &str, location: &Location, deployments: &Deployments) -> Result<bool, DataError> {
        let data = self.get(id).ok_or_else(|| DataError::UnknownRef(id.to_string()))?;
        let info = match location {
            Location::Controller(path) => Some(
                FileInfo::of(path).map_err(|source| DataError::Io { context: format!("reading {}", path.display()), source })?,
            ),
            Location::Site { resource, path } => deployments
                .connector(&resource.model)
                .ok_or_else(|| DataError::NotDeployed(resource.model.clone()))?
                .stat(resource, path)?,
        };
        Ok(info.is_some_and(|i| i.sha256 == data.checksum))
    }

    /// For each of the `count` resources of `model/service`, how many of the
    /// given data already live there.
    pub fn locality(&self, ids: &[&str], model: &str, service: &str, count: usize) -> Vec<usize> {
        let mut counts = vec![0; count];
        let entries = self.entries.lock().expect("registry lock poisoned");
        for id in ids {
            let Some(entry) = entries.get(*id) else { continue };
            let mut seen = vec![false; count];
            for location in &entry.locations {
                if let Location::Site { resource, .. } = location {
                    if resource.model == model && resource.service == service && resource.index < count {
                        seen[resource.index] = true;
                    }
                }
            }
            for (c, s) in counts.iter_mut().zip(seen) {
                *c += s as usize;
            }
        }
        counts
    }
}

fn data_ref(id: &str, (step, tag, port): (&str, &Tag, &str), file_name: &str, info: FileInfo) -> DataRef {
    DataRef {
        id: id.to_string(),
        step: step.to_string(),
        tag: tag.clone(),
        port: port.to_string(),
        file_name: file_name.to_string(),
        size_bytes: info.bytes,
        checksum: info.sha256,
    }
}
