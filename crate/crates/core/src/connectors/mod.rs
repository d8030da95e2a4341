//! Execution sites.
//!
//! A [`Connector`] runs plain commands on the resources of one deployed model
//! and moves files between the controller and those resources. There is no
//! operation that copies between two sites: every transfer has the controller
//! at one end.

mod process;
mod simbatch;
mod site;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::cancel::CancelToken;
use crate::deploy::{ConnectorConfig, ConnectorKind, Model, ResourceId};
use crate::provenance::{Timestamp, TransferRecord};

pub use process::{run_process, ProcessSpec, OUTPUT_LIMIT};
pub use simbatch::{JobId, JobRecord, JobState, SimBatch, SimBatchQueue};
pub use site::{DirectorySite, Local, Sandbox};

/// Path relative to a resource directory. Absolute paths and `..` are rejected
/// so nothing addressed through a connector can leave its resource.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RemotePath(String);

impl RemotePath {
    pub fn new(path: impl Into<String>) -> Result<Self, ConnectorError> {
        let path = path.into();
        let ok = !path.is_empty()
            && !Path::new(&path).is_absolute()
            && path.split('/').all(|c| !c.is_empty() && c != ".." && c != ".");
        if ok {
            Ok(RemotePath(path))
        } else {
            Err(ConnectorError::PathEscape(path))
        }
    }

    pub fn join(&self, rest: &str) -> Result<Self, ConnectorError> {
        RemotePath::new(format!("{}/{rest}", self.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }
}

impl fmt::Display for RemotePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct ExecRequest<'a> {
    pub resource: &'a ResourceId,
    pub argv: &'a [String],
    pub env: &'a [(String, String)],
    /// Working directory, created if missing.
    pub workdir: &'a RemotePath,
    pub cancel: &'a CancelToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecResult {
    /// `None` when the process was killed by a signal or cancelled.
    pub exit_code: Option<i32>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub wall_ms: u64,
    pub cancelled: bool,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.cancelled
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileInfo {
    pub bytes: u64,
    pub sha256: String,
}

impl FileInfo {
    pub fn of(path: &Path) -> std::io::Result<FileInfo> {
        use sha2::{Digest, Sha256};
        let mut file = std::fs::File::open(path)?;
        let mut hasher = Sha256::new();
        let bytes = std::io::copy(&mut file, &mut hasher)?;
        Ok(FileInfo { bytes, sha256: hex::encode(hasher.finalize()) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceInit {
    pub service: String,
    pub resources: usize,
    pub slots: usize,
    pub initialized_at: Timestamp,
}

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("path `{0}` escapes the resource directory")]
    PathEscape(String),
    #[error("unknown resource {0}")]
    UnknownResource(String),
    #[error("connector not initialized")]
    NotInitialized,
    #[error("failed to spawn `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("unknown job {0}")]
    UnknownJob(u64),
    #[error("cancelled")]
    Cancelled,
}

impl ConnectorError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ConnectorError::Io { context: context.into(), source }
    }
}

pub trait Connector: Send + Sync {
    fn kind(&self) -> ConnectorKind;

    /// Brings up every service of the model; returns one entry per service.
    fn initialize(&self, model: &Model) -> Result<Vec<ServiceInit>, ConnectorError>;

    fn teardown(&self) -> Result<(), ConnectorError>;

    fn available_resources(&self, service: &str) -> Vec<usize>;

    fn run(&self, request: &ExecRequest<'_>) -> Result<ExecResult, ConnectorError>;

    /// Controller to site copy.
    fn put(&self, local: &Path, resource: &ResourceId, remote: &RemotePath) -> Result<TransferRecord, ConnectorError>;

    /// Site to controller copy.
    fn get(&self, resource: &ResourceId, remote: &RemotePath, local: &Path) -> Result<TransferRecord, ConnectorError>;

    /// Where `remote` lives as seen by commands running on `resource`.
    fn site_path(&self, resource: &ResourceId, remote: &RemotePath) -> Result<PathBuf, ConnectorError>;

    /// Size and sha256 of the file at `remote`, `None` if it does not exist.
    fn stat(&self, resource: &ResourceId, remote: &RemotePath) -> Result<Option<FileInfo>, ConnectorError>;
}

/// Builds the connector described by a model's configuration.
pub fn build_connector(model: &Model, staging_dir: &Path) -> Arc<dyn Connector> {
    match &model.connector {
        ConnectorConfig::Local { root } => {
            let root = root.clone().unwrap_or_else(|| staging_dir.join("sites").join(&model.name));
            Arc::new(Local::new(&model.name, root))
        }
        ConnectorConfig::Sandbox { root } => Arc::new(Sandbox::new(&model.name, root.clone())),
        ConnectorConfig::SimBatch(c) => Arc::new(SimBatch::new(&model.name, c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remote_paths_are_confined() {
        assert!(RemotePath::new("run/data/x.bin").is_ok());
        for bad in ["../../etc", "/etc/passwd", "a/../b", "", "a//b", "./a"] {
            assert!(RemotePath::new(bad).is_err(), "{bad}");
        }
        assert_eq!(RemotePath::new("a/b/c.txt").unwrap().file_name(), "c.txt");
    }
}
