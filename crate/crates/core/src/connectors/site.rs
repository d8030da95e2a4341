use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;
use std::time::Instant;

use super::process::{run_process, ProcessSpec};
use super::{Connector, ConnectorError, ExecRequest, ExecResult, FileInfo, RemotePath, ServiceInit};
use crate::deploy::{ConnectorKind, Model, ResourceId};
use crate::provenance::{now, Direction, TransferRecord};

/// A site made of one directory per resource: `root/<service>/<index>/`.
#[derive(Debug)]
pub struct DirectorySite {
    model: String,
    root: PathBuf,
    isolated: bool,
    services: RwLock<Option<HashMap<String, usize>>>,
}

impl DirectorySite {
    pub fn new(model: &str, root: PathBuf, isolated: bool) -> Self {
        DirectorySite { model: model.to_string(), root, isolated, services: RwLock::new(None) }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resource_dir(&self, resource: &ResourceId) -> Result<PathBuf, ConnectorError> {
        let guard = self.services.read().expect("site lock poisoned");
        let services = guard.as_ref().ok_or(ConnectorError::NotInitialized)?;
        match services.get(&resource.service) {
            Some(&count) if resource.model == self.model && resource.index < count => {
                Ok(self.root.join(&resource.service).join(resource.index.to_string()))
            }
            _ => Err(ConnectorError::UnknownResource(resource.to_string())),
        }
    }

    pub fn initialize(&self, model: &Model) -> Result<Vec<ServiceInit>, ConnectorError> {
        let mut inits = Vec::new();
        for service in &model.services {
            for index in 0..service.resource_count {
                let dir = self.root.join(&service.name).join(index.to_string());
                std::fs::create_dir_all(&dir)
                    .map_err(|e| ConnectorError::io(format!("creating {}", dir.display()), e))?;
            }
            inits.push(ServiceInit {
                service: service.name.clone(),
                resources: service.resource_count,
                slots: service.slots_per_resource,
                initialized_at: now(),
            });
        }
        let map = model.services.iter().map(|s| (s.name.clone(), s.resource_count)).collect();
        *self.services.write().expect("site lock poisoned") = Some(map);
        Ok(inits)
    }

    pub fn teardown(&self) {
        *self.services.write().expect("site lock poisoned") = None;
    }

    pub fn available_resources(&self, service: &str) -> Vec<usize> {
        let guard = self.services.read().expect("site lock poisoned");
        guard.as_ref().and_then(|s| s.get(service)).map(|&n| (0..n).collect()).unwrap_or_default()
    }

    pub fn site_path(&self, resource: &ResourceId, remote: &RemotePath) -> Result<PathBuf, ConnectorError> {
        Ok(self.resource_dir(resource)?.join(remote.as_str()))
    }

    pub fn run(&self, request: &ExecRequest<'_>) -> Result<ExecResult, ConnectorError> {
        let home = self.resource_dir(request.resource)?;
        let workdir = home.join(request.workdir.as_str());
        std::fs::create_dir_all(&workdir)
            .map_err(|e| ConnectorError::io(format!("creating {}", workdir.display()), e))?;
        let mut env = request.env.to_vec();
        if self.isolated {
            env.push(("HOME".into(), home.display().to_string()));
        }
        let spec = ProcessSpec { argv: request.argv, env: &env, clear_env: self.isolated, workdir: &workdir };
        run_process(&spec, request.cancel)
    }

    pub fn put(&self, local: &Path, resource: &ResourceId, remote: &RemotePath) -> Result<TransferRecord, ConnectorError> {
        let target = self.site_path(resource, remote)?;
        let (bytes, wall_ms) = copy(local, &target)?;
        Ok(TransferRecord {
            direction: Direction::In,
            resource: resource.to_string(),
            local_path: local.display().to_string(),
            remote_path: remote.to_string(),
            bytes,
            wall_ms,
        })
    }

    pub fn get(&self, resource: &ResourceId, remote: &RemotePath, local: &Path) -> Result<TransferRecord, ConnectorError> {
        let source = self.site_path(resource, remote)?;
        let (bytes, wall_ms) = copy(&source, local)?;
        Ok(TransferRecord {
            direction: Direction::Out,
            resource: resource.to_string(),
            local_path: local.display().to_string(),
            remote_path: remote.to_string(),
            bytes,
            wall_ms,
        })
    }

    pub fn stat(&self, resource: &ResourceId, remote: &RemotePath) -> Result<Option<FileInfo>, ConnectorError> {
        let path = self.site_path(resource, remote)?;
        if !path.is_file() {
            return Ok(None);
        }
        FileInfo::of(&path).map(Some).map_err(|e| ConnectorError::io(format!("reading {}", path.display()), e))
    }
}

fn copy(from: &Path, to: &Path) -> Result<(u64, u64), ConnectorError> {
    let start = Instant::now();
    if let Some(parent) = to.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ConnectorError::io(format!("creating {}", parent.display()), e))?;
    }
    let bytes = std::fs::copy(from, to)
        .map_err(|e| ConnectorError::io(format!("copying {} to {}", from.display(), to.display()), e))?;
    Ok((bytes, start.elapsed().as_millis() as u64))
}

macro_rules! directory_connector {
    ($name:ident, $kind:expr) => {
        impl Connector for $name {
            fn kind(&self) -> ConnectorKind {
                $kind
            }

            fn initialize(&self, model: &Model) -> Result<Vec<ServiceInit>, ConnectorError> {
                self.0.initialize(model)
            }

            fn teardown(&self) -> Result<(), ConnectorError> {
                self.0.teardown();
                Ok(())
            }

            fn available_resources(&self, service: &str) -> Vec<usize> {
                self.0.available_resources(service)
            }

            fn run(&self, request: &ExecRequest<'_>) -> Result<ExecResult, ConnectorError> {
                self.0.run(request)
            }

            fn put(&self, local: &Path, resource: &ResourceId, remote: &RemotePath) -> Result<TransferRecord, ConnectorError> {
                self.0.put(local, resource, remote)
            }

            fn get(&self, resource: &ResourceId, remote: &RemotePath, local: &Path) -> Result<TransferRecord, ConnectorError> {
                self.0.get(resource, remote, local)
            }

            fn site_path(&self, resource: &ResourceId, remote: &RemotePath) -> Result<PathBuf, ConnectorError> {
                self.0.site_path(resource, remote)
            }

            fn stat(&self, resource: &ResourceId, remote: &RemotePath) -> Result<Option<FileInfo>, ConnectorError> {
                self.0.stat(resource, remote)
            }
        }
    };
}

/// Runs commands on the controller host with the controller's environment.
#[derive(Debug)]
pub struct Local(DirectorySite);

impl Local {
    pub fn new(model: &str, root: PathBuf) -> Self {
        Local(DirectorySite::new(model, root, false))
    }
}

/// Emulated air-gapped site: commands start from an empty environment (PATH
/// only) with HOME set to their resource directory, and only see files that
/// were explicitly put there.
#[derive(Debug)]
pub struct Sandbox(DirectorySite);

impl Sandbox {
    pub fn new(model: &str, root: PathBuf) -> Self {
        Sandbox(DirectorySite::new(model, root, true))
    }
}

directory_connector!(Local, ConnectorKind::Local);
directory_connector!(Sandbox, ConnectorKind::Sandbox);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cancel::CancelToken;
    use crate::deploy::{ConnectorConfig, Service};
    use rand::RngCore;

    fn model(root: &Path) -> Model {
        Model {
            name: "site".into(),
            connector: ConnectorConfig::Sandbox { root: root.to_path_buf() },
            services: vec![Service { name: "w".into(), resource_count: 2, slots_per_resource: 1 }],
        }
    }

    fn run(site: &Sandbox, argv: &[&str]) -> ExecResult {
        let argv: Vec<String> = argv.iter().map(|s| s.to_string()).collect();
        site.run(&ExecRequest {
            resource: &ResourceId::new("site", "w", 0),
            argv: &argv,
            env: &[],
            workdir: &RemotePath::new("run/work").unwrap(),
            cancel: &CancelToken::new(),
        })
        .unwrap()
    }

    #[test]
    fn initialize_creates_resource_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let site = Sandbox::new("site", dir.path().join("root"));
        let inits = site.initialize(&model(dir.path())).unwrap();
        assert_eq!(inits.len(), 1);
        assert!(dir.path().join("root/w/0").is_dir());
        assert!(dir.path().join("root/w/1").is_dir());
        assert_eq!(site.available_resources("w"), vec![0, 1]);
        assert!(site.available_resources("other").is_empty());
    }

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let site = Sandbox::new("site", dir.path().join("root"));
        site.initialize(&model(dir.path())).unwrap();
        let mut data = vec![0u8; 1 << 20];
        rand::thread_rng().fill_bytes(&mut data);
        let src = dir.path().join("src.bin");
        std::fs::write(&src, &data).unwrap();
        let res = ResourceId::new("site", "w", 1);
        let remote = RemotePath::new("deep/dir/x.bin").unwrap();
        let put = site.put(&src, &res, &remote).unwrap();
        assert_eq!((put.direction, put.bytes), (Direction::In, 1 << 20));
        let back = dir.path().join("back/x.bin");
        let get = site.get(&res, &remote, &back).unwrap();
        assert_eq!(get.direction, Direction::Out);
        assert_eq!(std::fs::read(back).unwrap(), data);
        // no dedup at this layer
        assert!(site.put(&src, &res, &remote).is_ok());
    }

    #[test]
    fn unknown_resources_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let site = Sandbox::new("site", dir.path().join("root"));
        let remote = RemotePath::new("x").unwrap();
        assert!(matches!(
            site.stat(&ResourceId::new("site", "w", 0), &remote),
            Err(ConnectorError::NotInitialized)
        ));
        site.initialize(&model(dir.path())).unwrap();
        assert!(site.stat(&ResourceId::new("site", "w", 2), &remote).is_err());
        assert!(site.stat(&ResourceId::new("other", "w", 0), &remote).is_err());
        assert_eq!(site.stat(&ResourceId::new("site", "w", 0), &remote).unwrap(), None);
    }

    #[test]
    fn sandbox_sees_only_what_was_put() {
        let dir = tempfile::tempdir().unwrap();
        let site = Sandbox::new("site", dir.path().join("root"));
        site.initialize(&model(dir.path())).unwrap();
        std::fs::write(dir.path().join("secret"), "x").unwrap();
        let missing = run(&site, &["cat", "../data/in.txt"]);
        assert_ne!(missing.exit_code, Some(0));

        let src = dir.path().join("in.txt");
        std::fs::write(&src, "payload").unwrap();
        site.put(&src, &ResourceId::new("site", "w", 0), &RemotePath::new("run/data/in.txt").unwrap()).unwrap();
        let found = run(&site, &["cat", "../data/in.txt"]);
        assert_eq!(found.stdout, b"payload");

        let listing = run(&site, &["sh", "-c", "cd \"$HOME\" && find . -type f | sort"]);
        assert_eq!(String::from_utf8_lossy(&listing.stdout), "./run/data/in.txt\n");
    }

    #[test]
    fn local_inherits_environment() {
        std::env::set_var("HFLOW_SITE_TEST_MARKER", "seen");
        let dir = tempfile::tempdir().unwrap();
        let local = Local::new("site", dir.path().to_path_buf());
        local.initialize(&model(dir.path())).unwrap();
        let argv = vec!["sh".to_string(), "-c".to_string(), "echo $HFLOW_SITE_TEST_MARKER".to_string()];
        let r = local
            .run(&ExecRequest {
                resource: &ResourceId::new("site", "w", 0),
                argv: &argv,
                env: &[],
                workdir: &RemotePath::new("w").unwrap(),
                cancel: &CancelToken::new(),
            })
            .unwrap();
        assert_eq!(r.stdout, b"seen\n");
    }
}
