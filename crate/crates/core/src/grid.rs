//! Parameter-grid pipeline generator.
//!
//! A grid is networks × hyperparameter settings × datasets, each variant
//! trained on K folds. [`generate`] emits a workflow with one
//! preprocess/segment chain per dataset, one augment/pretrain chain per
//! variant, K classification instances per variant sharing that variant's
//! pretrained weights, a per-variant mean over folds and a single global
//! ranking. Training is replaced by stub tasks whose metric is
//! [`stub_metric`].

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub name: String,
    #[serde(flatten)]
    pub settings: IndexMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub networks: Vec<String>,
    pub hyperparams: Vec<HyperParams>,
    pub datasets: Vec<String>,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("folds must be at least 1")]
    NoFolds,
    #[error("duplicate {axis} name `{name}`")]
    Duplicate { axis: &'static str, name: String },
    #[error("{axis} name `{name}` must be non-empty and must not contain `/`")]
    BadName { axis: &'static str, name: String },
}

impl GridSpec {
    /// Networks `net0..`, datasets `ds0..` and hyperparameter settings `hp0..`
    /// with learning rates halving from 0.1.
    pub fn synthetic(networks: usize, hyperparams: usize, datasets: usize, folds: usize) -> GridSpec {
        GridSpec {
            networks: (0..networks).map(|i| format!("net{i}")).collect(),
            hyperparams: (0..hyperparams)
                .map(|i| HyperParams {
                    name: format!("hp{i}"),
                    settings: IndexMap::from([
                        ("learning_rate".to_string(), json!(0.1 / f64::powi(2.0, i as i32))),
                        ("weight_decay".to_string(), json!(1e-4)),
                        ("lr_decay".to_string(), json!(0.9)),
                    ]),
                })
                .collect(),
            datasets: (0..datasets).map(|i| format!("ds{i}")).collect(),
            folds,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.folds == 0 {
            return Err(GridError::NoFolds);
        }
        let hp_names: Vec<String> = self.hyperparams.iter().map(|h| h.name.clone()).collect();
        for (axis, names) in [("network", &self.networks), ("hyperparameter", &hp_names), ("dataset", &self.datasets)] {
            let mut seen = HashSet::new();
            for name in names {
                if name.is_empty() || name.contains('/') {
                    return Err(GridError::BadName { axis, name: name.clone() });
                }
                if !seen.insert(name) {
                    return Err(GridError::Duplicate { axis, name: name.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn variant_count(&self) -> usize {
        self.networks.len() * self.hyperparams.len() * self.datasets.len()
    }

    /// `network/hyperparams/dataset`, networks outermost, datasets innermost.
    pub fn variant_ids(&self) -> Vec<String> {
        let mut ids = Vec::with_capacity(self.variant_count());
        for n in &self.networks {
            for h in &self.hyperparams {
                for d in &self.datasets {
                    ids.push(variant_id(n, &h.name, d));
                }
            }
        }
        ids
    }
}

/// Reads a grid description from YAML or JSON.
pub fn parse_spec(text: &str) -> Result<GridSpec, serde_yaml::Error> {
    serde_yaml::from_str(text)
}

pub fn variant_id(network: &str, hyperparams: &str, dataset: &str) -> String {
    format!("{network}/{hyperparams}/{dataset}")
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stand-in for a trained model's accuracy.
///
/// ```text
/// h = FNV-1a 64 over the UTF-8 bytes of the variant id
/// x = splitmix64(splitmix64(h XOR seed) XOR fold)
/// metric = (x >> 11) / 2^53
/// ```
///
/// where `splitmix64(x)` adds `0x9e3779b97f4a7c15` and then applies
/// `z ^= z >> 30; z *= 0xbf58476d1ce4e5b9; z ^= z >> 27; z *= 0x94d049bb133111eb; z ^= z >> 31`,
/// all arithmetic wrapping mod 2^64. The result lies in `[0, 1)`.
pub fn stub_metric(seed: u64, variant: &str, fold: u64) -> f64 {
    let x = splitmix64(splitmix64(fnv1a64(variant.as_bytes()) ^ seed) ^ fold);
    (x >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetric {
    pub variant: String,
    pub fold: u64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub variant: String,
    pub mean_metric: f64,
    pub fold_metrics: Vec<f64>,
}

/// Mean over folds, summed in fold order.
pub fn reduce_variant(mut metrics: Vec<FoldMetric>) -> Option<RankEntry> {
    metrics.sort_by_key(|m| m.fold);
    let variant = metrics.first()?.variant.clone();
    let fold_metrics: Vec<f64> = metrics.iter().map(|m| m.metric).collect();
    let mean_metric = fold_metrics.iter().sum::<f64>() / fold_metrics.len() as f64;
    Some(RankEntry { variant, mean_metric, fold_metrics })
}

/// Mean descending, variant id ascending on ties.
pub fn rank(mut entries: Vec<RankEntry>) -> Vec<RankEntry> {
    entries.sort_by(|a, b| b.mean_metric.total_cmp(&a.mean_metric).then_with(|| a.variant.cmp(&b.variant)));
    entries
}

/// Ranking computed directly from [`stub_metric`], without running anything.
pub fn reference_ranking(spec: &GridSpec, seed: u64) -> Vec<RankEntry> {
    let entries = spec
        .variant_ids()
        .into_iter()
        .filter_map(|variant| {
            let folds = (0..spec.folds as u64)
                .map(|fold| FoldMetric { variant: variant.clone(), fold, metric: stub_metric(seed, &variant, fold) })
                .collect();
            reduce_variant(folds)
        })
        .collect();
    rank(entries)
}

/// Makespan of `variants` equal jobs of `hours` each on `slots` parallel slots:
/// `ceil(V/G)·T`.
///
/// Serial exploration of 990 variants at 15 h each gives 14850 h, about 1.7
/// years; this is the arithmetic result, not the "over two years" sometimes
/// quoted for that grid.
pub fn estimate_makespan(variants: u64, hours: f64, slots: u64) -> f64 {
    assert!(slots >= 1, "at least one slot");
    variants.div_ceil(slots) as f64 * hours
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Program and leading arguments that run a stub task, e.g. `["hflow", "stub"]`.
    pub stub_command: Vec<String>,
    /// Batch queue limit of the training site.
    pub max_jobs: usize,
    /// Resources of the training service.
    pub gpus: usize,
    pub poll_interval_ms: u64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { stub_command: vec!["hflow".into(), "stub".into()], max_jobs: 4, gpus: 4, poll_interval_ms: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub workflow: String,
    pub environment: String,
    pub manifest: Value,
}

pub fn generate(spec: &GridSpec, options: &GenerateOptions) -> Result<Generated, GridError> {
    spec.validate()?;
    let stub = options
        .stub_command
        .iter()
        .map(|a| shell_words::quote(a).replace('{', "{{").replace('}', "}}"))
        .collect::<Vec<_>>()
        .join(" ");
    let hyperparams: Vec<Value> = spec.hyperparams.iter().map(|h| serde_json::to_value(h).expect("plain data")).collect();
    let workflow = json!({
        "name": "grid",
        "inputs": {
            "datasets": {"type": "value[]", "default": spec.datasets},
            "networks": {"type": "value[]", "default": spec.networks},
            "hyperparams": {"type": "value[]", "default": hyperparams},
            "folds": {"type": "value[]", "default": (0..spec.folds).collect::<Vec<_>>()},
        },
        "steps": [
            {
                "id": "preprocess",
                "command": format!("{stub} preprocess --dataset {{dataset}} --out {{outdir}}/pre.dat"),
                "in": {"dataset": {"from": "inputs.datasets", "type": "value[]"}},
                "out": {"data": {"type": "file", "capture": "pre.dat"}},
                "scatter": ["dataset"],
            },
            {
                "id": "segment",
                "command": format!("{stub} segment --input {{data}} --out {{outdir}}/seg.dat"),
                "in": {"data": {"from": "preprocess.data", "type": "file"}},
                "out": {"data": {"type": "file", "capture": "seg.dat"}},
            },
            {
                "id": "augment",
                "command": format!(
                    "{stub} augment --network {{network}} --hyperparams {{hp}} --input {{data}} --out {{outdir}}/aug.dat"
                ),
                "in": {
                    "network": {"from": "inputs.networks", "type": "value[]"},
                    "hp": {"from": "inputs.hyperparams", "type": "value[]"},
                    "data": {"from": "segment.data", "type": "file[]"},
                },
                "out": {"data": {"type": "file", "capture": "aug.dat"}},
                "scatter": ["network", "hp", "data"],
                "scatter_method": "cross",
            },
            {
                "id": "pretrain",
                "command": format!("{stub} pretrain --input {{data}} --out {{outdir}}/weights.bin"),
                "in": {"data": {"from": "augment.data", "type": "file"}},
                "out": {"weights": {"type": "file", "capture": "weights.bin"}},
            },
            {
                "id": "classify",
                "command": format!("{stub} classify --weights {{weights}} --fold {{fold}}"),
                "in": {
                    "weights": {"from": "pretrain.weights", "type": "file"},
                    "fold": {"from": "inputs.folds", "type": "value[]"},
                },
                "out": {"metric": {"capture": "stdout"}},
                "scatter": ["fold"],
            },
            {
                "id": "fold_reduce",
                "command": format!("{stub} fold-reduce {{metrics}}"),
                "in": {"metrics": {"from": "classify.metric", "type": "value[]"}},
                "out": {"summary": {"capture": "stdout"}},
            },
            {
                "id": "rank",
                "command": format!("{stub} rank {{summaries}}"),
                "in": {"summaries": {"from": "fold_reduce.summary", "type": "value[]"}},
                "out": {"ranking": {"capture": "stdout"}},
            },
        ],
        "outputs": {"ranking": "rank.ranking", "summaries": "fold_reduce.summary"},
    });
    let environment = json!({
        "deployments": {
            "hpc": {
                "connector": "sim-batch",
                "config": {
                    "root": "sites/hpc",
                    "max_concurrent_jobs": options.max_jobs,
                    "poll_interval_ms": options.poll_interval_ms,
                },
                "services": {
                    "cpu": {"resources": 1, "slots": options.max_jobs.max(1)},
                    "gpu": {"resources": options.gpus.max(1), "slots": 1},
                },
            },
            "controller": {
                "connector": "local",
                "config": {"root": "sites/controller"},
                "services": {"host": {"resources": 1, "slots": 4}},
            },
        },
        "bindings": [
            {"step": "*", "target": "hpc/gpu"},
            {"step": "preprocess", "target": "hpc/cpu"},
            {"step": "segment", "target": "hpc/cpu"},
            {"step": "augment", "target": "hpc/cpu"},
            {"step": "fold_reduce", "target": "controller/host"},
            {"step": "rank", "target": "controller/host"},
        ],
        "staging_dir": "staging",
    });
    let manifest = json!({
        "variants": spec.variant_ids(),
        "variant_count": spec.variant_count(),
        "folds": spec.folds,
        "spec": spec,
    });
    Ok(Generated {
        workflow: serde_yaml::to_string(&workflow).expect("plain data"),
        environment: serde_yaml::to_string(&environment).expect("plain data"),
        manifest,
    })
}

/// Bodies of the stub tasks the generated workflow invokes.
pub mod stub {
    use super::*;

    #[derive(Debug, Error)]
    pub enum StubError {
        #[error("{0}")]
        Usage(String),
        #[error("{path}: {source}")]
        Io { path: String, source: std::io::Error },
        #[error("malformed record `{0}`")]
        Record(String),
    }

    fn read(path: &str) -> Result<String, StubError> {
        std::fs::read_to_string(path).map_err(|source| StubError::Io { path: path.into(), source })
    }

    fn write(path: &str, text: &str) -> Result<(), StubError> {
        std::fs::write(path, text).map_err(|source| StubError::Io { path: path.into(), source })
    }

    fn flags(args: &[String]) -> Result<IndexMap<&str, &str>, StubError> {
        let mut out = IndexMap::new();
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let name = flag.strip_prefix("--").ok_or_else(|| StubError::Usage(format!("unexpected `{flag}`")))?;
            let value = it.next().ok_or_else(|| StubError::Usage(format!("`{flag}` needs a value")))?;
            out.insert(name, value.as_str());
        }
        Ok(out)
    }

    fn flag<'a>(flags: &IndexMap<&str, &'a str>, name: &str) -> Result<&'a str, StubError> {
        flags.get(name).copied().ok_or_else(|| StubError::Usage(format!("missing --{name}")))
    }

    fn records<T: serde::de::DeserializeOwned>(args: &[String]) -> Result<Vec<T>, StubError> {
        args.iter().map(|a| serde_json::from_str(a).map_err(|_| StubError::Record(a.clone()))).collect()
    }

    /// Runs stub task `task`; returns what it prints on stdout.
    pub fn run(task: &str, args: &[String], seed: u64) -> Result<String, StubError> {
        match task {
            "preprocess" => {
                let f = flags(args)?;
                write(flag(&f, "out")?, flag(&f, "dataset")?)?;
                Ok(String::new())
            }
            "segment" | "pretrain" => {
                let f = flags(args)?;
                let text = read(flag(&f, "input")?)?;
                write(flag(&f, "out")?, &text)?;
                Ok(String::new())
            }
            "augment" => {
                let f = flags(args)?;
                let dataset = read(flag(&f, "input")?)?;
                let hp: HyperParams = serde_json::from_str(flag(&f, "hyperparams")?)
                    .map_err(|_| StubError::Record(flag(&f, "hyperparams").unwrap_or_default().into()))?;
                write(flag(&f, "out")?, &variant_id(flag(&f, "network")?, &hp.name, dataset.trim()))?;
                Ok(String::new())
            }
            "classify" => {
                let f = flags(args)?;
                let variant = read(flag(&f, "weights")?)?.trim().to_string();
                let fold: u64 = flag(&f, "fold")?.parse().map_err(|_| StubError::Usage("--fold must be an integer".into()))?;
                let metric = stub_metric(seed, &variant, fold);
                Ok(serde_json::to_string(&FoldMetric { variant, fold, metric }).expect("plain data"))
            }
            "fold-reduce" => {
                let entry = reduce_variant(records(args)?).ok_or_else(|| StubError::Usage("no fold metrics".into()))?;
                Ok(serde_json::to_string(&entry).expect("plain data"))
            }
            "rank" => Ok(serde_json::to_string(&rank(records(args)?)).expect("plain data")),
            other => Err(StubError::Usage(format!("unknown stub task `{other}`"))),
        }
    }
}

/// Writes `workflow.yaml`, `environment.yaml` and `manifest.json` into `dir`.
pub fn write_files(generated: &Generated, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("workflow.yaml"), &generated.workflow)?;
    std::fs::write(dir.join("environment.yaml"), &generated.environment)?;
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&generated.manifest).expect("plain data"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_is_stable() {
        assert_eq!(stub_metric(1, "a/b/c", 0), stub_metric(1, "a/b/c", 0));
        assert_ne!(stub_metric(1, "a/b/c", 0), stub_metric(2, "a/b/c", 0));
        assert_ne!(stub_metric(1, "a/b/c", 0), stub_metric(1, "a/b/c", 1));
        // pinned so that other implementations can check themselves
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn variants_are_row_major() {
        let spec = GridSpec::synthetic(2, 2, 1, 3);
        assert_eq!(spec.variant_ids(), ["net0/hp0/ds0", "net0/hp1/ds0", "net1/hp0/ds0", "net1/hp1/ds0"]);
        assert_eq!(spec.variant_count(), 4);
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_makespan(990, 15.0, 990), 15.0);
        assert_eq!(estimate_makespan(990, 15.0, 1), 14850.0);
        assert_eq!(estimate_makespan(990, 15.0, 180), 90.0);
        assert_eq!(estimate_makespan(0, 15.0, 8), 0.0);
    }

    #[test]
    fn rank_breaks_ties_by_id() {
        let e = |v: &str, m: f64| RankEntry { variant: v.into(), mean_metric: m, fold_metrics: vec![m] };
        let ranked = rank(vec![e("b", 0.5), e("a", 0.5), e("c", 0.9)]);
        let ids: Vec<_> = ranked.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn single_fold_mean_is_the_metric() {
        let m = FoldMetric { variant: "v".into(), fold: 0, metric: 0.123456789 };
        assert_eq!(reduce_variant(vec![m]).unwrap().mean_metric, 0.123456789);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = GridSpec::synthetic(1, 1, 1, 0);
        assert_eq!(spec.validate(), Err(GridError::NoFolds));
        spec.folds = 1;
        spec.networks = vec!["x".into(), "x".into()];
        assert!(matches!(spec.validate(), Err(GridError::Duplicate { .. })));
        spec.networks = vec!["a/b".into()];
        assert!(matches!(spec.validate(), Err(GridError::BadName { .. })));
    }

    #[test]
    fn generated_files_parse() {
        let g = generate(&GridSpec::synthetic(2, 2, 1, 3), &GenerateOptions::default()).unwrap();
        let w = crate::workflow::parse_workflow(&g.workflow).unwrap();
        assert!(crate::workflow::validate(&w).is_empty());
        let env = crate::deploy::parse_environment(&g.environment, Path::new("/tmp/grid")).unwrap();
        let bindings = crate::deploy::resolve_bindings(&w, &env).unwrap();
        assert_eq!(bindings["classify"].model, "hpc");
        assert_eq!(bindings["rank"].model, "controller");
        assert_eq!(g.manifest["variant_count"], 4);
    }

    #[test]
    fn stub_tasks_chain() {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n).display().to_string();
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        stub::run("preprocess", &s(&["--dataset", "ds0", "--out", &p("a")]), 0).unwrap();
        stub::run("segment", &s(&["--input", &p("a"), "--out", &p("b")]), 0).unwrap();
        let hp = r#"{"name":"hp1","learning_rate":0.05}"#;
        stub::run("augment", &s(&["--network", "net0", "--hyperparams", hp, "--input", &p("b"), "--out", &p("c")]), 0)
            .unwrap();
        let out = stub::run("classify", &s(&["--weights", &p("c"), "--fold", "2"]), 9).unwrap();
        let m: FoldMetric = serde_json::from_str(&out).unwrap();
        assert_eq!((m.variant.as_str(), m.fold, m.metric), ("net0/hp1/ds0", 2, stub_metric(9, "net0/hp1/ds0", 2)));
        let reduced = stub::run("fold-reduce", &[out], 9).unwrap();
        let ranking = stub::run("rank", &[reduced], 9).unwrap();
        let r: Vec<RankEntry> = serde_json::from_str(&ranking).unwrap();
        assert_eq!(r[0].fold_metrics, vec![m.metric]);
        assert!(stub::run("nope", &[], 0).is_err());
    }
}
