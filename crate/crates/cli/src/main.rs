use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hflow_core::dataflow::{self, execute, EdgeClass, RunOptions, RunStatus};
use hflow_core::deploy::{self, BindingError, DeploymentPlan};
use hflow_core::grid::{self, GenerateOptions, GridSpec};
use hflow_core::workflow::{self, Workflow};

#[derive(Parser)]
#[command(name = "hflow", version, about = "Run workflows across isolated execution sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a workflow and, optionally, that an environment binds every step.
    Validate {
        #[arg(short, long)]
        workflow: PathBuf,
        #[arg(short, long)]
        env: Option<PathBuf>,
    },
    /// Print the step bindings, scatter depths and edge classes.
    Plan {
        #[arg(short, long)]
        workflow: PathBuf,
        #[arg(short, long)]
        env: PathBuf,
    },
    /// Execute a workflow.
    Run(RunArgs),
    /// Makespan of V equal jobs of T hours on G parallel slots.
    Estimate {
        #[arg(long)]
        variants: u64,
        #[arg(long)]
        hours: f64,
        /// One or more slot counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        slots: Vec<u64>,
    },
    /// Write a parameter-grid pipeline: workflow, environment and manifest.
    Gridgen(GridArgs),
    #[command(hide = true)]
    Stub {
        task: String,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(short, long)]
    workflow: PathBuf,
    #[arg(short, long)]
    env: PathBuf,
    /// Where workflow outputs are written (default: `outputs` in the run directory).
    #[arg(short, long)]
    outdir: Option<PathBuf>,
    /// Provenance report path (default: `report.json` in the run directory).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long, default_value_t = 0)]
    retries: u32,
    /// Zero all timestamps in the report.
    #[arg(long)]
    normalize_times: bool,
    /// Keep scheduling independent instances after a failure.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Args)]
struct GridArgs {
    /// Grid description (YAML or JSON); overrides the axis flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    networks: Vec<String>,
    /// Number of generated hyperparameter settings.
    #[arg(long, default_value_t = 1)]
    hyperparams: usize,
    #[arg(long, value_delimiter = ',')]
    datasets: Vec<String>,
    #[arg(long, default_value_t = 1)]
    folds: usize,
    #[arg(short, long)]
    outdir: PathBuf,
    /// Program used for the stub tasks (default: this executable).
    #[arg(long)]
    stub_bin: Option<PathBuf>,
    /// Batch queue limit of the training site.
    #[arg(long, default_value_t = 4)]
    max_jobs: usize,
    #[arg(long, default_value_t = 4)]
    gpus: usize,
}

/// Reported failure with its exit status.
struct Exit(u8);

type Outcome = Result<(), Exit>;

fn usage(err: anyhow::Error) -> Exit {
    eprintln!("error: {err:#}");
    Exit(2)
}

fn read(path: &Path) -> Result<String, Exit> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)
}

fn load_workflow(path: &Path) -> Result<Workflow, Exit> {
    workflow::parse_workflow(&read(path)?).with_context(|| format!("{}", path.display())).map_err(usage)
}

fn load_env(path: &Path) -> Result<DeploymentPlan, Exit> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = std::path::absolute(&base).unwrap_or(base);
    deploy::parse_environment(&read(path)?, &base).with_context(|| format!("{}", path.display())).map_err(usage)
}

fn check(w: &Workflow, env: Option<&DeploymentPlan>) -> Outcome {
    let diags = workflow::validate(w);
    for d in &diags {
        println!("{}: {}", d.steps.join(", "), d);
    }
    if !diags.is_empty() {
        return Err(Exit(1));
    }
    if let Some(env) = env {
        if let Err(e) = deploy::resolve_bindings(w, env) {
            println!("{e}");
            return Err(Exit(1));
        }
    }
    Ok(())
}

fn cmd_plan(w: &Workflow, env: &DeploymentPlan) -> Outcome {
    check(w, Some(env))?;
    let bindings = deploy::resolve_bindings(w, env).map_err(|e: BindingError| usage(e.into()))?;
    let plan = dataflow::unfold_plan(w).map_err(|e| usage(e.into()))?;
    let order = workflow::topological_order(w).map_err(|_| Exit(1))?;
    let mut rows = vec![["step".to_string(), "target".into(), "resources".into(), "depth".into(), "inputs".into()]];
    for id in &order {
        let b = &bindings[id.as_str()];
        let p = &plan.steps[id.as_str()];
        let inputs = p
            .inputs
            .iter()
            .map(|e| {
                let class = match e.class {
                    EdgeClass::ElementWise => "elementwise".to_string(),
                    EdgeClass::Gather => format!("gather:{}", e.gather_levels),
                    EdgeClass::Broadcast => "broadcast".into(),
                    EdgeClass::Scatter => "scatter".into(),
                };
                format!("{}<-{}[{class}]", e.port, e.source)
            })
            .collect::<Vec<_>>()
            .join(" ");
        rows.push([id.clone(), b.target(), b.resources.to_string(), p.depth().to_string(), inputs]);
    }
    print_table(&rows);
    println!();
    for (from, to) in workflow::dependency_edges(w) {
        println!("{from} -> {to}");
    }
    Ok(())
}

fn print_table(rows: &[[String; 5]]) {
    let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    for row in rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        println!("{}", line.join("  ").trim_end());
    }
}

fn cmd_run(args: &RunArgs) -> Outcome {
    let w = load_workflow(&args.workflow)?;
    let env = load_env(&args.env)?;
    let options = RunOptions {
        max_concurrency: args.max_concurrency,
        retries: args.retries,
        seed: args.seed,
        fail_fast: !args.keep_going,
        outdir: args.outdir.clone(),
        ..Default::default()
    };
    let outcome = match execute(&w, &env, &options) {
        Ok(outcome) => outcome,
        Err(e) => return Err(usage(e.into())),
    };
    let mut report = outcome.report.clone();
    if args.normalize_times {
        report.normalize_times();
    }
    let report_path = args.report.clone().unwrap_or_else(|| Path::new(&report.run.staging_dir).join("report.json"));
    report.write(&report_path).with_context(|| format!("writing {}", report_path.display())).map_err(usage)?;
    for e in &outcome.errors {
        eprintln!("error: {e}");
    }
    eprintln!(
        "{} {}: {} instance(s), report {}",
        report.run.id,
        outcome.status.as_str(),
        outcome.provenance.len(),
        report_path.display()
    );
    match outcome.status {
        RunStatus::Success => Ok(()),
        RunStatus::Failed => Err(Exit(1)),
    }
}

fn cmd_estimate(variants: u64, hours: f64, slots: &[u64]) -> Outcome {
    if !(hours.is_finite() && hours > 0.0) {
        return Err(usage(anyhow::anyhow!("--hours must be positive")));
    }
    if slots.contains(&0) {
        return Err(usage(anyhow::anyhow!("--slots must be at least 1")));
    }
    for &g in slots {
        let h = grid::estimate_makespan(variants, hours, g);
        println!("slots {g}: {h:.1} h ({:.1} days)", h / 24.0);
    }
    Ok(())
}

fn grid_spec(args: &GridArgs) -> anyhow::Result<GridSpec> {
    if let Some(path) = &args.spec {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return grid::parse_spec(&text).with_context(|| format!("{}", path.display()));
    }
    let mut spec = GridSpec::synthetic(0, args.hyperparams, 0, args.folds);
    spec.networks = args.networks.clone();
    spec.datasets = args.datasets.clone();
    Ok(spec)
}

fn cmd_gridgen(args: &GridArgs) -> Outcome {
    let spec = grid_spec(args).map_err(usage)?;
    let stub_bin = match &args.stub_bin {
        Some(p) => p.clone(),
        None => std::env::current_exe().context("locating this executable").map_err(usage)?,
    };
    let options = GenerateOptions {
        stub_command: vec![stub_bin.display().to_string(), "stub".into()],
        max_jobs: args.max_jobs,
        gpus: args.gpus,
        ..Default::default()
    };
    let generated = grid::generate(&spec, &options).map_err(|e| usage(e.into()))?;
    grid::write_files(&generated, &args.outdir)
        .with_context(|| format!("writing {}", args.outdir.display()))
        .map_err(usage)?;
    println!("{} variant(s), {} fold(s) -> {}", spec.variant_count(), spec.folds, args.outdir.display());
    Ok(())
}

fn cmd_stub(task: &str, args: &[String]) -> Outcome {
    let seed = match std::env::var("HF_SEED") {
        Ok(s) => s.parse().map_err(|_| usage(anyhow::anyhow!("HF_SEED is not an integer")))?,
        Err(_) => 0,
    };
    match grid::stub::run(task, args, seed) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{out}");
            }
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(Exit(1))
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Validate { workflow, env } => {
            let w = load_workflow(&workflow)?;
            let env = env.as_deref().map(load_env).transpose()?;
            check(&w, env.as_ref())
        }
        Command::Plan { workflow, env } => cmd_plan(&load_workflow(&workflow)?, &load_env(&env)?),
        Command::Run(args) => cmd_run(&args),
        Command::Estimate { variants, hours, slots } => cmd_estimate(variants, hours, &slots),
        Command::Gridgen(args) => cmd_gridgen(&args),
        Command::Stub { task, args } => cmd_stub(&task, &args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit(code)) => ExitCode::from(code),
    }
}
