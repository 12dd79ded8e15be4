mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use metasimplex::dynamics::{self, Trajectory};
use metasimplex::equilibria::{self, EssVerdict};
use metasimplex::learning::{self, LearnOutcome};
use metasimplex::meta::{self, Dims, DEFAULT_SIZE_CAP};
use metasimplex::verify::{self, Suite};
use metasimplex::{AssignmentState, Error, PayoffModel};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use config::{ExperimentConfig, SchemaError};

const EXIT_CHECK: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_SIZE_CAP: u8 = 4;

#[derive(Parser)]
#[command(name = "metasimplex", version, about = "Replicator dynamics on assignment manifolds and their joint-distribution embedding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// RNG seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Largest joint size c^n for embedded analyses.
    #[arg(long, global = true)]
    cap: Option<usize>,
    /// Integration step (overrides the config).
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Final time (overrides the config).
    #[arg(long, global = true)]
    tend: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate, analyse and/or learn as described by a TOML config.
    Run { config: PathBuf },
    /// Run a verification suite: geometry, embedding, dynamics, equilibria, learning or all.
    Verify { suite: String },
}

#[derive(Debug)]
enum Failure {
    Schema(String),
    Numerical(String),
    SizeCap(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Schema(_) => EXIT_SCHEMA,
            Failure::Numerical(_) | Failure::Io(_) => EXIT_NUMERICAL,
            Failure::SizeCap(_) => EXIT_SIZE_CAP,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Schema(m) | Failure::Numerical(m) | Failure::SizeCap(m) | Failure::Io(m) => m,
        }
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::Schema(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SizeCap { .. } => Failure::SizeCap(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(format!("cannot write output: {e}"))
    }
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    observed: f64,
    bound: f64,
    passed: bool,
}

fn check(name: &'static str, observed: f64, bound: f64, passed: bool) -> Check {
    Check { name, observed, bound, passed }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Verify { suite } => run_verify(&cli, suite),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli, path: &Path) -> Result<bool, Failure> {
    let mut cfg = config::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(h) = cli.h {
        cfg.integrator.step = h;
        if let Some(l) = cfg.learning.as_mut() {
            l.optimizer.step = h;
        }
    }
    if let Some(t) = cli.tend {
        cfg.integrator.t_end = t;
        if let Some(l) = cfg.learning.as_mut() {
            l.optimizer.horizon = t;
        }
    }
    let cap = cli.cap.or(cfg.cap).unwrap_or(DEFAULT_SIZE_CAP);
    let out = cli.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    if cfg.payoff.is_none() && cfg.learning.is_none() {
        return Err(Failure::Schema("config needs a [payoff] table, a [learning] table, or both".into()));
    }

    let mut checks = vec![];
    let mut report = json!({ "config": path.display().to_string(), "seed": cfg.seed, "cap": cap });
    if let Some(spec) = &cfg.payoff {
        cfg.integrator.validate().map_err(|e| Failure::Schema(format!("integrator: {e}")))?;
        let model = cfg.model(spec)?;
        let w0 = cfg.initial_state()?;
        if cfg.analysis.needs_embedding() {
            model.dims().meta_len(cap)?;
        }
        let traj = dynamics::integrate_multipop(&model, &w0, &cfg.integrator)?;
        report["dynamics"] = analyse(&cfg, &model, &traj, cap, &mut checks)?;
        output::write_atomic(&out.join("trajectory.csv"), output::trajectory_csv(&traj).as_bytes())?;
    }
    if let Some(spec) = &cfg.learning {
        if spec.width == 0 || spec.height == 0 || spec.labels < 2 {
            return Err(Failure::Schema("learning: need width, height >= 1 and labels >= 2".into()));
        }
        let task = learning::grid_labeling_task(spec.width, spec.height, spec.labels, spec.flip_rate, spec.contrast, spec.jitter, cfg.seed);
        let b_init = match &spec.b_init {
            Some(rows) => config::matrix("learning.b_init", rows, Some((spec.labels, spec.labels)))?,
            None => DMatrix::zeros(spec.labels, spec.labels),
        };
        let outcome = learning::learn_egn(&task.target, &task.omega, &task.w0, &b_init, &spec.optimizer)?;
        checks.push(check("learning lowers the loss", outcome.best_loss, outcome.initial_loss, outcome.best_loss < outcome.initial_loss));
        if let Some(min) = spec.min_accuracy {
            checks.push(check("labeling accuracy", outcome.accuracy, min, outcome.accuracy >= min));
        }
        report["learning"] = learning_report(&outcome);
        output::write_atomic(&out.join("loss_history.csv"), output::loss_csv(&outcome.loss_history).as_bytes())?;
        let b = DMatrix::from_fn(spec.labels, spec.labels, |i, j| outcome.b[i][j]);
        output::write_atomic(&out.join("learned_b.txt"), output::matrix_text(&b).as_bytes())?;
    }

    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        println!("{}  {:<44} {:>12.4e}  (bound {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.observed, c.bound);
    }
    report["checks"] = serde_json::to_value(&checks).expect("plain data");
    report["passed"] = json!(passed);
    let text = serde_json::to_string_pretty(&report).expect("plain data");
    output::write_atomic(&out.join("report.json"), text.as_bytes())?;
    println!("{} written to {}", if passed { "all checks passed;" } else { "some checks failed;" }, out.display());
    Ok(passed)
}

fn analyse(cfg: &ExperimentConfig, model: &PayoffModel, traj: &Trajectory<AssignmentState>, cap: usize, checks: &mut Vec<Check>) -> Result<Value, Failure> {
    let a = &cfg.analysis;
    let last = traj.diagnostics.last().expect("trajectory has samples");
    let mut report = json!({
        "payoff": model.kind_name(),
        "n": model.dims().n,
        "c": model.dims().c,
        "scheme": cfg.integrator.scheme,
        "effective_step": cfg.integrator.effective_step(),
        "steps": cfg.integrator.steps(),
        "samples": traj.len(),
        "final_time": traj.final_time(),
        "final_state": metasimplex::simplex::matrix_rows(traj.final_state().as_matrix()),
        "renormalization_drift": traj.drift,
        "final_mean_payoff": last.mean_payoff,
    });
    let conv = equilibria::convergence_report(model, traj, a.round_tol, a.nash_tol)?;
    if a.nash {
        checks.push(check("final state is a Nash equilibrium", conv.nash.max_violation, a.nash_tol, conv.nash.is_nash));
    }
    if let Some(ok) = conv.potential_non_decreasing {
        checks.push(check("potential is non-decreasing", 0.0, 0.0, ok));
    }
    report["convergence"] = serde_json::to_value(&conv).expect("plain data");
    if a.ess {
        let ess = equilibria::ess_sample_check(model, traj.final_state(), a.ess_radius, a.ess_samples, cfg.seed)?;
        checks.push(check("no sampled ESS counterexample", ess.worst_value, 0.0, ess.verdict == EssVerdict::EssConsistent));
        report["ess"] = serde_json::to_value(&ess).expect("plain data");
    }
    if a.needs_embedding() {
        let emb = model.embed(cap)?;
        let joint = dynamics::integrate_metasimplex(&emb, &meta::embed_t(&traj.states[0], cap)?, &cfg.integrator)?;
        if a.embedding_check {
            let mut err = 0.0_f64;
            for (w, p) in traj.states.iter().zip(&joint.states) {
                err = err.max((meta::embed_t(w, cap)?.as_vector() - p.as_vector()).amax());
            }
            checks.push(check("joint flow matches the embedded flow", err, a.embedding_tol, err <= a.embedding_tol));
            report["embedding_error"] = json!(err);
        }
        if a.wright {
            let dims = Dims::new(model.dims().n, model.dims().c);
            let mut dev = 0.0_f64;
            for p in &joint.states {
                dev = dev.max(meta::wright_deviation(p.as_slice(), dims)?);
            }
            checks.push(check("joint flow stays on the product manifold", dev, a.wright_tol, dev <= a.wright_tol));
            report["wright_deviation"] = json!(dev);
        }
    }
    Ok(report)
}

fn learning_report(o: &LearnOutcome) -> Value {
    json!({
        "initial_loss": o.initial_loss,
        "best_loss": o.best_loss,
        "best_iteration": o.best_iteration,
        "iterations": o.loss_history.len() - 1,
        "stopped_early": o.stopped_early,
        "accuracy": o.accuracy,
        "learned_b": o.b,
        "labels": o.labels,
    })
}

fn run_verify(cli: &Cli, suite: &str) -> Result<bool, Failure> {
    let suite: Suite = suite.parse().map_err(|e: Error| Failure::Schema(e.to_string()))?;
    let rows = verify::run_suite(suite, cli.seed.unwrap_or(0))?;
    for row in &rows {
        println!("{row}");
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    println!("{} of {} rows passed", rows.len() - failed, rows.len());
    if let Some(out) = &cli.out {
        let text = serde_json::to_string_pretty(&json!({ "suite": suite, "rows": rows })).expect("plain data");
        output::write_atomic(&out.join(format!("verify-{}.json", suite.name())), text.as_bytes())?;
    }
    Ok(failed == 0)
}
