use attractorlab::config::{parse_config, RunConfig};
use attractorlab::error::Error;
use attractorlab::experiments::{self, Branch, Entry, Status, SuiteReport};
use attractorlab::limitsets::{attractor_estimate, joint_estimates, sample_start, AttractorKind};
use attractorlab::manifolds::{closure_estimate, leaf_graph, lyapunov_stability_probe};
use attractorlab::skew::{Invertible, PointX, SkewProduct, SkewSystem};
use attractorlab::torus::LeafKind;
use attractorlab::{io, presets, OrbitClass};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "attractorlab", version, about = "Attractors of skew products over Anosov maps of the torus")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// System file (bare system or full config) or preset name: ns, ns-product, rot.
    #[arg(long, global = true)]
    system: Option<String>,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; each run writes to `<out>/<command>-<hash>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cubic coarse grid size.
    #[arg(long, global = true)]
    grid: Option<usize>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Partial-hyperbolicity certificate.
    Certify {
        #[arg(long, default_value_t = attractorlab::skew::DEFAULT_CERT_GRID)]
        grid_n: usize,
    },
    /// One orbit as CSV.
    Orbit {
        /// Start point `x1,x2,y`; seeded uniform point if omitted.
        #[arg(long, value_parser = parse_point)]
        start: Option<PointX>,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
        #[arg(long)]
        inverse: bool,
    },
    /// Milnor or statistical attractor estimate.
    Attractor {
        #[arg(long, value_enum, default_value_t = KindArg::Statistical)]
        kind: KindArg,
    },
    /// Leaf graph of a fiberwise periodic point and, optionally, its closure.
    Manifold {
        #[arg(long, value_enum, default_value_t = LeafArg::Unstable)]
        leaf: LeafArg,
        /// Index among the attractors (unstable) or repellers (stable) over the base point.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        closure: bool,
    },
    /// Lyapunov stability probe on the statistical attractor estimate.
    Stability,
    /// Holonomy test of the repellers over the base point.
    Assumption1,
    /// Match sample statistical sets to unstable-leaf closures.
    Decompose,
    /// Coincidence, stability, dichotomy and saturation.
    TheoremA,
    /// Nonwandering or dense-orbit check, after the dichotomy.
    CorollaryB,
    /// Motion of the unstable graph under added fiber rotation.
    PerturbScan,
    /// Statistical attractors of the system and of its inverse.
    InverseSuite,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Milnor,
    Statistical,
}

#[derive(Clone, Copy, ValueEnum)]
enum LeafArg {
    Unstable,
    Stable,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Certify { .. } => "certify",
            Command::Orbit { .. } => "orbit",
            Command::Attractor { .. } => "attractor",
            Command::Manifold { .. } => "manifold",
            Command::Stability => "stability",
            Command::Assumption1 => "assumption1",
            Command::Decompose => "decompose",
            Command::TheoremA => "theorem-a",
            Command::CorollaryB => "corollary-b",
            Command::PerturbScan => "perturb-scan",
            Command::InverseSuite => "inverse-suite",
        }
    }
}

fn parse_point(s: &str) -> Result<PointX, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x1, x2, y] => Ok(PointX::new(x1, x2, y)),
        _ => Err("expected three comma-separated numbers x1,x2,y".into()),
    }
}

/// Failures mapped to exit codes.
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Validation { .. } => Failure::Usage(e.to_string()),
            other => Failure::Run(other),
        }
    }
}

/// A system from a preset name, a bare system file, or a config file's `system`.
fn load_system(arg: &str) -> Result<SkewProduct, Failure> {
    if let Some(cfg) = presets::by_name(arg) {
        return Ok(cfg.system.expect("presets carry a system"));
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read system `{arg}`: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{arg}: {e}")))?;
    if value.get("system").is_some() {
        let cfg = attractorlab::parse_config_str(&text).map_err(|e| Failure::Usage(format!("{arg}: {e}")))?;
        return Ok(cfg.system.expect("checked above"));
    }
    attractorlab::config::parse_system_str(&text).map_err(|e| Failure::Usage(format!("{arg}: {e}")))
}

fn resolve_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &g.system {
        cfg.system = Some(load_system(s)?);
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    if let Some(n) = g.grid {
        cfg.grid.n_base = n;
        cfg.grid.n_fiber = n;
    }
    cfg.validate()?;
    if cfg.system.is_none() {
        return Err(Failure::Usage("no system given: use --system or a config with `system`".into()));
    }
    Ok(cfg)
}

fn configure_threads() {
    let n = std::env::var("ATTRACTORLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

struct Run {
    dir: PathBuf,
    quiet: bool,
}

impl Run {
    fn new(command: &str, cfg: &RunConfig, quiet: bool) -> Result<Run, Failure> {
        let dir = io::run_dir(command, cfg);
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        io::write_atomic(&dir.join("config.json"), cfg.to_json().as_bytes())?;
        Ok(Run { dir, quiet })
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn finish(&self, report: &mut SuiteReport) -> Result<u8, Failure> {
        let path = io::write_report(&self.dir, report)?;
        for e in &report.entries {
            self.say(format!("{:<14} {:?}", e.name, e.status));
        }
        self.say(format!("{:?} -> {}", report.status, path.display()));
        Ok(report.exit_code() as u8)
    }
}

fn single(run: &Run, suite: &str, sys: &SkewProduct, cfg: &RunConfig, entry: Entry) -> Result<u8, Failure> {
    let mut report = SuiteReport::new(suite, sys, cfg);
    report.push(entry);
    run.finish(&mut report)
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    let cfg = resolve_config(&cli.global)?;
    let sys = cfg.system()?.clone();
    let name = cli.command.name();
    let run = Run::new(name, &cfg, cli.global.quiet)?;
    let p = cfg.base_point.torus_point();
    let k = cfg.base_point.period;
    match cli.command {
        Command::Certify { grid_n } => {
            let e = experiments::certificate_entry(&sys, grid_n);
            if e.status != Status::Pass {
                if let Err(err) = sys.certificate(grid_n).into_result() {
                    eprintln!("{err}");
                }
            }
            single(&run, name, &sys, &cfg, e)
        }
        Command::Orbit { start, steps, burn_in, inverse } => {
            let x0 = start.unwrap_or_else(|| sample_start(cfg.seed, 0));
            let rows: Vec<Vec<f64>> = attractorlab::skew::orbit_dir(&sys, x0, steps, burn_in, inverse)
                .enumerate()
                .map(|(i, q)| vec![(burn_in + i) as f64, q.base.x1, q.base.x2, q.fiber])
                .collect();
            io::write_atomic(&run.dir.join("orbit.csv"), io::table_csv("t,x1,x2,y", &rows).as_bytes())?;
            let summary = json!({ "start": x0, "steps": steps, "burn_in": burn_in, "inverse": inverse,
                "lyapunov": attractorlab::skew::fiber_lyapunov(&sys, x0, steps.max(1)) });
            io::write_json(&run.dir.join("summary.json"), &summary)?;
            run.say(format!("{} points -> {}", rows.len(), run.dir.display()));
            Ok(0)
        }
        Command::Attractor { kind } => {
            let kind = match kind {
                KindArg::Milnor => AttractorKind::Milnor,
                KindArg::Statistical => AttractorKind::Statistical,
            };
            let grid = cfg.coarse_grid();
            let est = attractor_estimate(&sys, kind, &cfg.orbit, grid, cfg.seed);
            io::write_atomic(&run.dir.join("cells.csv"), io::cells_csv(&est.union).as_bytes())?;
            io::write_atomic(&run.dir.join("cells.ppm"), &io::cells_heatmap(&est.union))?;
            let summary = json!({ "kind": kind, "orbit": cfg.orbit, "seed": cfg.seed,
                "summary": est.union.summary(),
                "per_sample_cells": est.per_sample.iter().map(|s| s.len()).collect::<Vec<_>>() });
            io::write_json(&run.dir.join("summary.json"), &summary)?;
            run.say(format!(
                "{kind:?}: {} cells ({:.4}) -> {}",
                est.union.len(),
                est.union.summary().fraction,
                run.dir.display()
            ));
            Ok(0)
        }
        Command::Manifold { leaf, index, closure } => {
            let points = experiments::base_point_orbits(&sys, &cfg)?;
            let (class, kind) = match leaf {
                LeafArg::Unstable => (OrbitClass::Attractor, LeafKind::Unstable),
                LeafArg::Stable => (OrbitClass::Repeller, LeafKind::Stable),
            };
            let anchor = points
                .iter()
                .filter(|q| q.class == class)
                .nth(index)
                .ok_or_else(|| Failure::Usage(format!("no {class:?} with index {index} over the base point")))?;
            let grid = cfg.coarse_grid();
            let params = cfg.leaf_params(grid);
            let graph = leaf_graph(&sys, anchor, kind, params)?;
            let rows: Vec<Vec<f64>> = graph
                .nodes
                .iter()
                .map(|n| vec![n.t, n.point.base.x1, n.point.base.x2, n.point.fiber])
                .collect();
            io::write_atomic(&run.dir.join("leaf.csv"), io::table_csv("t,x1,x2,y", &rows).as_bytes())?;
            let mut summary = json!({ "anchor": anchor, "kind": kind, "leaf": params,
                "nodes": graph.nodes.len(), "extent": graph.extent() });
            let mut code = 0;
            if closure {
                let c = closure_estimate(&sys, &graph, grid, cfg.manifold.stall_length, cfg.manifold.budget)?;
                io::write_atomic(&run.dir.join("cells.csv"), io::cells_csv(&c.cells).as_bytes())?;
                io::write_atomic(&run.dir.join("cells.ppm"), &io::cells_heatmap(&c.cells))?;
                summary["closure"] = json!({ "summary": c.cells.summary(), "extent": c.extent,
                    "converged": c.converged, "budget": c.budget });
                if !c.converged {
                    eprintln!("{}", Error::BudgetExhausted { budget: c.budget });
                    code = Status::Inconclusive.exit_code() as u8;
                }
            }
            io::write_json(&run.dir.join("summary.json"), &summary)?;
            run.say(format!("{} nodes -> {}", graph.nodes.len(), run.dir.display()));
            Ok(code)
        }
        Command::Stability => {
            let grid = cfg.coarse_grid();
            let est = attractor_estimate(&sys, AttractorKind::Statistical, &cfg.orbit, grid, cfg.seed);
            let mut e = Entry::new("stability", json!({ "probe": cfg.probe, "grid": grid,
                "orbit": cfg.orbit, "seed": cfg.seed }));
            if est.union.is_empty() {
                e.status = Status::Inconclusive;
            } else {
                let probes = lyapunov_stability_probe(&sys, &est.union, &cfg.probe, cfg.seed);
                e.status = Status::from_bool(probes.iter().all(|r| {
                    r.delta_found.is_some_and(|d| d >= cfg.thresholds.delta_ratio_min * r.eps)
                }));
                e.metric("probes", &probes);
            }
            e.cells("statistical", &est.union);
            single(&run, name, &sys, &cfg, e)
        }
        Command::Assumption1 => {
            let e = experiments::assumption1_check(&sys, p, k, &cfg)?;
            single(&run, name, &sys, &cfg, e)
        }
        Command::Decompose => {
            let joint = joint_estimates(&sys, &cfg.orbit, &[cfg.coarse_grid()], cfg.seed)
                .pop()
                .expect("one grid");
            let e = experiments::attractor_decomposition(&sys, p, k, &cfg, &joint)?;
            single(&run, name, &sys, &cfg, e)
        }
        Command::TheoremA => {
            let mut ta = experiments::theorem_a_suite(&sys, &cfg)?;
            run.finish(&mut ta.report)
        }
        Command::CorollaryB | Command::InverseSuite => {
            let mut report = SuiteReport::new(name, &sys, &cfg);
            let (coarse, fine) = experiments::two_resolution_estimates(&sys, &cfg);
            let (branch, e) = experiments::dichotomy_entry(&coarse, &fine, &cfg);
            report.push(e);
            let cert_inv = experiments::certificate_entry(&sys.inverse_system(), attractorlab::skew::DEFAULT_CERT_GRID);
            if matches!(cli.command, Command::CorollaryB) {
                report.push(experiments::corollary_b_check(&sys, &cfg, branch));
            } else {
                report.push(cert_inv);
                report.push(experiments::inverse_system_suite(&sys, &cfg, branch));
            }
            if branch == Branch::Inconclusive {
                run.say("dichotomy inconclusive");
            }
            run.finish(&mut report)
        }
        Command::PerturbScan => {
            let points = experiments::base_point_orbits(&sys, &cfg)?;
            let anchor = points
                .iter()
                .find(|q| q.class == OrbitClass::Attractor)
                .ok_or(Failure::Run(Error::NoPeriodicOrbits { max_period: 0 }))?;
            let leaf = cfg.leaf_params(cfg.coarse_grid());
            let result = experiments::perturbation_scan(
                &sys,
                anchor,
                &cfg.perturbation.b_values,
                cfg.perturbation.t_probe,
                leaf,
                cfg.thresholds.slack,
            );
            let e = match result {
                Ok(e) => e,
                Err(Error::ContinuationLost { b }) => {
                    let mut e = Entry::new("perturbation", json!({ "b_values": cfg.perturbation.b_values,
                        "t_probe": cfg.perturbation.t_probe, "leaf": leaf }));
                    e.status = Status::Fail;
                    e.metric("continuation_lost_at", b);
                    eprintln!("{}", Error::ContinuationLost { b });
                    e
                }
                Err(other) => return Err(other.into()),
            };
            single(&run, name, &sys, &cfg, e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(Status::Fail.exit_code() as u8)
        }
    }
}
