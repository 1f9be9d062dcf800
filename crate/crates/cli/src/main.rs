//! `nastimer`: size NAS timers for a constellation snapshot and run
//! registration stress sweeps.
//!
//! Exit codes: 0 success, 1 run failure, 2 input error.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nas_timer::grid::{self, ScenarioGrid, TimerMode};
use nas_timer::timer_model::{
    explain_timer, size_registration_suite, EndpointWeights, ModelError, AMF_WATCHDOG_ROUNDS,
    T3510_ROUNDS,
};
use nas_timer::topology::{ConstellationSnapshot, Route, TopologyError};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "nastimer",
    version,
    about = "NAS timer sizing and registration stress sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Size T3510/T3511/T3550/T3560 for the route between two snapshot nodes.
    Size(SizeArgs),
    /// Run a scenario grid and write per-cell artifacts.
    Run(RunArgs),
    /// Tabulate the summaries of a finished run.
    SweepReport(ReportArgs),
}

#[derive(Args)]
struct SizeArgs {
    /// Run configuration supplying snapshot, endpoints and weights.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    origin: Option<String>,
    #[arg(long)]
    responder: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Present values rounded up to whole seconds.
    #[arg(long)]
    round_up: bool,
    /// Emit JSON instead of a text report.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, or a range such as `1..10` (inclusive).
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated UE counts.
    #[arg(long, value_delimiter = ',')]
    ues: Option<Vec<usize>>,
    /// Comma-separated loss probabilities.
    #[arg(long, value_delimiter = ',')]
    loss: Option<Vec<f64>>,
    /// `adaptive`, `3gpp` or `both`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Artifact directory written by `run`.
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Input(String),
    Run(String),
}

impl From<TopologyError> for Failure {
    fn from(e: TopologyError) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Size(args) => cmd_size(args),
        Command::Run(args) => cmd_run(args),
        Command::SweepReport(args) => cmd_sweep_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(Failure::Input)
}

/// Rewrites an unstable-node error to name the node instead of its index.
fn name_model_error(e: ModelError, route: &Route) -> Failure {
    match e {
        ModelError::UnstableQueue {
            node,
            service_rate,
            steady_arrival,
        } => Failure::Input(format!(
            "node {:?} is unstable: service rate {service_rate}/s <= steady arrival {steady_arrival}/s",
            route.node_ids.get(node).map(String::as_str).unwrap_or("?")
        )),
        other => Failure::Input(other.to_string()),
    }
}

fn cmd_size(args: SizeArgs) -> Result<(), Failure> {
    let cfg = args.config.as_deref().map(load_config).transpose()?;
    let missing = |what: &str| Failure::Input(format!("--{what} is required without --config"));
    let snapshot_path = match (&args.snapshot, &cfg) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => c.snapshot.clone(),
        (None, None) => return Err(missing("snapshot")),
    };
    let origin = args
        .origin
        .or_else(|| cfg.as_ref().map(|c| c.origin.clone()))
        .ok_or_else(|| missing("origin"))?;
    let responder = args
        .responder
        .or_else(|| cfg.as_ref().map(|c| c.responder.clone()))
        .ok_or_else(|| missing("responder"))?;
    let defaults = cfg.as_ref().map(|c| c.adaptive).unwrap_or_default();
    let alpha = args.alpha.unwrap_or(defaults.alpha);
    let beta = args.beta.unwrap_or(defaults.beta);

    let snapshot = ConstellationSnapshot::load(&snapshot_path)?;
    let route = snapshot.build_route(&origin, &responder)?;
    let weights = EndpointWeights::new(alpha, beta).map_err(|e| Failure::Input(e.to_string()))?;
    let suite =
        size_registration_suite(&route.path, weights).map_err(|e| name_model_error(e, &route))?;
    let forward = |rounds| {
        explain_timer(&route.path, rounds, weights).map_err(|e| name_model_error(e, &route))
    };
    let t3510 = forward(T3510_ROUNDS)?;
    let t3511 = forward(0)?;
    let amf_side = explain_timer(
        &route.path.reversed(),
        AMF_WATCHDOG_ROUNDS,
        weights.swapped(),
    )
    .map_err(|e| Failure::Input(e.to_string()))?;

    let present = |v: f64| if args.round_up { v.ceil() } else { v };
    if args.json {
        let doc = serde_json::json!({
            "route": route.node_ids,
            "alpha": alpha,
            "beta": beta,
            "suite": {
                "T3510": present(suite.t3510.value),
                "T3511": present(suite.t3511.value),
                "T3550": present(suite.t3550.value),
                "T3560": present(suite.t3560.value),
            },
            "breakdown": {
                "T3510": t3510,
                "T3511": t3511,
                "T3550": amf_side,
                "T3560": amf_side,
            },
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        return Ok(());
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "route: {} ({} hops)",
        route.node_ids.join(" -> "),
        route.path.hops()
    );
    let _ = writeln!(out, "alpha = {alpha}, beta = {beta}");
    let _ = writeln!(out, "one-way propagation: {:.6} s", t3510.propagation);
    for (id, d) in route.node_ids[1..route.node_ids.len() - 1]
        .iter()
        .zip(&t3510.hop_delays)
    {
        let _ = writeln!(out, "  hop {id}: D_agg = {d:.3e} s");
    }
    let _ = writeln!(
        out,
        "origin {} D_agg = {:.6} s",
        route.node_ids[0], t3510.origin_delay
    );
    let _ = writeln!(
        out,
        "responder {} D_agg = {:.6} s",
        route.node_ids.last().expect("route"),
        t3510.responder_delay
    );
    if !t3510.clamped_nodes.is_empty() {
        let names: Vec<&str> = t3510
            .clamped_nodes
            .iter()
            .map(|&i| route.node_ids[i].as_str())
            .collect();
        let _ = writeln!(out, "burst term clamped to 0 at: {}", names.join(", "));
    }
    let _ = writeln!(
        out,
        "\ntimer  kind      R  transit(s)    endpoint(s)   value(s)"
    );
    let rows = [
        (&suite.t3510, &t3510),
        (&suite.t3511, &t3511),
        (&suite.t3550, &amf_side),
        (&suite.t3560, &amf_side),
    ];
    for (timer, b) in rows {
        let _ = writeln!(
            out,
            "{:<6} {:<9} {}  {:<12.6} {:<13.6} {}",
            timer.name,
            format!("{:?}", timer.kind).to_lowercase(),
            timer.handshake_rounds,
            b.transit_term,
            b.endpoint_term,
            if args.round_up {
                format!("{}", present(timer.value))
            } else {
                format!("{:.6}", timer.value)
            }
        );
    }
    print!("{out}");
    Ok(())
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Input(format!("bad --seeds {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = &args.seeds {
        cfg.grid.seeds = parse_seeds(s)?;
    }
    if let Some(u) = args.ues {
        cfg.grid.ues = u;
    }
    if let Some(l) = args.loss {
        cfg.grid.loss = l;
    }
    if let Some(m) = args.mode {
        cfg.grid.modes = match m.as_str() {
            "both" => vec!["adaptive".into(), "3gpp".into()],
            other => vec![other.to_string()],
        };
    }
    if let Some(a) = args.alpha {
        cfg.adaptive.alpha = a;
    }
    if let Some(b) = args.beta {
        cfg.adaptive.beta = b;
    }
    let out = args.out.unwrap_or(cfg.out.clone());
    let workers = args.workers.unwrap_or(cfg.workers).max(1);

    let modes = cfg
        .grid
        .modes
        .iter()
        .map(|m| match m.as_str() {
            "adaptive" => Ok(TimerMode::Adaptive {
                alpha: cfg.adaptive.alpha,
                beta: cfg.adaptive.beta,
            }),
            "3gpp" => Ok(TimerMode::Fixed3gpp(cfg.fixed)),
            other => Err(Failure::Input(format!(
                "unknown mode {other:?} (adaptive, 3gpp, both)"
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;

    let snapshot = ConstellationSnapshot::load(&cfg.snapshot)?;
    let route = snapshot.build_route(&cfg.origin, &cfg.responder)?;
    route
        .path
        .one_way_transit()
        .map_err(|e| name_model_error(e, &route))?;
    let grid = ScenarioGrid {
        ue_counts: cfg.grid.ues.clone(),
        loss_probs: cfg.grid.loss.clone(),
        modes,
        seeds: cfg.grid.seeds.clone(),
        path: route.path.clone(),
        base: cfg.sim.to_sim_config(),
        load_aware: cfg.load_aware,
    };
    grid.validate().map_err(|e| Failure::Input(e.to_string()))?;
    let report = grid::run_grid(&grid, &out, workers).map_err(|e| Failure::Run(e.to_string()))?;
    println!(
        "{} runs, {} cells written to {}",
        report.runs,
        report.cells.len(),
        out.display()
    );
    if report.failed.is_empty() {
        Ok(())
    } else {
        for f in &report.failed {
            eprintln!("cell {} failed: {}", f.cell, f.error);
        }
        Err(Failure::Run(format!(
            "{} cell(s) failed",
            report.failed.len()
        )))
    }
}

fn cmd_sweep_report(args: ReportArgs) -> Result<(), Failure> {
    let rows = grid::read_summaries(&args.out).map_err(|e| Failure::Input(e.to_string()))?;
    if rows.is_empty() {
        return Err(Failure::Input(format!(
            "no cell summaries under {}",
            args.out.display()
        )));
    }
    let mut csv = String::from(
        "cell,ues,loss,mode,success_fraction,mean_attempts,mean_energy_j,mean_registration_time_s,expired_ratio,expired_T3510,expired_T3511,expired_T3550,expired_T3560\n",
    );
    println!(
        "{:<28} {:>8} {:>9} {:>10} {:>9} {:>8} {:>6} {:>6} {:>6} {:>6}",
        "cell",
        "success",
        "attempts",
        "energy_j",
        "reg_t_s",
        "expired",
        "T3510",
        "T3511",
        "T3550",
        "T3560"
    );
    for (cell, s) in &rows {
        let f = |key: &str| s[key].as_f64().unwrap_or(f64::NAN);
        let ratio = |t: &str| s["expired_ratio"][t].as_f64().unwrap_or(f64::NAN);
        let p = &s["parameters"];
        println!(
            "{:<28} {:>8.3} {:>9.2} {:>10.2} {:>9.2} {:>8.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
            cell,
            f("success_fraction"),
            f("mean_attempts"),
            f("mean_energy_j"),
            f("mean_registration_time_s"),
            f("overall_expired_ratio"),
            ratio("T3510"),
            ratio("T3511"),
            ratio("T3550"),
            ratio("T3560"),
        );
        let _ = writeln!(
            csv,
            "{cell},{},{},{},{},{},{},{},{},{},{},{},{}",
            p["num_ues"],
            p["loss_probability"],
            p["mode"]["mode"].as_str().unwrap_or("?"),
            f("success_fraction"),
            f("mean_attempts"),
            f("mean_energy_j"),
            s["mean_registration_time_s"],
            f("overall_expired_ratio"),
            ratio("T3510"),
            ratio("T3511"),
            ratio("T3550"),
            ratio("T3560"),
        );
    }
    let path = args.out.join("sweep_report.csv");
    std::fs::write(&path, csv).map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    Ok(())
}
