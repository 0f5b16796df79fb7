//! Command-line front end: config loading/validation, experiment execution,
//! and CSV/JSON result emission.
//!
//! Subcommands: `plan | simulate | montecarlo | detect`. Every run writes a
//! `manifest.json` (tool version, config digest, seed, timestamps, timing
//! summaries). Data files (CSV tables, trial JSON, traces) are byte-identical
//! across reruns with the same config and seed regardless of worker count;
//! the manifest carries the non-deterministic metadata.
//!
//! Exit codes: 0 ok, 2 config error, 3 collision, 4 timeout,
//! 5 insufficient information (detection).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::collision::build_index;
use crate::error::{Error, Result};
use crate::fov::Pose;
use crate::planner::{plan_cycle, CycleContext, SelectedPlan};
use crate::radiation::{decide, scripted_detection, DetectionState, Hypothesis};
use crate::sim::{
    derive_seed, monte_carlo, run_trial, synth_pointcloud, DetectConfig, MissionConfig,
    ScenarioConfig, TrialResult,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COLLISION: i32 = 3;
pub const EXIT_TIMEOUT: i32 = 4;
pub const EXIT_INSUFFICIENT: i32 = 5;

const STREAM_DETECT: u64 = 0xDE;

#[derive(Debug, Parser)]
#[command(name = "radnav", version, about = "Receding-horizon navigation and radiation-detection simulator")]
pub struct Cli {
    /// Scenario config file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for parallel campaigns (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a single planning cycle and dump the candidate table and the
    /// selected trajectory.
    Plan {
        /// Planning pose `x,y,z,yaw` (defaults to the scenario start).
        #[arg(long, value_delimiter = ',', num_args = 4)]
        pose: Option<Vec<f64>>,
        /// Goal override `x,y,z`.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        goal: Option<Vec<f64>>,
    },
    /// Run one closed-loop trial.
    Simulate,
    /// Run the obstacle-density × speed Monte Carlo sweep.
    Montecarlo,
    /// Run the radiation-detection campaign across seeds.
    Detect,
}

#[derive(Debug, serde::Serialize)]
struct TimingSummary {
    cycles: usize,
    median_s: f64,
    p95_s: f64,
}

#[derive(Debug, serde::Serialize)]
struct RunManifest {
    tool_version: &'static str,
    command: String,
    config_digest: String,
    root_seed: u64,
    started_at: String,
    finished_at: String,
    outputs: Vec<String>,
    timing: Option<TimingSummary>,
}

/// Entry point used by the binary; maps every error onto an exit code.
pub fn run(cli: Cli) -> i32 {
    match run_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InsufficientInformation(_) => EXIT_INSUFFICIENT,
                _ => EXIT_CONFIG,
            }
        }
    }
}

fn timing_summary(cycle_times: &[f64]) -> Option<TimingSummary> {
    if cycle_times.is_empty() {
        return None;
    }
    let mut sorted = cycle_times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let p95 = sorted[((sorted.len() as f64 * 0.95) as usize).min(sorted.len() - 1)];
    Some(TimingSummary {
        cycles: sorted.len(),
        median_s: median,
        p95_s: p95,
    })
}

fn run_inner(cli: Cli) -> Result<i32> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let raw = fs::read(config_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let digest = hex_digest(&raw);
    let mut cfg: ScenarioConfig = serde_json::from_slice(&raw)
        .map_err(|e| Error::Config(format!("{}: {e}", config_path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    if cli.workers > 0 {
        // Ignore the error if a global pool already exists (repeat calls in
        // tests); determinism does not depend on the pool size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }

    fs::create_dir_all(&cli.out)?;
    let started_at = chrono::Utc::now().to_rfc3339();

    let (code, outputs, timing) = match &cli.command {
        Command::Plan { pose, goal } => cmd_plan(&cfg, pose.as_deref(), goal.as_deref(), &cli.out)?,
        Command::Simulate => cmd_simulate(&cfg, &cli.out)?,
        Command::Montecarlo => cmd_montecarlo(&cfg, &cli.out)?,
        Command::Detect => cmd_detect(&cfg, &cli.out)?,
    };

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: format!("{:?}", cli.command).split_whitespace().next().unwrap_or("?").to_lowercase(),
        config_digest: digest,
        root_seed: cfg.seed,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        outputs,
        timing,
    };
    write_json(&cli.out.join("manifest.json"), &manifest)?;
    Ok(code)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialize {}: {e}", path.display())))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

fn cmd_plan(
    cfg: &ScenarioConfig,
    pose_arg: Option<&[f64]>,
    goal_arg: Option<&[f64]>,
    out: &Path,
) -> Result<(i32, Vec<String>, Option<TimingSummary>)> {
    let world = cfg.build_world()?;
    let planner_cfg = cfg.planner_config();
    let (position, yaw) = match pose_arg {
        Some(p) => (Vector3::new(p[0], p[1], p[2]), p[3]),
        None => (
            Vector3::new(cfg.start[0], cfg.start[1], cfg.start[2]),
            0.0,
        ),
    };
    let goal = match goal_arg {
        Some(g) => Vector3::new(g[0], g[1], g[2]),
        None => match &cfg.mission {
            MissionConfig::Goal { position } => {
                Vector3::new(position[0], position[1], position[2])
            }
            MissionConfig::Target { start, .. } => Vector3::new(start[0], start[1], start[2]),
        },
    };
    let pose = Pose::from_yaw(position, yaw);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x5E]));
    let cloud = synth_pointcloud(
        &world,
        &pose,
        &cfg.fov,
        &cfg.sensor,
        &planner_cfg.sensor_offset,
        &mut rng,
    );
    let index = build_index(&cloud);
    let state = crate::trajgen::FlatState::at_rest(position);
    // Single-shot inspection runs with the time ramp saturated.
    let ctx = CycleContext::new(10.0, yaw, 0.0);
    let res = plan_cycle(&state, &goal, &index, &pose, &ctx, &planner_cfg)?;

    let mut outputs = Vec::new();

    let eval_path = out.join("evaluations.csv");
    {
        let mut w = csv::Writer::from_path(&eval_path)?;
        w.write_record([
            "index", "x", "y", "z", "d_i", "c_coll", "rho", "c_total", "selected",
        ])?;
        let selected_goal = res.local_goal;
        for e in &res.evaluations {
            let sel = selected_goal
                .map(|g| {
                    (g - Vector3::new(e.endpoint[0], e.endpoint[1], e.endpoint[2])).norm() == 0.0
                })
                .unwrap_or(false);
            w.write_record([
                e.index.to_string(),
                e.endpoint[0].to_string(),
                e.endpoint[1].to_string(),
                e.endpoint[2].to_string(),
                e.d_i.to_string(),
                e.c_coll.to_string(),
                e.rho.to_string(),
                e.c_total.to_string(),
                (sel as u8).to_string(),
            ])?;
        }
        w.flush()?;
    }
    outputs.push("evaluations.csv".into());

    let traj_path = out.join("trajectory.csv");
    {
        let mut w = csv::Writer::from_path(&traj_path)?;
        w.write_record([
            "t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "jx", "jy", "jz", "yaw",
        ])?;
        if let SelectedPlan::Segment(seg) = &res.selected {
            let n = 101;
            for i in 0..n {
                let t = seg.terminal_time * i as f64 / (n - 1) as f64;
                let (s, _) = seg.eval_clamped(t);
                let (psi, _) = seg.yaw(t);
                w.write_record([
                    t.to_string(),
                    s.position.x.to_string(),
                    s.position.y.to_string(),
                    s.position.z.to_string(),
                    s.velocity.x.to_string(),
                    s.velocity.y.to_string(),
                    s.velocity.z.to_string(),
                    s.acceleration.x.to_string(),
                    s.acceleration.y.to_string(),
                    s.acceleration.z.to_string(),
                    s.jerk.x.to_string(),
                    s.jerk.y.to_string(),
                    s.jerk.z.to_string(),
                    psi.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    outputs.push("trajectory.csv".into());

    #[derive(serde::Serialize)]
    struct PlanSummary {
        selected: &'static str,
        local_goal: Option<[f64; 3]>,
        intermediate_point: Option<[f64; 3]>,
        terminal_time: Option<f64>,
        candidates: usize,
        cloud_points: usize,
    }
    let summary = PlanSummary {
        selected: match &res.selected {
            SelectedPlan::Segment(_) => "segment",
            SelectedPlan::EmergencyStop => "emergency_stop",
        },
        local_goal: res.local_goal.map(|g| [g.x, g.y, g.z]),
        intermediate_point: res.intermediate_point.map(|g| [g.x, g.y, g.z]),
        terminal_time: match &res.selected {
            SelectedPlan::Segment(s) => Some(s.terminal_time),
            SelectedPlan::EmergencyStop => None,
        },
        candidates: res.evaluations.len(),
        cloud_points: index.len(),
    };
    write_json(&out.join("plan_summary.json"), &summary)?;
    outputs.push("plan_summary.json".into());

    let timing = timing_summary(&[res.timing]);
    Ok((EXIT_OK, outputs, timing))
}

fn write_detection_trace(path: &Path, det: &DetectionState) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "log_L_over_gamma", "pfa_bound", "pm_bound", "distance"])?;
    for s in &det.trace {
        w.write_record([
            s.t.to_string(),
            s.log_l_over_gamma.to_string(),
            s.pfa_bound.to_string(),
            s.pm_bound.to_string(),
            s.distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(
    cfg: &ScenarioConfig,
    out: &Path,
) -> Result<(i32, Vec<String>, Option<TimingSummary>)> {
    let TrialResult {
        outcome,
        detection_state,
        cycle_times,
        path,
    } = run_trial(cfg)?;

    let mut outputs = Vec::new();
    write_json(&out.join("trial.json"), &outcome)?;
    outputs.push("trial.json".into());

    {
        let mut w = csv::Writer::from_path(out.join("path.csv"))?;
        w.write_record(["x", "y", "z"])?;
        for p in &path {
            w.write_record([p[0].to_string(), p[1].to_string(), p[2].to_string()])?;
        }
        w.flush()?;
        outputs.push("path.csv".into());
    }

    if let Some(det) = &detection_state {
        write_detection_trace(&out.join("detection_trace.csv"), det)?;
        outputs.push("detection_trace.csv".into());
    }

    let code = if outcome.success {
        EXIT_OK
    } else if outcome.collision {
        EXIT_COLLISION
    } else {
        EXIT_TIMEOUT
    };
    Ok((code, outputs, timing_summary(&cycle_times)))
}

fn cmd_montecarlo(
    cfg: &ScenarioConfig,
    out: &Path,
) -> Result<(i32, Vec<String>, Option<TimingSummary>)> {
    let mc = cfg
        .montecarlo
        .clone()
        .ok_or_else(|| Error::Config("montecarlo command needs a 'montecarlo' section".into()))?;
    let rows = monte_carlo(cfg, &mc, cfg.seed)?;
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "density", "v_max", "n_trials", "successes", "p_hat", "ci_lo", "ci_hi",
    ])?;
    for r in &rows {
        w.write_record([
            r.density.to_string(),
            r.v_max.to_string(),
            r.n_trials.to_string(),
            r.successes.to_string(),
            r.p_hat.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
        ])?;
    }
    w.flush()?;
    Ok((EXIT_OK, vec!["sweep.csv".into()], None))
}

fn cmd_detect(
    cfg: &ScenarioConfig,
    out: &Path,
) -> Result<(i32, Vec<String>, Option<TimingSummary>)> {
    use rayon::prelude::*;

    let rad = cfg
        .radiation
        .clone()
        .ok_or_else(|| Error::Config("detect command needs a 'radiation' section".into()))?;
    let det_cfg = cfg.detect.clone().unwrap_or_else(|| DetectConfig {
        n_seeds: 200,
        scripted_distance: None,
    });
    let src = rad.resolve_source()?;

    struct SeedOutcome {
        verdict: String,
        decision_time: Option<f64>,
        trace: Option<DetectionState>,
    }

    let outcomes: Vec<SeedOutcome> = (0..det_cfg.n_seeds)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, &[STREAM_DETECT, i as u64]);
            match det_cfg.scripted_distance {
                Some(d) => match scripted_detection(
                    &src,
                    rad.alpha,
                    rad.window,
                    d,
                    1.0 / cfg.planner.cycle_dt,
                    rad.source_present,
                    seed,
                ) {
                    Ok(det) => SeedOutcome {
                        verdict: decide(&det).to_string(),
                        decision_time: det.decision_time,
                        trace: if i == 0 { Some(det) } else { None },
                    },
                    Err(Error::InsufficientInformation(_)) => SeedOutcome {
                        verdict: "insufficient-information".into(),
                        decision_time: None,
                        trace: None,
                    },
                    Err(_) => SeedOutcome {
                        verdict: "error".into(),
                        decision_time: None,
                        trace: None,
                    },
                },
                None => {
                    let mut trial_cfg = cfg.clone();
                    trial_cfg.seed = seed;
                    match run_trial(&trial_cfg) {
                        Ok(res) => {
                            let verdict = res
                                .outcome
                                .detection
                                .as_ref()
                                .map(|d| d.verdict.clone())
                                .unwrap_or_else(|| "insufficient-information".into());
                            let decision_time = res
                                .outcome
                                .detection
                                .as_ref()
                                .and_then(|d| d.decision_time);
                            SeedOutcome {
                                verdict,
                                decision_time,
                                trace: if i == 0 { res.detection_state } else { None },
                            }
                        }
                        Err(_) => SeedOutcome {
                            verdict: "error".into(),
                            decision_time: None,
                            trace: None,
                        },
                    }
                }
            }
        })
        .collect();

    let mut outputs = Vec::new();
    {
        let mut w = csv::Writer::from_path(out.join("decision_times.csv"))?;
        w.write_record(["seed_index", "verdict", "decision_time"])?;
        for (i, o) in outcomes.iter().enumerate() {
            w.write_record([
                i.to_string(),
                o.verdict.clone(),
                o.decision_time.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        outputs.push("decision_times.csv".into());
    }

    if let Some(det) = outcomes.iter().find_map(|o| o.trace.as_ref()) {
        write_detection_trace(&out.join("detection_trace.csv"), det)?;
        outputs.push("detection_trace.csv".into());
    }

    let n = outcomes.len().max(1);
    let h1 = outcomes.iter().filter(|o| o.verdict == Hypothesis::H1.to_string()).count();
    let h0 = outcomes.iter().filter(|o| o.verdict == Hypothesis::H0.to_string()).count();
    let insufficient = outcomes
        .iter()
        .filter(|o| o.verdict == "insufficient-information")
        .count();
    // Decision-time percentiles, censoring undecided runs at the window end.
    let mut times: Vec<f64> = outcomes
        .iter()
        .map(|o| o.decision_time.unwrap_or(rad.window))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |q: f64| times[((times.len() as f64 - 1.0) * q).round() as usize];

    #[derive(serde::Serialize)]
    struct DetectReport {
        n_seeds: usize,
        h1_fraction: f64,
        h0_fraction: f64,
        insufficient_fraction: f64,
        alpha: f64,
        source_present: bool,
        decision_time_median: f64,
        decision_time_p5: f64,
        decision_time_p95: f64,
    }
    let report = DetectReport {
        n_seeds: n,
        h1_fraction: h1 as f64 / n as f64,
        h0_fraction: h0 as f64 / n as f64,
        insufficient_fraction: insufficient as f64 / n as f64,
        alpha: rad.alpha,
        source_present: rad.source_present,
        decision_time_median: pct(0.5),
        decision_time_p5: pct(0.05),
        decision_time_p95: pct(0.95),
    };
    write_json(&out.join("detect_report.json"), &report)?;
    outputs.push("detect_report.json".into());

    let code = if insufficient == n {
        EXIT_INSUFFICIENT
    } else {
        EXIT_OK
    };
    Ok((code, outputs, None))
}
