//! Scenario runner: parses a configuration, plans, tracks the selected path
//! and writes delimited-text artifacts.

pub mod config;
pub mod output;
pub mod scenario;

use std::path::{Path, PathBuf};

use safeplan::planner::{rrt_plan, safe_iig_plan, PlanningContext, Termination};
use safeplan::tracksim::{track, Disturbance, TrackingMode};
use safeplan::worldmodel::World;
use thiserror::Error;

use crate::config::{apply_overrides, parse_config, parse_override, ConfigError, Entry};
use crate::output::Telemetry;
use crate::scenario::{PlannerKind, Scenario};

/// Scenarios shipped with the binary, addressable by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("single_obstacle", include_str!("../scenarios/single_obstacle.cfg")),
    ("cave_like", include_str!("../scenarios/cave_like.cfg")),
];

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{}", format_findings(.0))]
    Config(Vec<ConfigError>),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("{0}")]
    Io(String),
}

fn format_findings(errors: &[ConfigError]) -> String {
    errors
        .iter()
        .map(|e| format!("config error: {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Planning(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Raw `key=value` overrides, applied in order.
    pub set: Vec<String>,
}

/// Reads a scenario file, falling back to a bundled scenario of that name.
fn scenario_text(arg: &str) -> Result<(String, Option<PathBuf>), RunError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Io(format!("reading {arg}: {e}")))?;
        return Ok((text, path.parent().map(Path::to_path_buf)));
    }
    match BUNDLED.iter().find(|(name, _)| *name == arg) {
        Some((_, text)) => Ok((text.to_string(), None)),
        None => Err(RunError::Io(format!(
            "scenario {arg} not found (not a file or bundled name)"
        ))),
    }
}

fn collect_entries(text: &str, opts: &RunOptions) -> Result<Vec<Entry>, Vec<ConfigError>> {
    let mut errors = Vec::new();
    let mut entries = parse_config(text).unwrap_or_else(|e| {
        errors.extend(e);
        Vec::new()
    });
    let mut overrides = Vec::new();
    for s in &opts.set {
        match parse_override(s) {
            Ok(e) => overrides.push(e),
            Err(e) => errors.push(e),
        }
    }
    if let Some(seed) = opts.seed {
        overrides.push(Entry {
            key: "planner.seed".into(),
            value: seed.to_string(),
            line: 0,
        });
    }
    if let Some(out) = &opts.out {
        overrides.push(Entry {
            key: "output.dir".into(),
            value: out.to_string_lossy().into_owned(),
            line: 0,
        });
    }
    apply_overrides(&mut entries, &overrides);
    if errors.is_empty() {
        Ok(entries)
    } else {
        Err(errors)
    }
}

/// Parses and checks a scenario without planning.
pub fn load_scenario(arg: &str, opts: &RunOptions) -> Result<Scenario, RunError> {
    let (text, base) = scenario_text(arg)?;
    let entries = collect_entries(&text, opts).map_err(RunError::Config)?;
    let (scenario, errors) = Scenario::from_entries(&entries, base.as_deref());
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(RunError::Config(errors))
    }
}

/// Every finding for the scenario; empty when it is valid.
pub fn validate(arg: &str, opts: &RunOptions) -> Vec<String> {
    match load_scenario(arg, opts) {
        Ok(_) => Vec::new(),
        Err(RunError::Config(errors)) => errors.iter().map(ToString::to_string).collect(),
        Err(e) => vec![e.to_string()],
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<(String, String)>,
}

fn io_err(dir: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io(format!("writing to {}: {e}", dir.display()))
}

/// Plans and tracks the scenario and writes every artifact into the output
/// directory.
pub fn run(arg: &str, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let scenario = load_scenario(arg, opts)?;
    run_scenario(&scenario)
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunSummary, RunError> {
    let out_dir = PathBuf::from(&scenario.output_dir);
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    output::write(&out_dir, "config.txt", &scenario.to_config_text()).map_err(io_err(&out_dir))?;

    let (grid, barriers, sources) = scenario.build_environment().map_err(|e| RunError::Io(e.to_string()))?;
    let world = World::new(grid, sources, scenario.sensor, scenario.robot_radius);
    let model = scenario.step_model();
    let mpc = scenario.mpc_config();
    let ctx = PlanningContext {
        world: &world,
        barriers: &barriers,
        model: &model,
        mpc: &mpc,
    };
    let start = scenario.start_state().map_err(RunError::Planning)?;
    let mut telemetry = Telemetry::default();
    let outcome = match scenario.planner_kind {
        PlannerKind::Rrt => rrt_plan(
            &start,
            scenario.start_stance,
            scenario.goal,
            &ctx,
            &scenario.planner,
            &mut telemetry,
        ),
        PlannerKind::SafeIig => safe_iig_plan(&start, scenario.start_stance, &ctx, &scenario.planner, &mut telemetry),
    }
    .map_err(|e| RunError::Planning(e.to_string()))?;

    let write = |name: &str, text: &str| output::write(&out_dir, name, text).map_err(io_err(&out_dir));
    write("tree.csv", &output::tree_csv(&outcome.tree))?;
    write("path.csv", &output::path_csv(&outcome.path, &barriers))?;
    write("ric.csv", &output::ric_csv(&telemetry.ric))?;
    write("barrier.csv", &output::barrier_csv(&telemetry))?;

    let tree = &outcome.tree;
    let mut rows: Vec<(String, String)> = vec![
        ("planner".into(), scenario.planner_kind.as_str().into()),
        ("termination".into(), outcome.termination.as_str().into()),
        ("samples".into(), tree.samples.to_string()),
        ("nodes".into(), tree.len().to_string()),
        ("obstacles".into(), barriers.obstacles.len().to_string()),
        ("path_steps".into(), outcome.path.len().saturating_sub(1).to_string()),
    ];
    if let Some(sel) = outcome.selected {
        rows.push(("path_cost".into(), output::num(tree.nodes[sel].cost)));
        rows.push(("path_info".into(), output::num(tree.nodes[sel].info)));
    }

    let failure = if scenario.planner_kind == PlannerKind::Rrt && outcome.termination != Termination::ReachedGoal {
        Some(format!(
            "goal not reached within {} samples",
            scenario.planner.max_samples
        ))
    } else {
        None
    };

    let mut reports = Vec::new();
    let mut tracking_error = None;
    if failure.is_none() {
        let states: Vec<_> = outcome.path.iter().map(|p| p.state).collect();
        let disturbance = (scenario.position_noise > 0.0 || scenario.momentum_noise > 0.0).then_some(Disturbance {
            position: scenario.position_noise,
            momentum: scenario.momentum_noise,
            seed: scenario.tracking_seed,
        });
        for &mode in &scenario.tracking_modes {
            match track(&states, &model.params, &TrackingMode { mode, disturbance }) {
                Ok(r) => {
                    rows.push((
                        format!("{}_max_waypoint_error", mode.as_str()),
                        output::num(r.max_waypoint_error),
                    ));
                    reports.push(r);
                }
                Err(e) => {
                    tracking_error = Some(format!("{} tracking: {e}", mode.as_str()));
                    break;
                }
            }
        }
    }
    write("tracking.csv", &output::tracking_csv(&reports))?;
    write("summary.csv", &output::summary_csv(&rows))?;

    if let Some(msg) = failure.or(tracking_error) {
        return Err(RunError::Planning(msg));
    }
    Ok(RunSummary { out_dir, rows })
}
