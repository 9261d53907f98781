//! Typed scenario built from configuration entries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use safeplan::lip_core::{periodic_gait_velocity, KinematicLimits, LipParams, LipState, ReachableBounds, Stance};
use safeplan::planner::{CostMode, PlannerConfig};
use safeplan::safety::{extract_obstacles, BarrierSpec, Obstacle};
use safeplan::tracksim::ControlMode;
use safeplan::trajopt::{MpcConfig, StepModel};
use safeplan::worldmodel::{
    cave_like_map, load_map, single_obstacle_map, OccupancyGrid, SensorModel, SignalSource, WorldError,
};

use crate::config::{ConfigError, Entry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSource {
    SingleObstacle,
    CaveLike,
    File,
}

impl MapSource {
    fn as_str(self) -> &'static str {
        match self {
            MapSource::SingleObstacle => "single_obstacle",
            MapSource::CaveLike => "cave_like",
            MapSource::File => "file",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObstacleMode {
    /// The obstacle that generated the built-in map.
    Fixture,
    /// Clusters of occupied cells.
    Extract,
    /// Explicit `obstacles.<i>.*` entries.
    List,
}

impl ObstacleMode {
    fn as_str(self) -> &'static str {
        match self {
            ObstacleMode::Fixture => "fixture",
            ObstacleMode::Extract => "extract",
            ObstacleMode::List => "list",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    Fixture,
    List,
    None,
}

impl SourceMode {
    fn as_str(self) -> &'static str {
        match self {
            SourceMode::Fixture => "fixture",
            SourceMode::List => "list",
            SourceMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Rrt,
    SafeIig,
}

impl PlannerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::Rrt => "rrt",
            PlannerKind::SafeIig => "safe-iig",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleEntry {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub rotation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceEntry {
    pub center: [f64; 2],
    pub strength: f64,
    /// `(sxx, sxy, syy)`.
    pub covariance: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub map_source: MapSource,
    pub map_resolution: f64,
    pub map_seed: u64,
    pub map_path: String,
    pub obstacle_mode: ObstacleMode,
    pub obstacle_threshold: f64,
    pub obstacle_buffer: f64,
    pub obstacle_norm_p: f64,
    pub obstacles: Vec<ObstacleEntry>,
    pub gamma: f64,
    pub activation_radius: f64,
    pub com_height: f64,
    pub gravity: f64,
    pub step_duration: f64,
    pub mass: f64,
    pub sagittal: [f64; 2],
    pub lateral: [f64; 2],
    pub l_min: f64,
    pub l_max: f64,
    pub mpc: MpcConfig,
    pub planner_kind: PlannerKind,
    pub planner: PlannerConfig,
    pub start: [f64; 2],
    pub start_heading: f64,
    pub start_step_length: f64,
    pub start_lateral_offset: f64,
    pub start_stance: Stance,
    pub goal: [f64; 2],
    pub source_mode: SourceMode,
    pub sources: Vec<SourceEntry>,
    pub sensor: SensorModel,
    pub robot_radius: f64,
    pub tracking_modes: Vec<ControlMode>,
    pub position_noise: f64,
    pub momentum_noise: f64,
    pub tracking_seed: u64,
    pub output_dir: String,
}

impl Default for Scenario {
    fn default() -> Self {
        let limits = KinematicLimits::default();
        let bounds = ReachableBounds::cassie(Stance::Left);
        let lip = LipParams::default();
        Self {
            name: "unnamed".into(),
            map_source: MapSource::SingleObstacle,
            map_resolution: 0.1,
            map_seed: 0,
            map_path: String::new(),
            obstacle_mode: ObstacleMode::Extract,
            obstacle_threshold: safeplan::worldmodel::OCCUPIED_THRESHOLD,
            obstacle_buffer: safeplan::worldmodel::DEFAULT_ROBOT_RADIUS,
            obstacle_norm_p: safeplan::safety::DEFAULT_NORM_P,
            obstacles: Vec::new(),
            gamma: safeplan::safety::DEFAULT_GAMMA,
            activation_radius: safeplan::safety::DEFAULT_ACTIVATION_RADIUS,
            com_height: lip.com_height(),
            gravity: lip.gravity(),
            step_duration: lip.step_duration(),
            mass: lip.mass(),
            sagittal: [bounds.lb_xb, bounds.ub_xb],
            lateral: [bounds.lb_yb, bounds.ub_yb],
            l_min: limits.l_min,
            l_max: limits.l_max,
            mpc: MpcConfig::default(),
            planner_kind: PlannerKind::Rrt,
            planner: PlannerConfig::default(),
            start: [1.0, 1.0],
            start_heading: 0.0,
            start_step_length: 0.3,
            start_lateral_offset: 0.15,
            start_stance: Stance::Left,
            goal: [2.0, 1.0],
            source_mode: SourceMode::None,
            sources: Vec::new(),
            sensor: SensorModel::default(),
            robot_radius: safeplan::worldmodel::DEFAULT_ROBOT_RADIUS,
            tracking_modes: vec![ControlMode::OpenLoop, ControlMode::ClosedLoop],
            position_noise: 0.0,
            momentum_noise: 0.0,
            tracking_seed: 0,
            output_dir: "out".into(),
        }
    }
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn list(v: &str, n: usize) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(format!("expected {n} comma-separated numbers"));
    }
    parts.iter().map(|p| num::<f64>(p)).collect()
}

fn pair(v: &str) -> Result<[f64; 2], String> {
    let l = list(v, 2)?;
    Ok([l[0], l[1]])
}

fn fmt_pair(p: [f64; 2]) -> String {
    format!("{:?}, {:?}", p[0], p[1])
}

fn num_text(x: f64) -> String {
    format!("{x:?}")
}

fn choice<T: Copy>(v: &str, options: &[(&str, T)]) -> Result<T, String> {
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("expected one of {}", names.join(", "))
        })
}

fn parse_modes(v: &str) -> Result<Vec<ControlMode>, String> {
    if v == "none" {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|m| {
            choice(
                m.trim(),
                &[
                    ("open_loop", ControlMode::OpenLoop),
                    ("closed_loop", ControlMode::ClosedLoop),
                ],
            )
        })
        .collect()
}

#[derive(Default)]
struct PartialObstacle {
    center: Option<[f64; 2]>,
    radii: Option<[f64; 2]>,
    rotation: Option<f64>,
}

#[derive(Default)]
struct PartialSource {
    center: Option<[f64; 2]>,
    strength: Option<f64>,
    covariance: Option<[f64; 3]>,
}

/// Splits `prefix.<index>.<field>`.
fn indexed<'a>(key: &'a str, prefix: &str) -> Option<(usize, &'a str)> {
    let rest = key.strip_prefix(prefix)?.strip_prefix('.')?;
    let (idx, field) = rest.split_once('.')?;
    Some((idx.parse().ok()?, field))
}

impl Scenario {
    /// Builds a scenario from entries on top of the defaults. Relative map
    /// paths are resolved against `base_dir`. All findings are returned.
    pub fn from_entries(entries: &[Entry], base_dir: Option<&Path>) -> (Scenario, Vec<ConfigError>) {
        let mut s = Scenario::default();
        let mut errors = Vec::new();
        let mut obstacles: BTreeMap<usize, PartialObstacle> = BTreeMap::new();
        let mut sources: BTreeMap<usize, PartialSource> = BTreeMap::new();
        for e in entries {
            let obstacle_field =
                indexed(&e.key, "obstacles").filter(|(_, f)| ["center", "radii", "rotation"].contains(f));
            let source_field =
                indexed(&e.key, "sources").filter(|(_, f)| ["center", "strength", "covariance"].contains(f));
            let result = if let Some((i, field)) = obstacle_field {
                let o = obstacles.entry(i).or_default();
                match field {
                    "center" => pair(&e.value).map(|v| o.center = Some(v)),
                    "radii" => pair(&e.value).map(|v| o.radii = Some(v)),
                    _ => num(&e.value).map(|v| o.rotation = Some(v)),
                }
            } else if let Some((i, field)) = source_field {
                let src = sources.entry(i).or_default();
                match field {
                    "center" => pair(&e.value).map(|v| src.center = Some(v)),
                    "strength" => num(&e.value).map(|v| src.strength = Some(v)),
                    _ => list(&e.value, 3).map(|v| src.covariance = Some([v[0], v[1], v[2]])),
                }
            } else {
                match s.apply(&e.key, &e.value, base_dir) {
                    Some(r) => r,
                    None => {
                        errors.push(ConfigError::UnknownKey { key: e.key.clone() });
                        continue;
                    }
                }
            };
            if let Err(message) = result {
                errors.push(ConfigError::InvalidValue {
                    key: e.key.clone(),
                    value: e.value.clone(),
                    message,
                });
            }
        }
        for (expected, (i, o)) in obstacles.into_iter().enumerate() {
            if i != expected {
                errors.push(ConfigError::Invariant {
                    key: format!("obstacles.{expected}"),
                    message: "obstacle indices must be consecutive from 0".into(),
                });
                break;
            }
            match (o.center, o.radii) {
                (Some(center), Some(radii)) => s.obstacles.push(ObstacleEntry {
                    center,
                    radii,
                    rotation: o.rotation.unwrap_or(0.0),
                }),
                (None, _) => errors.push(ConfigError::Invariant {
                    key: format!("obstacles.{i}.center"),
                    message: "missing".into(),
                }),
                (_, None) => errors.push(ConfigError::Invariant {
                    key: format!("obstacles.{i}.radii"),
                    message: "missing".into(),
                }),
            }
        }
        for (expected, (i, src)) in sources.into_iter().enumerate() {
            if i != expected {
                errors.push(ConfigError::Invariant {
                    key: format!("sources.{expected}"),
                    message: "source indices must be consecutive from 0".into(),
                });
                break;
            }
            match (src.center, src.strength, src.covariance) {
                (Some(center), Some(strength), Some(covariance)) => s.sources.push(SourceEntry {
                    center,
                    strength,
                    covariance,
                }),
                (c, st, _) => {
                    let field = if c.is_none() {
                        "center"
                    } else if st.is_none() {
                        "strength"
                    } else {
                        "covariance"
                    };
                    errors.push(ConfigError::Invariant {
                        key: format!("sources.{i}.{field}"),
                        message: "missing".into(),
                    });
                }
            }
        }
        errors.extend(s.validate());
        (s, errors)
    }

    /// Sets one scalar key; `None` for an unknown key.
    fn apply(&mut self, key: &str, v: &str, base_dir: Option<&Path>) -> Option<Result<(), String>> {
        let r = match key {
            "scenario.name" => {
                self.name = v.to_string();
                Ok(())
            }
            "map.source" => choice(
                v,
                &[
                    ("single_obstacle", MapSource::SingleObstacle),
                    ("cave_like", MapSource::CaveLike),
                    ("file", MapSource::File),
                ],
            )
            .map(|x| self.map_source = x),
            "map.resolution" => num(v).map(|x| self.map_resolution = x),
            "map.seed" => num(v).map(|x| self.map_seed = x),
            "map.path" => {
                let p = PathBuf::from(v);
                let p = match base_dir {
                    Some(dir) if p.is_relative() && !v.is_empty() => dir.join(p),
                    _ => p,
                };
                self.map_path = p.to_string_lossy().into_owned();
                Ok(())
            }
            "obstacles.mode" => choice(
                v,
                &[
                    ("fixture", ObstacleMode::Fixture),
                    ("extract", ObstacleMode::Extract),
                    ("list", ObstacleMode::List),
                ],
            )
            .map(|x| self.obstacle_mode = x),
            "obstacles.threshold" => num(v).map(|x| self.obstacle_threshold = x),
            "obstacles.buffer" => num(v).map(|x| self.obstacle_buffer = x),
            "obstacles.norm_p" => num(v).map(|x| self.obstacle_norm_p = x),
            "barrier.gamma" => num(v).map(|x| self.gamma = x),
            "barrier.activation_radius" => num(v).map(|x| self.activation_radius = x),
            "lip.com_height" => num(v).map(|x| self.com_height = x),
            "lip.gravity" => num(v).map(|x| self.gravity = x),
            "lip.step_duration" => num(v).map(|x| self.step_duration = x),
            "lip.mass" => num(v).map(|x| self.mass = x),
            "reach.sagittal_min" => num(v).map(|x| self.sagittal[0] = x),
            "reach.sagittal_max" => num(v).map(|x| self.sagittal[1] = x),
            "reach.lateral_min" => num(v).map(|x| self.lateral[0] = x),
            "reach.lateral_max" => num(v).map(|x| self.lateral[1] = x),
            "limits.l_min" => num(v).map(|x| self.l_min = x),
            "limits.l_max" => num(v).map(|x| self.l_max = x),
            "mpc.n_min" => num(v).map(|x| self.mpc.n_min = x),
            "mpc.n_max" => num(v).map(|x| self.mpc.n_max = x),
            "mpc.w1" => num(v).map(|x| self.mpc.w1 = x),
            "mpc.w2" => num(v).map(|x| self.mpc.w2 = x),
            "mpc.w_step" => num(v).map(|x| self.mpc.w_step = x),
            "mpc.feasibility_tol" => num(v).map(|x| self.mpc.feasibility_tol = x),
            "mpc.max_iterations" => num(v).map(|x| self.mpc.max_iterations = x),
            "mpc.max_evaluations" => num(v).map(|x| self.mpc.max_evaluations = x),
            "mpc.l_nominal" => num(v).map(|x| self.mpc.l_nominal = x),
            "planner.kind" => choice(v, &[("rrt", PlannerKind::Rrt), ("safe-iig", PlannerKind::SafeIig)])
                .map(|x| self.planner_kind = x),
            "planner.budget" => num(v).map(|x| self.planner.budget = x),
            "planner.near_radius" => num(v).map(|x| self.planner.near_radius = x),
            "planner.delta_ric" => num(v).map(|x| self.planner.delta_ric = x),
            "planner.n_ric" => num(v).map(|x| self.planner.n_ric = x),
            "planner.max_samples" => num(v).map(|x| self.planner.max_samples = x),
            "planner.goal_radius" => num(v).map(|x| self.planner.goal_radius = x),
            "planner.seed" => num(v).map(|x| self.planner.rng_seed = x),
            "planner.prune_epsilon" => num(v).map(|x| self.planner.prune_epsilon = x),
            "planner.cost_mode" => choice(v, &[("distance", CostMode::Distance), ("steps", CostMode::Steps)])
                .map(|x| self.planner.cost_mode = x),
            "start.x" => num(v).map(|x| self.start[0] = x),
            "start.y" => num(v).map(|x| self.start[1] = x),
            "start.heading" => num(v).map(|x| self.start_heading = x),
            "start.step_length" => num(v).map(|x| self.start_step_length = x),
            "start.lateral_offset" => num(v).map(|x| self.start_lateral_offset = x),
            "start.stance" => v
                .parse::<Stance>()
                .map(|x| self.start_stance = x)
                .map_err(|e| e.to_string()),
            "goal.x" => num(v).map(|x| self.goal[0] = x),
            "goal.y" => num(v).map(|x| self.goal[1] = x),
            "sources.mode" => choice(
                v,
                &[
                    ("fixture", SourceMode::Fixture),
                    ("list", SourceMode::List),
                    ("none", SourceMode::None),
                ],
            )
            .map(|x| self.source_mode = x),
            "sensor.num_beams" => num(v).map(|x| self.sensor.num_beams = x),
            "sensor.fov" => num(v).map(|x| self.sensor.fov = x),
            "sensor.max_range" => num(v).map(|x| self.sensor.max_range = x),
            "world.robot_radius" => num(v).map(|x| self.robot_radius = x),
            "tracking.modes" => parse_modes(v).map(|x| self.tracking_modes = x),
            "tracking.position_noise" => num(v).map(|x| self.position_noise = x),
            "tracking.momentum_noise" => num(v).map(|x| self.momentum_noise = x),
            "tracking.seed" => num(v).map(|x| self.tracking_seed = x),
            "output.dir" => {
                self.output_dir = v.to_string();
                Ok(())
            }
            _ => return None,
        };
        Some(r)
    }

    /// Every key with its resolved value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("scenario.name", self.name.clone());
        put("map.source", self.map_source.as_str().into());
        put("map.resolution", num_text(self.map_resolution));
        put("map.seed", self.map_seed.to_string());
        put("map.path", self.map_path.clone());
        put("obstacles.mode", self.obstacle_mode.as_str().into());
        put("obstacles.threshold", num_text(self.obstacle_threshold));
        put("obstacles.buffer", num_text(self.obstacle_buffer));
        put("obstacles.norm_p", num_text(self.obstacle_norm_p));
        for (i, o) in self.obstacles.iter().enumerate() {
            put(&format!("obstacles.{i}.center"), fmt_pair(o.center));
            put(&format!("obstacles.{i}.radii"), fmt_pair(o.radii));
            put(&format!("obstacles.{i}.rotation"), num_text(o.rotation));
        }
        put("barrier.gamma", num_text(self.gamma));
        put("barrier.activation_radius", num_text(self.activation_radius));
        put("lip.com_height", num_text(self.com_height));
        put("lip.gravity", num_text(self.gravity));
        put("lip.step_duration", num_text(self.step_duration));
        put("lip.mass", num_text(self.mass));
        put("reach.sagittal_min", num_text(self.sagittal[0]));
        put("reach.sagittal_max", num_text(self.sagittal[1]));
        put("reach.lateral_min", num_text(self.lateral[0]));
        put("reach.lateral_max", num_text(self.lateral[1]));
        put("limits.l_min", num_text(self.l_min));
        put("limits.l_max", num_text(self.l_max));
        put("mpc.n_min", self.mpc.n_min.to_string());
        put("mpc.n_max", self.mpc.n_max.to_string());
        put("mpc.w1", num_text(self.mpc.w1));
        put("mpc.w2", num_text(self.mpc.w2));
        put("mpc.w_step", num_text(self.mpc.w_step));
        put("mpc.feasibility_tol", num_text(self.mpc.feasibility_tol));
        put("mpc.max_iterations", self.mpc.max_iterations.to_string());
        put("mpc.max_evaluations", self.mpc.max_evaluations.to_string());
        put("mpc.l_nominal", num_text(self.mpc.l_nominal));
        put("planner.kind", self.planner_kind.as_str().into());
        put("planner.budget", num_text(self.planner.budget));
        put("planner.near_radius", num_text(self.planner.near_radius));
        put("planner.delta_ric", num_text(self.planner.delta_ric));
        put("planner.n_ric", self.planner.n_ric.to_string());
        put("planner.max_samples", self.planner.max_samples.to_string());
        put("planner.goal_radius", num_text(self.planner.goal_radius));
        put("planner.seed", self.planner.rng_seed.to_string());
        put("planner.prune_epsilon", num_text(self.planner.prune_epsilon));
        put("planner.cost_mode", self.planner.cost_mode.as_str().into());
        put("start.x", num_text(self.start[0]));
        put("start.y", num_text(self.start[1]));
        put("start.heading", num_text(self.start_heading));
        put("start.step_length", num_text(self.start_step_length));
        put("start.lateral_offset", num_text(self.start_lateral_offset));
        put("start.stance", self.start_stance.as_str().into());
        put("goal.x", num_text(self.goal[0]));
        put("goal.y", num_text(self.goal[1]));
        put("sources.mode", self.source_mode.as_str().into());
        for (i, s) in self.sources.iter().enumerate() {
            put(&format!("sources.{i}.center"), fmt_pair(s.center));
            put(&format!("sources.{i}.strength"), num_text(s.strength));
            let c = s.covariance;
            put(
                &format!("sources.{i}.covariance"),
                format!("{:?}, {:?}, {:?}", c[0], c[1], c[2]),
            );
        }
        put("sensor.num_beams", self.sensor.num_beams.to_string());
        put("sensor.fov", num_text(self.sensor.fov));
        put("sensor.max_range", num_text(self.sensor.max_range));
        put("world.robot_radius", num_text(self.robot_radius));
        let modes: Vec<&str> = self.tracking_modes.iter().map(|m| m.as_str()).collect();
        put(
            "tracking.modes",
            if modes.is_empty() {
                "none".into()
            } else {
                modes.join(", ")
            },
        );
        put("tracking.position_noise", num_text(self.position_noise));
        put("tracking.momentum_noise", num_text(self.momentum_noise));
        put("tracking.seed", self.tracking_seed.to_string());
        put("output.dir", self.output_dir.clone());
        out
    }

    /// Canonical configuration text; parsing it reproduces this scenario.
    pub fn to_config_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every violated invariant, keyed by the offending entry.
    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, key: &str, message: String| {
            if !ok {
                errors.push(ConfigError::Invariant {
                    key: key.to_string(),
                    message,
                });
            }
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;

        check(
            positive(self.map_resolution),
            "map.resolution",
            format!("must be positive, got {}", self.map_resolution),
        );
        check(
            self.obstacle_threshold > 0.0 && self.obstacle_threshold <= 1.0,
            "obstacles.threshold",
            format!("must lie in (0, 1], got {}", self.obstacle_threshold),
        );
        check(
            nonneg(self.obstacle_buffer),
            "obstacles.buffer",
            format!("must be nonnegative, got {}", self.obstacle_buffer),
        );
        check(
            self.obstacle_norm_p.is_finite() && self.obstacle_norm_p >= 1.0,
            "obstacles.norm_p",
            format!("must be at least 1, got {}", self.obstacle_norm_p),
        );
        check(
            self.obstacle_mode != ObstacleMode::Fixture || self.map_source == MapSource::SingleObstacle,
            "obstacles.mode",
            "fixture obstacles require map.source = single_obstacle".into(),
        );
        for (i, o) in self.obstacles.iter().enumerate() {
            check(
                positive(o.radii[0]) && positive(o.radii[1]),
                &format!("obstacles.{i}.radii"),
                format!("must be positive, got {:?}", o.radii),
            );
            check(
                o.center.iter().all(|v| v.is_finite()) && o.rotation.is_finite(),
                &format!("obstacles.{i}.center"),
                "must be finite".into(),
            );
        }
        check(
            self.obstacle_mode != ObstacleMode::List || !self.obstacles.is_empty(),
            "obstacles.mode",
            "list mode needs at least one obstacles.<i> entry".into(),
        );
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "barrier.gamma",
            format!("must lie in (0, 1], got {}", self.gamma),
        );
        check(
            positive(self.activation_radius),
            "barrier.activation_radius",
            format!("must be positive, got {}", self.activation_radius),
        );
        for (key, v) in [
            ("lip.com_height", self.com_height),
            ("lip.gravity", self.gravity),
            ("lip.step_duration", self.step_duration),
            ("lip.mass", self.mass),
        ] {
            check(positive(v), key, format!("must be positive, got {v}"));
        }
        check(
            self.sagittal[0] < self.sagittal[1],
            "reach.sagittal_min",
            format!(
                "must be below reach.sagittal_max, got [{}, {}]",
                self.sagittal[0], self.sagittal[1]
            ),
        );
        check(
            self.lateral[0] < self.lateral[1],
            "reach.lateral_min",
            format!(
                "must be below reach.lateral_max, got [{}, {}]",
                self.lateral[0], self.lateral[1]
            ),
        );
        check(
            positive(self.l_min),
            "limits.l_min",
            format!("must be positive, got {}", self.l_min),
        );
        check(
            self.l_max.is_finite() && self.l_max > self.l_min,
            "limits.l_max",
            format!("must exceed limits.l_min, got {}", self.l_max),
        );
        check(self.mpc.n_min >= 1, "mpc.n_min", "must be at least 1".into());
        check(
            self.mpc.n_max >= self.mpc.n_min,
            "mpc.n_max",
            "must be at least mpc.n_min".into(),
        );
        for (key, v) in [
            ("mpc.w1", self.mpc.w1),
            ("mpc.w2", self.mpc.w2),
            ("mpc.w_step", self.mpc.w_step),
        ] {
            check(nonneg(v), key, format!("must be nonnegative, got {v}"));
        }
        check(
            positive(self.mpc.feasibility_tol),
            "mpc.feasibility_tol",
            "must be positive".into(),
        );
        check(
            self.mpc.max_iterations > 0,
            "mpc.max_iterations",
            "must be positive".into(),
        );
        check(
            self.mpc.max_evaluations > 0,
            "mpc.max_evaluations",
            "must be positive".into(),
        );
        check(positive(self.mpc.l_nominal), "mpc.l_nominal", "must be positive".into());
        let p = &self.planner;
        check(
            positive(p.budget),
            "planner.budget",
            format!("must be positive, got {}", p.budget),
        );
        check(
            positive(p.near_radius),
            "planner.near_radius",
            format!("must be positive, got {}", p.near_radius),
        );
        check(
            positive(p.delta_ric),
            "planner.delta_ric",
            format!("must be positive, got {}", p.delta_ric),
        );
        check(p.n_ric >= 1, "planner.n_ric", "must be at least 1".into());
        check(
            positive(p.goal_radius),
            "planner.goal_radius",
            format!("must be positive, got {}", p.goal_radius),
        );
        check(
            nonneg(p.prune_epsilon),
            "planner.prune_epsilon",
            format!("must be nonnegative, got {}", p.prune_epsilon),
        );
        check(
            self.start.iter().chain(&self.goal).all(|v| v.is_finite()) && self.start_heading.is_finite(),
            "start.x",
            "start, heading and goal must be finite".into(),
        );
        check(
            positive(self.start_step_length),
            "start.step_length",
            format!("must be positive, got {}", self.start_step_length),
        );
        check(
            nonneg(self.start_lateral_offset),
            "start.lateral_offset",
            format!("must be nonnegative, got {}", self.start_lateral_offset),
        );
        check(
            self.source_mode != SourceMode::Fixture || self.map_source == MapSource::CaveLike,
            "sources.mode",
            "fixture sources require map.source = cave_like".into(),
        );
        for (i, s) in self.sources.iter().enumerate() {
            let c = s.covariance;
            if let Err(e) = SignalSource::new(s.center, s.strength, [[c[0], c[1]], [c[1], c[2]]]) {
                let field = if matches!(&e, WorldError::InvalidSource(m) if m.contains("strength")) {
                    "strength"
                } else {
                    "covariance"
                };
                check(false, &format!("sources.{i}.{field}"), e.to_string());
            }
        }
        check(
            self.sensor.num_beams >= 1,
            "sensor.num_beams",
            "must be at least 1".into(),
        );
        check(
            self.sensor.fov.is_finite() && self.sensor.fov >= 0.0,
            "sensor.fov",
            format!("must be nonnegative, got {}", self.sensor.fov),
        );
        check(
            positive(self.sensor.max_range),
            "sensor.max_range",
            format!("must be positive, got {}", self.sensor.max_range),
        );
        check(
            nonneg(self.robot_radius),
            "world.robot_radius",
            format!("must be nonnegative, got {}", self.robot_radius),
        );
        check(
            nonneg(self.position_noise),
            "tracking.position_noise",
            format!("must be nonnegative, got {}", self.position_noise),
        );
        check(
            nonneg(self.momentum_noise),
            "tracking.momentum_noise",
            format!("must be nonnegative, got {}", self.momentum_noise),
        );
        check(!self.output_dir.is_empty(), "output.dir", "must not be empty".into());
        if self.map_source == MapSource::File {
            if self.map_path.is_empty() {
                check(false, "map.path", "required when map.source = file".into());
            } else if !Path::new(&self.map_path).is_file() {
                errors.push(ConfigError::MissingFile {
                    key: "map.path".into(),
                    path: self.map_path.clone(),
                });
            }
        }
        errors
    }

    pub fn lip_params(&self) -> LipParams {
        LipParams::new(self.com_height, self.gravity, self.step_duration, self.mass).expect("validated")
    }

    pub fn step_model(&self) -> StepModel {
        let bounds = ReachableBounds::from_left_band(
            self.sagittal[0],
            self.sagittal[1],
            self.lateral[0],
            self.lateral[1],
            Stance::Left,
        )
        .expect("validated");
        StepModel {
            params: self.lip_params(),
            bounds,
            limits: KinematicLimits::new(self.l_min, self.l_max).expect("validated"),
        }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            gamma: self.gamma,
            ..self.mpc
        }
    }

    /// Start state on the periodic gait along `start.heading`.
    pub fn start_state(&self) -> Result<LipState, String> {
        let dir = [self.start_heading.cos(), self.start_heading.sin()];
        let v = periodic_gait_velocity(
            dir,
            self.start_step_length,
            self.start_lateral_offset,
            self.start_stance,
            &self.lip_params(),
        )
        .map_err(|e| e.to_string())?;
        Ok(LipState::new(self.start[0], v[0], self.start[1], v[1]))
    }

    /// Grid, obstacles and sources described by the scenario.
    pub fn build_environment(&self) -> Result<(OccupancyGrid, BarrierSpec, Vec<SignalSource>), WorldError> {
        let mut fixture_obstacle = None;
        let mut fixture_sources = Vec::new();
        let grid = match self.map_source {
            MapSource::SingleObstacle => {
                let (g, o) = single_obstacle_map(self.map_resolution);
                fixture_obstacle = Some(o);
                g
            }
            MapSource::CaveLike => {
                let (g, s) = cave_like_map(self.map_seed);
                fixture_sources = s;
                g
            }
            MapSource::File => load_map(&self.map_path)?,
        };
        let buffer = [self.obstacle_buffer; 2];
        let obstacles = match self.obstacle_mode {
            ObstacleMode::Fixture => {
                let o = fixture_obstacle.expect("validated");
                vec![Obstacle::new(o.center, o.radii, buffer, o.norm_p, o.rotation).expect("validated")]
            }
            ObstacleMode::Extract => extract_obstacles(
                &grid,
                self.obstacle_threshold,
                self.obstacle_buffer,
                self.obstacle_norm_p,
            ),
            ObstacleMode::List => self
                .obstacles
                .iter()
                .map(|o| Obstacle::new(o.center, o.radii, buffer, self.obstacle_norm_p, o.rotation).expect("validated"))
                .collect(),
        };
        let barriers = BarrierSpec::new(obstacles, self.gamma, self.activation_radius).expect("validated");
        let sources = match self.source_mode {
            SourceMode::Fixture => fixture_sources,
            SourceMode::List => self
                .sources
                .iter()
                .map(|s| {
                    let c = s.covariance;
                    SignalSource::new(s.center, s.strength, [[c[0], c[1]], [c[1], c[2]]]).expect("validated")
                })
                .collect(),
            SourceMode::None => Vec::new(),
        };
        Ok((grid, barriers, sources))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn scenario(text: &str) -> (Scenario, Vec<ConfigError>) {
        Scenario::from_entries(&parse_config(text).unwrap(), None)
    }

    #[test]
    fn defaults_are_valid() {
        assert!(Scenario::default().validate().is_empty());
    }

    #[test]
    fn negative_height_names_key() {
        let (_, errors) = scenario("lip.com_height = -0.6\n");
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].key(), Some("lip.com_height"));
    }

    #[test]
    fn unknown_and_unparsable_keys() {
        let (_, errors) = scenario("planner.radius = 1\nplanner.budget = lots\nobstacles.0.colour = red\n");
        let keys: Vec<_> = errors.iter().filter_map(|e| e.key()).collect();
        assert_eq!(keys, vec!["planner.radius", "planner.budget", "obstacles.0.colour"]);
    }

    #[test]
    fn indexed_lists() {
        let (s, errors) = scenario(
            "obstacles.mode = list\nobstacles.0.center = 1, 2\nobstacles.0.radii = 0.5, 0.5\n\
             obstacles.1.center = 3, 4\nobstacles.1.radii = 1, 2\nobstacles.1.rotation = 0.3\n",
        );
        assert!(errors.is_empty(), "{errors:?}");
        assert_eq!(s.obstacles.len(), 2);
        assert_eq!(s.obstacles[1].rotation, 0.3);
        let (_, errors) = scenario("obstacles.0.center = 1, 2\nobstacles.2.center = 1, 2\nobstacles.2.radii = 1, 1\n");
        let keys: Vec<_> = errors.iter().filter_map(|e| e.key()).collect();
        assert_eq!(keys, vec!["obstacles.0.radii", "obstacles.1"]);
    }

    #[test]
    fn echo_reparses_to_same_scenario() {
        let (mut s, _) = scenario("map.source = cave_like\nsources.mode = fixture\nplanner.kind = safe-iig\n");
        s.sources.push(SourceEntry {
            center: [1.0 / 3.0, 2.0],
            strength: 0.1,
            covariance: [1.0, 0.2, 2.0],
        });
        s.tracking_modes = vec![ControlMode::ClosedLoop];
        let (back, errors) = scenario(&s.to_config_text());
        assert!(errors.is_empty(), "{errors:?}");
        assert_eq!(back, s);
    }

    #[test]
    fn missing_map_file_is_reported_with_path() {
        let (_, errors) = scenario("map.source = file\nmap.path = /nonexistent/map.occ\n");
        assert_eq!(
            errors,
            vec![ConfigError::MissingFile {
                key: "map.path".into(),
                path: "/nonexistent/map.occ".into()
            }]
        );
    }
}
