//! Tracking a planned path on the angular-momentum LIP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lip_core::{
    am_step, deadbeat_placements, desired_foot_placement, AmState, FootPlacement, LipError, LipParams, LipState,
};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("path has {got} waypoints, tracking needs at least {needed}")]
    PathTooShort { needed: usize, got: usize },
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
    #[error(transparent)]
    Lip(#[from] LipError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    OpenLoop,
    ClosedLoop,
}

impl ControlMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::OpenLoop => "open_loop",
            ControlMode::ClosedLoop => "closed_loop",
        }
    }
}

/// Zero-mean uniform perturbation added to the simulated state after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    /// Half-width for each position component (m).
    pub position: f64,
    /// Half-width for each momentum component (kg m²/s).
    pub momentum: f64,
    pub seed: u64,
}

impl Disturbance {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.position >= 0.0 && self.momentum >= 0.0 && self.position.is_finite() && self.momentum.is_finite()) {
            return Err(TrackError::InvalidDisturbance(format!(
                "magnitudes must be finite and nonnegative, got {} and {}",
                self.position, self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingMode {
    pub mode: ControlMode,
    pub disturbance: Option<Disturbance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    pub mode: ControlMode,
    /// Simulated state at every waypoint, starting with the initial one.
    pub states: Vec<AmState>,
    pub inputs: Vec<FootPlacement>,
    /// CoM position error at every waypoint.
    pub waypoint_errors: Vec<f64>,
    /// Distance between applied and planned foot offsets, per step.
    pub foot_errors: Vec<f64>,
    pub max_waypoint_error: f64,
    pub max_foot_error: f64,
}

struct Noise {
    rng: Option<(ChaCha8Rng, Disturbance)>,
}

impl Noise {
    fn new(d: Option<&Disturbance>) -> Result<Self, TrackError> {
        if let Some(d) = d {
            d.validate()?;
        }
        Ok(Self {
            rng: d.map(|d| (ChaCha8Rng::seed_from_u64(d.seed), *d)),
        })
    }

    fn apply(&mut self, s: &mut AmState) {
        if let Some((rng, d)) = &mut self.rng {
            let mut draw = |half: f64| if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
            s.x += draw(d.position);
            s.y += draw(d.position);
            s.ly += draw(d.momentum);
            s.lx += draw(d.momentum);
        }
    }
}

fn planned_inputs(plan: &[AmState], params: &LipParams) -> Vec<FootPlacement> {
    plan.windows(2)
        .map(|w| {
            FootPlacement::new(
                desired_foot_placement(w[0].ly, w[1].ly, params),
                desired_foot_placement(w[0].lx, w[1].lx, params),
            )
        })
        .collect()
}

fn report(
    mode: ControlMode,
    plan: &[AmState],
    states: Vec<AmState>,
    inputs: Vec<FootPlacement>,
    params: &LipParams,
) -> TrackingReport {
    let planned = planned_inputs(plan, params);
    let waypoint_errors: Vec<f64> = states
        .iter()
        .zip(plan)
        .map(|(s, p)| (s.x - p.x).hypot(s.y - p.y))
        .collect();
    let foot_errors: Vec<f64> = inputs
        .iter()
        .zip(&planned)
        .map(|(a, b)| (a.p_x - b.p_x).hypot(a.p_y - b.p_y))
        .collect();
    TrackingReport {
        mode,
        max_waypoint_error: waypoint_errors.iter().cloned().fold(0.0, f64::max),
        max_foot_error: foot_errors.iter().cloned().fold(0.0, f64::max),
        states,
        inputs,
        waypoint_errors,
        foot_errors,
    }
}

/// Momentum feedback only: each step picks the foot offset that drives the
/// simulated momentum to the planned momentum of the next waypoint.
pub fn track_open_loop(
    path: &[LipState],
    params: &LipParams,
    disturbance: Option<&Disturbance>,
) -> Result<TrackingReport, TrackError> {
    if path.len() < 2 {
        return Err(TrackError::PathTooShort {
            needed: 2,
            got: path.len(),
        });
    }
    let plan: Vec<AmState> = path.iter().map(|s| s.to_momentum(params)).collect();
    let mut noise = Noise::new(disturbance)?;
    let mut sim = plan[0];
    let mut states = vec![sim];
    let mut inputs = Vec::with_capacity(plan.len() - 1);
    for next in &plan[1..] {
        let u = FootPlacement::new(
            desired_foot_placement(sim.ly, next.ly, params),
            desired_foot_placement(sim.lx, next.lx, params),
        );
        sim = am_step(&sim, &u, params);
        noise.apply(&mut sim);
        states.push(sim);
        inputs.push(u);
    }
    Ok(report(ControlMode::OpenLoop, &plan, states, inputs, params))
}

/// Position and momentum feedback: each step solves the two-step deadbeat
/// problem toward the waypoint two steps ahead and applies the first offset.
/// The last step has no second waypoint and falls back to momentum feedback.
pub fn track_closed_loop(
    path: &[LipState],
    params: &LipParams,
    disturbance: Option<&Disturbance>,
) -> Result<TrackingReport, TrackError> {
    if path.len() < 3 {
        return Err(TrackError::PathTooShort {
            needed: 3,
            got: path.len(),
        });
    }
    let plan: Vec<AmState> = path.iter().map(|s| s.to_momentum(params)).collect();
    let mut noise = Noise::new(disturbance)?;
    let mut sim = plan[0];
    let mut states = vec![sim];
    let mut inputs = Vec::with_capacity(plan.len() - 1);
    for k in 0..plan.len() - 1 {
        let u = match plan.get(k + 2) {
            Some(target) => {
                let (px, _) = deadbeat_placements((sim.x, sim.ly), (target.x, target.ly), params)?;
                let (py, _) = deadbeat_placements((sim.y, sim.lx), (target.y, target.lx), params)?;
                FootPlacement::new(px, py)
            }
            None => FootPlacement::new(
                desired_foot_placement(sim.ly, plan[k + 1].ly, params),
                desired_foot_placement(sim.lx, plan[k + 1].lx, params),
            ),
        };
        sim = am_step(&sim, &u, params);
        noise.apply(&mut sim);
        states.push(sim);
        inputs.push(u);
    }
    Ok(report(ControlMode::ClosedLoop, &plan, states, inputs, params))
}

pub fn track(path: &[LipState], params: &LipParams, mode: &TrackingMode) -> Result<TrackingReport, TrackError> {
    match mode.mode {
        ControlMode::OpenLoop => track_open_loop(path, params, mode.disturbance.as_ref()),
        ControlMode::ClosedLoop => track_closed_loop(path, params, mode.disturbance.as_ref()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lip_core::{lip_step, periodic_gait_velocity, Stance};
    use approx::assert_abs_diff_eq;

    fn kappa(p: &LipParams) -> f64 {
        let bt = p.beta() * p.step_duration();
        p.beta() * bt.sinh() / (bt.cosh() - 1.0)
    }

    /// Straight periodic gait along `dir`.
    fn gait_path(steps: usize, dir: [f64; 2]) -> Vec<LipState> {
        let p = LipParams::default();
        let v = periodic_gait_velocity(dir, 0.3, 0.15, Stance::Left, &p).unwrap();
        let norm = dir[0].hypot(dir[1]);
        let d = [0.3 * dir[0] / norm, 0.3 * dir[1] / norm];
        let mut s = LipState::new(0.0, v[0], 0.0, v[1]);
        let mut out = vec![s];
        for _ in 0..steps {
            s = LipState::new(
                s.x + d[0],
                -s.xdot + kappa(&p) * d[0],
                s.y + d[1],
                -s.ydot + kappa(&p) * d[1],
            );
            out.push(s);
        }
        out
    }

    #[test]
    fn gait_path_is_consistent_with_the_model() {
        let p = LipParams::default();
        let path = gait_path(4, [1.0, 2.0]);
        let u = track_open_loop(&path, &p, None).unwrap().inputs;
        for k in 0..4 {
            let next = lip_step(&path[k], &u[k], &p);
            assert_abs_diff_eq!(next.x, path[k + 1].x, epsilon = 1e-12);
            assert_abs_diff_eq!(next.ydot, path[k + 1].ydot, epsilon = 1e-12);
        }
    }

    /// A wandering path built from step displacements; velocities follow the
    /// two-step recursion, so the states stay bounded.
    fn curvy_path(steps: usize) -> Vec<LipState> {
        let p = LipParams::default();
        let kappa = kappa(&p);
        let mut s = gait_path(0, [1.0, 0.0])[0];
        let mut out = vec![s];
        for k in 0..steps {
            let t = k as f64;
            let (len, ang) = (0.3 + 0.05 * (0.7 * t).sin(), 0.4 * (0.2 * t).sin());
            let d = [len * ang.cos(), len * ang.sin()];
            s = LipState::new(s.x + d[0], -s.xdot + kappa * d[0], s.y + d[1], -s.ydot + kappa * d[1]);
            out.push(s);
        }
        out
    }

    #[test]
    fn exact_model_tracks_exactly() {
        let path = curvy_path(30);
        let p = LipParams::default();
        let open = track_open_loop(&path, &p, None).unwrap();
        let closed = track_closed_loop(&path, &p, None).unwrap();
        assert!(open.max_waypoint_error < 1e-9, "{}", open.max_waypoint_error);
        assert!(closed.max_waypoint_error < 1e-9, "{}", closed.max_waypoint_error);
        assert!(closed.max_foot_error < 1e-9);
    }

    #[test]
    fn too_short() {
        let path = gait_path(1, [1.0, 0.0]);
        let p = LipParams::default();
        assert!(track_open_loop(&path[..1], &p, None).is_err());
        assert!(matches!(
            track_closed_loop(&path, &p, None),
            Err(TrackError::PathTooShort { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn open_loop_position_error_is_a_random_walk() {
        let path = gait_path(60, [0.6, 0.8]);
        let p = LipParams::default();
        let d = Disturbance {
            position: 1e-3,
            momentum: 0.0,
            seed: 11,
        };
        let open = track_open_loop(&path, &p, Some(&d)).unwrap();
        // momentum is regulated every step, so position errors simply accumulate
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut ex, mut ey) = (0.0, 0.0);
        for (s, planned) in open.states.iter().zip(&path).skip(1) {
            ex += rng.gen_range(-1e-3..=1e-3);
            ey += rng.gen_range(-1e-3..=1e-3);
            let plan = planned.to_momentum(&p);
            assert_abs_diff_eq!(s.x - plan.x, ex, epsilon = 1e-10);
            assert_abs_diff_eq!(s.y - plan.y, ey, epsilon = 1e-10);
            assert_abs_diff_eq!(s.ly, plan.ly, epsilon = 1e-9);
        }
    }

    #[test]
    fn open_loop_error_envelope_grows() {
        let path = gait_path(60, [1.0, 0.0]);
        let p = LipParams::default();
        let (mut early, mut late) = (0.0, 0.0);
        for seed in 0..100 {
            let d = Disturbance {
                position: 1e-3,
                momentum: 0.0,
                seed,
            };
            let r = track_open_loop(&path, &p, Some(&d)).unwrap();
            early += r.waypoint_errors[5];
            late += r.waypoint_errors[60];
        }
        assert!(late > 2.0 * early, "early {early} late {late}");
    }

    #[test]
    fn closed_loop_beats_open_loop() {
        let path = curvy_path(40);
        let p = LipParams::default();
        let d = Disturbance {
            position: 1e-3,
            momentum: 0.0,
            seed: 3,
        };
        let open = track_open_loop(&path, &p, Some(&d)).unwrap();
        let closed = track_closed_loop(&path, &p, Some(&d)).unwrap();
        assert!(closed.max_waypoint_error < open.max_waypoint_error);
    }

    #[test]
    fn channels_are_symmetric() {
        let p = LipParams::default();
        let path = curvy_path(12);
        let swapped: Vec<LipState> = path.iter().map(|s| LipState::new(s.y, s.ydot, s.x, s.xdot)).collect();
        let d = Disturbance {
            position: 0.0,
            momentum: 0.0,
            seed: 0,
        };
        let a = track_closed_loop(&path, &p, Some(&d)).unwrap();
        let b = track_closed_loop(&swapped, &p, Some(&d)).unwrap();
        for (u, w) in a.inputs.iter().zip(&b.inputs) {
            assert_eq!(u.p_x, w.p_y);
            assert_eq!(u.p_y, w.p_x);
        }
    }

    #[test]
    fn negative_disturbance_rejected() {
        let d = Disturbance {
            position: -1.0,
            momentum: 0.0,
            seed: 0,
        };
        assert!(track_open_loop(&gait_path(3, [1.0, 0.0]), &LipParams::default(), Some(&d)).is_err());
    }
}
