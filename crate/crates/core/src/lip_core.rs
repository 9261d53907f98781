//! Discrete linear inverted pendulum (LIP) dynamics.
//!
//! The walker is modelled stride-to-stride: the state is sampled at the start
//! of every step and the input is the stance-foot offset from the CoM. Both the
//! velocity form and the angular-momentum-about-contact form are provided,
//! together with the kinematic predicates used by the planner.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

/// Denominator smoothing for the heading computation.
pub const EPS_HEADING: f64 = 1e-9;

/// Reciprocal condition number below which the deadbeat system is rejected.
const DEADBEAT_RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LipError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("step displacement {norm:e} is too short to define a heading")]
    DegenerateStep { norm: f64 },
    #[error("deadbeat system is singular (reciprocal condition {rcond:e})")]
    SingularSystem { rcond: f64 },
}

fn require_positive(name: &'static str, value: f64) -> Result<(), LipError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LipError::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

/// Physical parameters of the pendulum. `beta` is derived on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipParams {
    com_height: f64,
    gravity: f64,
    step_duration: f64,
    mass: f64,
    beta: f64,
}

impl LipParams {
    pub fn new(com_height: f64, gravity: f64, step_duration: f64, mass: f64) -> Result<Self, LipError> {
        require_positive("com_height", com_height)?;
        require_positive("gravity", gravity)?;
        require_positive("step_duration", step_duration)?;
        require_positive("mass", mass)?;
        Ok(Self {
            com_height,
            gravity,
            step_duration,
            mass,
            beta: (gravity / com_height).sqrt(),
        })
    }

    pub fn com_height(&self) -> f64 {
        self.com_height
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn step_duration(&self) -> f64 {
        self.step_duration
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Natural frequency `sqrt(g / H)`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `m * H`, the factor between CoM velocity and angular momentum about the contact.
    pub fn momentum_scale(&self) -> f64 {
        self.mass * self.com_height
    }

    pub(crate) fn cosh_bt(&self) -> f64 {
        (self.beta * self.step_duration).cosh()
    }

    pub(crate) fn sinh_bt(&self) -> f64 {
        (self.beta * self.step_duration).sinh()
    }
}

impl Default for LipParams {
    /// Cassie-scale walker: H = 0.6 m, m = 32 kg, 0.4 s steps.
    fn default() -> Self {
        Self::new(0.6, 9.81, 0.4, 32.0).expect("default parameters are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipState {
    pub x: f64,
    pub xdot: f64,
    pub y: f64,
    pub ydot: f64,
}

impl LipState {
    pub fn new(x: f64, xdot: f64, y: f64, ydot: f64) -> Self {
        Self { x, xdot, y, ydot }
    }

    pub fn at_rest(x: f64, y: f64) -> Self {
        Self::new(x, 0.0, y, 0.0)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.xdot, self.ydot]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.xdot.is_finite() && self.y.is_finite() && self.ydot.is_finite()
    }

    pub fn to_momentum(&self, params: &LipParams) -> AmState {
        let s = params.momentum_scale();
        AmState {
            x: self.x,
            ly: s * self.xdot,
            y: self.y,
            lx: s * self.ydot,
        }
    }
}

/// Stance-foot position relative to the CoM, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootPlacement {
    pub p_x: f64,
    pub p_y: f64,
}

impl FootPlacement {
    pub fn new(p_x: f64, p_y: f64) -> Self {
        Self { p_x, p_y }
    }
}

/// Position and angular momentum about the contact point, per channel.
///
/// `ly` pairs with the x channel and `lx` with the y channel; both use the
/// same `L = m H v` convention.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AmState {
    pub x: f64,
    pub ly: f64,
    pub y: f64,
    pub lx: f64,
}

impl AmState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn to_velocity(&self, params: &LipParams) -> LipState {
        let s = params.momentum_scale();
        LipState::new(self.x, self.ly / s, self.y, self.lx / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stance {
    Left,
    Right,
}

impl Stance {
    pub fn flip(self) -> Self {
        match self {
            Stance::Left => Stance::Right,
            Stance::Right => Stance::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Left => "left",
            Stance::Right => "right",
        }
    }
}

impl std::str::FromStr for Stance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" | "Left" => Ok(Stance::Left),
            "right" | "Right" => Ok(Stance::Right),
            other => Err(format!("unknown stance `{other}`")),
        }
    }
}

/// Body-frame box the foot offset must fall in for one step.
///
/// The sagittal axis points along the step displacement, the lateral axis 90°
/// counter-clockwise from it. `Left` places the foot on the positive lateral
/// side; `Right` is its mirror image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachableBounds {
    pub ub_xb: f64,
    pub lb_xb: f64,
    pub ub_yb: f64,
    pub lb_yb: f64,
    pub stance: Stance,
}

impl ReachableBounds {
    /// Builds bounds from the left-stance lateral band; the right band is mirrored.
    pub fn from_left_band(
        lb_xb: f64,
        ub_xb: f64,
        lb_yb_left: f64,
        ub_yb_left: f64,
        stance: Stance,
    ) -> Result<Self, LipError> {
        if !(lb_xb < ub_xb) {
            return Err(LipError::InvalidParameter {
                name: "lb_xb",
                reason: format!("sagittal bounds must satisfy lb < ub, got [{lb_xb}, {ub_xb}]"),
            });
        }
        if !(lb_yb_left < ub_yb_left) {
            return Err(LipError::InvalidParameter {
                name: "lb_yb",
                reason: format!("lateral bounds must satisfy lb < ub, got [{lb_yb_left}, {ub_yb_left}]"),
            });
        }
        let left = Self {
            ub_xb,
            lb_xb,
            ub_yb: ub_yb_left,
            lb_yb: lb_yb_left,
            stance: Stance::Left,
        };
        Ok(left.with_stance(stance))
    }

    /// Cassie reachability box: sagittal [-0.2, 0.3] m, lateral band 0.05..0.25 m.
    pub fn cassie(stance: Stance) -> Self {
        Self::from_left_band(-0.2, 0.3, 0.05, 0.25, stance).expect("constant bounds are valid")
    }

    /// The same box for the given stance, mirroring the lateral band if needed.
    pub fn with_stance(&self, stance: Stance) -> Self {
        if stance == self.stance {
            return *self;
        }
        Self {
            ub_yb: -self.lb_yb,
            lb_yb: -self.ub_yb,
            stance,
            ..*self
        }
    }

    /// Bounds for `n` consecutive steps starting with `self.stance`.
    pub fn alternating(&self, n: usize) -> Vec<ReachableBounds> {
        let mut stance = self.stance;
        (0..n)
            .map(|_| {
                let b = self.with_stance(stance);
                stance = stance.flip();
                b
            })
            .collect()
    }

    pub fn contains(&self, sagittal: f64, lateral: f64) -> bool {
        self.lb_xb <= sagittal && sagittal <= self.ub_xb && self.lb_yb <= lateral && lateral <= self.ub_yb
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicLimits {
    pub l_min: f64,
    pub l_max: f64,
}

impl KinematicLimits {
    pub fn new(l_min: f64, l_max: f64) -> Result<Self, LipError> {
        if !(l_min > 0.0 && l_min < l_max && l_max.is_finite()) {
            return Err(LipError::InvalidParameter {
                name: "l_min",
                reason: format!("need 0 < l_min < l_max, got l_min={l_min}, l_max={l_max}"),
            });
        }
        Ok(Self { l_min, l_max })
    }
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            l_min: 0.05,
            l_max: 0.5,
        }
    }
}

/// Heading as a (sin, cos) pair with sin along world x and cos along world y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    pub sin: f64,
    pub cos: f64,
}

impl Heading {
    /// Foot offset expressed in the body frame as (sagittal, lateral).
    pub fn to_body(&self, input: &FootPlacement) -> (f64, f64) {
        let sagittal = self.sin * input.p_x + self.cos * input.p_y;
        let lateral = -self.cos * input.p_x + self.sin * input.p_y;
        (sagittal, lateral)
    }

    /// Yaw in the usual counter-clockwise-from-x convention.
    pub fn yaw(&self) -> f64 {
        self.cos.atan2(self.sin)
    }
}

pub fn step_matrices(params: &LipParams) -> (Matrix2<f64>, Vector2<f64>) {
    let b = params.beta();
    let (c, s) = (params.cosh_bt(), params.sinh_bt());
    (Matrix2::new(1.0, s / b, 0.0, c), Vector2::new(1.0 - c, -b * s))
}

pub fn lip_step(state: &LipState, input: &FootPlacement, params: &LipParams) -> LipState {
    let (a, b) = step_matrices(params);
    let xs = a * Vector2::new(state.x, state.xdot) + b * input.p_x;
    let ys = a * Vector2::new(state.y, state.ydot) + b * input.p_y;
    LipState::new(xs[0], xs[1], ys[0], ys[1])
}

pub fn heading_from_delta(dx: f64, dy: f64) -> Result<Heading, LipError> {
    let norm = dx.hypot(dy);
    if norm < EPS_HEADING {
        return Err(LipError::DegenerateStep { norm });
    }
    Ok(Heading {
        sin: dx / norm,
        cos: dy / norm,
    })
}

/// Reachability and step-length check for one step `state_k -> state_k1`.
pub fn check_reachability(
    state_k: &LipState,
    state_k1: &LipState,
    input: &FootPlacement,
    bounds: &ReachableBounds,
    limits: &KinematicLimits,
) -> Result<bool, LipError> {
    let dx = state_k1.x - state_k.x;
    let dy = state_k1.y - state_k.y;
    let len = dx.hypot(dy);
    if len < limits.l_min || len > limits.l_max {
        return Ok(false);
    }
    let heading = heading_from_delta(dx, dy)?;
    let (sag, lat) = heading.to_body(input);
    Ok(bounds.contains(sag, lat))
}

/// Velocity of the periodic gait that advances `step_length` per step along
/// `direction` with the stance foot `lateral_offset` to the side of `stance`.
///
/// A walker at rest cannot take a first step whose foot lies off the line of
/// motion, so plans start from this state rather than from zero velocity.
pub fn periodic_gait_velocity(
    direction: [f64; 2],
    step_length: f64,
    lateral_offset: f64,
    stance: Stance,
    params: &LipParams,
) -> Result<[f64; 2], LipError> {
    let heading = heading_from_delta(direction[0], direction[1])?;
    let (d, n) = ([heading.sin, heading.cos], [-heading.cos, heading.sin]);
    let bs = params.beta() * params.sinh_bt();
    let c = params.cosh_bt();
    let forward = bs * step_length / (2.0 * (c - 1.0));
    let side = match stance {
        Stance::Left => 1.0,
        Stance::Right => -1.0,
    };
    let lateral = side * lateral_offset * bs / (c + 1.0);
    Ok([forward * d[0] + lateral * n[0], forward * d[1] + lateral * n[1]])
}

pub fn am_step_matrices(params: &LipParams) -> (Matrix2<f64>, Vector2<f64>) {
    let b = params.beta();
    let mh = params.momentum_scale();
    let (c, s) = (params.cosh_bt(), params.sinh_bt());
    (
        Matrix2::new(1.0, s / (mh * b), 0.0, c),
        Vector2::new(1.0 - c, -mh * b * s),
    )
}

pub fn am_step(state: &AmState, input: &FootPlacement, params: &LipParams) -> AmState {
    let (a, b) = am_step_matrices(params);
    let xs = a * Vector2::new(state.x, state.ly) + b * input.p_x;
    let ys = a * Vector2::new(state.y, state.lx) + b * input.p_y;
    AmState {
        x: xs[0],
        ly: xs[1],
        y: ys[0],
        lx: ys[1],
    }
}

/// Foot offset that drives the momentum to `l_des_next` in one step.
pub fn desired_foot_placement(l_k: f64, l_des_next: f64, params: &LipParams) -> f64 {
    let b = params.beta();
    let (c, s) = (params.cosh_bt(), params.sinh_bt());
    (-l_des_next + c * l_k) / (params.momentum_scale() * b * s)
}

/// Two consecutive foot offsets reaching `target` (position, momentum) exactly
/// two steps after `state`, for one channel.
pub fn deadbeat_placements(state: (f64, f64), target: (f64, f64), params: &LipParams) -> Result<(f64, f64), LipError> {
    let (a, b) = am_step_matrices(params);
    let ab = a * b;
    let m = Matrix2::new(ab[0], b[0], ab[1], b[1]);
    let rhs = Vector2::new(target.0, target.1) - a * a * Vector2::new(state.0, state.1);

    let svd = m.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rcond = if smax > 0.0 { smin / smax } else { 0.0 };
    if !(rcond > DEADBEAT_RCOND_MIN) {
        return Err(LipError::SingularSystem { rcond });
    }
    let sol = m.lu().solve(&rhs).ok_or(LipError::SingularSystem { rcond })?;
    Ok((sol[0], sol[1]))
}
