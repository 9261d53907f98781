//! Multi-step foot placement planner with discrete-time barrier constraints.
//!
//! The program is solved over CoM positions `r_1..r_N`. Velocities follow
//! from `v_{k+1} = -v_k + kappa * (r_{k+1} - r_k)` and foot offsets from the
//! position update, which keeps long horizons well conditioned where a
//! rollout of the foot offsets would amplify errors by `cosh(beta T)^N`.

use thiserror::Error;

use crate::lip_core::{
    heading_from_delta, lip_step, FootPlacement, KinematicLimits, LipError, LipParams, LipState, ReachableBounds,
    Stance, EPS_HEADING,
};
use crate::safety::{active_obstacles, barrier_value, BarrierSpec, Obstacle};

#[derive(Debug, Error)]
pub enum TrajoptError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("non-finite iterate after {evaluations} evaluations")]
    NonFiniteIterate { evaluations: usize },
    #[error(transparent)]
    Lip(#[from] LipError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub w1: f64,
    pub w2: f64,
    /// Weight of the running cost on squared step lengths; zero keeps the
    /// terminal-cost-only program.
    pub w_step: f64,
    pub gamma: f64,
    pub feasibility_tol: f64,
    /// Outer (multiplier update) iterations.
    pub max_iterations: usize,
    /// Objective evaluations summed over all outer iterations.
    pub max_evaluations: usize,
    pub l_nominal: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            n_min: 2,
            n_max: 3,
            w1: 1.0,
            w2: 10.0,
            w_step: 0.0,
            gamma: 0.75,
            feasibility_tol: 1e-6,
            max_iterations: 200,
            max_evaluations: 5000,
            l_nominal: 0.3,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(1 <= self.n_min && self.n_min <= self.n_max) {
            return Err(format!(
                "need 1 <= n_min <= n_max, got {} and {}",
                self.n_min, self.n_max
            ));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && self.w_step >= 0.0) {
            return Err("cost weights must be nonnegative".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.feasibility_tol > 0.0) {
            return Err("feasibility_tol must be positive".into());
        }
        if self.max_iterations == 0 || self.max_evaluations == 0 {
            return Err("iteration and evaluation budgets must be positive".into());
        }
        if !(self.l_nominal > 0.0) {
            return Err("l_nominal must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub initial_state: LipState,
    pub goal: [f64; 2],
    pub horizon: usize,
    pub bounds_sequence: Vec<ReachableBounds>,
    pub limits: KinematicLimits,
    pub obstacles: Vec<Obstacle>,
    pub gamma: f64,
    pub params: LipParams,
}

impl MpcProblem {
    /// Problem with stances alternating from `first.stance`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        initial_state: LipState,
        goal: [f64; 2],
        horizon: usize,
        first: ReachableBounds,
        limits: KinematicLimits,
        obstacles: Vec<Obstacle>,
        gamma: f64,
        params: LipParams,
    ) -> Self {
        Self {
            initial_state,
            goal,
            horizon,
            bounds_sequence: first.alternating(horizon),
            limits,
            obstacles,
            gamma,
            params,
        }
    }

    pub fn validate(&self) -> Result<(), TrajoptError> {
        let bad = |m: String| Err(TrajoptError::InvalidProblem(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.bounds_sequence.len() != self.horizon {
            return bad(format!(
                "{} bounds for a horizon of {}",
                self.bounds_sequence.len(),
                self.horizon
            ));
        }
        if self.bounds_sequence.windows(2).any(|w| w[0].stance == w[1].stance) {
            return bad("stance must alternate from step to step".into());
        }
        if !self.initial_state.is_finite() || !self.goal.iter().all(|v| v.is_finite()) {
            return bad("initial state and goal must be finite".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        for o in &self.obstacles {
            o.validate().map_err(TrajoptError::InvalidProblem)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationLimit,
    EvaluationLimit,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `x_1..x_N`.
    pub states: Vec<LipState>,
    /// `u_0..u_{N-1}`.
    pub inputs: Vec<FootPlacement>,
    pub is_feasible: bool,
    pub terminal_cost: f64,
    /// Terminal cost plus any running cost.
    pub objective: f64,
    pub max_violation: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub evaluations: usize,
}

/// One record per outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub outer: usize,
    pub cost: f64,
    pub max_violation: f64,
    pub penalty: f64,
}

pub fn compute_steps(from: [f64; 2], to: [f64; 2], config: &MpcConfig) -> usize {
    let dist = (to[0] - from[0]).hypot(to[1] - from[1]);
    let n = (dist / config.l_nominal).ceil();
    let n = if n.is_finite() { n as usize } else { config.n_max };
    n.clamp(config.n_min, config.n_max)
}

pub fn terminal_cost(state: &LipState, goal: [f64; 2], config: &MpcConfig) -> f64 {
    config.w1 * (state.xdot * state.xdot + state.ydot * state.ydot)
        + config.w2 * ((state.x - goal[0]).powi(2) + (state.y - goal[1]).powi(2))
}

// --- program ---------------------------------------------------------------

const REACH_ROWS: usize = 4;
const ROWS_PER_STEP: usize = REACH_ROWS + 2;

struct Program<'a> {
    problem: &'a MpcProblem,
    n: usize,
    v0: [f64; 2],
    sigma: f64,
    one_minus_c: f64,
    kappa: f64,
    w1: f64,
    w2: f64,
    w_step: f64,
    decay: f64,
    l_min2: f64,
    l_max2: f64,
}

/// Forward quantities shared by the cost, constraints and gradient.
struct Rollout {
    r: Vec<[f64; 2]>,
    d: Vec<[f64; 2]>,
    v: Vec<[f64; 2]>,
    p: Vec<[f64; 2]>,
    h: Vec<Vec<(f64, [f64; 2])>>,
}

impl<'a> Program<'a> {
    fn new(problem: &'a MpcProblem, config: &MpcConfig) -> Self {
        let params = &problem.params;
        let (c, s, b) = (params.cosh_bt(), params.sinh_bt(), params.beta());
        Self {
            problem,
            n: problem.horizon,
            v0: problem.initial_state.velocity(),
            sigma: s / b,
            one_minus_c: 1.0 - c,
            kappa: b * s / (c - 1.0),
            w1: config.w1,
            w2: config.w2,
            w_step: config.w_step,
            decay: 1.0 - problem.gamma,
            l_min2: problem.limits.l_min.powi(2),
            l_max2: problem.limits.l_max.powi(2),
        }
    }

    fn num_constraints(&self) -> usize {
        self.n * (ROWS_PER_STEP + self.problem.obstacles.len())
    }

    fn rollout(&self, z: &[f64]) -> Rollout {
        let n = self.n;
        let mut r = Vec::with_capacity(n + 1);
        r.push(self.problem.initial_state.position());
        r.extend(z.chunks_exact(2).map(|c| [c[0], c[1]]));
        let d: Vec<[f64; 2]> = (0..n).map(|k| [r[k + 1][0] - r[k][0], r[k + 1][1] - r[k][1]]).collect();
        let mut v = Vec::with_capacity(n + 1);
        v.push(self.v0);
        for k in 0..n {
            let vk: [f64; 2] = v[k];
            v.push([-vk[0] + self.kappa * d[k][0], -vk[1] + self.kappa * d[k][1]]);
        }
        let p = (0..n)
            .map(|k| {
                [
                    (d[k][0] - self.sigma * v[k][0]) / self.one_minus_c,
                    (d[k][1] - self.sigma * v[k][1]) / self.one_minus_c,
                ]
            })
            .collect();
        let h = if self.problem.obstacles.is_empty() {
            Vec::new()
        } else {
            r.iter()
                .map(|&pos| {
                    self.problem
                        .obstacles
                        .iter()
                        .map(|o| o.barrier_with_gradient(pos))
                        .collect()
                })
                .collect()
        };
        Rollout { r, d, v, p, h }
    }

    fn terminal(&self, ro: &Rollout) -> f64 {
        let (v, r) = (ro.v[self.n], ro.r[self.n]);
        let g = self.problem.goal;
        self.w1 * (v[0] * v[0] + v[1] * v[1]) + self.w2 * ((r[0] - g[0]).powi(2) + (r[1] - g[1]).powi(2))
    }

    fn cost(&self, ro: &Rollout) -> f64 {
        if self.w_step > 0.0 {
            self.terminal(ro) + self.w_step * ro.d.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>()
        } else {
            self.terminal(ro)
        }
    }

    /// Constraint values in `g(z) <= 0` form.
    fn constraints(&self, ro: &Rollout, out: &mut [f64]) {
        let m = self.problem.obstacles.len();
        for k in 0..self.n {
            let base = k * (ROWS_PER_STEP + m);
            let b = &self.problem.bounds_sequence[k];
            let (dk, pk) = (ro.d[k], ro.p[k]);
            let len2 = dk[0] * dk[0] + dk[1] * dk[1];
            let nrm = (len2 + EPS_HEADING * EPS_HEADING).sqrt();
            let u = [dk[0] / nrm, dk[1] / nrm];
            let sag = u[0] * pk[0] + u[1] * pk[1];
            let lat = u[0] * pk[1] - u[1] * pk[0];
            out[base] = sag - b.ub_xb;
            out[base + 1] = b.lb_xb - sag;
            out[base + 2] = lat - b.ub_yb;
            out[base + 3] = b.lb_yb - lat;
            out[base + 4] = len2 - self.l_max2;
            out[base + 5] = self.l_min2 - len2;
            for j in 0..m {
                out[base + ROWS_PER_STEP + j] = self.decay * ro.h[k][j].0 - ro.h[k + 1][j].0;
            }
        }
    }

    /// Gradient of `cost + sum_i mu_i g_i` with respect to `z`.
    fn gradient(&self, ro: &Rollout, mu: &[f64], grad: &mut [f64]) {
        let n = self.n;
        let m = self.problem.obstacles.len();
        let mut gr = vec![[0.0f64; 2]; n + 1];
        let mut gd = vec![[0.0f64; 2]; n];
        let mut gv = vec![[0.0f64; 2]; n + 1];
        let goal = self.problem.goal;
        for i in 0..2 {
            gv[n][i] += 2.0 * self.w1 * ro.v[n][i];
            gr[n][i] += 2.0 * self.w2 * (ro.r[n][i] - goal[i]);
        }
        for k in 0..n {
            let base = k * (ROWS_PER_STEP + m);
            let (dk, pk) = (ro.d[k], ro.p[k]);
            let len2 = dk[0] * dk[0] + dk[1] * dk[1];
            let nrm = (len2 + EPS_HEADING * EPS_HEADING).sqrt();
            let u = [dk[0] / nrm, dk[1] / nrm];
            let ws = mu[base] - mu[base + 1];
            let wl = mu[base + 2] - mu[base + 3];
            // sag = u.p, lat = u x p
            let gp = [ws * u[0] - wl * u[1], ws * u[1] + wl * u[0]];
            let gu = [ws * pk[0] + wl * pk[1], ws * pk[1] - wl * pk[0]];
            let dot = dk[0] * gu[0] + dk[1] * gu[1];
            let n3 = nrm * nrm * nrm;
            let wlen = 2.0 * (mu[base + 4] - mu[base + 5] + self.w_step);
            for i in 0..2 {
                gd[k][i] += gu[i] / nrm - dk[i] * dot / n3 + wlen * dk[i];
                gd[k][i] += gp[i] / self.one_minus_c;
                gv[k][i] -= self.sigma * gp[i] / self.one_minus_c;
            }
            for j in 0..m {
                let w = mu[base + ROWS_PER_STEP + j];
                if w != 0.0 {
                    let (g0, g1) = (ro.h[k][j].1, ro.h[k + 1][j].1);
                    for i in 0..2 {
                        gr[k][i] += w * self.decay * g0[i];
                        gr[k + 1][i] -= w * g1[i];
                    }
                }
            }
        }
        for k in (0..n).rev() {
            for i in 0..2 {
                let up = gv[k + 1][i];
                gv[k][i] -= up;
                gd[k][i] += self.kappa * up;
            }
        }
        for k in 0..n {
            for i in 0..2 {
                gr[k + 1][i] += gd[k][i];
                gr[k][i] -= gd[k][i];
            }
        }
        for k in 0..n {
            grad[2 * k] = gr[k + 1][0];
            grad[2 * k + 1] = gr[k + 1][1];
        }
    }

    fn states_and_inputs(&self, z: &[f64]) -> (Vec<LipState>, Vec<FootPlacement>) {
        let ro = self.rollout(z);
        let states = (1..=self.n)
            .map(|k| LipState::new(ro.r[k][0], ro.v[k][0], ro.r[k][1], ro.v[k][1]))
            .collect();
        let inputs = ro.p.iter().map(|p| FootPlacement::new(p[0], p[1])).collect();
        (states, inputs)
    }
}

/// Augmented Lagrangian merit and its gradient.
struct Merit<'p, 'a> {
    prog: &'p Program<'a>,
    lambda: Vec<f64>,
    rho: f64,
    g: Vec<f64>,
    mu: Vec<f64>,
    evaluations: usize,
}

impl Merit<'_, '_> {
    fn eval(&mut self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluations += 1;
        let ro = self.prog.rollout(z);
        let f = self.prog.cost(&ro);
        self.prog.constraints(&ro, &mut self.g);
        let mut pen = 0.0;
        for i in 0..self.g.len() {
            let shifted = (self.lambda[i] + self.rho * self.g[i]).max(0.0);
            self.mu[i] = shifted;
            pen += (shifted * shifted - self.lambda[i] * self.lambda[i]) / (2.0 * self.rho);
        }
        self.prog.gradient(&ro, &self.mu, grad);
        f + pen
    }
}

enum InnerStop {
    Converged,
    NoProgress,
    EvaluationLimit,
    NonFinite,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// BFGS with backtracking on the merit function. Updates `z` in place.
fn bfgs(merit: &mut Merit, z: &mut [f64], tol: f64, iterations: &mut usize, max_evaluations: usize) -> InnerStop {
    const MAX_STEP: f64 = 0.5;
    const ARMIJO: f64 = 1e-4;
    let n = z.len();
    let mut grad = vec![0.0; n];
    let mut f = merit.eval(z, &mut grad);
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return InnerStop::NonFinite;
    }
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut trial = vec![0.0; n];
    let mut grad_new = vec![0.0; n];
    let mut stalls = 0;
    loop {
        if inf_norm(&grad) <= tol {
            return InnerStop::Converged;
        }
        if merit.evaluations >= max_evaluations {
            return InnerStop::EvaluationLimit;
        }
        *iterations += 1;
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| hinv[i * n + j] * grad[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            dir = grad.iter().map(|g| -g).collect();
            slope = -grad.iter().map(|g| g * g).sum::<f64>();
        }
        let big = inf_norm(&dir);
        if big > MAX_STEP {
            let scale = MAX_STEP / big;
            dir.iter_mut().for_each(|d| *d *= scale);
            slope *= scale;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = z[i] + alpha * dir[i];
            }
            let ft = merit.eval(&trial, &mut grad_new);
            if ft.is_finite() && ft <= f + ARMIJO * alpha * slope {
                accepted = Some(ft);
                break;
            }
            if merit.evaluations >= max_evaluations {
                break;
            }
            alpha *= 0.5;
        }
        let Some(ft) = accepted else {
            if !fresh {
                hinv = identity(n);
                fresh = true;
                continue;
            }
            return if merit.evaluations >= max_evaluations {
                InnerStop::EvaluationLimit
            } else {
                InnerStop::NoProgress
            };
        };
        let s: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
        let y: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-14 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() && sy > 0.0 {
            if fresh {
                let scale = sy / yy;
                hinv.iter_mut().for_each(|h| *h *= scale);
                fresh = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        let improvement = f - ft;
        z.copy_from_slice(&trial);
        grad.copy_from_slice(&grad_new);
        f = ft;
        if improvement <= 1e-15 * (1.0 + f.abs()) {
            stalls += 1;
            if stalls >= 5 {
                return InnerStop::NoProgress;
            }
        } else {
            stalls = 0;
        }
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Inverse-Hessian update `H <- (I - r s y') H (I - r y s') + r s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let coef = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// CoM positions on the straight segment toward the goal.
pub fn initial_guess(problem: &MpcProblem, config: &MpcConfig) -> Vec<[f64; 2]> {
    let r0 = problem.initial_state.position();
    let delta = [problem.goal[0] - r0[0], problem.goal[1] - r0[1]];
    let dist = delta[0].hypot(delta[1]);
    let dir = if dist > EPS_HEADING {
        [delta[0] / dist, delta[1] / dist]
    } else {
        let v = problem.initial_state.velocity();
        let speed = v[0].hypot(v[1]);
        if speed > EPS_HEADING {
            [v[0] / speed, v[1] / speed]
        } else {
            [1.0, 0.0]
        }
    };
    let floor = 1.5 * problem.limits.l_min;
    let step = (dist / problem.horizon as f64)
        .min(config.l_nominal)
        .max(floor)
        .min(problem.limits.l_max);
    (1..=problem.horizon)
        .map(|k| [r0[0] + k as f64 * step * dir[0], r0[1] + k as f64 * step * dir[1]])
        .collect()
}

pub fn solve_mpc(problem: &MpcProblem, config: &MpcConfig) -> Result<MpcSolution, TrajoptError> {
    solve_mpc_traced(problem, config, &mut |_| {})
}

pub fn solve_mpc_traced(
    problem: &MpcProblem,
    config: &MpcConfig,
    sink: &mut dyn FnMut(&TraceRecord),
) -> Result<MpcSolution, TrajoptError> {
    let guess = initial_guess(problem, config);
    solve_mpc_from(problem, config, &guess, sink)
}

/// Solves from the given CoM positions `r_1..r_N`.
pub fn solve_mpc_from(
    problem: &MpcProblem,
    config: &MpcConfig,
    guess: &[[f64; 2]],
    sink: &mut dyn FnMut(&TraceRecord),
) -> Result<MpcSolution, TrajoptError> {
    problem.validate()?;
    config.validate().map_err(TrajoptError::InvalidProblem)?;
    if guess.len() != problem.horizon {
        return Err(TrajoptError::InvalidProblem(format!(
            "initial guess has {} positions for a horizon of {}",
            guess.len(),
            problem.horizon
        )));
    }
    let prog = Program::new(problem, config);
    let nc = prog.num_constraints();
    let mut merit = Merit {
        prog: &prog,
        lambda: vec![0.0; nc],
        rho: 100.0,
        g: vec![0.0; nc],
        mu: vec![0.0; nc],
        evaluations: 0,
    };
    let mut z: Vec<f64> = guess.iter().flat_map(|p| [p[0], p[1]]).collect();
    let tol = config.feasibility_tol;
    let mut omega = 1e-2;
    let mut iterations = 0;
    let mut prev_violation = f64::INFINITY;
    let mut prev_cost = f64::INFINITY;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut termination = Termination::Stalled;

    for outer in 0.. {
        let stop = bfgs(&mut merit, &mut z, omega, &mut iterations, config.max_evaluations);
        if matches!(stop, InnerStop::NonFinite) {
            return Err(TrajoptError::NonFiniteIterate {
                evaluations: merit.evaluations,
            });
        }
        let ro = prog.rollout(&z);
        let cost = prog.cost(&ro);
        prog.constraints(&ro, &mut merit.g);
        let violation = merit.g.iter().fold(0.0f64, |a, &g| a.max(g));
        sink(&TraceRecord {
            outer,
            cost,
            max_violation: violation,
            penalty: merit.rho,
        });
        if violation <= tol && best.as_ref().is_none_or(|(_, c)| cost <= *c) {
            best = Some((z.clone(), cost));
        }

        if matches!(stop, InnerStop::EvaluationLimit) {
            termination = Termination::EvaluationLimit;
            break;
        }
        if outer + 1 >= config.max_iterations {
            termination = Termination::IterationLimit;
            break;
        }
        let settled = (prev_cost - cost).abs() <= 1e-10 * (1.0 + cost.abs());
        if violation <= tol && (omega <= 1e-8 || settled) {
            termination = Termination::Converged;
            break;
        }
        if merit.rho >= 1e12 && violation > tol && matches!(stop, InnerStop::NoProgress) {
            termination = Termination::Stalled;
            break;
        }
        for i in 0..nc {
            merit.lambda[i] = (merit.lambda[i] + merit.rho * merit.g[i]).max(0.0);
        }
        if violation > 0.25 * prev_violation || violation > tol.max(1e-3) && outer > 0 && violation >= prev_violation {
            merit.rho = (merit.rho * 10.0).min(1e12);
        }
        prev_violation = violation;
        prev_cost = cost;
        omega = (omega * 0.1).max(1e-9);
    }

    let final_z = match best {
        Some((bz, _)) => bz,
        None => z,
    };
    let (states, inputs) = prog.states_and_inputs(&final_z);
    let ro = prog.rollout(&final_z);
    prog.constraints(&ro, &mut merit.g);
    let internal = merit.g.iter().fold(0.0f64, |a, &g| a.max(g));
    let mut solution = MpcSolution {
        states,
        inputs,
        is_feasible: false,
        terminal_cost: prog.terminal(&ro),
        objective: prog.cost(&ro),
        max_violation: internal,
        termination,
        iterations,
        evaluations: merit.evaluations,
    };
    if !solution.states.iter().all(LipState::is_finite) {
        return Err(TrajoptError::NonFiniteIterate {
            evaluations: merit.evaluations,
        });
    }
    let checked = verify_solution(problem, &solution).max();
    solution.max_violation = internal.max(checked);
    solution.is_feasible = solution.max_violation <= tol;
    Ok(solution)
}

// --- independent check -------------------------------------------------------

/// Largest violation per constraint family, all zero when satisfied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintReport {
    pub dynamics: f64,
    pub reachability: f64,
    /// Squared-length form, in m².
    pub step_length: f64,
    pub dcbf: f64,
}

impl ConstraintReport {
    pub fn max(&self) -> f64 {
        self.dynamics
            .max(self.reachability)
            .max(self.step_length)
            .max(self.dcbf)
    }
}

/// Re-checks every constraint of the program from the returned states and
/// inputs using only the model and barrier primitives.
pub fn verify_solution(problem: &MpcProblem, solution: &MpcSolution) -> ConstraintReport {
    let mut report = ConstraintReport::default();
    if solution.states.len() != problem.horizon || solution.inputs.len() != problem.horizon {
        report.dynamics = f64::INFINITY;
        return report;
    }
    let gap = |lo: f64, v: f64, hi: f64| (lo - v).max(v - hi).max(0.0);
    let mut prev = problem.initial_state;
    for (k, (state, input)) in solution.states.iter().zip(&solution.inputs).enumerate() {
        let step = lip_step(&prev, input, &problem.params);
        let residual = [
            step.x - state.x,
            step.xdot - state.xdot,
            step.y - state.y,
            step.ydot - state.ydot,
        ];
        report.dynamics = report.dynamics.max(residual.iter().fold(0.0f64, |a, r| a.max(r.abs())));

        let (dx, dy) = (state.x - prev.x, state.y - prev.y);
        let len2 = dx * dx + dy * dy;
        report.step_length =
            report
                .step_length
                .max(gap(problem.limits.l_min.powi(2), len2, problem.limits.l_max.powi(2)));
        let bounds = &problem.bounds_sequence[k];
        match heading_from_delta(dx, dy) {
            Ok(heading) => {
                let (sag, lat) = heading.to_body(input);
                report.reachability = report.reachability.max(gap(bounds.lb_xb, sag, bounds.ub_xb)).max(gap(
                    bounds.lb_yb,
                    lat,
                    bounds.ub_yb,
                ));
            }
            Err(_) => report.reachability = f64::INFINITY,
        }
        for o in &problem.obstacles {
            let (h0, h1) = (barrier_value(o, prev.position()), barrier_value(o, state.position()));
            report.dcbf = report.dcbf.max((1.0 - problem.gamma) * h0 - h1);
        }
        prev = *state;
    }
    report
}

// --- receding-horizon expansion ---------------------------------------------

/// Walking model shared by every expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepModel {
    pub params: LipParams,
    pub bounds: ReachableBounds,
    pub limits: KinematicLimits,
}

impl Default for StepModel {
    fn default() -> Self {
        Self {
            params: LipParams::default(),
            bounds: ReachableBounds::cassie(Stance::Left),
            limits: KinematicLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    /// `x_1` of the solved program.
    pub state: LipState,
    /// `u_0` of the solved program.
    pub input: FootPlacement,
    /// Stance for the step leaving the new state.
    pub stance: Stance,
    pub is_feasible: bool,
    pub horizon: usize,
    pub active: Vec<Obstacle>,
    pub solution: MpcSolution,
}

/// Plans toward `target` from `from` and keeps only the first step.
pub fn dcbf_mpc_expand(
    from: &LipState,
    stance: Stance,
    target: [f64; 2],
    model: &StepModel,
    barriers: &BarrierSpec,
    config: &MpcConfig,
) -> Result<Expansion, TrajoptError> {
    let horizon = compute_steps(from.position(), target, config);
    let active = active_obstacles(barriers, from.position());
    let problem = MpcProblem::new(
        *from,
        target,
        horizon,
        model.bounds.with_stance(stance),
        model.limits,
        active.clone(),
        config.gamma,
        model.params,
    );
    let solution = solve_mpc(&problem, config)?;
    Ok(Expansion {
        state: solution.states[0],
        input: solution.inputs[0],
        stance: stance.flip(),
        is_feasible: solution.is_feasible,
        horizon,
        active,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lip_core::periodic_gait_velocity;
    use approx::assert_abs_diff_eq;

    fn gait_state(pos: [f64; 2], dir: [f64; 2], stance: Stance) -> LipState {
        let v = periodic_gait_velocity(dir, 0.3, 0.15, stance, &LipParams::default()).unwrap();
        LipState::new(pos[0], v[0], pos[1], v[1])
    }

    fn problem(state: LipState, goal: [f64; 2], n: usize, obstacles: Vec<Obstacle>) -> MpcProblem {
        MpcProblem::new(
            state,
            goal,
            n,
            ReachableBounds::cassie(Stance::Left),
            KinematicLimits::default(),
            obstacles,
            0.75,
            LipParams::default(),
        )
    }

    #[test]
    fn compute_steps_examples() {
        let c = MpcConfig::default();
        assert_eq!(compute_steps([0.0, 0.0], [0.5, 0.0], &c), 2);
        assert_eq!(compute_steps([0.0, 0.0], [10.0, 0.0], &c), 3);
        assert_eq!(compute_steps([1.0, 1.0], [1.0, 1.0], &c), 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let obstacles = vec![
            Obstacle::circle([1.0, 0.4], 0.5),
            Obstacle::new([0.2, 1.0], [0.4, 0.7], [0.1, 0.1], 6.0, 0.3).unwrap(),
        ];
        let pr = problem(
            gait_state([0.0, 0.0], [1.0, 0.2], Stance::Left),
            [1.5, 0.5],
            3,
            obstacles,
        );
        let cfg = MpcConfig {
            w_step: 0.3,
            ..MpcConfig::default()
        };
        let prog = Program::new(&pr, &cfg);
        let nc = prog.num_constraints();
        let z = [0.31, 0.02, 0.55, 0.13, 0.93, 0.12];
        let mu: Vec<f64> = (0..nc).map(|i| 0.3 + (i % 7) as f64 * 0.17).collect();
        let lagrangian = |z: &[f64]| {
            let ro = prog.rollout(z);
            let mut g = vec![0.0; nc];
            prog.constraints(&ro, &mut g);
            prog.cost(&ro) + g.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grad = vec![0.0; 6];
        prog.gradient(&prog.rollout(&z), &mu, &mut grad);
        for i in 0..6 {
            let h = 1e-6;
            let (mut zp, mut zm) = (z, z);
            zp[i] += h;
            zm[i] -= h;
            let fd = (lagrangian(&zp) - lagrangian(&zm)) / (2.0 * h);
            assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn rollout_agrees_with_model_step() {
        let pr = problem(
            gait_state([0.3, -0.2], [0.0, 1.0], Stance::Right),
            [0.0, 1.0],
            3,
            vec![],
        );
        let cfg = MpcConfig::default();
        let prog = Program::new(&pr, &cfg);
        let (states, inputs) = prog.states_and_inputs(&[0.35, 0.1, 0.3, 0.4, 0.28, 0.7]);
        let mut s = pr.initial_state;
        for (state, input) in states.iter().zip(&inputs) {
            s = lip_step(&s, input, &pr.params);
            assert_abs_diff_eq!(s.x, state.x, epsilon = 1e-12);
            assert_abs_diff_eq!(s.ydot, state.ydot, epsilon = 1e-12);
        }
    }

    #[test]
    fn solves_obstacle_free_walk() {
        let pr = problem(gait_state([0.0, 0.0], [1.0, 0.0], Stance::Left), [0.9, 0.0], 3, vec![]);
        let sol = solve_mpc(&pr, &MpcConfig::default()).unwrap();
        assert!(sol.is_feasible, "{sol:?}");
        assert!(verify_solution(&pr, &sol).max() <= 1e-6);
        assert!(sol.terminal_cost < 1.0);
    }

    #[test]
    fn deterministic() {
        let obstacles = vec![Obstacle::circle([0.6, 0.1], 0.2)];
        let pr = problem(
            gait_state([0.0, 0.0], [1.0, 0.0], Stance::Left),
            [1.2, 0.0],
            3,
            obstacles,
        );
        let a = solve_mpc(&pr, &MpcConfig::default()).unwrap();
        let b = solve_mpc(&pr, &MpcConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn from_rest_is_infeasible() {
        let pr = problem(LipState::at_rest(0.0, 0.0), [0.0, 0.0], 2, vec![]);
        let sol = solve_mpc(&pr, &MpcConfig::default()).unwrap();
        assert!(!sol.is_feasible);
        assert!(sol.max_violation > 1e-6);
    }

    #[test]
    fn expand_toward_current_position() {
        let start = gait_state([2.0, 2.0], [1.0, 0.0], Stance::Left);
        let spec = BarrierSpec::new(vec![], 0.75, 5.0).unwrap();
        let e = dcbf_mpc_expand(
            &start,
            Stance::Left,
            [2.0, 2.0],
            &StepModel::default(),
            &spec,
            &MpcConfig::default(),
        )
        .unwrap();
        assert!(e.is_feasible);
        assert_eq!(e.stance, Stance::Right);
        let d = (e.state.x - 2.0).hypot(e.state.y - 2.0);
        assert!(d <= 0.5 + 1e-6);
    }

    #[test]
    fn expansion_respects_barrier() {
        let start = gait_state([0.0, 0.0], [1.0, 0.0], Stance::Left);
        let obstacle = Obstacle::circle([0.9, 0.0], 0.3);
        let spec = BarrierSpec::new(vec![obstacle.clone()], 0.75, 5.0).unwrap();
        let e = dcbf_mpc_expand(
            &start,
            Stance::Left,
            [1.8, 0.0],
            &StepModel::default(),
            &spec,
            &MpcConfig::default(),
        )
        .unwrap();
        assert!(e.is_feasible);
        let h0 = obstacle.barrier_value(start.position());
        let h1 = obstacle.barrier_value(e.state.position());
        assert!(h1 >= 0.25 * h0 - 1e-6);
        let mut state = start;
        for (s, u) in e.solution.states.iter().zip(&e.solution.inputs) {
            assert!(obstacle.barrier_value(s.position()) >= 0.25 * obstacle.barrier_value(state.position()) - 1e-6);
            state = lip_step(&state, u, &LipParams::default());
        }
    }

    #[test]
    fn overspeed_single_step_is_infeasible() {
        // at 5 m/s backward every admissible offset still moves the CoM farther than l_max
        let start = LipState::new(0.0, -5.0, 0.0, 0.4);
        let spec = BarrierSpec::new(vec![], 0.75, 5.0).unwrap();
        let cfg = MpcConfig {
            n_min: 1,
            n_max: 1,
            ..MpcConfig::default()
        };
        let e = dcbf_mpc_expand(&start, Stance::Left, [-3.0, 0.0], &StepModel::default(), &spec, &cfg).unwrap();
        assert_eq!(e.horizon, 1);
        assert!(!e.is_feasible);
        let pr = problem(start, [-3.0, 0.0], 1, vec![]);
        assert!(verify_solution(&pr, &e.solution).max() > 1e-6);
    }
}
