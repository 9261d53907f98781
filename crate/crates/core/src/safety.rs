//! Barrier functions for p-norm-ball obstacles and the discrete CBF condition.

use crate::worldmodel::OccupancyGrid;

/// Default exponent; large enough to approximate a box while staying smooth.
pub const DEFAULT_NORM_P: f64 = 10.0;
pub const DEFAULT_GAMMA: f64 = 0.75;
pub const DEFAULT_ACTIVATION_RADIUS: f64 = 5.0;

/// Safe-set primitive `h(r) = ||S R^T (r - c)||_p - 1` where `S` scales by
/// the buffered radii and `R` rotates by `rotation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radii: [f64; 2],
    pub buffer: [f64; 2],
    pub norm_p: f64,
    pub rotation: f64,
}

impl Obstacle {
    pub fn new(
        center: [f64; 2],
        radii: [f64; 2],
        buffer: [f64; 2],
        norm_p: f64,
        rotation: f64,
    ) -> Result<Self, String> {
        let o = Self {
            center,
            radii,
            buffer,
            norm_p,
            rotation,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        Self {
            center,
            radii: [radius, radius],
            buffer: [0.0, 0.0],
            norm_p: 2.0,
            rotation: 0.0,
        }
    }

    pub fn ellipse(center: [f64; 2], radii: [f64; 2]) -> Self {
        Self {
            center,
            radii,
            buffer: [0.0, 0.0],
            norm_p: 2.0,
            rotation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = self
            .center
            .iter()
            .chain(&self.radii)
            .chain(&self.buffer)
            .all(|v| v.is_finite());
        if !finite || !self.rotation.is_finite() {
            return Err("obstacle fields must be finite".into());
        }
        if self.radii.iter().any(|&r| r <= 0.0) {
            return Err(format!("radii must be positive, got {:?}", self.radii));
        }
        if self.buffer.iter().any(|&b| b < 0.0) {
            return Err(format!("buffer must be nonnegative, got {:?}", self.buffer));
        }
        if !(self.norm_p >= 1.0) || !self.norm_p.is_finite() {
            return Err(format!("norm_p must be >= 1, got {}", self.norm_p));
        }
        Ok(())
    }

    pub fn effective_radii(&self) -> [f64; 2] {
        [self.radii[0] + self.buffer[0], self.radii[1] + self.buffer[1]]
    }

    fn local(&self, position: [f64; 2]) -> [f64; 2] {
        let dx = position[0] - self.center[0];
        let dy = position[1] - self.center[1];
        let (s, c) = self.rotation.sin_cos();
        let r = self.effective_radii();
        [(c * dx + s * dy) / r[0], (-s * dx + c * dy) / r[1]]
    }

    pub fn barrier_value(&self, position: [f64; 2]) -> f64 {
        let [a, b] = self.local(position);
        pnorm(a, b, self.norm_p) - 1.0
    }

    /// Barrier value and its gradient with respect to position. The gradient
    /// is set to zero at the center, where the norm is not differentiable.
    pub fn barrier_with_gradient(&self, position: [f64; 2]) -> (f64, [f64; 2]) {
        let [a, b] = self.local(position);
        let p = self.norm_p;
        let n = pnorm(a, b, p);
        if n == 0.0 {
            return (-1.0, [0.0, 0.0]);
        }
        // d n / d a = sign(a) (|a| / n)^(p-1)
        let da = a.signum() * (a.abs() / n).powf(p - 1.0);
        let db = b.signum() * (b.abs() / n).powf(p - 1.0);
        let (s, c) = self.rotation.sin_cos();
        let r = self.effective_radii();
        let gx = da * c / r[0] - db * s / r[1];
        let gy = da * s / r[0] + db * c / r[1];
        (n - 1.0, [gx, gy])
    }
}

fn pnorm(a: f64, b: f64, p: f64) -> f64 {
    let (a, b) = (a.abs(), b.abs());
    let m = a.max(b);
    if m == 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        return a.hypot(b);
    }
    m * ((a / m).powf(p) + (b / m).powf(p)).powf(1.0 / p)
}

pub fn barrier_value(obstacle: &Obstacle, position: [f64; 2]) -> f64 {
    obstacle.barrier_value(position)
}

/// `h_{k+1} >= (1 - gamma) h_k`, evaluated exactly.
pub fn dcbf_condition(h_k: f64, h_k1: f64, gamma: f64) -> bool {
    h_k1 >= (1.0 - gamma) * h_k
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSpec {
    pub obstacles: Vec<Obstacle>,
    pub gamma: f64,
    pub activation_radius: f64,
}

impl BarrierSpec {
    pub fn new(obstacles: Vec<Obstacle>, gamma: f64, activation_radius: f64) -> Result<Self, String> {
        let spec = Self {
            obstacles,
            gamma,
            activation_radius,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.activation_radius > 0.0) {
            return Err(format!(
                "activation_radius must be positive, got {}",
                self.activation_radius
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate().map_err(|e| format!("obstacle {i}: {e}"))?;
        }
        Ok(())
    }

    /// Smallest barrier value over all obstacles, `+inf` when there are none.
    pub fn min_barrier(&self, position: [f64; 2]) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.barrier_value(position))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Obstacles close enough to `position` to constrain the next plan, sorted by
/// ascending barrier value (ties keep input order).
///
/// An obstacle is active when `h <= activation_radius / max(effective radii)`.
pub fn active_obstacles(spec: &BarrierSpec, position: [f64; 2]) -> Vec<Obstacle> {
    let mut hits: Vec<(f64, usize)> = spec
        .obstacles
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let h = o.barrier_value(position);
            let [rx, ry] = o.effective_radii();
            (h <= spec.activation_radius / rx.max(ry)).then_some((h, i))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.into_iter().map(|(_, i)| spec.obstacles[i].clone()).collect()
}

/// One obstacle per 8-connected component of cells with occupancy at or above
/// `threshold`.
///
/// The obstacle is centered on the component's bounding box. Its radii are
/// the box half-extents, enlarged when needed so the p-norm ball still
/// contains every cell center of the component.
pub fn extract_obstacles(grid: &OccupancyGrid, threshold: f64, buffer: f64, norm_p: f64) -> Vec<Obstacle> {
    let (w, h) = (grid.width(), grid.height());
    let occupied = |i: usize, j: usize| grid.get(i, j) >= threshold;
    let mut label = vec![usize::MAX; w * h];
    let mut obstacles = Vec::new();
    let mut stack = Vec::new();
    let res = grid.resolution();
    let corner_scale = 2f64.powf(1.0 / norm_p);

    for j in 0..h {
        for i in 0..w {
            if label[j * w + i] != usize::MAX || !occupied(i, j) {
                continue;
            }
            let id = obstacles.len();
            let (mut imin, mut imax, mut jmin, mut jmax) = (i, i, j, j);
            label[j * w + i] = id;
            stack.push((i, j));
            while let Some((ci, cj)) = stack.pop() {
                imin = imin.min(ci);
                imax = imax.max(ci);
                jmin = jmin.min(cj);
                jmax = jmax.max(cj);
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ni, nj) = (ci as i64 + di, cj as i64 + dj);
                        if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                            continue;
                        }
                        let (ni, nj) = (ni as usize, nj as usize);
                        if label[nj * w + ni] == usize::MAX && occupied(ni, nj) {
                            label[nj * w + ni] = id;
                            stack.push((ni, nj));
                        }
                    }
                }
            }
            let origin = grid.origin();
            let span_x = (imax - imin + 1) as f64 * res;
            let span_y = (jmax - jmin + 1) as f64 * res;
            let center = [
                origin[0] + imin as f64 * res + span_x / 2.0,
                origin[1] + jmin as f64 * res + span_y / 2.0,
            ];
            let reach_x = (imax - imin) as f64 * res / 2.0 * corner_scale;
            let reach_y = (jmax - jmin) as f64 * res / 2.0 * corner_scale;
            obstacles.push(Obstacle {
                center,
                radii: [(span_x / 2.0).max(reach_x), (span_y / 2.0).max(reach_y)],
                buffer: [buffer, buffer],
                norm_p,
                rotation: 0.0,
            });
        }
    }
    obstacles
}
