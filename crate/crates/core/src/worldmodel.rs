//! Occupancy grid, signal field, beam sensor and the path-dependent
//! information measure used by the informative planner.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::safety::Obstacle;

/// Cells at or above this probability block beams and collide.
pub const OCCUPIED_THRESHOLD: f64 = 0.65;
/// Cells strictly below this probability are free space.
pub const FREE_THRESHOLD: f64 = 0.35;
pub const DEFAULT_ROBOT_RADIUS: f64 = 0.4;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("grid declares {expected} cells but {found} were provided")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid signal source: {0}")]
    InvalidSource(String),
    #[error("pose ({x}, {y}) lies outside the map")]
    PoseOutOfMap { x: f64, y: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<f64>,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::InvalidGrid("width and height must be positive".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::InvalidGrid(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(WorldError::InvalidGrid("origin must be finite".into()));
        }
        if cells.len() != width * height {
            return Err(WorldError::DimensionMismatch {
                expected: width * height,
                found: cells.len(),
            });
        }
        if let Some(bad) = cells.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(WorldError::InvalidGrid(format!("probability {bad} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    pub fn filled(width: usize, height: usize, resolution: f64, origin: [f64; 2], p: f64) -> Result<Self, WorldError> {
        Self::new(width, height, resolution, origin, vec![p; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, p: f64) {
        let k = self.index(i, j);
        self.cells[k] = p.clamp(0.0, 1.0);
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    /// World extent as `[min_x, min_y, max_x, max_y]`.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin[0],
            self.origin[1],
            self.origin[0] + self.width as f64 * self.resolution,
            self.origin[1] + self.height as f64 * self.resolution,
        ]
    }

    pub fn cell_of(&self, position: [f64; 2]) -> Option<(usize, usize)> {
        let gx = (position[0] - self.origin[0]) / self.resolution;
        let gy = (position[1] - self.origin[1]) / self.resolution;
        if !(gx >= 0.0 && gy >= 0.0) {
            return None;
        }
        let (i, j) = (gx.floor() as usize, gy.floor() as usize);
        (i < self.width && j < self.height).then_some((i, j))
    }

    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.get(i, j) >= OCCUPIED_THRESHOLD
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.get(i, j) < FREE_THRESHOLD
    }

    pub fn is_free_position(&self, position: [f64; 2]) -> bool {
        self.cell_of(position).is_some_and(|(i, j)| self.is_free(i, j))
    }

    /// Total binary entropy of the map in bits.
    pub fn total_entropy(&self) -> f64 {
        self.cells.iter().map(|&p| binary_entropy(p)).sum()
    }

    /// Sets every cell whose center lies inside one of `obstacles` to `p`.
    pub fn rasterize(&mut self, obstacles: &[Obstacle], p: f64) {
        for j in 0..self.height {
            for i in 0..self.width {
                let c = self.cell_center(i, j);
                if obstacles.iter().any(|o| o.barrier_value(c) <= 0.0) {
                    self.set(i, j, p);
                }
            }
        }
    }
}

/// Binary entropy in bits; zero at 0 and 1.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

// --- map files ---------------------------------------------------------------

const MAP_MAGIC: &str = "OCCGRID";

pub fn parse_map(text: &str) -> Result<OccupancyGrid, WorldError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(WorldError::Parse {
        line: 1,
        message: "empty map file".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != MAP_MAGIC {
        return Err(WorldError::Parse {
            line: 1,
            message: format!("expected `{MAP_MAGIC} width height resolution origin_x origin_y`"),
        });
    }
    let header_err = |what: &str| WorldError::Parse {
        line: 1,
        message: format!("bad {what}"),
    };
    let width: usize = fields[1].parse().map_err(|_| header_err("width"))?;
    let height: usize = fields[2].parse().map_err(|_| header_err("height"))?;
    let resolution: f64 = fields[3].parse().map_err(|_| header_err("resolution"))?;
    let ox: f64 = fields[4].parse().map_err(|_| header_err("origin_x"))?;
    let oy: f64 = fields[5].parse().map_err(|_| header_err("origin_y"))?;

    let mut cells = Vec::with_capacity(width * height);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let p: f64 = tok.parse().map_err(|_| WorldError::Parse {
                line: idx + 1,
                message: format!("`{tok}` is not a number"),
            })?;
            if !(0.0..=1.0).contains(&p) {
                return Err(WorldError::Parse {
                    line: idx + 1,
                    message: format!("probability {p} outside [0, 1]"),
                });
            }
            cells.push(p);
        }
    }
    if cells.len() != width * height {
        return Err(WorldError::DimensionMismatch {
            expected: width * height,
            found: cells.len(),
        });
    }
    OccupancyGrid::new(width, height, resolution, [ox, oy], cells)
}

/// Canonical text form: shortest round-trip float formatting, LF endings.
pub fn format_map(grid: &OccupancyGrid) -> String {
    let mut out = String::with_capacity(grid.len() * 5 + 64);
    let _ = writeln!(
        out,
        "{MAP_MAGIC} {} {} {} {} {}",
        grid.width, grid.height, grid.resolution, grid.origin[0], grid.origin[1]
    );
    for row in grid.cells.chunks(grid.width) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn load_map(path: impl AsRef<Path>) -> Result<OccupancyGrid, WorldError> {
    parse_map(&std::fs::read_to_string(path)?)
}

pub fn save_map(path: impl AsRef<Path>, grid: &OccupancyGrid) -> Result<(), WorldError> {
    std::fs::write(path, format_map(grid))?;
    Ok(())
}

// --- signal field ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSource {
    pub center: [f64; 2],
    pub strength: f64,
    covariance: Matrix2<f64>,
    precision: Matrix2<f64>,
}

impl SignalSource {
    pub fn new(center: [f64; 2], strength: f64, covariance: [[f64; 2]; 2]) -> Result<Self, WorldError> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(WorldError::InvalidSource(format!(
                "strength must be nonnegative, got {strength}"
            )));
        }
        let cov = Matrix2::new(covariance[0][0], covariance[0][1], covariance[1][0], covariance[1][1]);
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 * cov.abs().max() {
            return Err(WorldError::InvalidSource("covariance must be symmetric".into()));
        }
        if !(cov[(0, 0)] > 0.0 && cov.determinant() > 0.0) {
            return Err(WorldError::InvalidSource("covariance must be positive definite".into()));
        }
        let precision = cov
            .try_inverse()
            .ok_or_else(|| WorldError::InvalidSource("singular covariance".into()))?;
        Ok(Self {
            center,
            strength,
            covariance: cov,
            precision,
        })
    }

    pub fn isotropic(center: [f64; 2], strength: f64, variance: f64) -> Result<Self, WorldError> {
        Self::new(center, strength, [[variance, 0.0], [0.0, variance]])
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let c = &self.covariance;
        [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]]
    }

    pub fn value(&self, position: [f64; 2]) -> f64 {
        let dx = position[0] - self.center[0];
        let dy = position[1] - self.center[1];
        let p = &self.precision;
        let q = dx * (p[(0, 0)] * dx + p[(0, 1)] * dy) + dy * (p[(1, 0)] * dx + p[(1, 1)] * dy);
        self.strength * (-q.max(0.0).sqrt()).exp()
    }
}

/// Sum of exponentially decaying sources under the Mahalanobis distance.
pub fn signal_strength(sources: &[SignalSource], position: [f64; 2]) -> f64 {
    sources.iter().map(|s| s.value(position)).sum()
}

// --- beam sensor -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub num_beams: usize,
    pub fov: f64,
    pub max_range: f64,
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_beams == 0 {
            return Err("num_beams must be at least 1".into());
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(format!("max_range must be positive, got {}", self.max_range));
        }
        if !(self.fov >= 0.0 && self.fov.is_finite()) {
            return Err(format!("fov must be nonnegative, got {}", self.fov));
        }
        Ok(())
    }

    pub fn beam_angles(&self, heading: f64) -> impl Iterator<Item = f64> + '_ {
        let n = self.num_beams as f64;
        (0..self.num_beams).map(move |i| heading - self.fov / 2.0 + self.fov * (i as f64 + 0.5) / n)
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            num_beams: 36,
            fov: std::f64::consts::TAU,
            max_range: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Cells crossed by a ray from `origin` along `angle`, in traversal order.
///
/// Stops after the first occupied cell, at the map edge, or once the next
/// cell boundary lies at or beyond `max_range`.
pub fn trace_ray(grid: &OccupancyGrid, origin: [f64; 2], angle: f64, max_range: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let Some((i0, j0)) = grid.cell_of(origin) else {
        return out;
    };
    let res = grid.resolution;
    let (dx, dy) = (angle.cos(), angle.sin());
    let gx = (origin[0] - grid.origin[0]) / res;
    let gy = (origin[1] - grid.origin[1]) / res;
    let (mut i, mut j) = (i0 as i64, j0 as i64);

    let axis = |g: f64, cell: i64, d: f64| -> (i64, f64, f64) {
        if d > 0.0 {
            (1, ((cell + 1) as f64 - g) * res / d, res / d)
        } else if d < 0.0 {
            (-1, (g - cell as f64) * res / -d, res / -d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (step_x, mut t_max_x, t_delta_x) = axis(gx, i, dx);
    let (step_y, mut t_max_y, t_delta_y) = axis(gy, j, dy);

    loop {
        let idx = grid.index(i as usize, j as usize);
        out.push(idx);
        if grid.cells[idx] >= OCCUPIED_THRESHOLD {
            break;
        }
        let t_next = if t_max_x < t_max_y {
            i += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            j += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t_next >= max_range || i < 0 || j < 0 || i >= grid.width as i64 || j >= grid.height as i64 {
            break;
        }
    }
    out
}

pub fn cast_beams(grid: &OccupancyGrid, pose: &Pose, sensor: &SensorModel) -> Result<Vec<Vec<usize>>, WorldError> {
    if grid.cell_of(pose.position()).is_none() {
        return Err(WorldError::PoseOutOfMap { x: pose.x, y: pose.y });
    }
    Ok(sensor
        .beam_angles(pose.theta)
        .map(|a| trace_ray(grid, pose.position(), a, sensor.max_range))
        .collect())
}

// --- information -------------------------------------------------------------

/// Accumulated information along one path and the set of cells it counted.
///
/// The cell set is shared copy-on-extend, so sibling branches never alias.
#[derive(Debug, Clone)]
pub struct InfoState {
    pub total: f64,
    counted: Arc<FixedBitSet>,
}

impl InfoState {
    pub fn empty(num_cells: usize) -> Self {
        Self {
            total: 0.0,
            counted: Arc::new(FixedBitSet::with_capacity(num_cells)),
        }
    }

    pub fn is_counted(&self, cell: usize) -> bool {
        self.counted.contains(cell)
    }

    pub fn counted_cells(&self) -> usize {
        self.counted.count_ones(..)
    }
}

/// Grid, signal sources and sensor bundled for planning queries.
#[derive(Debug, Clone)]
pub struct World {
    pub grid: OccupancyGrid,
    pub sources: Vec<SignalSource>,
    pub sensor: SensorModel,
    pub robot_radius: f64,
    cell_weights: Vec<f64>,
}

impl World {
    pub fn new(grid: OccupancyGrid, sources: Vec<SignalSource>, sensor: SensorModel, robot_radius: f64) -> Self {
        let cell_weights = (0..grid.len())
            .map(|k| {
                let (i, j) = grid.coords(k);
                let p = grid.cells[k];
                binary_entropy(p) * (1.0 + signal_strength(&sources, grid.cell_center(i, j)))
            })
            .collect();
        Self {
            grid,
            sources,
            sensor,
            robot_radius,
            cell_weights,
        }
    }

    /// Entropy-times-signal weight of a single cell.
    pub fn cell_weight(&self, cell: usize) -> f64 {
        self.cell_weights[cell]
    }

    pub fn information(&self, prior: &InfoState, pose: &Pose) -> InfoState {
        information(prior, pose, self)
    }

    pub fn no_collision(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        no_collision(&self.grid, a, b, self.robot_radius)
    }

    /// Remaining weighted entropy not yet counted by `state`.
    pub fn remaining_information(&self, state: &InfoState) -> f64 {
        self.cell_weights
            .iter()
            .enumerate()
            .filter(|(k, _)| !state.is_counted(*k))
            .map(|(_, w)| w)
            .sum()
    }
}

/// Adds the weighted entropy of every visible cell not yet counted along the
/// path. Poses outside the map see nothing.
pub fn information(prior: &InfoState, pose: &Pose, world: &World) -> InfoState {
    let Ok(traces) = cast_beams(&world.grid, pose, &world.sensor) else {
        return prior.clone();
    };
    let mut fresh: Vec<usize> = traces
        .into_iter()
        .flatten()
        .filter(|&c| !prior.counted.contains(c))
        .collect();
    if fresh.is_empty() {
        return prior.clone();
    }
    fresh.sort_unstable();
    fresh.dedup();
    let gain: f64 = fresh.iter().map(|&c| world.cell_weights[c]).sum();
    let mut counted = (*prior.counted).clone();
    counted.grow(world.grid.len());
    for c in fresh {
        counted.insert(c);
    }
    InfoState {
        total: prior.total + gain,
        counted: Arc::new(counted),
    }
}

// --- collision ---------------------------------------------------------------

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (apx - t * abx).hypot(apy - t * aby)
}

fn point_box_distance(p: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    (p[0].clamp(lo[0], hi[0]) - p[0]).hypot(p[1].clamp(lo[1], hi[1]) - p[1])
}

/// Liang-Barsky clip of the segment against the box.
fn segment_hits_box(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> bool {
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for axis in 0..2 {
        let d = b[axis] - a[axis];
        if d == 0.0 {
            if a[axis] < lo[axis] || a[axis] > hi[axis] {
                return false;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[axis] - a[axis]) / d, (hi[axis] - a[axis]) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Distance between the segment and the closed axis-aligned box.
fn segment_box_distance(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    if segment_hits_box(a, b, lo, hi) {
        return 0.0;
    }
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    corners
        .iter()
        .map(|&c| point_segment_distance(c, a, b))
        .chain([point_box_distance(a, lo, hi), point_box_distance(b, lo, hi)])
        .fold(f64::INFINITY, f64::min)
}

/// True when both endpoints are on the map and no occupied cell comes within
/// `robot_radius` of the segment.
pub fn no_collision(grid: &OccupancyGrid, a: [f64; 2], b: [f64; 2], robot_radius: f64) -> bool {
    if grid.cell_of(a).is_none() || grid.cell_of(b).is_none() {
        return false;
    }
    let res = grid.resolution;
    let [ox, oy] = grid.origin;
    let lo = |v: f64, o: f64| (((v - robot_radius - o) / res).floor() - 1.0).max(0.0) as usize;
    let hi = |v: f64, o: f64, n: usize| ((((v + robot_radius - o) / res).ceil() + 1.0).max(0.0) as usize).min(n);
    let (i0, i1) = (lo(a[0].min(b[0]), ox), hi(a[0].max(b[0]), ox, grid.width));
    let (j0, j1) = (lo(a[1].min(b[1]), oy), hi(a[1].max(b[1]), oy, grid.height));
    for j in j0..j1 {
        for i in i0..i1 {
            if !grid.is_occupied(i, j) {
                continue;
            }
            let cell_lo = [ox + i as f64 * res, oy + j as f64 * res];
            let cell_hi = [cell_lo[0] + res, cell_lo[1] + res];
            if segment_box_distance(a, b, cell_lo, cell_hi) <= robot_radius {
                return false;
            }
        }
    }
    true
}

// --- fixtures ----------------------------------------------------------------

/// 25 m x 25 m free map containing the ellipse centered at (10, 10) with
/// semi-axes 1 m (x) and 8 m (y). Returns the grid and the obstacle.
pub fn single_obstacle_map(resolution: f64) -> (OccupancyGrid, Obstacle) {
    let n = (25.0 / resolution).round() as usize;
    let mut grid = OccupancyGrid::filled(n, n, resolution, [0.0, 0.0], 0.0).expect("valid fixture");
    let ellipse = Obstacle::ellipse([10.0, 10.0], [1.0, 8.0]);
    grid.rasterize(std::slice::from_ref(&ellipse), 1.0);
    (grid, ellipse)
}

/// Rock blocks of the procedural cave, as (center, half-extents).
const CAVE_BLOCKS: [([f64; 2], [f64; 2]); 8] = [
    ([4.2, 18.9], [1.9, 0.9]),
    ([12.0, 19.0], [0.6, 3.0]),
    ([19.0, 15.0], [2.6, 0.6]),
    ([6.5, 11.5], [3.0, 0.6]),
    ([15.5, 8.5], [0.6, 3.0]),
    ([7.0, 4.0], [0.7, 1.6]),
    ([20.0, 4.0], [1.2, 1.2]),
    ([11.5, 13.5], [0.8, 0.8]),
];

/// Procedural stand-in for a cave survey: a 24 m x 24 m stochastic occupancy
/// map with eight rock blocks forming rooms and corridors, plus two signal
/// sources near the top edge.
pub fn cave_like_map(seed: u64) -> (OccupancyGrid, Vec<SignalSource>) {
    let res = 0.2;
    let n = 120;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let c = [(i as f64 + 0.5) * res, (j as f64 + 0.5) * res];
            let rock = CAVE_BLOCKS
                .iter()
                .any(|(center, half)| (c[0] - center[0]).abs() <= half[0] && (c[1] - center[1]).abs() <= half[1]);
            let p = if rock {
                rng.gen_range(0.85..=1.0)
            } else {
                rng.gen_range(0.1..0.3)
            };
            cells.push(p);
        }
    }
    let grid = OccupancyGrid::new(n, n, res, [0.0, 0.0], cells).expect("valid fixture");
    let sources = vec![
        SignalSource::isotropic([5.0, 22.5], 3.0, 4.0).expect("valid source"),
        SignalSource::isotropic([19.0, 22.0], 2.0, 2.0).expect("valid source"),
    ];
    (grid, sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn empty(w: usize, h: usize, res: f64) -> OccupancyGrid {
        OccupancyGrid::filled(w, h, res, [0.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn signal_examples() {
        let s = SignalSource::isotropic([1.0, 2.0], 2.5, 1.0).unwrap();
        assert_eq!(signal_strength(std::slice::from_ref(&s), [1.0, 2.0]), 2.5);
        assert_eq!(signal_strength(&[], [0.0, 0.0]), 0.0);
        let unit = SignalSource::isotropic([0.0, 0.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(signal_strength(&[unit], [0.0, 1.0]), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(SignalSource::new([0.0, 0.0], 1.0, [[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(SignalSource::new([0.0, 0.0], -1.0, [[1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn signal_peaks_at_source() {
        let s = SignalSource::new([3.0, 4.0], 2.0, [[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let peak = s.value([3.0, 4.0]);
        for k in 0..400 {
            let a = k as f64 * 0.1;
            let r = 0.05 + (k % 20) as f64 * 0.2;
            let v = s.value([3.0 + r * a.cos(), 4.0 + r * a.sin()]);
            assert!(v >= 0.0 && v < peak);
        }
    }

    #[test]
    fn beam_in_empty_grid_spans_cells() {
        let g = empty(20, 3, 0.5);
        let sensor = SensorModel {
            num_beams: 1,
            fov: 0.0,
            max_range: 3.25,
        };
        // from the center of cell 0 boundaries are met at 0.25, 0.75, ..., 3.25
        let traces = cast_beams(&g, &Pose::new(0.25, 0.75, 0.0), &sensor).unwrap();
        assert_eq!(traces[0].len(), 7);
        assert_eq!(traces[0], (0..7).map(|i| g.index(i, 1)).collect::<Vec<_>>());
    }

    #[test]
    fn beam_stops_at_wall() {
        let mut g = empty(10, 3, 1.0);
        g.set(3, 1, 0.9);
        let sensor = SensorModel {
            num_beams: 1,
            fov: 0.0,
            max_range: 8.0,
        };
        let traces = cast_beams(&g, &Pose::new(2.5, 1.5, 0.0), &sensor).unwrap();
        assert_eq!(traces[0], vec![g.index(2, 1), g.index(3, 1)]);
        // starting right against the wall, the trace is the wall cell alone
        let traces = cast_beams(&g, &Pose::new(3.5, 1.5, 0.0), &sensor).unwrap();
        assert_eq!(traces[0], vec![g.index(3, 1)]);
    }

    #[test]
    fn pose_outside_rejected() {
        let g = empty(4, 4, 1.0);
        assert!(matches!(
            cast_beams(&g, &Pose::new(-1.0, 1.0, 0.0), &SensorModel::default()),
            Err(WorldError::PoseOutOfMap { .. })
        ));
    }

    /// Every cell whose square the segment passes through (with positive
    /// length), ordered by entry parameter.
    fn supercover(g: &OccupancyGrid, o: [f64; 2], angle: f64, range: f64) -> Vec<usize> {
        let d = [angle.cos(), angle.sin()];
        let mut hits = Vec::new();
        for j in 0..g.height() {
            for i in 0..g.width() {
                let lo = [i as f64 * g.resolution(), j as f64 * g.resolution()];
                let hi = [lo[0] + g.resolution(), lo[1] + g.resolution()];
                let (mut t0, mut t1) = (0.0f64, range);
                for k in 0..2 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < lo[k] || o[k] >= hi[k] {
                            t0 = f64::INFINITY;
                        }
                    } else {
                        let a = (lo[k] - o[k]) / d[k];
                        let b = (hi[k] - o[k]) / d[k];
                        t0 = t0.max(a.min(b));
                        t1 = t1.min(a.max(b));
                    }
                }
                if t0 < t1 && t0 < range {
                    hits.push((t0, g.index(i, j)));
                }
            }
        }
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        hits.into_iter().map(|(_, c)| c).collect()
    }

    #[test]
    fn diagonal_beam_matches_supercover() {
        let g = empty(30, 30, 0.3);
        for (o, angle) in [
            ([1.03, 2.11], 0.7),
            ([4.51, 4.49], 2.3),
            ([7.77, 1.234], 1.9),
            ([5.0, 5.3], -2.6),
            ([0.4, 8.8], -0.3),
        ] {
            let trace = trace_ray(&g, o, angle, 6.0);
            assert_eq!(trace, supercover(&g, o, angle, 6.0), "origin {o:?} angle {angle}");
        }
    }

    fn half_unknown_world() -> World {
        let mut g = empty(40, 40, 0.25);
        for j in 0..40 {
            for i in 20..40 {
                g.set(i, j, 0.5);
            }
        }
        World::new(g, vec![], SensorModel::default(), 0.3)
    }

    #[test]
    fn information_examples() {
        let mut g = empty(20, 20, 0.5);
        g.set(5, 5, 1.0);
        let known = World::new(g, vec![], SensorModel::default(), 0.3);
        let s = known.information(&InfoState::empty(400), &Pose::new(3.0, 3.0, 0.0));
        assert_eq!(s.total, 0.0);

        let unknown = OccupancyGrid::filled(20, 3, 1.0, [0.0, 0.0], 0.5).unwrap();
        let sensor = SensorModel {
            num_beams: 1,
            fov: 0.0,
            max_range: 6.5,
        };
        let w = World::new(unknown, vec![], sensor, 0.3);
        let pose = Pose::new(0.5, 1.5, 0.0);
        let s1 = w.information(&InfoState::empty(60), &pose);
        assert_abs_diff_eq!(s1.total, 7.0, epsilon = 1e-12);
        let s2 = w.information(&s1, &pose);
        assert_eq!(s2.total, s1.total);
    }

    #[test]
    fn information_weights_signal() {
        let g = OccupancyGrid::filled(5, 1, 1.0, [0.0, 0.0], 0.5).unwrap();
        let src = SignalSource::isotropic([2.5, 0.5], 1.0, 1.0).unwrap();
        let sensor = SensorModel {
            num_beams: 1,
            fov: 0.0,
            max_range: 10.0,
        };
        let w = World::new(g.clone(), vec![src.clone()], sensor, 0.3);
        let s = w.information(&InfoState::empty(5), &Pose::new(0.5, 0.5, 0.0));
        let expect: f64 = (0..5).map(|i| 1.0 + src.value(g.cell_center(i, 0))).sum();
        assert_abs_diff_eq!(s.total, expect, epsilon = 1e-12);
    }

    #[test]
    fn branches_do_not_alias() {
        let w = half_unknown_world();
        let root = w.information(&InfoState::empty(1600), &Pose::new(4.0, 5.0, 0.0));
        let a = w.information(&root, &Pose::new(6.0, 5.0, 0.0));
        let b = w.information(&root, &Pose::new(4.0, 8.0, 0.0));
        assert!(a.total > root.total && b.total > root.total);
        assert_eq!(
            root.counted_cells(),
            w.information(&InfoState::empty(1600), &Pose::new(4.0, 5.0, 0.0))
                .counted_cells()
        );
        assert_ne!(a.counted_cells(), b.counted_cells());
    }

    #[test]
    fn collision_examples() {
        let mut g = empty(20, 20, 0.5);
        for j in 8..12 {
            for i in 8..12 {
                g.set(i, j, 1.0);
            }
        }
        assert!(no_collision(&g, [1.0, 1.0], [1.0, 1.0], 0.4));
        assert!(!no_collision(&g, [1.0, 5.0], [9.0, 5.0], 0.4));
        assert!(no_collision(&g, [1.0, 1.0], [9.0, 1.0], 0.4));
        assert!(!no_collision(&g, [-1.0, 1.0], [1.0, 1.0], 0.4));
    }

    /// Smallest distance from densely sampled segment points to any occupied
    /// cell square.
    fn brute_clearance(g: &OccupancyGrid, a: [f64; 2], b: [f64; 2]) -> f64 {
        let res = g.resolution();
        let mut best = f64::INFINITY;
        for s in 0..=4000 {
            let t = s as f64 / 4000.0;
            let q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            for j in 0..g.height() {
                for i in 0..g.width() {
                    if !g.is_occupied(i, j) {
                        continue;
                    }
                    let (x0, y0) = (g.origin()[0] + i as f64 * res, g.origin()[1] + j as f64 * res);
                    let dx = (x0 - q[0]).max(q[0] - x0 - res).max(0.0);
                    let dy = (y0 - q[1]).max(q[1] - y0 - res).max(0.0);
                    best = best.min(dx.hypot(dy));
                }
            }
        }
        best
    }

    #[test]
    fn grazing_segment_matches_brute_force() {
        let mut g = empty(20, 20, 0.5);
        g.set(10, 10, 1.0);
        // occupied square [5, 5.5]^2; the first segment runs exactly 0.5 below it
        let r = 0.5;
        for (a, b, free) in [
            ([1.0, 4.5], [9.0, 4.5], false),
            ([1.0, 4.4999], [9.0, 4.4999], true),
            ([5.25, 1.0], [5.25, 4.5], false),
            ([5.25, 1.0], [5.25, 4.45], true),
            // diagonal approach to the corner (5, 5)
            ([4.0, 4.0], [4.65, 4.65], false),
            ([4.0, 4.0], [4.64, 4.64], true),
        ] {
            assert_eq!(no_collision(&g, a, b, r), free, "{a:?} {b:?}");
            assert_eq!(brute_clearance(&g, a, b) > r, free, "{a:?} {b:?}");
        }
    }

    #[test]
    fn map_text_examples() {
        let g = parse_map("OCCGRID 2 2 0.5 0 0\n0 1\n0.5 0.5\n").unwrap();
        assert_eq!(g.cells(), &[0.0, 1.0, 0.5, 0.5]);
        let text = "OCCGRID 2 2 0.5 -1.5 2\n0 1\n0.5 0.25\n";
        assert_eq!(format_map(&parse_map(text).unwrap()), text);
        assert!(matches!(
            parse_map("OCCGRID 2 2 0.5 0 0\n0 1\n0.5\n"),
            Err(WorldError::DimensionMismatch { expected: 4, found: 3 })
        ));
        match parse_map("OCCGRID 2 2 0.5 0 0\n0 1\n0.5 x\n") {
            Err(WorldError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_map("GRID 2 2"), Err(WorldError::Parse { line: 1, .. })));
    }

    #[test]
    fn map_file_round_trip() {
        let (g, _) = cave_like_map(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cave.occ");
        save_map(&path, &g).unwrap();
        let back = load_map(&path).unwrap();
        assert_eq!(back, g);
        save_map(dir.path().join("again.occ"), &back).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("again.occ")).unwrap()
        );
    }

    #[test]
    fn fixtures_are_sane() {
        let (g, e) = single_obstacle_map(0.25);
        assert_eq!(g.width(), 100);
        assert!(g.is_occupied(40, 40));
        assert!(g.is_free(8, 8));
        assert_eq!(e.barrier_value([10.0, 18.0]), 0.0);
        let (c, sources) = cave_like_map(1);
        assert_eq!(sources.len(), 2);
        let obs = crate::safety::extract_obstacles(&c, OCCUPIED_THRESHOLD, 0.5, 10.0);
        assert_eq!(obs.len(), CAVE_BLOCKS.len());
        assert!(c.total_entropy() > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn information_monotone_and_submodular(seed in 0u64..1000) {
                let w = half_unknown_world();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let poses: Vec<Pose> = (0..6)
                    .map(|_| Pose::new(rng.gen_range(0.2..9.8), rng.gen_range(0.2..9.8), 0.0))
                    .collect();
                let extra = Pose::new(rng.gen_range(0.2..9.8), rng.gen_range(0.2..9.8), 0.0);
                let mut state = InfoState::empty(w.grid.len());
                let mut prev_gain = f64::INFINITY;
                for p in &poses {
                    let before = state.total;
                    let gain_extra = w.information(&state, &extra).total - before;
                    prop_assert!(gain_extra <= prev_gain + 1e-9);
                    prev_gain = gain_extra;
                    state = w.information(&state, p);
                    prop_assert!(state.total >= before);
                }
            }

            #[test]
            fn collision_symmetric(ax in 0.0..10.0f64, ay in 0.0..10.0f64, bx in 0.0..10.0f64, by in 0.0..10.0f64, seed in 0u64..50) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cells: Vec<f64> = (0..400).map(|_| if rng.gen_bool(0.05) { 1.0 } else { 0.0 }).collect();
                let g = OccupancyGrid::new(20, 20, 0.5, [0.0, 0.0], cells).unwrap();
                let ab = no_collision(&g, [ax, ay], [bx, by], 0.4);
                prop_assert_eq!(ab, no_collision(&g, [bx, by], [ax, ay], 0.4));
                // sampling overestimates the clearance by at most half a sample spacing
                let clearance = brute_clearance(&g, [ax, ay], [bx, by]);
                if (clearance - 0.4).abs() > 2e-3 {
                    prop_assert_eq!(ab, clearance > 0.4);
                }
            }

            #[test]
            fn traces_stop_at_first_occupied(seed in 0u64..200, angle in -3.2..3.2f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let cells: Vec<f64> = (0..900).map(|_| rng.gen_range(0.0..1.0)).collect();
                let g = OccupancyGrid::new(30, 30, 0.3, [0.0, 0.0], cells).unwrap();
                let t = trace_ray(&g, [4.5, 4.5], angle, 5.0);
                if let Some(pos) = t.iter().position(|&c| g.cells()[c] >= OCCUPIED_THRESHOLD) {
                    prop_assert_eq!(pos, t.len() - 1);
                }
            }
        }
    }
}
