//! Sampling-based planners built on the receding-horizon step expansion:
//! a goal-directed RRT and the information-gathering SAFE-IIG loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lip_core::{heading_from_delta, FootPlacement, Heading, LipState, Stance};
use crate::safety::BarrierSpec;
use crate::trajopt::{dcbf_mpc_expand, MpcConfig, StepModel, TrajoptError};
use crate::worldmodel::{InfoState, OccupancyGrid, Pose, World};

/// Smallest denominator used for the relative information contribution.
pub const RIC_INFO_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("the map has no free cell to sample")]
    NoFreeSpace,
    #[error("every node in the tree is closed")]
    AllNodesClosed,
    #[error("node {0} is not in the tree")]
    NodeNotInTree(usize),
    #[error("start ({x}, {y}) is not in free space")]
    StartNotFree { x: f64, y: f64 },
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Trajopt(#[from] TrajoptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMode {
    /// Euclidean length of each edge.
    Distance,
    /// One unit per walking step.
    Steps,
}

impl CostMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CostMode::Distance => "distance",
            CostMode::Steps => "steps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub budget: f64,
    pub near_radius: f64,
    pub delta_ric: f64,
    pub n_ric: usize,
    pub max_samples: usize,
    pub goal_radius: f64,
    pub rng_seed: u64,
    pub prune_epsilon: f64,
    pub cost_mode: CostMode,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            budget: 30.0,
            near_radius: 0.5,
            delta_ric: 5e-3,
            n_ric: 20,
            max_samples: 50_000,
            goal_radius: 0.5,
            rng_seed: 0,
            prune_epsilon: 0.2,
            cost_mode: CostMode::Distance,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.budget > 0.0) {
            return Err(format!("budget must be positive, got {}", self.budget));
        }
        if !(self.near_radius > 0.0) {
            return Err(format!("near_radius must be positive, got {}", self.near_radius));
        }
        if !(self.delta_ric > 0.0) {
            return Err(format!("delta_ric must be positive, got {}", self.delta_ric));
        }
        if self.n_ric == 0 {
            return Err("n_ric must be at least 1".into());
        }
        if !(self.goal_radius > 0.0) {
            return Err(format!("goal_radius must be positive, got {}", self.goal_radius));
        }
        if !(self.prune_epsilon >= 0.0) {
            return Err(format!("prune_epsilon must be nonnegative, got {}", self.prune_epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub state: LipState,
    /// Stance for the step leaving this node.
    pub stance: Stance,
    pub cost: f64,
    pub info: f64,
    pub info_state: InfoState,
    /// Foot offset of the step that created the node; `None` at the root.
    pub first_input: Option<FootPlacement>,
    pub parent: Option<usize>,
    pub closed: bool,
}

impl TreeNode {
    pub fn position(&self) -> [f64; 2] {
        self.state.position()
    }
}

impl PartialEq for TreeNode {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state
            && self.stance == other.stance
            && self.cost == other.cost
            && self.info == other.info
            && self.first_input == other.first_input
            && self.parent == other.parent
            && self.closed == other.closed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanTree {
    pub nodes: Vec<TreeNode>,
    pub ric_history: Vec<f64>,
    /// Samples drawn since the last accepted node.
    pub n_sample: usize,
    /// Samples drawn in total.
    pub samples: usize,
}

impl PlanTree {
    pub fn new(root: TreeNode) -> Self {
        Self {
            nodes: vec![root],
            ric_history: Vec::new(),
            n_sample: 0,
            samples: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(parent, child)` pairs in insertion order of the child.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.parent.map(|p| (p, i)))
    }

    pub fn closed(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.closed).map(|(i, _)| i)
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        !self.nodes.iter().any(|n| n.parent == Some(id))
    }

    fn push(&mut self, node: TreeNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ReachedGoal,
    Converged,
    SampleBudgetExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::ReachedGoal => "reached_goal",
            Termination::Converged => "converged",
            Termination::SampleBudgetExhausted => "sample_budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub node: usize,
    pub state: LipState,
    pub input: Option<FootPlacement>,
    pub stance: Stance,
    pub heading: Option<Heading>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub tree: PlanTree,
    pub termination: Termination,
    /// Node the returned path ends at, if any.
    pub selected: Option<usize>,
    pub path: Vec<PathPoint>,
}

/// Planning telemetry.
pub trait PlanObserver {
    fn node_added(&mut self, _id: usize, _node: &TreeNode, _barrier: &[f64]) {}
    fn ric_appended(&mut self, _value: f64) {}
}

impl PlanObserver for () {}

// --- helpers -----------------------------------------------------------------

/// Uniform sampler over free cells with in-cell jitter.
#[derive(Debug, Clone)]
pub struct FreeSampler {
    cells: Vec<(usize, usize)>,
    resolution: f64,
    origin: [f64; 2],
}

impl FreeSampler {
    pub fn new(grid: &OccupancyGrid) -> Result<Self, PlannerError> {
        let cells: Vec<(usize, usize)> = (0..grid.height())
            .flat_map(|j| (0..grid.width()).map(move |i| (i, j)))
            .filter(|&(i, j)| grid.is_free(i, j))
            .collect();
        if cells.is_empty() {
            return Err(PlannerError::NoFreeSpace);
        }
        Ok(Self {
            cells,
            resolution: grid.resolution(),
            origin: grid.origin(),
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 2] {
        let (i, j) = self.cells[rng.gen_range(0..self.cells.len())];
        [
            self.origin[0] + (i as f64 + rng.gen::<f64>()) * self.resolution,
            self.origin[1] + (j as f64 + rng.gen::<f64>()) * self.resolution,
        ]
    }
}

pub fn sample_free(grid: &OccupancyGrid, rng: &mut impl Rng) -> Result<[f64; 2], PlannerError> {
    Ok(FreeSampler::new(grid)?.sample(rng))
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub fn nearest(tree: &PlanTree, query: [f64; 2], exclude_closed: bool) -> Result<usize, PlannerError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, n) in tree.nodes.iter().enumerate() {
        if exclude_closed && n.closed {
            continue;
        }
        let d = dist2(n.position(), query);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(PlannerError::AllNodesClosed)
}

/// Nodes within `r` of `query` (boundary included), in insertion order.
pub fn near(tree: &PlanTree, query: [f64; 2], r: f64, exclude_closed: bool) -> Vec<usize> {
    let r2 = r * r;
    tree.nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| !(exclude_closed && n.closed) && dist2(n.position(), query) <= r2)
        .map(|(i, _)| i)
        .collect()
}

pub fn cost_edge(from: [f64; 2], to: [f64; 2], mode: CostMode) -> f64 {
    match mode {
        CostMode::Distance => dist2(from, to).sqrt(),
        CostMode::Steps => 1.0,
    }
}

/// True when an open node within `epsilon` dominates the candidate.
pub fn prune(tree: &PlanTree, position: [f64; 2], cost: f64, info: f64, epsilon: f64) -> bool {
    let e2 = epsilon * epsilon;
    tree.nodes.iter().any(|n| {
        !n.closed
            && dist2(n.position(), position) <= e2
            && n.cost <= cost
            && n.info >= info
            && (n.cost < cost || n.info > info)
    })
}

/// Mean of the last `n_ric` entries, or infinity while fewer exist.
pub fn average_ric(history: &[f64], n_ric: usize) -> f64 {
    if n_ric == 0 || history.len() < n_ric {
        return f64::INFINITY;
    }
    let tail = &history[history.len() - n_ric..];
    tail.iter().sum::<f64>() / n_ric as f64
}

/// `(I_new / I_near - 1) / n_sample`, with the ratio guarded against a zero
/// denominator and at least one sample counted.
pub fn relative_information(i_new: f64, i_near: f64, n_sample: usize) -> f64 {
    ((i_new - i_near) / i_near.max(RIC_INFO_FLOOR)) / n_sample.max(1) as f64
}

/// Root-to-leaf chain. The heading of each entry points along the step that
/// leaves it; the last entry keeps the heading of the step that reached it.
pub fn extract_path(tree: &PlanTree, leaf: usize) -> Result<Vec<PathPoint>, PlannerError> {
    if leaf >= tree.nodes.len() {
        return Err(PlannerError::NodeNotInTree(leaf));
    }
    let mut chain = vec![leaf];
    while let Some(p) = tree.nodes[*chain.last().expect("nonempty")].parent {
        chain.push(p);
    }
    chain.reverse();
    let headings: Vec<Option<Heading>> = chain
        .windows(2)
        .map(|w| {
            let (a, b) = (tree.nodes[w[0]].position(), tree.nodes[w[1]].position());
            heading_from_delta(b[0] - a[0], b[1] - a[1]).ok()
        })
        .collect();
    Ok(chain
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let n = &tree.nodes[id];
            let heading = headings
                .get(k)
                .copied()
                .flatten()
                .or_else(|| k.checked_sub(1).and_then(|prev| headings.get(prev).copied().flatten()));
            PathPoint {
                node: id,
                state: n.state,
                input: n.first_input,
                stance: n.stance,
                heading,
            }
        })
        .collect())
}

fn barrier_values(barriers: &BarrierSpec, position: [f64; 2]) -> Vec<f64> {
    barriers.obstacles.iter().map(|o| o.barrier_value(position)).collect()
}

fn yaw(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

/// Everything the planners need besides their own configuration.
#[derive(Debug, Clone, Copy)]
pub struct PlanningContext<'a> {
    pub world: &'a World,
    pub barriers: &'a BarrierSpec,
    pub model: &'a StepModel,
    pub mpc: &'a MpcConfig,
}

fn check_start(ctx: &PlanningContext, start: &LipState) -> Result<(), PlannerError> {
    let pos = start.position();
    if !ctx.world.grid.is_free_position(pos) {
        return Err(PlannerError::StartNotFree { x: pos[0], y: pos[1] });
    }
    Ok(())
}

fn root_node(ctx: &PlanningContext, start: &LipState, stance: Stance) -> TreeNode {
    let pose = Pose::new(start.x, start.y, start.ydot.atan2(start.xdot));
    let info_state = ctx.world.information(&InfoState::empty(ctx.world.grid.len()), &pose);
    TreeNode {
        state: *start,
        stance,
        cost: 0.0,
        info: info_state.total,
        info_state,
        first_input: None,
        parent: None,
        closed: false,
    }
}

// --- RRT ---------------------------------------------------------------------

/// Grows a tree by single receding-horizon steps toward uniform samples until
/// a node lands within `goal_radius` of `goal` or the sample cap is reached.
pub fn rrt_plan(
    start: &LipState,
    start_stance: Stance,
    goal: [f64; 2],
    ctx: &PlanningContext,
    config: &PlannerConfig,
    observer: &mut dyn PlanObserver,
) -> Result<PlanOutcome, PlannerError> {
    config.validate().map_err(PlannerError::InvalidConfig)?;
    check_start(ctx, start)?;
    let sampler = FreeSampler::new(&ctx.world.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut tree = PlanTree::new(root_node(ctx, start, start_stance));
    observer.node_added(0, &tree.nodes[0], &barrier_values(ctx.barriers, start.position()));
    if dist2(start.position(), goal) <= config.goal_radius.powi(2) {
        let path = extract_path(&tree, 0)?;
        return Ok(PlanOutcome {
            tree,
            termination: Termination::ReachedGoal,
            selected: Some(0),
            path,
        });
    }

    while tree.samples < config.max_samples {
        let x_rand = sampler.sample(&mut rng);
        tree.samples += 1;
        tree.n_sample += 1;
        let id = nearest(&tree, x_rand, false)?;
        let parent = &tree.nodes[id];
        let exp = dcbf_mpc_expand(&parent.state, parent.stance, x_rand, ctx.model, ctx.barriers, ctx.mpc)?;
        if !exp.is_feasible || !ctx.world.no_collision(parent.position(), exp.state.position()) {
            continue;
        }
        let pos = exp.state.position();
        let pose = Pose::new(pos[0], pos[1], yaw(parent.position(), pos));
        let info_state = ctx.world.information(&parent.info_state, &pose);
        let node = TreeNode {
            state: exp.state,
            stance: exp.stance,
            cost: parent.cost + cost_edge(parent.position(), pos, config.cost_mode),
            info: info_state.total,
            info_state,
            first_input: Some(exp.input),
            parent: Some(id),
            closed: false,
        };
        let new_id = tree.push(node);
        tree.n_sample = 0;
        observer.node_added(new_id, &tree.nodes[new_id], &barrier_values(ctx.barriers, pos));
        if dist2(pos, goal) <= config.goal_radius.powi(2) {
            let path = extract_path(&tree, new_id)?;
            return Ok(PlanOutcome {
                tree,
                termination: Termination::ReachedGoal,
                selected: Some(new_id),
                path,
            });
        }
    }
    Ok(PlanOutcome {
        tree,
        termination: Termination::SampleBudgetExhausted,
        selected: None,
        path: Vec::new(),
    })
}

// --- SAFE-IIG ----------------------------------------------------------------

/// Information-gathering tree search with dynamic feasibility and barrier
/// constraints on every edge, stopped once the windowed relative information
/// contribution falls to `delta_ric`.
pub fn safe_iig_plan(
    start: &LipState,
    start_stance: Stance,
    ctx: &PlanningContext,
    config: &PlannerConfig,
    observer: &mut dyn PlanObserver,
) -> Result<PlanOutcome, PlannerError> {
    config.validate().map_err(PlannerError::InvalidConfig)?;
    check_start(ctx, start)?;
    let sampler = FreeSampler::new(&ctx.world.grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut tree = PlanTree::new(root_node(ctx, start, start_stance));
    observer.node_added(0, &tree.nodes[0], &barrier_values(ctx.barriers, start.position()));

    let mut termination = Termination::SampleBudgetExhausted;
    'outer: while average_ric(&tree.ric_history, config.n_ric) > config.delta_ric {
        if tree.samples >= config.max_samples {
            break;
        }
        let x_sample = sampler.sample(&mut rng);
        tree.samples += 1;
        tree.n_sample += 1;
        let id = nearest(&tree, x_sample, true)?;
        let from = &tree.nodes[id];
        let feasible = dcbf_mpc_expand(&from.state, from.stance, x_sample, ctx.model, ctx.barriers, ctx.mpc)?;
        if !feasible.is_feasible {
            continue;
        }
        let x_feasible = feasible.state.position();
        for near_id in near(&tree, x_feasible, config.near_radius, true) {
            let n_near = &tree.nodes[near_id];
            let exp = dcbf_mpc_expand(
                &n_near.state,
                n_near.stance,
                x_feasible,
                ctx.model,
                ctx.barriers,
                ctx.mpc,
            )?;
            let pos = exp.state.position();
            if !exp.is_feasible || !ctx.world.no_collision(n_near.position(), pos) {
                continue;
            }
            let pose = Pose::new(pos[0], pos[1], yaw(n_near.position(), pos));
            let info_state = ctx.world.information(&n_near.info_state, &pose);
            let cost = n_near.cost + cost_edge(n_near.position(), pos, config.cost_mode);
            if prune(&tree, pos, cost, info_state.total, config.prune_epsilon) {
                continue;
            }
            let ric = relative_information(info_state.total, n_near.info, tree.n_sample);
            let node = TreeNode {
                state: exp.state,
                stance: exp.stance,
                cost,
                info: info_state.total,
                info_state,
                first_input: Some(exp.input),
                parent: Some(near_id),
                closed: cost > config.budget,
            };
            tree.ric_history.push(ric);
            observer.ric_appended(ric);
            tree.n_sample = 0;
            let new_id = tree.push(node);
            observer.node_added(new_id, &tree.nodes[new_id], &barrier_values(ctx.barriers, pos));
            if average_ric(&tree.ric_history, config.n_ric) <= config.delta_ric {
                break 'outer;
            }
        }
    }
    if average_ric(&tree.ric_history, config.n_ric) <= config.delta_ric {
        termination = Termination::Converged;
    }
    let selected = max_information_node(&tree);
    let path = extract_path(&tree, selected)?;
    Ok(PlanOutcome {
        tree,
        termination,
        selected: Some(selected),
        path,
    })
}

/// Node with the largest accumulated information; ties go to lower cost,
/// then to earlier insertion.
pub fn max_information_node(tree: &PlanTree) -> usize {
    let mut best = 0;
    for (i, n) in tree.nodes.iter().enumerate().skip(1) {
        let b = &tree.nodes[best];
        if n.info > b.info || (n.info == b.info && n.cost < b.cost) {
            best = i;
        }
    }
    best
}

/// Leaf with the smallest accumulated cost (the root if it has no children).
pub fn min_cost_leaf(tree: &PlanTree) -> usize {
    let mut has_child = vec![false; tree.len()];
    for (p, _) in tree.edges() {
        has_child[p] = true;
    }
    let mut best: Option<usize> = None;
    for (i, n) in tree.nodes.iter().enumerate() {
        if has_child[i] {
            continue;
        }
        if best.is_none_or(|b| n.cost < tree.nodes[b].cost) {
            best = Some(i);
        }
    }
    best.unwrap_or(0)
}
