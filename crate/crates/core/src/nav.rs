//! Navigation: route safety assessment against danger zones, deterministic
//! route refinement with a retry limit and waypoint-removal fallback, A*
//! local pathfinding on the occupancy grid, and the committed emergency
//! avoidance maneuver.

use crate::geom::{point_segment_distance, Pose2D, Vec2};
use crate::map_tool::{self, Route, WaypointGraph};
use crate::memory::{CellState, OccupancyGrid, SpatialMemory, DANGER_RADIUS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::SQRT_2;
use thiserror::Error;

/// Sentinels inside this radius count as threats for target selection.
pub const EMERGENCY_RANGE: f64 = 40.0;
/// Visual distance that starts (and, at rescan time, renews) an emergency
/// maneuver. Kept just above the ~20.1 m countdown trigger range: fleeing
/// every sentinel merely visible within the 40 m threat radius stalls
/// navigation outright whenever a route passes near one.
pub const EMERGENCY_TRIGGER_RANGE: f64 = 22.0;
/// Inside this distance the maneuver starts no matter where the sentinel
/// looks: a sweep at close range decrements too fast to outrun.
pub const HARD_FLEE_RANGE: f64 = 12.0;
/// Length of a committed avoidance maneuver, in steps.
pub const COMMITMENT_STEPS: u32 = 10;

/// Whether a sighted sentinel forces an emergency maneuver: within trigger
/// range and either dangerously close or with its view cone on (or about to
/// sweep onto) the agent. A sighting without a heading is assumed hostile.
pub fn threat_imminent(sentinel: &Pose2D, me: Vec2) -> bool {
    let d = sentinel.pos().distance(me);
    if d > EMERGENCY_TRIGGER_RANGE {
        return false;
    }
    if d <= HARD_FLEE_RANGE {
        return true;
    }
    match sentinel.heading {
        Some(h) => {
            let bearing = (me - sentinel.pos()).angle();
            crate::geom::angle_between(h, bearing)
                <= crate::scene::DEFAULT_FOV_HALF_ANGLE + 2.0 * crate::scene::DEFAULT_ANGULAR_RATE
        }
        None => true,
    }
}
/// A waypoint counts as reached within this distance.
pub const WAYPOINT_TOLERANCE: f64 = 1.5;
/// Refinement attempts before falling back to waypoint removal.
pub const DEFAULT_RETRY_LIMIT: u32 = 3;
/// Guard on the avoidance score's per-axis denominators, in meters.
pub const SCORE_DENOM_GUARD: f64 = 0.5;
/// Candidate window for emergency target selection, in cells per side.
pub const AVOIDANCE_WINDOW: usize = 80;

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("destination unreachable even ignoring danger")]
    NoRoute,
    #[error("no local path on the occupancy grid")]
    NoLocalPath,
    #[error("no viable avoidance target; staying put")]
    StayPut,
}

/// Where a route runs through a danger zone.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    pub safe: bool,
    /// (segment start index, offending zone center), in route order
    pub intersections: Vec<(usize, Vec2)>,
}

/// A route segment intersects a zone iff its minimum distance to the zone
/// center is within the danger radius.
pub fn assess_route_safety(route: &Route, danger_centers: &[Vec2], radius: f64) -> SafetyReport {
    let mut intersections = Vec::new();
    for (i, pair) in route.waypoints.windows(2).enumerate() {
        let (a, b) = (pair[0].pos(), pair[1].pos());
        for c in danger_centers {
            if point_segment_distance(*c, a, b) <= radius {
                intersections.push((i, *c));
            }
        }
    }
    SafetyReport {
        safe: intersections.is_empty(),
        intersections,
    }
}

/// Pluggable route proposer for the refinement loop. Implementations get the
/// waypoint graph as the schematic map plus the hazard context, and return a
/// candidate waypoint list that is then validated before use.
pub trait RouteRefiner {
    fn refine(
        &self,
        graph: &WaypointGraph,
        pose: Vec2,
        destination: Vec2,
        danger_centers: &[Vec2],
        reference: &Route,
    ) -> Option<Vec<Pose2D>>;
}

/// Deterministic refiner: shortest path on a copy of the graph with every
/// danger-intersecting edge removed.
pub struct DangerPrunedRefiner;

impl RouteRefiner for DangerPrunedRefiner {
    fn refine(
        &self,
        graph: &WaypointGraph,
        pose: Vec2,
        destination: Vec2,
        danger_centers: &[Vec2],
        _reference: &Route,
    ) -> Option<Vec<Pose2D>> {
        let nodes = graph.nodes().to_vec();
        let edges: Vec<(usize, usize, f64)> = graph
            .edges()
            .iter()
            .copied()
            .filter(|&(i, j, _)| {
                danger_centers.iter().all(|c| {
                    point_segment_distance(*c, nodes[i], nodes[j]) > DANGER_RADIUS
                })
            })
            .collect();
        let pruned = WaypointGraph::from_parts(nodes, edges);
        let route = map_tool::query_route(
            &pruned,
            Pose2D::point(pose.x, pose.y),
            Pose2D::point(destination.x, destination.y),
        )
        .ok()?;
        Some(route.waypoints)
    }
}

/// Build a danger-avoiding route to `destination`, retrying the refiner up
/// to `max_retries` times with validation through the map tool; on failure,
/// fall back to the original route with zone-intersecting waypoints removed.
pub fn refine_route(
    graph: &WaypointGraph,
    danger_centers: &[Vec2],
    pose: Vec2,
    destination: Vec2,
    max_retries: u32,
    refiner: &dyn RouteRefiner,
) -> Result<Route, NavError> {
    let original = map_tool::query_route(
        graph,
        Pose2D::point(pose.x, pose.y),
        Pose2D::point(destination.x, destination.y),
    )
    .map_err(|_| NavError::NoRoute)?;
    if assess_route_safety(&original, danger_centers, DANGER_RADIUS).safe {
        return Ok(original);
    }
    for _ in 0..max_retries {
        let Some(points) = refiner.refine(graph, pose, destination, danger_centers, &original)
        else {
            continue;
        };
        if points.len() < 2 {
            continue;
        }
        let Ok(validated) = map_tool::query_refined_route(graph, &points) else {
            continue;
        };
        if assess_route_safety(&validated, danger_centers, DANGER_RADIUS).safe {
            return Ok(validated);
        }
    }
    Ok(strip_danger_waypoints(&original, danger_centers))
}

/// The fallback: drop every waypoint inside a danger zone and re-stitch the
/// remainder. The raw endpoints always survive.
fn strip_danger_waypoints(route: &Route, danger_centers: &[Vec2]) -> Route {
    let last = route.waypoints.len().saturating_sub(1);
    let waypoints: Vec<Pose2D> = route
        .waypoints
        .iter()
        .enumerate()
        .filter(|(i, w)| {
            *i == 0
                || *i == last
                || danger_centers
                    .iter()
                    .all(|c| c.distance(w.pos()) > DANGER_RADIUS)
        })
        .map(|(_, w)| *w)
        .collect();
    let length = waypoints
        .windows(2)
        .map(|p| p[0].distance(&p[1]))
        .sum();
    Route {
        waypoints,
        node_path: Vec::new(),
        length,
    }
}

/// Read-only cell access for the A* planner, so it runs on whole grids and
/// on windowed views alike.
pub trait CostGrid {
    fn dims(&self) -> (usize, usize);
    fn state(&self, col: usize, row: usize) -> CellState;
}

impl CostGrid for OccupancyGrid {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn state(&self, col: usize, row: usize) -> CellState {
        OccupancyGrid::state(self, col, row)
    }
}

/// Exact path cost: `(straight + diag·√2) / 2` in doubled multiplier units,
/// kept as integers so equal costs compare equal bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Cost {
    straight: u64,
    diag: u64,
}

impl Cost {
    fn key(self) -> f64 {
        self.straight as f64 + self.diag as f64 * SQRT_2
    }
    fn value(self) -> f64 {
        (self.straight as f64 + self.diag as f64 * SQRT_2) / 2.0
    }
}

fn cell_mult_doubled(state: CellState) -> Option<u64> {
    match state {
        CellState::Free => Some(2),
        CellState::Unknown => Some(3),
        CellState::Danger => Some(40),
        CellState::Obstacle => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalPath {
    pub cells: Vec<(usize, usize)>,
    pub cost: f64,
}

struct OpenEntry {
    f: f64,
    g: Cost,
    cell: u32,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.f == other.f && self.g == other.g && self.cell == other.cell
    }
}
impl Eq for OpenEntry {}
impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap: smaller f first, then deterministic tie-breaks
        other
            .f
            .partial_cmp(&self.f)
            .unwrap()
            .then_with(|| (other.g.straight, other.g.diag).cmp(&(self.g.straight, self.g.diag)))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Octile-distance heuristic in doubled units (multiplier 1), admissible
/// because every traversable cell costs at least that much to enter.
fn octile(a: (usize, usize), b: (usize, usize)) -> Cost {
    let dx = a.0.abs_diff(b.0) as u64;
    let dy = a.1.abs_diff(b.1) as u64;
    Cost {
        straight: 2 * dx.abs_diff(dy),
        diag: 2 * dx.min(dy),
    }
}

/// 8-connected A* over cell states: straight moves cost 1, diagonals √2,
/// scaled ×1.5 entering Unknown and ×20 entering Danger; Obstacle blocks.
/// The returned cost is optimal under these weights.
pub fn plan_local_path(
    grid: &impl CostGrid,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<LocalPath, NavError> {
    let (w, h) = grid.dims();
    if start.0 >= w || start.1 >= h || goal.0 >= w || goal.1 >= h {
        return Err(NavError::NoLocalPath);
    }
    if grid.state(start.0, start.1) == CellState::Obstacle
        || grid.state(goal.0, goal.1) == CellState::Obstacle
    {
        return Err(NavError::NoLocalPath);
    }
    let idx = |c: (usize, usize)| (c.1 * w + c.0) as u32;
    let mut g: Vec<Option<Cost>> = vec![None; w * h];
    let mut parent: Vec<u32> = vec![u32::MAX; w * h];
    let mut closed: Vec<bool> = vec![false; w * h];
    let mut heap = std::collections::BinaryHeap::new();
    g[idx(start) as usize] = Some(Cost::default());
    heap.push(OpenEntry {
        f: octile(start, goal).key(),
        g: Cost::default(),
        cell: idx(start),
    });

    const STEPS: [(i64, i64); 8] = [
        (1, 0),
        (-1, 0),
        (0, 1),
        (0, -1),
        (1, 1),
        (1, -1),
        (-1, 1),
        (-1, -1),
    ];

    while let Some(OpenEntry { g: gu, cell, .. }) = heap.pop() {
        if closed[cell as usize] {
            continue;
        }
        closed[cell as usize] = true;
        let u = ((cell as usize % w), (cell as usize / w));
        if u == goal {
            let mut cells = vec![u];
            let mut at = cell;
            while parent[at as usize] != u32::MAX {
                at = parent[at as usize];
                cells.push(((at as usize % w), (at as usize / w)));
            }
            cells.reverse();
            return Ok(LocalPath {
                cells,
                cost: gu.value(),
            });
        }
        for (dc, dr) in STEPS {
            let (nc, nr) = (u.0 as i64 + dc, u.1 as i64 + dr);
            if nc < 0 || nr < 0 || nc as usize >= w || nr as usize >= h {
                continue;
            }
            let v = (nc as usize, nr as usize);
            let Some(mult) = cell_mult_doubled(grid.state(v.0, v.1)) else {
                continue;
            };
            let mut gv = gu;
            if dc != 0 && dr != 0 {
                gv.diag += mult;
            } else {
                gv.straight += mult;
            }
            let vi = idx(v) as usize;
            let better = match g[vi] {
                None => true,
                Some(old) => gv.key() < old.key(),
            };
            if better {
                g[vi] = Some(gv);
                parent[vi] = cell;
                let h_cost = octile(v, goal);
                heap.push(OpenEntry {
                    f: gv.key() + h_cost.key(),
                    g: gv,
                    cell: vi as u32,
                });
            }
        }
    }
    Err(NavError::NoLocalPath)
}

/// Directional avoidance score: negative means the candidate lies away from
/// the threats. Axis terms with a near-zero denominator contribute nothing.
pub fn avoidance_score(agent: Vec2, threats: &[Vec2], p: Vec2) -> f64 {
    let mut s = 0.0;
    for t in threats {
        let dx = t.x - agent.x;
        if dx.abs() >= SCORE_DENOM_GUARD {
            s += (p.x - agent.x) / dx;
        }
        let dy = t.y - agent.y;
        if dy.abs() >= SCORE_DENOM_GUARD {
            s += (p.y - agent.y) / dy;
        }
    }
    s
}

/// Candidate cells for emergency avoidance with their scores, already
/// filtered to valid (in-bounds, not Obstacle or Danger) positions below
/// the score cutoff.
fn window_candidates(
    grid: &OccupancyGrid,
    agent: Vec2,
    threats: &[Vec2],
    cutoff: f64,
) -> Vec<(Vec2, f64)> {
    let Some((ac, ar)) = grid.cell_of(agent) else {
        return Vec::new();
    };
    let half = (AVOIDANCE_WINDOW / 2) as i64;
    let mut out = Vec::new();
    for dr in -half..half {
        for dc in -half..half {
            let (c, r) = (ac as i64 + dc, ar as i64 + dr);
            if c < 0 || r < 0 || c as usize >= grid.width || r as usize >= grid.height {
                continue;
            }
            let state = grid.state(c as usize, r as usize);
            if state == CellState::Obstacle || state == CellState::Danger {
                continue;
            }
            let p = grid.cell_center(c as usize, r as usize);
            let s = avoidance_score(agent, threats, p);
            if s < cutoff {
                out.push((p, s));
            }
        }
    }
    out
}

/// Sampling weights over candidate scores: `exp(−(S − S_min)/(σ + ε))` with
/// σ the population standard deviation. The min-shift keeps the weights
/// finite; when every score is equal the distribution is uniform.
fn sample_weighted(candidates: &[(Vec2, f64)], rng: &mut ChaCha8Rng) -> Vec2 {
    debug_assert!(!candidates.is_empty());
    let n = candidates.len() as f64;
    let mean = candidates.iter().map(|(_, s)| s).sum::<f64>() / n;
    let var = candidates.iter().map(|(_, s)| (s - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let min = candidates.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = candidates
        .iter()
        .map(|(_, s)| (-(s - min) / (sigma + 1e-6)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return candidates[i].0;
        }
    }
    candidates.last().unwrap().0
}

/// Pick a temporary retreat target. Route waypoints that are valid and score
/// below zero are preferred (navigation continuity); otherwise sample from
/// the local window, widening the cutoff to S < 1 once before giving up.
pub fn select_avoidance_target(
    grid: &OccupancyGrid,
    agent: Vec2,
    threats: &[Vec2],
    planned_route: Option<&[Pose2D]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec2, NavError> {
    debug_assert!(!threats.is_empty());
    if let Some(route) = planned_route {
        let mut best: Option<(f64, Vec2)> = None;
        for w in route {
            let p = w.pos();
            match grid.state_at(p) {
                Some(CellState::Obstacle) | Some(CellState::Danger) | None => continue,
                _ => {}
            }
            let s = avoidance_score(agent, threats, p);
            if s < 0.0 && best.map_or(true, |(bs, _)| s < bs) {
                best = Some((s, p));
            }
        }
        if let Some((_, p)) = best {
            return Ok(p);
        }
    }
    for cutoff in [0.0, 1.0] {
        let candidates = window_candidates(grid, agent, threats, cutoff);
        if !candidates.is_empty() {
            return Ok(sample_weighted(&candidates, rng));
        }
    }
    Err(NavError::StayPut)
}

/// An in-flight emergency maneuver: move toward `target` for the remaining
/// steps, then rescan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvoidanceCommitment {
    pub target: Vec2,
    pub steps_remaining: u32,
}

/// What the navigator decided this step.
#[derive(Debug, Clone, PartialEq)]
pub enum NavStep {
    Move(Vec2),
    /// no local path or no viable avoidance target
    Blocked,
    Arrived,
}

#[derive(Debug)]
pub struct NavOutcome {
    pub step: NavStep,
    pub notes: Vec<String>,
}

/// Per-agent navigation state machine: follows the committed reference
/// route, re-refines it when danger zones touch it, and runs the emergency
/// maneuver when warned or when a sentinel closes within 40 m.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub commitment: Option<AvoidanceCommitment>,
    cursor: usize,
    seen_danger_version: u64,
    emergency_enabled: bool,
    retry_limit: u32,
}

pub struct NavInputs<'a> {
    pub graph: &'a WaypointGraph,
    pub pose: Vec2,
    pub speed: f64,
    /// warning signal received this step
    pub warned: bool,
    pub visible_sentinels: &'a [Pose2D],
    pub rng: &'a mut ChaCha8Rng,
}

impl Navigator {
    pub fn new(emergency_enabled: bool) -> Self {
        Navigator {
            commitment: None,
            cursor: 0,
            seen_danger_version: 0,
            emergency_enabled,
            retry_limit: DEFAULT_RETRY_LIMIT,
        }
    }

    /// Forget route progress (call after committing to a new route).
    pub fn reset_route(&mut self) {
        self.cursor = 0;
    }

    /// Index of the next reference-route waypoint to reach.
    pub fn route_cursor(&self) -> usize {
        self.cursor
    }

    pub fn step(&mut self, ctx: &mut NavInputs, mem: &mut SpatialMemory) -> NavOutcome {
        let mut notes = Vec::new();

        if self.emergency_enabled {
            let threats: Vec<Vec2> = ctx
                .visible_sentinels
                .iter()
                .map(Pose2D::pos)
                .filter(|s| s.distance(ctx.pose) <= EMERGENCY_RANGE)
                .collect();
            let close_threat = ctx
                .visible_sentinels
                .iter()
                .any(|s| threat_imminent(s, ctx.pose));
            if self.commitment.is_none() && (ctx.warned || close_threat) && !threats.is_empty() {
                let remaining = mem
                    .plan
                    .reference_route
                    .as_ref()
                    .map(|r| &r.waypoints[self.cursor.min(r.waypoints.len())..]);
                match select_avoidance_target(&mem.occupancy, ctx.pose, &threats, remaining, ctx.rng) {
                    Ok(target) => {
                        self.commitment = Some(AvoidanceCommitment {
                            target,
                            steps_remaining: COMMITMENT_STEPS,
                        });
                        notes.push(format!("avoidance commit -> ({:.1}, {:.1})", target.x, target.y));
                    }
                    Err(_) => {
                        notes.push("avoidance: no viable target, staying put".into());
                        return NavOutcome {
                            step: NavStep::Blocked,
                            notes,
                        };
                    }
                }
            } else if self.commitment.is_none() && ctx.warned && threats.is_empty() {
                // warned by an unseen sentinel: retreat from the spot ahead
                // by treating the current pose surroundings as unknown threat;
                // fall through to route following (nothing to aim away from)
                notes.push("warning without a visible threat".into());
            }

            if let Some(mut c) = self.commitment.take() {
                let step = self.move_toward(ctx, mem, c.target);
                c.steps_remaining -= 1;
                if c.steps_remaining > 0 {
                    self.commitment = Some(c);
                } else {
                    notes.push("avoidance commitment expired; rescanning".into());
                }
                return NavOutcome { step, notes };
            }
        }

        // normal mode: follow the reference route
        let Some(place) = mem.plan.place.clone() else {
            return NavOutcome {
                step: NavStep::Blocked,
                notes,
            };
        };
        let destination = match mem.plan.reference_route.as_ref().and_then(Route::destination) {
            Some(d) => d,
            None => {
                return NavOutcome {
                    step: NavStep::Blocked,
                    notes,
                }
            }
        };

        // re-refine when the danger set has changed and now touches the route
        let version = mem.occupancy.danger_version();
        if version != self.seen_danger_version {
            self.seen_danger_version = version;
            let centers = mem.occupancy.danger_centers();
            let remaining_unsafe = mem
                .plan
                .reference_route
                .as_ref()
                .map(|r| !assess_route_safety(r, &centers, DANGER_RADIUS).safe)
                .unwrap_or(false);
            if remaining_unsafe {
                match refine_route(
                    ctx.graph,
                    &centers,
                    ctx.pose,
                    destination,
                    self.retry_limit,
                    &DangerPrunedRefiner,
                ) {
                    Ok(route) => {
                        notes.push(format!("route to <{place}> refined, {} waypoints", route.waypoints.len()));
                        mem.plan.reference_route = Some(route);
                        self.cursor = 0;
                    }
                    Err(e) => notes.push(format!("route refinement failed: {e}")),
                }
            }
        }

        let route = mem.plan.reference_route.as_ref().unwrap();
        while self.cursor < route.waypoints.len()
            && route.waypoints[self.cursor].pos().distance(ctx.pose) <= WAYPOINT_TOLERANCE
        {
            self.cursor += 1;
        }
        if self.cursor >= route.waypoints.len() {
            return NavOutcome {
                step: NavStep::Arrived,
                notes,
            };
        }
        let target = route.waypoints[self.cursor].pos();
        let step = self.move_toward(ctx, mem, target);
        NavOutcome { step, notes }
    }

    /// One velocity toward `target` along the local A* path.
    fn move_toward(&self, ctx: &mut NavInputs, mem: &SpatialMemory, target: Vec2) -> NavStep {
        let grid = &mem.occupancy;
        let (Some(start), Some(goal)) = (grid.cell_of(ctx.pose), grid.cell_of(target)) else {
            // off-grid target: head straight at it
            return NavStep::Move((target - ctx.pose).clamp_norm(ctx.speed));
        };
        if start == goal {
            return NavStep::Move((target - ctx.pose).clamp_norm(ctx.speed));
        }
        // generous margin: a tight window around the endpoints forces the
        // path through whatever sliver the box happens to contain
        let margin = (20.0 / grid.cell_size) as usize;
        let col0 = start.0.min(goal.0).saturating_sub(margin);
        let row0 = start.1.min(goal.1).saturating_sub(margin);
        let col1 = (start.0.max(goal.0) + margin + 1).min(grid.width);
        let row1 = (start.1.max(goal.1) + margin + 1).min(grid.height);
        let window = GridWindow {
            grid,
            col0,
            row0,
            width: col1 - col0,
            height: row1 - row0,
        };
        let rel = |c: (usize, usize)| (c.0 - col0, c.1 - row0);
        match plan_local_path(&window, rel(start), rel(goal)) {
            Ok(path) => {
                // aim a couple of cells along the path so one step uses full speed
                let lookahead = ((ctx.speed / grid.cell_size).ceil() as usize).max(1);
                let k = lookahead.min(path.cells.len() - 1);
                let (c, r) = path.cells[k];
                let aim = grid.cell_center(c + col0, r + row0);
                NavStep::Move((aim - ctx.pose).clamp_norm(ctx.speed))
            }
            Err(_) => NavStep::Blocked,
        }
    }
}

struct GridWindow<'a> {
    grid: &'a OccupancyGrid,
    col0: usize,
    row0: usize,
    width: usize,
    height: usize,
}

impl CostGrid for GridWindow<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
    fn state(&self, col: usize, row: usize) -> CellState {
        self.grid.state(self.col0 + col, self.row0 + row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_tool::build_waypoint_graph;
    use crate::scene::{ObstacleGrid, SceneSpec};
    use rand::SeedableRng;

    fn route_of(points: &[(f64, f64)]) -> Route {
        let waypoints: Vec<Pose2D> = points.iter().map(|&(x, y)| Pose2D::point(x, y)).collect();
        let length = waypoints.windows(2).map(|p| p[0].distance(&p[1])).sum();
        Route {
            waypoints,
            node_path: Vec::new(),
            length,
        }
    }

    #[test]
    fn safety_assessment_flags_close_passes() {
        let route = route_of(&[(0.0, 0.0), (40.0, 0.0)]);
        let report = assess_route_safety(&route, &[Vec2::new(20.0, 5.0)], DANGER_RADIUS);
        assert!(!report.safe);
        assert_eq!(report.intersections.len(), 1);
        assert_eq!(report.intersections[0].0, 0);

        let clear = assess_route_safety(&route, &[Vec2::new(20.0, 12.0)], DANGER_RADIUS);
        assert!(clear.safe);
        assert!(assess_route_safety(&route, &[], DANGER_RADIUS).safe);
    }

    /// Two parallel east-west streets joined by north-south connectors.
    fn ladder_scene() -> SceneSpec {
        SceneSpec {
            name: "ladder".into(),
            extent: (100.0, 60.0),
            road_segments: vec![
                vec![Pose2D::point(0.0, 10.0), Pose2D::point(100.0, 10.0)],
                vec![Pose2D::point(0.0, 50.0), Pose2D::point(100.0, 50.0)],
                vec![Pose2D::point(0.0, 10.0), Pose2D::point(0.0, 50.0)],
                vec![Pose2D::point(98.0, 10.0), Pose2D::point(98.0, 50.0)],
            ],
            coarse_obstacle_grid: ObstacleGrid::new(1.0, 100, 60),
            places: Vec::new(),
            agent_roster: Vec::new(),
            sentinel_roster: Vec::new(),
            rng_seed: 0,
        }
    }

    #[test]
    fn refinement_detours_around_a_zone() {
        let scene = ladder_scene();
        let g = build_waypoint_graph(&scene);
        let start = Vec2::new(0.0, 10.0);
        let dest = Vec2::new(98.0, 10.0);
        let zone = vec![Vec2::new(50.0, 10.0)];
        let direct = map_tool::query_route(
            &g,
            Pose2D::point(start.x, start.y),
            Pose2D::point(dest.x, dest.y),
        )
        .unwrap();
        let refined =
            refine_route(&g, &zone, start, dest, DEFAULT_RETRY_LIMIT, &DangerPrunedRefiner).unwrap();
        let report = assess_route_safety(&refined, &zone, DANGER_RADIUS);
        assert!(report.safe, "detour must clear the zone by more than {DANGER_RADIUS} m");
        assert!(refined.length > direct.length, "detour is longer than the straight street");
    }

    #[test]
    fn no_zones_returns_the_original_route() {
        let scene = ladder_scene();
        let g = build_waypoint_graph(&scene);
        let start = Vec2::new(0.0, 10.0);
        let dest = Vec2::new(98.0, 10.0);
        let direct = map_tool::query_route(
            &g,
            Pose2D::point(start.x, start.y),
            Pose2D::point(dest.x, dest.y),
        )
        .unwrap();
        let refined =
            refine_route(&g, &[], start, dest, DEFAULT_RETRY_LIMIT, &DangerPrunedRefiner).unwrap();
        assert_eq!(refined, direct);
    }

    #[test]
    fn severed_graph_falls_back_to_waypoint_removal() {
        // single street: the zone cuts the only way through
        let scene = SceneSpec {
            road_segments: vec![vec![Pose2D::point(0.0, 10.0), Pose2D::point(100.0, 10.0)]],
            ..ladder_scene()
        };
        let g = build_waypoint_graph(&scene);
        let start = Vec2::new(0.0, 10.0);
        let dest = Vec2::new(98.0, 10.0);
        let zone = vec![Vec2::new(49.0, 10.0)];
        let original = map_tool::query_route(
            &g,
            Pose2D::point(start.x, start.y),
            Pose2D::point(dest.x, dest.y),
        )
        .unwrap();
        let fallback =
            refine_route(&g, &zone, start, dest, DEFAULT_RETRY_LIMIT, &DangerPrunedRefiner).unwrap();
        let expected: Vec<Pose2D> = original
            .waypoints
            .iter()
            .copied()
            .enumerate()
            .filter(|(i, w)| {
                *i == 0
                    || *i == original.waypoints.len() - 1
                    || w.pos().distance(zone[0]) > DANGER_RADIUS
            })
            .map(|(_, w)| w)
            .collect();
        assert_eq!(fallback.waypoints, expected);
        assert!(fallback.waypoints.len() < original.waypoints.len());
    }

    fn grid_from(rows: &[&str]) -> OccupancyGrid {
        let h = rows.len();
        let w = rows[0].len();
        let mut g = OccupancyGrid::new(Vec2::ZERO, w as f64, h as f64, 1.0);
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let state = match ch {
                    '.' => CellState::Free,
                    '#' => CellState::Obstacle,
                    '?' => CellState::Unknown,
                    '!' => CellState::Danger,
                    _ => panic!("bad glyph"),
                };
                g.set_state(c, r, state);
            }
        }
        g
    }

    #[test]
    fn diagonal_shortcut_costs_two_root_two() {
        let g = grid_from(&["...", "...", "..."]);
        let p = plan_local_path(&g, (0, 0), (2, 2)).unwrap();
        assert_eq!(p.cost, 2.0 * SQRT_2);
        assert_eq!(p.cells.len(), 3);
    }

    #[test]
    fn wall_detour_matches_uniform_cost_oracle() {
        let g = grid_from(&[
            ".....",
            ".###.",
            ".#...",
            ".#.#.",
            ".....",
        ]);
        let path = plan_local_path(&g, (0, 0), (4, 4)).unwrap();
        let oracle = dijkstra_oracle(&g, (0, 0), (4, 4)).unwrap();
        assert_eq!(path.cost, oracle);
    }

    #[test]
    fn ringed_goal_has_no_path() {
        let g = grid_from(&[
            ".....",
            ".###.",
            ".#.#.",
            ".###.",
            ".....",
        ]);
        assert_eq!(plan_local_path(&g, (0, 0), (2, 2)), Err(NavError::NoLocalPath));
    }

    /// Independent uniform-cost search used as the optimality oracle.
    fn dijkstra_oracle(grid: &impl CostGrid, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
        let (w, h) = grid.dims();
        let mult = |c: usize, r: usize| match grid.state(c, r) {
            CellState::Free => Some(2u64),
            CellState::Unknown => Some(3),
            CellState::Danger => Some(40),
            CellState::Obstacle => None,
        };
        mult(start.0, start.1)?;
        mult(goal.0, goal.1)?;
        let mut dist: Vec<Option<(u64, u64)>> = vec![None; w * h];
        dist[start.1 * w + start.0] = Some((0, 0));
        let mut frontier: Vec<(usize, usize)> = vec![start];
        // naive: settle by repeatedly scanning (fine for tiny test grids)
        let mut settled = vec![false; w * h];
        loop {
            let mut best: Option<((usize, usize), (u64, u64), f64)> = None;
            for &cell in &frontier {
                let i = cell.1 * w + cell.0;
                if settled[i] {
                    continue;
                }
                if let Some((a, b)) = dist[i] {
                    let k = a as f64 + b as f64 * SQRT_2;
                    if best.map_or(true, |(_, _, bk)| k < bk) {
                        best = Some((cell, (a, b), k));
                    }
                }
            }
            let Some((u, (ga, gb), _)) = best else { return None };
            settled[u.1 * w + u.0] = true;
            if u == goal {
                return Some((ga as f64 + gb as f64 * SQRT_2) / 2.0);
            }
            for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
                let (nc, nr) = (u.0 as i64 + dc, u.1 as i64 + dr);
                if nc < 0 || nr < 0 || nc as usize >= w || nr as usize >= h {
                    continue;
                }
                let v = (nc as usize, nr as usize);
                let Some(m) = mult(v.0, v.1) else { continue };
                let next = if dc != 0 && dr != 0 { (ga, gb + m) } else { (ga + m, gb) };
                let vi = v.1 * w + v.0;
                let better = match dist[vi] {
                    None => true,
                    Some((a, b)) => {
                        next.0 as f64 + next.1 as f64 * SQRT_2 < a as f64 + b as f64 * SQRT_2
                    }
                };
                if better {
                    dist[vi] = Some(next);
                    frontier.push(v);
                }
            }
        }
    }

    #[test]
    fn avoidance_score_fixtures() {
        let a = Vec2::ZERO;
        assert!((avoidance_score(a, &[Vec2::new(10.0, 10.0)], Vec2::new(-5.0, -5.0)) + 1.0).abs() < 1e-9);
        assert!((avoidance_score(a, &[Vec2::new(10.0, 10.0)], Vec2::new(5.0, 5.0)) - 1.0).abs() < 1e-9);
        // y-denominator guarded: only the x-term contributes
        assert!((avoidance_score(a, &[Vec2::new(10.0, 0.0)], Vec2::new(-10.0, 3.0)) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn retreat_direction_scores_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let s = Vec2::new(
                a.x + rng.random_range(1.0..15.0),
                a.y + rng.random_range(1.0..15.0),
            );
            let lambda = rng.random_range(0.1..3.0);
            let p = a + (a - s) * lambda;
            assert!(avoidance_score(a, &[s], p) < 0.0);
        }
    }

    #[test]
    fn symmetric_threats_sample_uniformly() {
        let grid = OccupancyGrid::new(Vec2::new(-25.0, -25.0), 50.0, 50.0, 0.5);
        let a = Vec2::ZERO;
        let threats = vec![Vec2::new(10.0, 0.0), Vec2::new(-10.0, 0.0)];
        // x-terms cancel for every candidate; y-terms are guarded (dy = 0)
        let candidates = window_candidates(&grid, a, &threats, 1.0);
        assert!(!candidates.is_empty());
        assert!(candidates.iter().all(|(_, s)| s.abs() < 1e-9));
        // all-equal scores produce equal weights: sampling just picks uniformly
        let mut rng1 = ChaCha8Rng::seed_from_u64(9);
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let t1 = select_avoidance_target(&grid, a, &threats, None, &mut rng1).unwrap();
        let t2 = select_avoidance_target(&grid, a, &threats, None, &mut rng2).unwrap();
        assert_eq!(t1, t2, "same seed, same target");
    }

    #[test]
    fn sampled_targets_score_negative_when_possible() {
        let grid = OccupancyGrid::new(Vec2::new(-25.0, -25.0), 50.0, 50.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let a = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let s = Vec2::new(rng.random_range(6.0..15.0), rng.random_range(6.0..15.0));
            let t = select_avoidance_target(&grid, a, &[s], None, &mut rng).unwrap();
            assert!(
                avoidance_score(a, &[s], t) < 0.0,
                "trial {trial}: target {t:?} not away from {s:?}"
            );
        }
    }

    #[test]
    fn route_waypoint_with_negative_score_is_preferred() {
        let grid = OccupancyGrid::new(Vec2::new(-25.0, -25.0), 50.0, 50.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Vec2::ZERO;
        let threats = [Vec2::new(10.0, 10.0)];
        let route = [
            Pose2D::point(4.0, 4.0),   // toward the threat: S > 0
            Pose2D::point(-6.0, -2.0), // away: S < 0
            Pose2D::point(-8.0, -8.0), // further away: smaller S
        ];
        let t = select_avoidance_target(&grid, a, &threats, Some(&route), &mut rng).unwrap();
        assert_eq!(t, Vec2::new(-8.0, -8.0));
    }

    #[test]
    fn commitment_runs_exactly_ten_moves_then_rescans() {
        let scene = ladder_scene();
        let g = build_waypoint_graph(&scene);
        let mut mem = SpatialMemory::new(scene.extent, 0.5, 15.0);
        let dest = Vec2::new(98.0, 10.0);
        let route = map_tool::query_route(&g, Pose2D::point(0.0, 10.0), Pose2D::point(dest.x, dest.y)).unwrap();
        mem.plan.commit("East End".into(), route);
        let mut nav = Navigator::new(true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pose = Vec2::new(0.0, 10.0);

        let sentinel = [Pose2D::point(20.0, 10.0)];
        let mut moves = 0;
        for step in 0..COMMITMENT_STEPS {
            let mut ctx = NavInputs {
                graph: &g,
                pose,
                speed: 1.0,
                warned: step == 0,
                visible_sentinels: &sentinel,
                rng: &mut rng,
            };
            let out = nav.step(&mut ctx, &mut mem);
            match out.step {
                NavStep::Move(v) => {
                    moves += 1;
                    pose = pose + v;
                }
                other => panic!("expected Move during commitment, got {other:?}"),
            }
            if step + 1 < COMMITMENT_STEPS {
                assert!(nav.commitment.is_some());
            }
        }
        assert_eq!(moves, COMMITMENT_STEPS);
        assert!(nav.commitment.is_none(), "expired after 10 moves");

        // threat gone: next step resumes the reference route
        let mut ctx = NavInputs {
            graph: &g,
            pose,
            speed: 1.0,
            warned: false,
            visible_sentinels: &[],
            rng: &mut rng,
        };
        let out = nav.step(&mut ctx, &mut mem);
        assert!(matches!(out.step, NavStep::Move(_)));
        assert!(nav.commitment.is_none());

        // still cornered at rescan time: a fresh commitment spins up
        let mut ctx = NavInputs {
            graph: &g,
            pose: Vec2::new(14.0, 10.0), // 6 m from the sentinel
            speed: 1.0,
            warned: false,
            visible_sentinels: &sentinel,
            rng: &mut rng,
        };
        nav.step(&mut ctx, &mut mem);
        assert!(nav.commitment.is_some());
    }

    #[test]
    fn unsafe_route_triggers_one_refinement() {
        let scene = ladder_scene();
        let g = build_waypoint_graph(&scene);
        let mut mem = SpatialMemory::new(scene.extent, 0.5, 15.0);
        let start = Vec2::new(0.0, 10.0);
        let dest = Vec2::new(98.0, 10.0);
        let route = map_tool::query_route(&g, Pose2D::point(start.x, start.y), Pose2D::point(dest.x, dest.y)).unwrap();
        mem.plan.commit("East End".into(), route.clone());
        let mut nav = Navigator::new(false); // isolate the refinement path
        let mut rng = ChaCha8Rng::seed_from_u64(1);

        // a reported sentinel on the south street flips the route unsafe
        mem.occupancy.mark_danger_zone(Vec2::new(50.0, 10.0), start);
        let mut ctx = NavInputs {
            graph: &g,
            pose: start,
            speed: 1.0,
            warned: false,
            visible_sentinels: &[],
            rng: &mut rng,
        };
        let out = nav.step(&mut ctx, &mut mem);
        assert!(out.notes.iter().any(|n| n.contains("refined")), "{:?}", out.notes);
        let new_route = mem.plan.reference_route.clone().unwrap();
        assert_ne!(new_route.waypoints, route.waypoints);
        assert!(assess_route_safety(&new_route, &mem.occupancy.danger_centers(), DANGER_RADIUS).safe);

        // no further refinement on the next step (version unchanged)
        let mut ctx = NavInputs {
            graph: &g,
            pose: start,
            speed: 1.0,
            warned: false,
            visible_sentinels: &[],
            rng: &mut rng,
        };
        let out2 = nav.step(&mut ctx, &mut mem);
        assert!(!out2.notes.iter().any(|n| n.contains("refined")));
    }
}
