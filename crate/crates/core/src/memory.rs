//! Per-agent spatial memory: a fine occupancy grid with danger zones, the
//! pose registry, the ETA map, and the meeting plan, plus min-max meeting
//! place selection.

use crate::geom::{Pose2D, Vec2};
use crate::map_tool::Route;
use crate::protocol::Eta;
use crate::scene::ObstacleGrid;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

/// Danger-zone radius around a known sentinel position, in meters.
pub const DANGER_RADIUS: f64 = 10.0;
/// The hyperbolic constraint threshold is τ = 0.8 · d(agent, sentinel);
/// the factor keeps the zone from enclosing the agent's own cell.
pub const TAU_FACTOR: f64 = 0.8;
/// Default fine-grid resolution for local navigation.
pub const FINE_CELL_SIZE: f64 = 0.5;
/// Default radius out to which visual observations update the grid.
pub const PERCEPTION_RANGE: f64 = 20.0;
/// Own-ETA samples on the committed route are spaced this many seconds.
pub const ETA_SAMPLE_INTERVAL: u32 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CellState {
    Unknown,
    Free,
    Obstacle,
    Danger,
}

type CenterKey = (i64, i64);

fn center_key(p: Vec2) -> CenterKey {
    ((p.x * 100.0).round() as i64, (p.y * 100.0).round() as i64)
}

/// Fine occupancy raster with danger bookkeeping. Each danger cell records
/// the sentinel position that caused it so zones can be cleared when that
/// spot is re-observed empty.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    pub origin: Vec2,
    pub width: usize,
    pub height: usize,
    cells: Vec<CellState>,
    danger_source: HashMap<u32, CenterKey>,
    /// center key → (position, live danger-cell count)
    centers: BTreeMap<CenterKey, (Vec2, u32)>,
    /// bumps when the set of zone centers changes (not on per-cell re-marks);
    /// navigation re-assesses the reference route on change
    danger_version: u64,
}

impl OccupancyGrid {
    pub fn new(origin: Vec2, width_m: f64, height_m: f64, cell_size: f64) -> Self {
        let width = (width_m / cell_size).ceil() as usize;
        let height = (height_m / cell_size).ceil() as usize;
        OccupancyGrid {
            cell_size,
            origin,
            width,
            height,
            cells: vec![CellState::Unknown; width * height],
            danger_source: HashMap::new(),
            centers: BTreeMap::new(),
            danger_version: 0,
        }
    }

    #[inline]
    fn idx(&self, col: usize, row: usize) -> u32 {
        (row * self.width + col) as u32
    }

    pub fn state(&self, col: usize, row: usize) -> CellState {
        self.cells[row * self.width + col]
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let col = ((p.x - self.origin.x) / self.cell_size).floor();
        let row = ((p.y - self.origin.y) / self.cell_size).floor();
        if col < 0.0 || row < 0.0 {
            return None;
        }
        let (mut col, mut row) = (col as usize, row as usize);
        // far boundary belongs to the last cell
        if col == self.width && p.x - self.origin.x <= self.width as f64 * self.cell_size {
            col -= 1;
        }
        if row == self.height && p.y - self.origin.y <= self.height as f64 * self.cell_size {
            row -= 1;
        }
        (col < self.width && row < self.height).then_some((col, row))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn state_at(&self, p: Vec2) -> Option<CellState> {
        self.cell_of(p).map(|(c, r)| self.state(c, r))
    }

    pub fn is_danger_at(&self, p: Vec2) -> bool {
        self.state_at(p) == Some(CellState::Danger)
    }

    pub fn danger_version(&self) -> u64 {
        self.danger_version
    }

    /// Positions of all sentinels that currently have live danger cells.
    pub fn danger_centers(&self) -> Vec<Vec2> {
        self.centers
            .values()
            .filter(|(_, count)| *count > 0)
            .map(|(p, _)| *p)
            .collect()
    }

    fn set_plain(&mut self, col: usize, row: usize, state: CellState) {
        let idx = self.idx(col, row);
        if self.cells[idx as usize] == CellState::Danger {
            self.clear_danger_bookkeeping(idx);
        }
        self.cells[idx as usize] = state;
    }

    /// Assign a cell state directly. A Danger cell written this way records
    /// its own center as the source zone.
    pub fn set_state(&mut self, col: usize, row: usize, state: CellState) {
        match state {
            CellState::Danger => {
                let center = self.cell_center(col, row);
                self.set_danger(col, row, center);
            }
            other => self.set_plain(col, row, other),
        }
    }

    fn clear_danger_bookkeeping(&mut self, idx: u32) {
        if let Some(key) = self.danger_source.remove(&idx) {
            if let Some((_, count)) = self.centers.get_mut(&key) {
                *count = count.saturating_sub(1);
                if *count == 0 {
                    self.centers.remove(&key);
                    self.danger_version += 1;
                }
            }
        }
    }

    fn set_danger(&mut self, col: usize, row: usize, source: Vec2) {
        let idx = self.idx(col, row);
        let key = center_key(source);
        if self.cells[idx as usize] == CellState::Danger {
            if self.danger_source.get(&idx) == Some(&key) {
                return;
            }
            self.clear_danger_bookkeeping(idx);
        }
        self.cells[idx as usize] = CellState::Danger;
        self.danger_source.insert(idx, key);
        if !self.centers.contains_key(&key) {
            self.danger_version += 1;
            self.centers.insert(key, (source, 0));
        }
        self.centers.get_mut(&key).unwrap().1 += 1;
    }

    /// Mark the danger zone for a sentinel at `s` as seen by an agent at `a`:
    /// every non-obstacle cell `p` with ‖p−s‖ ≤ r and d(p,s) − d(p,a) < τ,
    /// τ = 0.8·d(a,s). The boundary of the second constraint is a hyperbola,
    /// so the zone grows away from the agent instead of enclosing it; the
    /// agent's own cell is never marked.
    pub fn mark_danger_zone(&mut self, s: Vec2, a: Vec2) {
        let tau = TAU_FACTOR * a.distance(s);
        let own = self.cell_of(a);
        let min_c = ((s.x - DANGER_RADIUS - self.origin.x) / self.cell_size).floor().max(0.0) as usize;
        let min_r = ((s.y - DANGER_RADIUS - self.origin.y) / self.cell_size).floor().max(0.0) as usize;
        let max_c = (((s.x + DANGER_RADIUS - self.origin.x) / self.cell_size).ceil() as usize).min(self.width);
        let max_r = (((s.y + DANGER_RADIUS - self.origin.y) / self.cell_size).ceil() as usize).min(self.height);
        for row in min_r..max_r {
            for col in min_c..max_c {
                if own == Some((col, row)) {
                    continue;
                }
                let p = self.cell_center(col, row);
                if p.distance(s) <= DANGER_RADIUS && p.distance(s) - p.distance(a) < tau {
                    if self.state(col, row) != CellState::Obstacle {
                        self.set_danger(col, row, s);
                    }
                }
            }
        }
    }

    /// Debug raster: `.` free, `#` obstacle, `!` danger, `?` unknown.
    /// Rows are printed north-up (last grid row first).
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.push(match self.state(col, row) {
                    CellState::Unknown => '?',
                    CellState::Free => '.',
                    CellState::Obstacle => '#',
                    CellState::Danger => '!',
                });
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EtaEntry {
    pub value: Eta,
    pub timestamp: u32,
}

/// (place, agent) → latest ETA claim. Self entries come from map-tool
/// routes, peer entries from messages; newer reports overwrite older ones.
#[derive(Debug, Clone, Default)]
pub struct EtaMap {
    entries: BTreeMap<(String, String), EtaEntry>,
}

impl EtaMap {
    pub fn update(&mut self, place: &str, agent: &str, value: Eta, timestamp: u32) {
        let key = (place.to_string(), agent.to_string());
        match self.entries.get(&key) {
            Some(e) if e.timestamp > timestamp => {}
            _ => {
                self.entries.insert(key, EtaEntry { value, timestamp });
            }
        }
    }

    pub fn get(&self, place: &str, agent: &str) -> Option<EtaEntry> {
        self.entries
            .get(&(place.to_string(), agent.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &EtaEntry)> {
        self.entries.iter()
    }
}

/// Last known positions, from messages and map queries.
#[derive(Debug, Clone, Default)]
pub struct PoseRegistry {
    agents: BTreeMap<String, (Pose2D, u32)>,
    sentinels: BTreeMap<CenterKey, (Pose2D, u32)>,
}

impl PoseRegistry {
    pub fn update_agent(&mut self, name: &str, pose: Pose2D, timestamp: u32) {
        match self.agents.get(name) {
            Some((_, ts)) if *ts > timestamp => {}
            _ => {
                self.agents.insert(name.to_string(), (pose, timestamp));
            }
        }
    }

    pub fn agent(&self, name: &str) -> Option<(Pose2D, u32)> {
        self.agents.get(name).copied()
    }

    pub fn agents(&self) -> &BTreeMap<String, (Pose2D, u32)> {
        &self.agents
    }

    pub fn update_sentinel(&mut self, pose: Pose2D, timestamp: u32) {
        let key = center_key(pose.pos());
        match self.sentinels.get(&key) {
            Some((_, ts)) if *ts > timestamp => {}
            _ => {
                self.sentinels.insert(key, (pose, timestamp));
            }
        }
    }

    pub fn sentinels(&self) -> impl Iterator<Item = &(Pose2D, u32)> {
        self.sentinels.values()
    }

    pub fn knows_sentinel_near(&self, p: Vec2, radius: f64) -> bool {
        self.sentinels
            .values()
            .any(|(pose, _)| pose.pos().distance(p) <= radius)
    }
}

/// The negotiated meeting place and the route the agent intends to follow.
#[derive(Debug, Clone, Default)]
pub struct MeetingPlan {
    pub place: Option<String>,
    pub reference_route: Option<Route>,
    pub committed: bool,
    /// own-ETA samples (timestamp, seconds), spaced [`ETA_SAMPLE_INTERVAL`]
    pub eta_history: Vec<(u32, u32)>,
}

impl MeetingPlan {
    pub fn commit(&mut self, place: String, route: Route) {
        self.place = Some(place);
        self.reference_route = Some(route);
        self.committed = true;
        self.eta_history.clear();
    }

    pub fn clear(&mut self) {
        *self = MeetingPlan::default();
    }

    pub fn sample_eta(&mut self, now: u32, eta_seconds: u32) {
        match self.eta_history.last() {
            Some((ts, _)) if now.saturating_sub(*ts) < ETA_SAMPLE_INTERVAL => {}
            _ => self.eta_history.push((now, eta_seconds)),
        }
    }
}

/// Everything one agent remembers about the world.
#[derive(Debug, Clone)]
pub struct SpatialMemory {
    pub occupancy: OccupancyGrid,
    pub etas: EtaMap,
    pub registry: PoseRegistry,
    pub plan: MeetingPlan,
    perception_range: f64,
    last_integration: Option<((usize, usize), Vec<CenterKey>)>,
}

impl SpatialMemory {
    pub fn new(extent: (f64, f64), cell_size: f64, perception_range: f64) -> Self {
        SpatialMemory {
            occupancy: OccupancyGrid::new(Vec2::ZERO, extent.0, extent.1, cell_size),
            etas: EtaMap::default(),
            registry: PoseRegistry::default(),
            plan: MeetingPlan::default(),
            perception_range,
            last_integration: None,
        }
    }

    /// Memory for an episode agent. The coarse obstacle grid is global
    /// structural information available from the start, so building cells
    /// are pre-marked Obstacle; free space still has to be observed.
    pub fn for_scene(scene: &crate::scene::SceneSpec) -> Self {
        let mut mem = SpatialMemory::new(scene.extent, FINE_CELL_SIZE, PERCEPTION_RANGE);
        let grid = &mut mem.occupancy;
        for row in 0..grid.height {
            for col in 0..grid.width {
                let center = grid.cell_center(col, row);
                if scene.coarse_obstacle_grid.blocked(center) {
                    grid.cells[row * grid.width + col] = CellState::Obstacle;
                }
            }
        }
        mem
    }

    pub fn perception_range(&self) -> f64 {
        self.perception_range
    }

    /// Fold one step's visual field into the grid: cells along clear sight
    /// lines become Free, the first blocking cell on each ray becomes
    /// Obstacle, visible danger cells whose source sentinel is gone are
    /// restored to Free, and zones are re-marked around every sentinel in
    /// sight.
    pub fn integrate_observation(
        &mut self,
        world_grid: &ObstacleGrid,
        self_pos: Vec2,
        visible_sentinels: &[Vec2],
    ) {
        let pose_cell = match self.occupancy.cell_of(self_pos) {
            Some(c) => c,
            None => return,
        };
        let mut keys: Vec<CenterKey> = visible_sentinels.iter().map(|p| center_key(*p)).collect();
        keys.sort_unstable();
        if self.last_integration.as_ref() == Some(&(pose_cell, keys.clone())) {
            return; // same vantage point, same sightings: nothing changes
        }

        // zone centers that still host a visible sentinel stay untouched
        let live: Vec<CenterKey> = self
            .occupancy
            .centers
            .iter()
            .filter(|(_, (pos, _))| {
                visible_sentinels.iter().any(|s| s.distance(*pos) <= 1.5)
            })
            .map(|(k, _)| *k)
            .collect();

        let r_cells = (self.perception_range / self.occupancy.cell_size).ceil() as i64;
        let step = self.occupancy.cell_size * 0.5;
        let (c0, r0) = (pose_cell.0 as i64, pose_cell.1 as i64);
        self.occupancy.set_plain(pose_cell.0, pose_cell.1, CellState::Free);

        // rays toward every cell of the bounding square's rim, truncated to the disk
        let mut ring: Vec<(i64, i64)> = Vec::with_capacity((8 * r_cells) as usize);
        for d in -r_cells..=r_cells {
            ring.push((c0 + d, r0 - r_cells));
            ring.push((c0 + d, r0 + r_cells));
            ring.push((c0 - r_cells, r0 + d));
            ring.push((c0 + r_cells, r0 + d));
        }
        for (tc, tr) in ring {
            let target = Vec2::new(
                self.occupancy.origin.x + (tc as f64 + 0.5) * self.occupancy.cell_size,
                self.occupancy.origin.y + (tr as f64 + 0.5) * self.occupancy.cell_size,
            );
            let dir = target - self_pos;
            let len = dir.norm();
            if len == 0.0 {
                continue;
            }
            let dir = dir * (1.0 / len);
            let mut t = step;
            while t <= self.perception_range {
                let p = self_pos + dir * t;
                let cell = match self.occupancy.cell_of(p) {
                    Some(c) => c,
                    None => break,
                };
                if world_grid.blocked(p) {
                    self.occupancy.set_plain(cell.0, cell.1, CellState::Obstacle);
                    break;
                }
                let idx = self.occupancy.idx(cell.0, cell.1);
                if self.occupancy.cells[idx as usize] == CellState::Danger {
                    let keep = self
                        .occupancy
                        .danger_source
                        .get(&idx)
                        .map_or(false, |k| live.contains(k));
                    if keep {
                        t += step;
                        continue;
                    }
                }
                self.occupancy.set_plain(cell.0, cell.1, CellState::Free);
                t += step;
            }
        }

        for s in visible_sentinels {
            self.occupancy.mark_danger_zone(*s, self_pos);
        }
        self.last_integration = Some((pose_cell, keys));
    }

    /// Fold in spatial facts extracted from the message channel.
    pub fn update_pose_registry(&mut self, facts: &crate::protocol::SpatialFacts, self_pos: Vec2) {
        for (name, (pose, ts)) in &facts.agent_poses {
            self.registry.update_agent(name, *pose, *ts);
        }
        for (pose, ts) in &facts.sentinel_poses {
            self.registry.update_sentinel(*pose, *ts);
            self.occupancy.mark_danger_zone(pose.pos(), self_pos);
        }
    }

    pub fn update_eta_map(&mut self, facts: &crate::protocol::SpatialFacts) {
        for ((agent, place), (eta, ts)) in &facts.etas {
            self.etas.update(place, agent, *eta, *ts);
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("no candidate has any ETA data")]
    NoViableCandidate,
}

/// Pick the candidate minimizing the travel time of the last agent to
/// arrive. Candidates missing an entry (or marked Impossible) for any agent
/// are disqualified; if every candidate is disqualified, fall back to the
/// one with the fewest missing entries. Ties break by place name.
pub fn select_meeting_place(
    etas: &EtaMap,
    candidates: &BTreeSet<String>,
    agents: &[String],
) -> Result<(String, u32), SelectError> {
    let mut best_full: Option<(&str, u32)> = None;
    let mut best_partial: Option<(&str, usize, u32)> = None;
    for place in candidates {
        let mut worst = 0u32;
        let mut missing = 0usize;
        for agent in agents {
            match etas.get(place, agent) {
                Some(EtaEntry { value: Eta::Seconds(s), .. }) => worst = worst.max(s),
                _ => missing += 1,
            }
        }
        if missing == agents.len() {
            continue; // no data at all
        }
        if missing == 0 {
            if best_full.map_or(true, |(_, w)| worst < w) {
                best_full = Some((place, worst));
            }
        } else if best_partial.map_or(true, |(_, m, _)| missing < m) {
            best_partial = Some((place, missing, worst));
        }
    }
    if let Some((place, worst)) = best_full {
        return Ok((place.to_string(), worst));
    }
    if let Some((place, _, worst)) = best_partial {
        return Ok((place.to_string(), worst));
    }
    Err(SelectError::NoViableCandidate)
}
