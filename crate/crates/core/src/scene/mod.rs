//! Scene data model: places, rosters, roads, and the coarse obstacle grid.
//!
//! Scenes are immutable after construction and shared read-only across
//! episodes. The generator lives in [`gen`], file I/O in [`io`].

mod gen;
mod io;

pub use gen::{generate_scene, GenerationError, SceneProfile, ROAD_HALF_WIDTH};
pub use io::{load_scene, save_scene, scene_to_json, SceneIoError};

use crate::geom::{Pose2D, Rect, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

pub const MAX_AGENTS: usize = 15;
pub const MAX_SENTINELS: usize = 20;
pub const MAX_PLACES: usize = 150;
pub const MIN_PLACES_GENERATED: usize = 50;

/// A named landmark that can serve as a gathering point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub location: Pose2D,
    pub bounding_box: Rect,
    pub indoor: bool,
}

/// Static description of one agent in the roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub initial_place: String,
    pub known_places: BTreeSet<String>,
    /// meters per second
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentinelKind {
    Stationary,
    Patrolling,
}

/// Static description of one sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentinelSpec {
    pub id: u32,
    pub kind: SentinelKind,
    pub initial_pose: Pose2D,
    /// Closed loop of waypoints; empty iff stationary.
    #[serde(default)]
    pub patrol_route: Vec<Pose2D>,
    /// radians per second (stationary rotation)
    pub angular_rate: f64,
    /// meters per second (patrolling)
    pub speed: f64,
    pub fov_half_angle: f64,
    pub view_range: f64,
}

impl SentinelSpec {
    pub fn stationary(id: u32, pose: Pose2D) -> Self {
        SentinelSpec {
            id,
            kind: SentinelKind::Stationary,
            initial_pose: pose,
            patrol_route: Vec::new(),
            angular_rate: DEFAULT_ANGULAR_RATE,
            speed: 0.0,
            fov_half_angle: DEFAULT_FOV_HALF_ANGLE,
            view_range: DEFAULT_VIEW_RANGE,
        }
    }

    pub fn patrolling(id: u32, pose: Pose2D, route: Vec<Pose2D>) -> Self {
        SentinelSpec {
            id,
            kind: SentinelKind::Patrolling,
            initial_pose: pose,
            patrol_route: route,
            angular_rate: 0.0,
            speed: DEFAULT_SENTINEL_SPEED,
            fov_half_angle: DEFAULT_FOV_HALF_ANGLE,
            view_range: DEFAULT_VIEW_RANGE,
        }
    }
}

pub const DEFAULT_AGENT_SPEED: f64 = 1.0;
pub const DEFAULT_SENTINEL_SPEED: f64 = 1.0;
/// 20-second full sweep for stationary sentinels.
pub const DEFAULT_ANGULAR_RATE: f64 = 0.314;
pub const DEFAULT_FOV_HALF_ANGLE: f64 = std::f64::consts::FRAC_PI_4;
pub const DEFAULT_VIEW_RANGE: f64 = 100.0;

/// Binary obstacle raster covering the scene extent, origin at (0, 0).
/// `true` cells are obstacles (buildings); everything else is navigable.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleGrid {
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    cells: Vec<bool>,
}

impl ObstacleGrid {
    pub fn new(cell_size: f64, width: usize, height: usize) -> Self {
        ObstacleGrid {
            cell_size,
            width,
            height,
            cells: vec![false; width * height],
        }
    }

    pub fn filled(cell_size: f64, width: usize, height: usize) -> Self {
        ObstacleGrid {
            cell_size,
            width,
            height,
            cells: vec![true; width * height],
        }
    }

    #[inline]
    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.width && (row as usize) < self.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, obstacle: bool) {
        self.cells[row * self.width + col] = obstacle;
    }

    /// Cell indices containing a point; points outside the raster map to
    /// None. Points exactly on the far boundary belong to the last cell.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let mut col = (p.x / self.cell_size).floor() as i64;
        let mut row = (p.y / self.cell_size).floor() as i64;
        if col as usize == self.width && p.x <= self.width as f64 * self.cell_size {
            col -= 1;
        }
        if row as usize == self.height && p.y <= self.height as f64 * self.cell_size {
            row -= 1;
        }
        if self.in_bounds(col, row) {
            Some((col as usize, row as usize))
        } else {
            None
        }
    }

    /// True when the cell containing `p` is an obstacle or `p` is out of bounds.
    /// Used for movement clamping: the world's edge behaves like a wall.
    pub fn blocked(&self, p: Vec2) -> bool {
        match self.cell_of(p) {
            Some((c, r)) => self.get(c, r),
            None => true,
        }
    }

    /// True when the open segment a–b passes through an obstacle cell.
    /// Exact grid traversal: every cell the segment touches is inspected.
    pub fn segment_occluded(&self, a: Vec2, b: Vec2) -> bool {
        let cs = self.cell_size;
        let mut col = (a.x / cs).floor() as i64;
        let mut row = (a.y / cs).floor() as i64;
        let end_col = (b.x / cs).floor() as i64;
        let end_row = (b.y / cs).floor() as i64;

        let d = b - a;
        let step_c: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_r: i64 = if d.y > 0.0 { 1 } else { -1 };

        // Parametric distance along the ray to the next cell boundary.
        let mut t_max_x = if d.x == 0.0 {
            f64::INFINITY
        } else {
            let next = if d.x > 0.0 { (col + 1) as f64 * cs } else { col as f64 * cs };
            (next - a.x) / d.x
        };
        let mut t_max_y = if d.y == 0.0 {
            f64::INFINITY
        } else {
            let next = if d.y > 0.0 { (row + 1) as f64 * cs } else { row as f64 * cs };
            (next - a.y) / d.y
        };
        let t_delta_x = if d.x == 0.0 { f64::INFINITY } else { (cs / d.x).abs() };
        let t_delta_y = if d.y == 0.0 { f64::INFINITY } else { (cs / d.y).abs() };

        loop {
            if self.in_bounds(col, row) && self.get(col as usize, row as usize) {
                return true;
            }
            if col == end_col && row == end_row {
                return false;
            }
            if t_max_x < t_max_y {
                t_max_x += t_delta_x;
                col += step_c;
            } else {
                t_max_y += t_delta_y;
                row += step_r;
            }
            // Guard against leaving the segment entirely (degenerate input).
            if (col - end_col).abs() + (row - end_row).abs()
                > (self.width + self.height) as i64 * 2
            {
                return false;
            }
        }
    }

    /// Rows encoded as strings of `.` (free) and `#` (obstacle); row 0 is y = 0.
    pub fn encode_rows(&self) -> Vec<String> {
        (0..self.height)
            .map(|r| {
                (0..self.width)
                    .map(|c| if self.get(c, r) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }

    pub fn decode_rows(cell_size: f64, rows: &[String]) -> Result<Self, String> {
        if rows.is_empty() {
            return Err("obstacle grid has no rows".into());
        }
        let width = rows[0].chars().count();
        let mut grid = ObstacleGrid::new(cell_size, width, rows.len());
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(format!("obstacle grid row {r} has inconsistent width"));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '.' => {}
                    '#' => grid.set(c, r, true),
                    other => return Err(format!("obstacle grid row {r}: invalid cell '{other}'")),
                }
            }
        }
        Ok(grid)
    }
}

/// A complete scene: geometry, rosters, and the seed it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    /// (width, height) in meters
    pub extent: (f64, f64),
    pub road_segments: Vec<Vec<Pose2D>>,
    pub coarse_obstacle_grid: ObstacleGrid,
    pub places: Vec<Place>,
    pub agent_roster: Vec<AgentSpec>,
    pub sentinel_roster: Vec<SentinelSpec>,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn place(&self, name: &str) -> Option<&Place> {
        self.places.iter().find(|p| p.name == name)
    }

    /// The indoor place whose bounding box contains `p`, if any.
    pub fn indoor_place_at(&self, p: Vec2) -> Option<&Place> {
        self.places
            .iter()
            .find(|pl| pl.indoor && pl.bounding_box.contains(p))
    }

    pub fn diagonal(&self) -> f64 {
        self.extent.0.hypot(self.extent.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

/// One broken invariant, naming the entity and the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub severity: Severity,
    pub entity: String,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.entity, self.rule)
    }
}

fn err(entity: impl Into<String>, rule: impl Into<String>) -> Violation {
    Violation {
        severity: Severity::Error,
        entity: entity.into(),
        rule: rule.into(),
    }
}

fn warn(entity: impl Into<String>, rule: impl Into<String>) -> Violation {
    Violation {
        severity: Severity::Warning,
        entity: entity.into(),
        rule: rule.into(),
    }
}

/// Check every structural invariant; the empty list means the scene is sound.
///
/// Place count below the generated-scene minimum and spatial overlap between
/// places are reported as warnings: hand-written scenes may use either.
pub fn validate_scene(scene: &SceneSpec) -> Vec<Violation> {
    let mut out = Vec::new();

    if scene.extent.0 <= 0.0 || scene.extent.1 <= 0.0 {
        out.push(err("scene", "extent must be positive"));
    }

    // Places
    let mut seen = BTreeSet::new();
    for place in &scene.places {
        if !seen.insert(place.name.as_str()) {
            out.push(err(
                format!("place {}", place.name),
                "duplicate place name",
            ));
        }
        if !place.location.is_finite() {
            out.push(err(format!("place {}", place.name), "location must be finite"));
        }
        if place.bounding_box.area() <= 0.0 {
            out.push(err(
                format!("place {}", place.name),
                "bounding_box area > 0",
            ));
        }
        if !place.bounding_box.contains(place.location.pos()) {
            out.push(err(
                format!("place {}", place.name),
                "location inside bounding_box",
            ));
        }
    }
    if scene.places.len() > MAX_PLACES {
        out.push(err(
            "scene",
            format!("place count {} exceeds {MAX_PLACES}", scene.places.len()),
        ));
    }
    if scene.places.len() < MIN_PLACES_GENERATED {
        out.push(warn(
            "scene",
            format!(
                "place count {} below the generated-scene minimum {MIN_PLACES_GENERATED}",
                scene.places.len()
            ),
        ));
    }
    for i in 0..scene.places.len() {
        for j in i + 1..scene.places.len() {
            let (a, b) = (&scene.places[i], &scene.places[j]);
            if a.bounding_box.intersects(&b.bounding_box) {
                out.push(warn(
                    format!("place {}", b.name),
                    format!("bounding box overlaps place {}", a.name),
                ));
            }
        }
    }

    // Agents
    if scene.agent_roster.len() > MAX_AGENTS {
        out.push(err(
            "scene",
            format!("agent roster {} exceeds {MAX_AGENTS}", scene.agent_roster.len()),
        ));
    }
    let mut agent_names = BTreeSet::new();
    for agent in &scene.agent_roster {
        let entity = format!("agent {}", agent.name);
        if !agent_names.insert(agent.name.as_str()) {
            out.push(err(entity.clone(), "duplicate agent name"));
        }
        match scene.place(&agent.initial_place) {
            None => out.push(err(
                entity.clone(),
                format!("initial_place {} does not exist", agent.initial_place),
            )),
            Some(p) if !p.indoor => {
                out.push(err(entity.clone(), "initial_place must be indoor"))
            }
            _ => {}
        }
        for known in &agent.known_places {
            if scene.place(known).is_none() {
                out.push(err(
                    entity.clone(),
                    format!("known place {known} does not exist"),
                ));
            }
        }
        if agent.speed <= 0.0 {
            out.push(err(entity, "speed > 0"));
        }
    }

    // Sentinels
    if scene.sentinel_roster.len() > MAX_SENTINELS {
        out.push(err(
            "scene",
            format!(
                "sentinel roster {} exceeds {MAX_SENTINELS}",
                scene.sentinel_roster.len()
            ),
        ));
    }
    let mut sentinel_ids = BTreeSet::new();
    for s in &scene.sentinel_roster {
        let entity = format!("sentinel {}", s.id);
        if !sentinel_ids.insert(s.id) {
            out.push(err(entity.clone(), "duplicate sentinel id"));
        }
        match s.kind {
            SentinelKind::Stationary => {
                if !s.patrol_route.is_empty() {
                    out.push(err(entity.clone(), "stationary sentinel must have empty patrol_route"));
                }
                if s.angular_rate <= 0.0 {
                    out.push(err(entity.clone(), "angular_rate > 0"));
                }
            }
            SentinelKind::Patrolling => {
                if s.patrol_route.len() < 2 {
                    out.push(err(entity.clone(), "patrol_route length ≥ 2"));
                }
                if s.speed <= 0.0 {
                    out.push(err(entity.clone(), "patrol speed > 0"));
                }
            }
        }
        for (i, p) in s.patrol_route.iter().enumerate() {
            if scene.coarse_obstacle_grid.blocked(p.pos()) {
                out.push(err(
                    entity.clone(),
                    format!("patrol point {i} not on a free cell"),
                ));
            }
            if scene.indoor_place_at(p.pos()).is_some() {
                out.push(err(entity.clone(), format!("patrol point {i} must be outdoors")));
            }
        }
        if !(s.fov_half_angle > 0.0 && s.fov_half_angle < std::f64::consts::PI) {
            out.push(err(entity.clone(), "fov_half_angle in (0, π)"));
        }
        if s.view_range <= 0.0 {
            out.push(err(entity, "view_range > 0"));
        }
    }

    // Roads must lie in free cells of the coarse grid.
    for (i, seg) in scene.road_segments.iter().enumerate() {
        if seg.len() < 2 {
            out.push(err(format!("road {i}"), "road segment needs ≥ 2 vertices"));
            continue;
        }
        for pair in seg.windows(2) {
            let (a, b) = (pair[0].pos(), pair[1].pos());
            let len = a.distance(b);
            let steps = (len / scene.coarse_obstacle_grid.cell_size).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let p = a + (b - a) * t;
                if scene.coarse_obstacle_grid.blocked(p) {
                    out.push(err(
                        format!("road {i}"),
                        format!("passes through an obstacle cell near ({:.1}, {:.1})", p.x, p.y),
                    ));
                    break;
                }
            }
        }
    }

    out
}

/// Errors only — the list against which loading rejects a scene.
pub fn validation_errors(scene: &SceneSpec) -> Vec<Violation> {
    validate_scene(scene)
        .into_iter()
        .filter(|v| v.severity == Severity::Error)
        .collect()
}
