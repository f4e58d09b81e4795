//! The authoritative discrete-time simulator: motion, the visibility and
//! capture-countdown mechanics, the broadcast channel, and gathering logic.
//! One step is one simulated second.

use crate::geom::{angle_between, normalize_angle, Pose2D, Vec2};
use crate::map_tool::{self, Route, WaypointGraph};
use crate::protocol::Message;
use crate::scene::{AgentSpec, ObstacleGrid, Place, SceneSpec, SentinelKind, SentinelSpec};
use thiserror::Error;

/// Countdown start value in seconds.
pub const COUNTDOWN_START: f64 = 15.0;
/// Countdown trigger threshold on the visibility fraction (strict `>`).
pub const TRIGGER_FRACTION: f64 = 1.0 / 1000.0;
/// Effective body radius of an agent in the visibility proxy.
pub const AGENT_RADIUS: f64 = 0.5;
/// Camera field of view used by the visibility proxy.
pub const CAMERA_FOV: f64 = std::f64::consts::FRAC_PI_2;
/// Omnidirectional view range of observing agents.
pub const OBSERVER_VIEW_RANGE: f64 = 100.0;
/// Caught agents are parked here, outside every scene.
pub const CAPTURE_HOLDING_POSE: Vec2 = Vec2 { x: -100.0, y: -100.0 };
pub const DEFAULT_HORIZON: u32 = 1500;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("acting after the horizon ({0} steps)")]
    HorizonExceeded(u32),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("world config: {0}")]
    Config(String),
}

/// Live state of one sentinel.
#[derive(Debug, Clone)]
pub struct SentinelState {
    pub spec: SentinelSpec,
    pub pose: Pose2D,
    /// arc-length position along the closed patrol loop
    pub patrol_progress: f64,
    /// agent name → remaining seconds; absent = inactive
    pub countdowns: std::collections::BTreeMap<String, f64>,
}

impl SentinelState {
    fn new(spec: SentinelSpec) -> Self {
        let patrol_progress = match spec.kind {
            SentinelKind::Stationary => 0.0,
            SentinelKind::Patrolling => loop_progress_of(&spec.patrol_route, spec.initial_pose.pos()),
        };
        SentinelState {
            pose: spec.initial_pose,
            patrol_progress,
            countdowns: Default::default(),
            spec,
        }
    }

    fn advance(&mut self) {
        match self.spec.kind {
            SentinelKind::Stationary => {
                let h = self.pose.heading.unwrap_or(0.0);
                self.pose.heading = Some(normalize_angle(h + self.spec.angular_rate));
            }
            SentinelKind::Patrolling => {
                let total = loop_length(&self.spec.patrol_route);
                if total > 0.0 {
                    self.patrol_progress = (self.patrol_progress + self.spec.speed) % total;
                    let (p, heading) = loop_point(&self.spec.patrol_route, self.patrol_progress);
                    self.pose = Pose2D::with_heading(p.x, p.y, heading);
                }
            }
        }
    }
}

fn loop_length(route: &[Pose2D]) -> f64 {
    if route.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..route.len() {
        let a = route[i].pos();
        let b = route[(i + 1) % route.len()].pos();
        total += a.distance(b);
    }
    total
}

/// Position and travel heading at arc length `s` along the closed loop.
fn loop_point(route: &[Pose2D], s: f64) -> (Vec2, f64) {
    let mut remaining = s;
    for i in 0..route.len() {
        let a = route[i].pos();
        let b = route[(i + 1) % route.len()].pos();
        let len = a.distance(b);
        if remaining <= len || i == route.len() - 1 {
            if len == 0.0 {
                return (a, 0.0);
            }
            let t = (remaining / len).min(1.0);
            return (a + (b - a) * t, (b - a).angle());
        }
        remaining -= len;
    }
    (route[0].pos(), 0.0)
}

/// Arc-length position on the loop closest to `p`.
fn loop_progress_of(route: &[Pose2D], p: Vec2) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut walked = 0.0;
    for i in 0..route.len() {
        let a = route[i].pos();
        let b = route[(i + 1) % route.len()].pos();
        let len = a.distance(b);
        if len > 0.0 {
            let ab = b - a;
            let t = (((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / (len * len)).clamp(0.0, 1.0);
            let q = a + ab * t;
            let d = p.distance(q);
            if d < best.0 {
                best = (d, walked + t * len);
            }
        }
        walked += len;
    }
    best.1
}

/// Live state of one agent body.
#[derive(Debug, Clone)]
pub struct AgentBody {
    pub name: String,
    pub pose: Pose2D,
    pub indoor: bool,
    pub alive: bool,
    pub distance_traveled: f64,
    pub completed_signal: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapQuery {
    Route(Pose2D, Pose2D),
    Nearby(Pose2D, f64),
    Place(String),
    Map,
    RefinedRoute(Vec<Pose2D>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapQueryResult {
    Route(Result<Route, String>),
    Nearby(Vec<Place>),
    Place(Result<Place, String>),
    Map(ObstacleGrid),
}

/// One action per agent per step.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    /// Target velocity, clamped to the agent's speed.
    Move(Vec2),
    Speak(Message),
    QueryMap(MapQuery),
    SignalComplete(String),
    Wait,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentinelSighting {
    pub id: u32,
    pub pose: Pose2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSighting {
    pub name: String,
    pub pose: Pose2D,
}

/// Per-agent observation assembled at the end of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub clock: u32,
    pub alive: bool,
    pub self_pose: Pose2D,
    pub indoor: bool,
    pub visible_sentinels: Vec<SentinelSighting>,
    pub visible_agents: Vec<AgentSighting>,
    /// sentinel ids that opened a countdown on this agent this step
    pub warnings: Vec<u32>,
    pub messages: Vec<Message>,
    pub map_reply: Option<MapQueryResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorldEvent {
    Warning { step: u32, sentinel_id: u32, agent: String },
    Captured { step: u32, sentinel_id: u32, agent: String },
    CountdownCleared { step: u32, sentinel_id: u32, agent: String },
    Delivered { step: u32, line: String },
}

impl std::fmt::Display for WorldEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WorldEvent::Warning { step, sentinel_id, agent } => {
                write!(f, "{step} warning sentinel {sentinel_id} -> {agent}")
            }
            WorldEvent::Captured { step, sentinel_id, agent } => {
                write!(f, "{step} captured {agent} by sentinel {sentinel_id}")
            }
            WorldEvent::CountdownCleared { step, sentinel_id, agent } => {
                write!(f, "{step} cleared sentinel {sentinel_id} -> {agent}")
            }
            WorldEvent::Delivered { step, line } => write!(f, "{step} delivered {line}"),
        }
    }
}

/// The distance-only part of the visibility proxy:
/// `min(1, (2·atan(ρ/d)/θ_f)²)`.
pub fn proxy_fraction(d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    (2.0 * (AGENT_RADIUS / d).atan() / CAMERA_FOV).powi(2).min(1.0)
}

/// Analytic stand-in for pixel-fraction visibility. Returns 0 for indoor,
/// dead, out-of-range, out-of-cone, or occluded agents; otherwise
/// `min(1, (2·atan(ρ/d)/θ_f)²)` so the fraction grows as the agent closes in.
pub fn visibility_fraction(sentinel: &SentinelState, agent: &AgentBody, grid: &ObstacleGrid) -> f64 {
    if !agent.alive || agent.indoor {
        return 0.0;
    }
    let s = sentinel.pose.pos();
    let a = agent.pose.pos();
    let d = s.distance(a);
    if d > sentinel.spec.view_range {
        return 0.0;
    }
    if d > 0.0 {
        let bearing = (a - s).angle();
        let heading = sentinel.pose.heading.unwrap_or(0.0);
        if angle_between(bearing, heading) > sentinel.spec.fov_half_angle {
            return 0.0;
        }
    }
    if grid.segment_occluded(s, a) {
        return 0.0;
    }
    proxy_fraction(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountdownChange {
    None,
    Activated,
    Ticked,
    Expired,
    Cleared,
}

/// One second of countdown bookkeeping for a (sentinel, agent) pair.
/// Activation and the first decrement never share a step, and the trigger
/// comparison is strict, so a fraction of exactly 1/1000 does nothing.
pub fn apply_visibility(current: Option<f64>, fraction: f64) -> (Option<f64>, CountdownChange) {
    if fraction > TRIGGER_FRACTION {
        match current {
            None => (Some(COUNTDOWN_START), CountdownChange::Activated),
            Some(t) => {
                let t = t - 1000.0 * fraction;
                if t <= 0.0 {
                    (None, CountdownChange::Expired)
                } else {
                    (Some(t), CountdownChange::Ticked)
                }
            }
        }
    } else {
        match current {
            Some(_) => (None, CountdownChange::Cleared),
            None => (None, CountdownChange::None),
        }
    }
}

pub struct World<'a> {
    scene: &'a SceneSpec,
    graph: &'a WaypointGraph,
    clock: u32,
    horizon: u32,
    oracle_perception: bool,
    specs: Vec<AgentSpec>,
    agents: Vec<AgentBody>,
    sentinels: Vec<SentinelState>,
    /// messages awaiting delivery at the next step
    channel: Vec<Message>,
    events: Vec<WorldEvent>,
}

impl<'a> World<'a> {
    pub fn new(
        scene: &'a SceneSpec,
        graph: &'a WaypointGraph,
        n_agents: usize,
        n_sentinels: usize,
        sentinel_kind: Option<SentinelKind>,
        horizon: u32,
        oracle_perception: bool,
    ) -> Result<Self, WorldError> {
        if n_agents == 0 || n_agents > scene.agent_roster.len() {
            return Err(WorldError::Config(format!(
                "n_agents {n_agents} outside the roster of {}",
                scene.agent_roster.len()
            )));
        }
        let pool: Vec<&SentinelSpec> = scene
            .sentinel_roster
            .iter()
            .filter(|s| sentinel_kind.map_or(true, |k| s.kind == k))
            .collect();
        if n_sentinels > pool.len() {
            return Err(WorldError::Config(format!(
                "n_sentinels {n_sentinels} outside the matching roster of {}",
                pool.len()
            )));
        }
        if horizon == 0 {
            return Err(WorldError::Config("horizon must be ≥ 1".into()));
        }
        let specs: Vec<AgentSpec> = scene.agent_roster[..n_agents].to_vec();
        let mut agents = Vec::with_capacity(n_agents);
        for spec in &specs {
            let place = scene
                .place(&spec.initial_place)
                .ok_or_else(|| WorldError::Config(format!("unknown initial place {}", spec.initial_place)))?;
            agents.push(AgentBody {
                name: spec.name.clone(),
                pose: place.location,
                indoor: place.indoor,
                alive: true,
                distance_traveled: 0.0,
                completed_signal: None,
            });
        }
        let sentinels = pool
            .into_iter()
            .take(n_sentinels)
            .map(|s| SentinelState::new(s.clone()))
            .collect();
        Ok(World {
            scene,
            graph,
            clock: 0,
            horizon,
            oracle_perception,
            specs,
            agents,
            sentinels,
            channel: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn clock(&self) -> u32 {
        self.clock
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn agents(&self) -> &[AgentBody] {
        &self.agents
    }

    pub fn agent_specs(&self) -> &[AgentSpec] {
        &self.specs
    }

    pub fn sentinels(&self) -> &[SentinelState] {
        &self.sentinels
    }

    pub fn events(&self) -> &[WorldEvent] {
        &self.events
    }

    pub fn scene(&self) -> &SceneSpec {
        self.scene
    }

    /// True while at least one countdown is active (the step counts as
    /// "detected" for the metrics).
    pub fn any_countdown_active(&self) -> bool {
        self.sentinels.iter().any(|s| !s.countdowns.is_empty())
    }

    /// Observations before any step has run.
    pub fn initial_observations(&self) -> Vec<Observation> {
        (0..self.agents.len())
            .map(|i| self.observe(i, &[], None, &[]))
            .collect()
    }

    /// Advance one simulated second.
    pub fn step(&mut self, actions: Vec<AgentAction>) -> Result<Vec<Observation>, WorldError> {
        if self.clock >= self.horizon {
            return Err(WorldError::HorizonExceeded(self.horizon));
        }
        if actions.len() != self.agents.len() {
            return Err(WorldError::ActionCount {
                expected: self.agents.len(),
                got: actions.len(),
            });
        }
        self.clock += 1;
        let now = self.clock;

        // (1) deliver everything enqueued last step
        let delivered: Vec<Message> = std::mem::take(&mut self.channel);
        for m in &delivered {
            self.events.push(WorldEvent::Delivered {
                step: now,
                line: crate::protocol::encode_message(m),
            });
        }

        // (2) answer map queries synchronously
        let mut replies: Vec<Option<MapQueryResult>> = vec![None; self.agents.len()];
        for (i, action) in actions.iter().enumerate() {
            if !self.agents[i].alive {
                continue;
            }
            if let AgentAction::QueryMap(q) = action {
                replies[i] = Some(self.answer_query(q));
            }
        }

        // (3) move, speak, signal
        for (i, action) in actions.into_iter().enumerate() {
            if !self.agents[i].alive {
                continue;
            }
            match action {
                AgentAction::Move(v) => self.move_agent(i, v),
                AgentAction::Speak(mut m) => {
                    m.timestamp = now;
                    m.sender = self.agents[i].name.clone();
                    self.channel.push(m);
                }
                AgentAction::SignalComplete(place) => {
                    self.agents[i].completed_signal = Some(place);
                }
                AgentAction::QueryMap(_) | AgentAction::Wait => {}
            }
        }

        // (4) sentinels rotate or patrol
        for s in &mut self.sentinels {
            s.advance();
        }

        // (5) countdown bookkeeping
        let warnings = self.update_countdowns();

        // (6) assemble observations
        let obs = (0..self.agents.len())
            .map(|i| {
                let w: Vec<u32> = warnings
                    .iter()
                    .filter(|(_, a)| *a == i)
                    .map(|(sid, _)| *sid)
                    .collect();
                self.observe(i, &delivered, replies[i].take(), &w)
            })
            .collect();
        Ok(obs)
    }

    fn answer_query(&self, q: &MapQuery) -> MapQueryResult {
        match q {
            MapQuery::Route(p1, p2) => MapQueryResult::Route(
                map_tool::query_route(self.graph, *p1, *p2).map_err(|e| e.to_string()),
            ),
            MapQuery::RefinedRoute(points) => MapQueryResult::Route(
                map_tool::query_refined_route(self.graph, points).map_err(|e| e.to_string()),
            ),
            MapQuery::Nearby(p, r) => MapQueryResult::Nearby(
                map_tool::query_nearby(self.scene, *p, *r)
                    .into_iter()
                    .cloned()
                    .collect(),
            ),
            MapQuery::Place(name) => MapQueryResult::Place(
                map_tool::query_place(self.scene, name)
                    .cloned()
                    .map_err(|e| e.to_string()),
            ),
            MapQuery::Map => MapQueryResult::Map(map_tool::query_map(self.scene).clone()),
        }
    }

    /// Clamp to speed, then move; blocked moves slide along the free axis.
    fn move_agent(&mut self, i: usize, v: Vec2) {
        let speed = self.specs[i].speed;
        let v = v.clamp_norm(speed);
        let from = self.agents[i].pose.pos();
        let grid = &self.scene.coarse_obstacle_grid;
        let candidates = [
            from + v,
            Vec2::new(from.x + v.x, from.y),
            Vec2::new(from.x, from.y + v.y),
        ];
        let mut to = from;
        for c in candidates {
            if !grid.blocked(c) {
                to = c;
                break;
            }
        }
        let moved = from.distance(to);
        if moved > 0.0 {
            let heading = (to - from).angle();
            self.agents[i].pose = Pose2D::with_heading(to.x, to.y, heading);
            self.agents[i].distance_traveled += moved;
            self.agents[i].indoor = self.scene.indoor_place_at(to).is_some();
        }
    }

    /// Returns (sentinel id, agent index) pairs that received a warning.
    fn update_countdowns(&mut self) -> Vec<(u32, usize)> {
        let now = self.clock;
        let mut warnings = Vec::new();
        let mut captures: Vec<(usize, u32)> = Vec::new();
        for s_idx in 0..self.sentinels.len() {
            for a_idx in 0..self.agents.len() {
                let f = visibility_fraction(
                    &self.sentinels[s_idx],
                    &self.agents[a_idx],
                    &self.scene.coarse_obstacle_grid,
                );
                let name = self.agents[a_idx].name.clone();
                let sid = self.sentinels[s_idx].spec.id;
                let current = self.sentinels[s_idx].countdowns.get(&name).copied();
                let (next, change) = apply_visibility(current, f);
                match next {
                    Some(t) => {
                        self.sentinels[s_idx].countdowns.insert(name.clone(), t);
                    }
                    None => {
                        self.sentinels[s_idx].countdowns.remove(&name);
                    }
                }
                match change {
                    CountdownChange::Activated => {
                        self.events.push(WorldEvent::Warning {
                            step: now,
                            sentinel_id: sid,
                            agent: name,
                        });
                        warnings.push((sid, a_idx));
                    }
                    CountdownChange::Expired => captures.push((a_idx, sid)),
                    CountdownChange::Cleared => {
                        self.events.push(WorldEvent::CountdownCleared {
                            step: now,
                            sentinel_id: sid,
                            agent: name,
                        });
                    }
                    _ => {}
                }
            }
        }
        for (a_idx, sid) in captures {
            if !self.agents[a_idx].alive {
                continue; // already captured by an earlier sentinel this step
            }
            let name = self.agents[a_idx].name.clone();
            self.agents[a_idx].alive = false;
            self.agents[a_idx].pose = Pose2D::point(CAPTURE_HOLDING_POSE.x, CAPTURE_HOLDING_POSE.y);
            self.agents[a_idx].indoor = false;
            for s in &mut self.sentinels {
                s.countdowns.remove(&name);
            }
            self.events.push(WorldEvent::Captured {
                step: now,
                sentinel_id: sid,
                agent: name,
            });
        }
        warnings
    }

    fn observe(
        &self,
        i: usize,
        delivered: &[Message],
        map_reply: Option<MapQueryResult>,
        warnings: &[u32],
    ) -> Observation {
        let me = &self.agents[i];
        if !me.alive {
            return Observation {
                clock: self.clock,
                alive: false,
                self_pose: me.pose,
                indoor: false,
                visible_sentinels: Vec::new(),
                visible_agents: Vec::new(),
                warnings: Vec::new(),
                messages: Vec::new(),
                map_reply: None,
            };
        }
        let grid = &self.scene.coarse_obstacle_grid;
        let my_pos = me.pose.pos();
        let mut visible_sentinels = Vec::new();
        for s in &self.sentinels {
            let d = my_pos.distance(s.pose.pos());
            let seen = if self.oracle_perception {
                d <= OBSERVER_VIEW_RANGE
            } else {
                d <= OBSERVER_VIEW_RANGE && !grid.segment_occluded(my_pos, s.pose.pos())
            };
            if seen {
                visible_sentinels.push(SentinelSighting {
                    id: s.spec.id,
                    pose: s.pose,
                });
            }
        }
        let mut visible_agents = Vec::new();
        for (j, other) in self.agents.iter().enumerate() {
            if j == i || !other.alive {
                continue;
            }
            let d = my_pos.distance(other.pose.pos());
            if d <= OBSERVER_VIEW_RANGE && !grid.segment_occluded(my_pos, other.pose.pos()) {
                visible_agents.push(AgentSighting {
                    name: other.name.clone(),
                    pose: other.pose,
                });
            }
        }
        Observation {
            clock: self.clock,
            alive: true,
            self_pose: me.pose,
            indoor: me.indoor,
            visible_sentinels,
            visible_agents,
            warnings: warnings.to_vec(),
            messages: delivered.to_vec(),
            map_reply,
        }
    }

    /// The place everyone has gathered at, if the full roster is alive,
    /// inside its bounding box, and has signaled completion there.
    pub fn gathered_place(&self) -> Option<&str> {
        if self.agents.iter().any(|a| !a.alive) {
            return None;
        }
        let first = self.agents[0].completed_signal.as_deref()?;
        let place = self.scene.place(first)?;
        for a in &self.agents {
            if a.completed_signal.as_deref() != Some(first) {
                return None;
            }
            if !place.bounding_box.contains(a.pose.pos()) {
                return None;
            }
        }
        Some(first)
    }
}
