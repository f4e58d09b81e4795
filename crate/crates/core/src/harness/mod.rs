//! Episode orchestration and metrics, suite execution over
//! scenes × seeds × policies, and report emission.

mod report;
mod suite;

pub use report::{aggregate, failure_histogram, write_csv, write_summary, AggregateRow, CSV_HEADER};
pub use suite::{run_suite, SuiteCell, SuiteSpec};

use crate::agents::{build_policy, AgentPolicy, OracleSnapshot, PolicyEnv};
use crate::map_tool::{build_waypoint_graph, WaypointGraph};
use crate::scene::{SceneSpec, SentinelKind};
use crate::world::{World, WorldError, DEFAULT_HORIZON};
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("unknown policy: {0}")]
    Policy(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("trace io: {0}")]
    TraceIo(#[from] std::io::Error),
}

/// How policies are assigned to the roster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyAssignment {
    Uniform(String),
    PerAgent(Vec<String>),
}

impl PolicyAssignment {
    pub fn name_for(&self, agent_index: usize) -> &str {
        match self {
            PolicyAssignment::Uniform(n) => n,
            PolicyAssignment::PerAgent(v) => &v[agent_index],
        }
    }

    pub fn label(&self) -> String {
        match self {
            PolicyAssignment::Uniform(n) => n.clone(),
            PolicyAssignment::PerAgent(v) => v.join("+"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub n_agents: usize,
    pub n_sentinels: usize,
    pub sentinel_kind: Option<SentinelKind>,
    pub horizon: u32,
    pub seed: u64,
    pub oracle_perception: bool,
    pub policies: PolicyAssignment,
}

impl EpisodeConfig {
    pub fn new(n_agents: usize, n_sentinels: usize, policy: &str) -> Self {
        EpisodeConfig {
            n_agents,
            n_sentinels,
            sentinel_kind: None,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            oracle_perception: false,
            policies: PolicyAssignment::Uniform(policy.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureReason {
    None,
    Caught,
    Timeout,
    WrongPlaceSignal,
}

impl std::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FailureReason::None => "none",
            FailureReason::Caught => "caught",
            FailureReason::Timeout => "timeout",
            FailureReason::WrongPlaceSignal => "wrong_place_signal",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub success: bool,
    pub caught_rate: f64,
    /// fraction of executed steps with at least one active countdown
    pub detected_rate: f64,
    /// steps until gathered; the horizon when the episode failed
    pub time_cost: u32,
    /// meters, summed over all agents
    pub distance: f64,
    pub failure_reason: FailureReason,
}

#[derive(Serialize)]
struct TraceAgent {
    name: String,
    x: f64,
    y: f64,
    indoor: bool,
    alive: bool,
    dist: f64,
    signal: Option<String>,
}

#[derive(Serialize)]
struct TraceSentinel {
    id: u32,
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Serialize)]
struct TraceCountdown {
    sentinel: u32,
    agent: String,
    remaining: f64,
}

/// One JSON line per step; the schema is documented in
/// `docs/trace-format.md` so replays and visualizers can be built on it.
#[derive(Serialize)]
struct TraceRecord {
    t: u32,
    agents: Vec<TraceAgent>,
    sentinels: Vec<TraceSentinel>,
    countdowns: Vec<TraceCountdown>,
    messages: Vec<String>,
    events: Vec<String>,
}

fn trace_record(world: &World, events: &[String], messages: Vec<String>) -> TraceRecord {
    TraceRecord {
        t: world.clock(),
        agents: world
            .agents()
            .iter()
            .map(|a| TraceAgent {
                name: a.name.clone(),
                x: a.pose.x,
                y: a.pose.y,
                indoor: a.indoor,
                alive: a.alive,
                dist: a.distance_traveled,
                signal: a.completed_signal.clone(),
            })
            .collect(),
        sentinels: world
            .sentinels()
            .iter()
            .map(|s| TraceSentinel {
                id: s.spec.id,
                x: s.pose.x,
                y: s.pose.y,
                heading: s.pose.heading.unwrap_or(0.0),
            })
            .collect(),
        countdowns: world
            .sentinels()
            .iter()
            .flat_map(|s| {
                s.countdowns.iter().map(|(agent, remaining)| TraceCountdown {
                    sentinel: s.spec.id,
                    agent: agent.clone(),
                    remaining: *remaining,
                })
            })
            .collect(),
        messages,
        events: events.to_vec(),
    }
}

/// Run one episode with policies built from the registry.
pub fn run_episode(
    scene: &SceneSpec,
    graph: &WaypointGraph,
    cfg: &EpisodeConfig,
    trace: Option<&mut dyn Write>,
) -> Result<EpisodeMetrics, HarnessError> {
    let factory = |i: usize| -> Result<Box<dyn AgentPolicy>, HarnessError> {
        build_policy(cfg.policies.name_for(i), i, scene, cfg.seed)
            .map_err(|e| HarnessError::Policy(e.0))
    };
    run_episode_with(scene, graph, cfg, &factory, trace)
}

/// Run one episode with custom policy construction (scripted agents, tests).
pub fn run_episode_with(
    scene: &SceneSpec,
    graph: &WaypointGraph,
    cfg: &EpisodeConfig,
    factory: &dyn Fn(usize) -> Result<Box<dyn AgentPolicy>, HarnessError>,
    mut trace: Option<&mut dyn Write>,
) -> Result<EpisodeMetrics, HarnessError> {
    if let PolicyAssignment::PerAgent(v) = &cfg.policies {
        if v.len() != cfg.n_agents {
            return Err(HarnessError::Config(format!(
                "per-agent policy list has {} entries for {} agents",
                v.len(),
                cfg.n_agents
            )));
        }
    }
    let mut world = World::new(
        scene,
        graph,
        cfg.n_agents,
        cfg.n_sentinels,
        cfg.sentinel_kind,
        cfg.horizon,
        cfg.oracle_perception,
    )?;
    let mut policies: Vec<Box<dyn AgentPolicy>> = (0..cfg.n_agents)
        .map(factory)
        .collect::<Result<_, _>>()?;

    let mut obs = world.initial_observations();
    let mut detected_steps: u32 = 0;
    let mut events_cursor = 0usize;
    let mut success = false;
    let mut time_cost = cfg.horizon;

    loop {
        if world.gathered_place().is_some() {
            success = true;
            time_cost = world.clock();
            break;
        }
        if world.clock() >= cfg.horizon {
            break;
        }
        let snapshot = OracleSnapshot {
            agent_poses: world
                .agents()
                .iter()
                .map(|a| (a.name.clone(), a.pose.pos(), a.alive))
                .collect(),
            sentinels: world
                .sentinels()
                .iter()
                .map(|s| (s.spec.id, s.pose, s.spec.kind))
                .collect(),
        };
        let mut actions = Vec::with_capacity(cfg.n_agents);
        let mut step_notes: Vec<String> = Vec::new();
        for (i, policy) in policies.iter_mut().enumerate() {
            let env = PolicyEnv {
                scene,
                graph,
                agent_index: i,
                roster: world.agent_specs(),
                horizon: cfg.horizon,
                oracle: policy.needs_oracle().then_some(&snapshot),
            };
            let decision = policy.decide(&obs[i], &env);
            for note in decision.notes {
                step_notes.push(format!("{}: {note}", world.agent_specs()[i].name));
            }
            actions.push(decision.action);
        }
        obs = world.step(actions)?;
        if world.any_countdown_active() {
            detected_steps += 1;
        }
        if let Some(w) = trace.as_deref_mut() {
            let mut events: Vec<String> = world.events()[events_cursor..]
                .iter()
                .map(|e| e.to_string())
                .collect();
            events_cursor = world.events().len();
            let messages: Vec<String> = obs
                .iter()
                .find(|o| o.alive)
                .map(|o| o.messages.iter().map(crate::protocol::encode_message).collect())
                .unwrap_or_default();
            events.extend(step_notes);
            let record = trace_record(&world, &events, messages);
            serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
    }

    let n = world.agents().len();
    let caught = world.agents().iter().filter(|a| !a.alive).count();
    let executed = world.clock().max(1);
    let all_signaled = world
        .agents()
        .iter()
        .filter(|a| a.alive)
        .all(|a| a.completed_signal.is_some());
    let failure_reason = if success {
        FailureReason::None
    } else if caught > 0 {
        FailureReason::Caught
    } else if all_signaled {
        FailureReason::WrongPlaceSignal
    } else {
        FailureReason::Timeout
    };
    Ok(EpisodeMetrics {
        success,
        caught_rate: caught as f64 / n as f64,
        detected_rate: detected_steps as f64 / executed as f64,
        time_cost,
        distance: world.agents().iter().map(|a| a.distance_traveled).sum(),
        failure_reason,
    })
}

/// Convenience for tests: build the graph and run without a trace.
pub fn run_episode_simple(
    scene: &SceneSpec,
    cfg: &EpisodeConfig,
) -> Result<EpisodeMetrics, HarnessError> {
    let graph = build_waypoint_graph(scene);
    run_episode(scene, &graph, cfg, None)
}
