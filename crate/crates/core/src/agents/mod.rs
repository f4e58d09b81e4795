//! Decision policies: the negotiating agent plus the baseline planners,
//! selectable by name through the harness.

mod cosar;
mod mcts;
mod oracle;
pub mod scripted;

pub use cosar::CosarPolicy;
pub use mcts::{MctsConfig, MctsPolicy};
pub use oracle::OraclePolicy;

use crate::geom::{Pose2D, Vec2};
use crate::map_tool::WaypointGraph;
use crate::scene::{AgentSpec, SceneSpec, SentinelKind};
use crate::world::{AgentAction, Observation};
use thiserror::Error;

/// Policy names accepted by harness configs.
pub const POLICY_NAMES: [&str; 4] = ["cosar", "oracle", "oracle_dz", "mcts"];

#[derive(Debug, Error)]
#[error("unknown policy {0:?} (expected one of cosar, oracle, oracle_dz, mcts)")]
pub struct UnknownPolicy(pub String);

/// Ground-truth view granted to baselines that assume oracle access.
#[derive(Debug, Clone)]
pub struct OracleSnapshot {
    /// (name, position, alive) for every participating agent
    pub agent_poses: Vec<(String, Vec2, bool)>,
    pub sentinels: Vec<(u32, Pose2D, SentinelKind)>,
}

/// Read-only context handed to a policy each step.
pub struct PolicyEnv<'a> {
    pub scene: &'a SceneSpec,
    pub graph: &'a WaypointGraph,
    pub agent_index: usize,
    pub roster: &'a [AgentSpec],
    pub horizon: u32,
    /// present only for policies that declare `needs_oracle`
    pub oracle: Option<&'a OracleSnapshot>,
}

impl PolicyEnv<'_> {
    pub fn me(&self) -> &AgentSpec {
        &self.roster[self.agent_index]
    }
}

/// One decision: the action plus trace notes (justifications, nav events).
pub struct Decision {
    pub action: AgentAction,
    pub notes: Vec<String>,
}

impl Decision {
    pub fn act(action: AgentAction) -> Self {
        Decision {
            action,
            notes: Vec::new(),
        }
    }

    pub fn noted(action: AgentAction, note: impl Into<String>) -> Self {
        Decision {
            action,
            notes: vec![note.into()],
        }
    }
}

pub trait AgentPolicy: Send {
    fn decide(&mut self, obs: &Observation, env: &PolicyEnv) -> Decision;

    /// Whether the harness should grant this policy the oracle snapshot.
    fn needs_oracle(&self) -> bool {
        false
    }
}

/// Per-agent deterministic seed stream derived from the episode seed.
pub fn agent_seed(episode_seed: u64, agent_index: usize) -> u64 {
    episode_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(agent_index as u64 + 1)
}

/// Instantiate a policy by its registry name.
pub fn build_policy(
    name: &str,
    agent_index: usize,
    scene: &SceneSpec,
    episode_seed: u64,
) -> Result<Box<dyn AgentPolicy>, UnknownPolicy> {
    let seed = agent_seed(episode_seed, agent_index);
    match name {
        "cosar" => Ok(Box::new(CosarPolicy::new(scene, agent_index, seed))),
        "oracle" => Ok(Box::new(OraclePolicy::new(scene, false, seed))),
        "oracle_dz" => Ok(Box::new(OraclePolicy::new(scene, true, seed))),
        "mcts" => Ok(Box::new(MctsPolicy::new(
            scene,
            agent_index,
            MctsConfig::default(),
            seed,
        ))),
        other => Err(UnknownPolicy(other.to_string())),
    }
}
