//! Scripted policies for harness tests and reproducible fixtures.

use super::{AgentPolicy, Decision, PolicyEnv};
use crate::geom::Vec2;
use crate::world::{AgentAction, Observation};

/// Does nothing, forever.
pub struct StandStill;

impl AgentPolicy for StandStill {
    fn decide(&mut self, _obs: &Observation, _env: &PolicyEnv) -> Decision {
        Decision::act(AgentAction::Wait)
    }
}

/// Walks straight to a point, then stands there for the rest of the episode.
pub struct WalkThenStand {
    pub target: Vec2,
}

impl AgentPolicy for WalkThenStand {
    fn decide(&mut self, obs: &Observation, _env: &PolicyEnv) -> Decision {
        if !obs.alive {
            return Decision::act(AgentAction::Wait);
        }
        let delta = self.target - obs.self_pose.pos();
        if delta.norm() < 1e-6 {
            Decision::act(AgentAction::Wait)
        } else {
            Decision::act(AgentAction::Move(delta))
        }
    }
}

/// Walks to a place's center, signals completion once inside its box, then waits.
pub struct GoAndSignal {
    pub place: String,
    signaled: bool,
}

impl GoAndSignal {
    pub fn new(place: impl Into<String>) -> Self {
        GoAndSignal {
            place: place.into(),
            signaled: false,
        }
    }
}

impl AgentPolicy for GoAndSignal {
    fn decide(&mut self, obs: &Observation, env: &PolicyEnv) -> Decision {
        if !obs.alive {
            return Decision::act(AgentAction::Wait);
        }
        let Some(place) = env.scene.place(&self.place) else {
            return Decision::act(AgentAction::Wait);
        };
        let pos = obs.self_pose.pos();
        if place.bounding_box.contains(pos) {
            if !self.signaled {
                self.signaled = true;
                return Decision::act(AgentAction::SignalComplete(self.place.clone()));
            }
            return Decision::act(AgentAction::Wait);
        }
        Decision::act(AgentAction::Move(place.location.pos() - pos))
    }
}
