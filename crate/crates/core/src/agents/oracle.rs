//! Centered baselines: pick the place nearest the geometric center of all
//! agents' initial positions, once, and walk there. The plain variant
//! follows the raw map-tool route; the danger-zone variant layers on zone
//! marking, route refinement, and emergency avoidance.

use super::{AgentPolicy, Decision, PolicyEnv};
use crate::geom::Vec2;
use crate::map_tool::{self, Route};
use crate::memory::SpatialMemory;
use crate::nav::{refine_route, DangerPrunedRefiner, NavInputs, NavStep, Navigator, DEFAULT_RETRY_LIMIT, WAYPOINT_TOLERANCE};
use crate::scene::SceneSpec;
use crate::world::{AgentAction, Observation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The meeting place every centered agent converges on: nearest place to
/// the centroid of the participating agents' initial positions, ties by name.
pub fn centered_meeting_place<'a>(scene: &'a SceneSpec, n_agents: usize) -> Option<&'a str> {
    let roster = &scene.agent_roster[..n_agents.min(scene.agent_roster.len())];
    if roster.is_empty() || scene.places.is_empty() {
        return None;
    }
    let mut centroid = Vec2::ZERO;
    for a in roster {
        centroid = centroid + scene.place(&a.initial_place)?.location.pos();
    }
    centroid = centroid * (1.0 / roster.len() as f64);
    scene
        .places
        .iter()
        .map(|p| (p.location.pos().distance(centroid), p.name.as_str()))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)))
        .map(|(_, name)| name)
}

pub struct OraclePolicy {
    use_danger_zones: bool,
    rng: ChaCha8Rng,
    started: bool,
    target: Option<String>,
    mem: Option<SpatialMemory>,
    nav: Navigator,
    raw_route: Option<Route>,
    cursor: usize,
    signaled: bool,
}

impl OraclePolicy {
    pub fn new(_scene: &SceneSpec, use_danger_zones: bool, seed: u64) -> Self {
        OraclePolicy {
            use_danger_zones,
            rng: ChaCha8Rng::seed_from_u64(seed),
            started: false,
            target: None,
            mem: None,
            nav: Navigator::new(use_danger_zones),
            raw_route: None,
            cursor: 0,
            signaled: false,
        }
    }

    fn start(&mut self, obs: &Observation, env: &PolicyEnv) {
        self.started = true;
        let Some(name) = centered_meeting_place(env.scene, env.roster.len()) else {
            return;
        };
        self.target = Some(name.to_string());
        let dest = env.scene.place(name).unwrap().location;
        let pose = obs.self_pose;
        if self.use_danger_zones {
            let mut mem = SpatialMemory::for_scene(env.scene);
            if let Ok(route) = refine_route(
                env.graph,
                &[],
                pose.pos(),
                dest.pos(),
                DEFAULT_RETRY_LIMIT,
                &DangerPrunedRefiner,
            ) {
                mem.plan.commit(name.to_string(), route);
            }
            self.mem = Some(mem);
        } else {
            self.raw_route = map_tool::query_route(env.graph, pose, dest).ok();
        }
    }
}

impl AgentPolicy for OraclePolicy {
    fn decide(&mut self, obs: &Observation, env: &PolicyEnv) -> Decision {
        if !obs.alive {
            return Decision::act(AgentAction::Wait);
        }
        if !self.started {
            self.start(obs, env);
        }
        let Some(target) = self.target.clone() else {
            return Decision::act(AgentAction::Wait);
        };
        let place = env.scene.place(&target).unwrap();
        let pos = obs.self_pose.pos();

        if place.bounding_box.contains(pos) {
            if !self.signaled {
                self.signaled = true;
                return Decision::noted(
                    AgentAction::SignalComplete(target.clone()),
                    format!("arrived at <{target}>"),
                );
            }
            return Decision::act(AgentAction::Wait);
        }

        if self.use_danger_zones {
            let mem = self.mem.as_mut().unwrap();
            let sightings: Vec<crate::geom::Pose2D> =
                obs.visible_sentinels.iter().map(|s| s.pose).collect();
            let positions: Vec<Vec2> = sightings.iter().map(crate::geom::Pose2D::pos).collect();
            mem.integrate_observation(&env.scene.coarse_obstacle_grid, pos, &positions);
            let mut ctx = NavInputs {
                graph: env.graph,
                pose: pos,
                speed: env.me().speed,
                warned: !obs.warnings.is_empty(),
                visible_sentinels: &sightings,
                rng: &mut self.rng,
            };
            let out = self.nav.step(&mut ctx, mem);
            let action = match out.step {
                NavStep::Move(v) => AgentAction::Move(v),
                // route exhausted short of the box: close the remaining gap
                NavStep::Arrived => AgentAction::Move(place.location.pos() - pos),
                NavStep::Blocked => AgentAction::Wait,
            };
            return Decision {
                action,
                notes: out.notes,
            };
        }

        // plain variant: raw route, no avoidance of any kind
        let Some(route) = self.raw_route.as_ref() else {
            return Decision::act(AgentAction::Wait);
        };
        while self.cursor < route.waypoints.len()
            && route.waypoints[self.cursor].pos().distance(pos) <= WAYPOINT_TOLERANCE
        {
            self.cursor += 1;
        }
        let aim = if self.cursor < route.waypoints.len() {
            route.waypoints[self.cursor].pos()
        } else {
            place.location.pos()
        };
        Decision::act(AgentAction::Move(aim - pos))
    }
}
