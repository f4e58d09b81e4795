//! Tree-search baseline: picks the meeting place by UCT over the candidate
//! set, each rollout simulating this agent walking a danger-pruned route in
//! a believed world of static peers and known sentinel positions, scored to
//! minimize teammate distance, travel distance, and detected steps.

use super::{AgentPolicy, Decision, PolicyEnv};
use crate::geom::Vec2;
use crate::memory::SpatialMemory;
use crate::nav::{refine_route, DangerPrunedRefiner, NavInputs, NavStep, Navigator, DEFAULT_RETRY_LIMIT};
use crate::scene::SceneSpec;
use crate::world::{proxy_fraction, AgentAction, Observation, OBSERVER_VIEW_RANGE, TRIGGER_FRACTION};
use crate::map_tool::WaypointGraph;
use crate::scene::ObstacleGrid;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seconds between planner invocations.
const DECISION_INTERVAL: u32 = 120;

#[derive(Debug, Clone)]
pub struct MctsConfig {
    pub iterations: u32,
    pub rollout_horizon: u32,
    pub exploration: f64,
    /// weight on mean final distance to teammates
    pub alpha: f64,
    /// weight on rollout path length
    pub beta: f64,
    /// weight on rollout steps spent above the detection threshold
    pub gamma: f64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            iterations: 100,
            rollout_horizon: 200,
            exploration: std::f64::consts::SQRT_2,
            alpha: 1.0,
            beta: 0.1,
            gamma: 10.0,
        }
    }
}

/// Believed world used inside rollouts: everyone stands still.
#[derive(Debug, Clone, Default)]
pub struct BelievedWorld {
    pub peers: Vec<Vec2>,
    pub sentinels: Vec<Vec2>,
}

/// Deterministic rollout: walk the refined route toward `destination` at
/// `speed` and tally the objective. Sentinels are assumed to be facing the
/// agent, so detection is range + line of sight + the proxy threshold.
pub fn rollout_reward(
    graph: &WaypointGraph,
    grid: &ObstacleGrid,
    start: Vec2,
    destination: Vec2,
    speed: f64,
    believed: &BelievedWorld,
    cfg: &MctsConfig,
) -> f64 {
    let Ok(route) = refine_route(
        graph,
        &believed.sentinels,
        start,
        destination,
        DEFAULT_RETRY_LIMIT,
        &DangerPrunedRefiner,
    ) else {
        return f64::MIN / 4.0;
    };
    let mut pos = start;
    let mut cursor = 0usize;
    let mut path_len = 0.0;
    let mut detected_steps = 0u32;
    for _ in 0..cfg.rollout_horizon {
        while cursor < route.waypoints.len() && route.waypoints[cursor].pos().distance(pos) <= 0.5 {
            cursor += 1;
        }
        if cursor >= route.waypoints.len() {
            break;
        }
        let aim = route.waypoints[cursor].pos();
        let step = (aim - pos).clamp_norm(speed);
        pos = pos + step;
        path_len += step.norm();
        let detected = believed.sentinels.iter().any(|s| {
            let d = s.distance(pos);
            d <= OBSERVER_VIEW_RANGE
                && proxy_fraction(d) > TRIGGER_FRACTION
                && !grid.segment_occluded(*s, pos)
        });
        if detected {
            detected_steps += 1;
        }
    }
    let mean_peer_dist = if believed.peers.is_empty() {
        0.0
    } else {
        believed.peers.iter().map(|p| p.distance(pos)).sum::<f64>() / believed.peers.len() as f64
    };
    -cfg.alpha * mean_peer_dist - cfg.beta * path_len - cfg.gamma * detected_steps as f64
}

/// UCT over the candidate places as root arms. Rollouts are deterministic,
/// so repeat visits refine nothing but keep the selection rule honest; the
/// result is reproducible for a fixed candidate order.
pub fn mcts_select(
    graph: &WaypointGraph,
    grid: &ObstacleGrid,
    start: Vec2,
    candidates: &[(String, Vec2)],
    speed: f64,
    believed: &BelievedWorld,
    cfg: &MctsConfig,
) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let mut cached: Vec<Option<f64>> = vec![None; candidates.len()];
    let mut totals = vec![0.0f64; candidates.len()];
    let mut visits = vec![0u32; candidates.len()];
    let mut n_total = 0u32;
    for _ in 0..cfg.iterations.max(1) {
        let arm = if let Some(i) = visits.iter().position(|&v| v == 0) {
            i
        } else {
            let mut best = 0usize;
            let mut best_ucb = f64::MIN;
            for i in 0..candidates.len() {
                let mean = totals[i] / visits[i] as f64;
                let ucb = mean
                    + cfg.exploration * ((n_total as f64).ln() / visits[i] as f64).sqrt();
                if ucb > best_ucb {
                    best_ucb = ucb;
                    best = i;
                }
            }
            best
        };
        let reward = *cached[arm].get_or_insert_with(|| {
            rollout_reward(graph, grid, start, candidates[arm].1, speed, believed, cfg)
        });
        totals[arm] += reward;
        visits[arm] += 1;
        n_total += 1;
    }
    let mut best = 0usize;
    let mut best_mean = f64::MIN;
    for i in 0..candidates.len() {
        if visits[i] == 0 {
            continue;
        }
        let mean = totals[i] / visits[i] as f64;
        if mean > best_mean {
            best_mean = mean;
            best = i;
        }
    }
    Some(best)
}

pub struct MctsPolicy {
    cfg: MctsConfig,
    rng: ChaCha8Rng,
    mem: SpatialMemory,
    nav: Navigator,
    candidates: Vec<String>,
    last_decision: Option<u32>,
    target: Option<String>,
    signaled: bool,
}

impl MctsPolicy {
    pub fn new(scene: &SceneSpec, agent_index: usize, cfg: MctsConfig, seed: u64) -> Self {
        let candidates: Vec<String> = scene.agent_roster[agent_index]
            .known_places
            .iter()
            .cloned()
            .collect();
        MctsPolicy {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mem: SpatialMemory::for_scene(scene),
            nav: Navigator::new(false),
            candidates,
            last_decision: None,
            target: None,
            signaled: false,
        }
    }

    fn replan(&mut self, obs: &Observation, env: &PolicyEnv) -> Vec<String> {
        let mut notes = Vec::new();
        let snapshot = env.oracle.expect("mcts needs the oracle snapshot");
        let me = &env.me().name;
        let believed = BelievedWorld {
            peers: snapshot
                .agent_poses
                .iter()
                .filter(|(n, _, alive)| n != me && *alive)
                .map(|(_, p, _)| *p)
                .collect(),
            sentinels: snapshot.sentinels.iter().map(|(_, p, _)| p.pos()).collect(),
        };
        let candidates: Vec<(String, Vec2)> = self
            .candidates
            .iter()
            .filter_map(|n| env.scene.place(n).map(|p| (n.clone(), p.location.pos())))
            .collect();
        let pos = obs.self_pose.pos();
        if let Some(best) = mcts_select(
            env.graph,
            &env.scene.coarse_obstacle_grid,
            pos,
            &candidates,
            env.me().speed,
            &believed,
            &self.cfg,
        ) {
            let (name, dest) = candidates[best].clone();
            if let Ok(route) = refine_route(
                env.graph,
                &believed.sentinels,
                pos,
                dest,
                DEFAULT_RETRY_LIMIT,
                &DangerPrunedRefiner,
            ) {
                notes.push(format!("tree search picked <{name}>"));
                self.mem.plan.commit(name.clone(), route);
                self.nav.reset_route();
                self.target = Some(name);
            }
        }
        notes
    }
}

impl AgentPolicy for MctsPolicy {
    fn needs_oracle(&self) -> bool {
        true
    }

    fn decide(&mut self, obs: &Observation, env: &PolicyEnv) -> Decision {
        if !obs.alive {
            return Decision::act(AgentAction::Wait);
        }
        let mut notes = Vec::new();
        let due = self
            .last_decision
            .map_or(true, |t| obs.clock.saturating_sub(t) >= DECISION_INTERVAL);
        if due {
            self.last_decision = Some(obs.clock);
            notes.extend(self.replan(obs, env));
        }
        let Some(target) = self.target.clone() else {
            return Decision::act(AgentAction::Wait);
        };
        let place = env.scene.place(&target).unwrap();
        let pos = obs.self_pose.pos();
        if place.bounding_box.contains(pos) {
            if !self.signaled {
                self.signaled = true;
                return Decision::noted(AgentAction::SignalComplete(target), "arrived");
            }
            return Decision::act(AgentAction::Wait);
        }
        let sightings: Vec<crate::geom::Pose2D> =
            obs.visible_sentinels.iter().map(|s| s.pose).collect();
        let positions: Vec<Vec2> = sightings.iter().map(crate::geom::Pose2D::pos).collect();
        self.mem
            .integrate_observation(&env.scene.coarse_obstacle_grid, pos, &positions);
        let mut ctx = NavInputs {
            graph: env.graph,
            pose: pos,
            speed: env.me().speed,
            warned: !obs.warnings.is_empty(),
            visible_sentinels: &sightings,
            rng: &mut self.rng,
        };
        let out = self.nav.step(&mut ctx, &mut self.mem);
        notes.extend(out.notes);
        let action = match out.step {
            NavStep::Move(v) => AgentAction::Move(v),
            NavStep::Arrived => AgentAction::Move(place.location.pos() - pos),
            NavStep::Blocked => AgentAction::Wait,
        };
        Decision { action, notes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose2D;
    use crate::map_tool::build_waypoint_graph;
    use crate::scene::SceneSpec;

    fn cross_scene() -> SceneSpec {
        SceneSpec {
            name: "cross".into(),
            extent: (100.0, 100.0),
            road_segments: vec![
                vec![Pose2D::point(0.0, 50.0), Pose2D::point(100.0, 50.0)],
                vec![Pose2D::point(50.0, 0.0), Pose2D::point(50.0, 100.0)],
            ],
            coarse_obstacle_grid: ObstacleGrid::new(1.0, 100, 100),
            places: Vec::new(),
            agent_roster: Vec::new(),
            sentinel_roster: Vec::new(),
            rng_seed: 0,
        }
    }

    #[test]
    fn single_candidate_is_chosen() {
        let scene = cross_scene();
        let g = build_waypoint_graph(&scene);
        let believed = BelievedWorld::default();
        let cands = vec![("Only".to_string(), Vec2::new(100.0, 50.0))];
        let cfg = MctsConfig::default();
        let best = mcts_select(
            &g,
            &scene.coarse_obstacle_grid,
            Vec2::new(0.0, 50.0),
            &cands,
            1.0,
            &believed,
            &cfg,
        );
        assert_eq!(best, Some(0));
    }

    #[test]
    fn heavy_detection_weight_prefers_the_clean_route() {
        let scene = cross_scene();
        let g = build_waypoint_graph(&scene);
        // sentinel sits on the eastern arm; the northern arm is clean
        let believed = BelievedWorld {
            peers: vec![],
            sentinels: vec![Vec2::new(80.0, 50.0)],
        };
        let cfg = MctsConfig {
            gamma: 1000.0,
            rollout_horizon: 150,
            ..MctsConfig::default()
        };
        let start = Vec2::new(50.0, 50.0);
        let cands = vec![
            ("East End".to_string(), Vec2::new(100.0, 50.0)),
            ("North End".to_string(), Vec2::new(50.0, 100.0)),
        ];
        let east = rollout_reward(&g, &scene.coarse_obstacle_grid, start, cands[0].1, 1.0, &believed, &cfg);
        let north = rollout_reward(&g, &scene.coarse_obstacle_grid, start, cands[1].1, 1.0, &believed, &cfg);
        assert!(north > east, "north {north} must beat east {east}");
        let best = mcts_select(&g, &scene.coarse_obstacle_grid, start, &cands, 1.0, &believed, &cfg);
        assert_eq!(best, Some(1));
    }

    #[test]
    fn zero_weights_fall_back_to_the_first_candidate() {
        let scene = cross_scene();
        let g = build_waypoint_graph(&scene);
        let believed = BelievedWorld::default();
        let cfg = MctsConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..MctsConfig::default()
        };
        let cands = vec![
            ("A".to_string(), Vec2::new(100.0, 50.0)),
            ("B".to_string(), Vec2::new(50.0, 100.0)),
        ];
        let best = mcts_select(
            &g,
            &scene.coarse_obstacle_grid,
            Vec2::new(0.0, 50.0),
            &cands,
            1.0,
            &believed,
            &cfg,
        );
        assert_eq!(best, Some(0), "all rewards zero: the tie-break picks the first");
    }

    #[test]
    fn reward_strictly_decreases_in_gamma_when_detected() {
        let scene = cross_scene();
        let g = build_waypoint_graph(&scene);
        let believed = BelievedWorld {
            peers: vec![],
            sentinels: vec![Vec2::new(60.0, 50.0)],
        };
        let start = Vec2::new(50.0, 50.0);
        let dest = Vec2::new(70.0, 50.0);
        let mut last = f64::MAX;
        for gamma in [0.0, 1.0, 10.0, 100.0] {
            let cfg = MctsConfig {
                gamma,
                ..MctsConfig::default()
            };
            let r = rollout_reward(&g, &scene.coarse_obstacle_grid, start, dest, 1.0, &believed, &cfg);
            assert!(r < last, "gamma {gamma}: {r} not below {last}");
            last = r;
        }
    }

    #[test]
    fn selection_is_deterministic() {
        let scene = cross_scene();
        let g = build_waypoint_graph(&scene);
        let believed = BelievedWorld {
            peers: vec![Vec2::new(20.0, 50.0)],
            sentinels: vec![Vec2::new(80.0, 50.0)],
        };
        let cfg = MctsConfig::default();
        let cands = vec![
            ("A".to_string(), Vec2::new(100.0, 50.0)),
            ("B".to_string(), Vec2::new(50.0, 100.0)),
            ("C".to_string(), Vec2::new(0.0, 50.0)),
        ];
        let a = mcts_select(&g, &scene.coarse_obstacle_grid, Vec2::new(50.0, 50.0), &cands, 1.0, &believed, &cfg);
        let b = mcts_select(&g, &scene.coarse_obstacle_grid, Vec2::new(50.0, 50.0), &cands, 1.0, &believed, &cfg);
        assert_eq!(a, b);
    }
}
