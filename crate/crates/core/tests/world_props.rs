//! World invariants: exactly-once message delivery, occlusion soundness of
//! the visibility model, and countdown monotonicity at fixed range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentinel_sim::geom::{Pose2D, Rect, Vec2};
use sentinel_sim::map_tool::build_waypoint_graph;
use sentinel_sim::protocol::{Message, MessageKind};
use sentinel_sim::scene::{AgentSpec, ObstacleGrid, Place, SceneSpec, SentinelSpec};
use sentinel_sim::world::{AgentAction, World};
use std::collections::BTreeSet;

fn open_scene(n_agents: usize, sentinels: Vec<SentinelSpec>) -> SceneSpec {
    let mut places = Vec::new();
    let mut agents = Vec::new();
    for i in 0..n_agents {
        let name = format!("Hut {i}");
        let x = 20.0 + 30.0 * i as f64;
        places.push(Place {
            name: name.clone(),
            location: Pose2D::point(x, 50.0),
            bounding_box: Rect::centered(Vec2::new(x, 50.0), 8.0, 8.0),
            indoor: true,
        });
        agents.push(AgentSpec {
            name: format!("Agent {i}"),
            initial_place: name,
            known_places: BTreeSet::new(),
            speed: 1.0,
        });
    }
    SceneSpec {
        name: "open".into(),
        extent: (200.0, 100.0),
        road_segments: vec![vec![Pose2D::point(0.0, 50.0), Pose2D::point(200.0, 50.0)]],
        coarse_obstacle_grid: ObstacleGrid::new(1.0, 200, 100),
        places,
        agent_roster: agents,
        sentinel_roster: sentinels,
        rng_seed: 0,
    }
}

#[test]
fn every_message_is_delivered_exactly_once_to_every_alive_agent() {
    let scene = open_scene(4, vec![]);
    let graph = build_waypoint_graph(&scene);
    let mut world = World::new(&scene, &graph, 4, 0, None, 200, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sent: Vec<String> = Vec::new();
    let mut received: Vec<Vec<String>> = vec![Vec::new(); 4];
    for step in 0..60u32 {
        let mut actions = Vec::new();
        for i in 0..4 {
            if rng.random_bool(0.4) {
                let note = format!("u{step}a{i}");
                let mut m = Message::new(
                    0,
                    format!("Agent {i}"),
                    MessageKind::AskPose { target: "Agent 0".into() },
                );
                m.note = Some(note.clone());
                sent.push(note);
                actions.push(AgentAction::Speak(m));
            } else {
                actions.push(AgentAction::Wait);
            }
        }
        let obs = world.step(actions).unwrap();
        for (i, o) in obs.iter().enumerate() {
            for m in &o.messages {
                received[i].push(m.note.clone().unwrap());
            }
        }
    }
    // drain the last enqueued batch
    let obs = world.step(vec![AgentAction::Wait; 4]).unwrap();
    for (i, o) in obs.iter().enumerate() {
        for m in &o.messages {
            received[i].push(m.note.clone().unwrap());
        }
    }
    for inbox in &received {
        assert_eq!(inbox, &sent, "each agent hears every message exactly once, in order");
    }
}

#[test]
fn occlusion_soundness_against_a_sampled_oracle() {
    // random walls; wherever fine sampling finds an obstacle cell on the
    // segment, the traversal must report occlusion (and visibility 0)
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..300 {
        let mut grid = ObstacleGrid::new(1.0, 60, 60);
        for _ in 0..rng.random_range(5..40) {
            let c = rng.random_range(0..60);
            let r = rng.random_range(0..60);
            grid.set(c, r, true);
        }
        let a = Vec2::new(rng.random_range(0.0..60.0), rng.random_range(0.0..60.0));
        let b = Vec2::new(rng.random_range(0.0..60.0), rng.random_range(0.0..60.0));
        let occluded = grid.segment_occluded(a, b);
        // fine sampling: if any sampled point hits an obstacle cell the
        // traversal must have seen it too
        let steps = (a.distance(b) * 20.0).ceil().max(1.0) as usize;
        let mut sampled_hit = false;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let p = a + (b - a) * t;
            if let Some((c, r)) = grid.cell_of(p) {
                if grid.get(c, r) {
                    sampled_hit = true;
                    break;
                }
            }
        }
        assert!(
            !sampled_hit || occluded,
            "sampling found a wall the traversal missed: {a:?} -> {b:?}"
        );
    }
}

#[test]
fn countdown_decreases_by_a_constant_at_fixed_distance() {
    // sentinel glued to an agent standing still in its cone
    let mut sentinel = SentinelSpec::stationary(0, Pose2D::with_heading(35.0, 50.0, std::f64::consts::PI));
    sentinel.angular_rate = 1e-12;
    let mut scene = open_scene(1, vec![sentinel]);
    scene.places[0].indoor = false; // stand outdoors
    let graph = build_waypoint_graph(&scene);
    let mut world = World::new(&scene, &graph, 1, 1, None, 100, false).unwrap();
    world.step(vec![AgentAction::Wait]).unwrap();
    let mut previous = world.sentinels()[0].countdowns["Agent 0"];
    assert_eq!(previous, 15.0);
    let mut deltas = Vec::new();
    for _ in 0..2 {
        world.step(vec![AgentAction::Wait]).unwrap();
        let now = world.sentinels()[0].countdowns["Agent 0"];
        deltas.push(previous - now);
        previous = now;
    }
    assert!(deltas[0] > 0.0);
    assert!((deltas[0] - deltas[1]).abs() < 1e-12, "constant decrement: {deltas:?}");
}
