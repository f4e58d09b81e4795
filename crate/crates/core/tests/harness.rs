//! Episode- and suite-level behavior: metrics, determinism, taxonomy,
//! mixed rosters, and the oracle-perception invariant.

use sentinel_sim::agents::{scripted, AgentPolicy};
use sentinel_sim::geom::{Pose2D, Rect, Vec2};
use sentinel_sim::harness::{
    aggregate, failure_histogram, run_episode, run_episode_with, run_suite, write_csv,
    EpisodeConfig, FailureReason, PolicyAssignment, SuiteSpec,
};
use sentinel_sim::map_tool::build_waypoint_graph;
use sentinel_sim::scene::{
    generate_scene, AgentSpec, ObstacleGrid, Place, SceneProfile, SceneSpec, SentinelKind,
    SentinelSpec,
};
use std::collections::BTreeSet;

fn small_profile(n_sentinels: usize) -> SceneProfile {
    SceneProfile {
        blocks_x: 2,
        blocks_y: 2,
        block_size_m: 70.0,
        n_places: 50,
        n_agents: 3,
        n_sentinels,
        sentinel_kind: SentinelKind::Stationary,
    }
}

/// Open field with a shared known plaza and an optional sentinel row.
fn field_scene(sentinels: Vec<SentinelSpec>) -> SceneSpec {
    let mk = |name: &str, x: f64, y: f64, indoor: bool| Place {
        name: name.into(),
        location: Pose2D::point(x, y),
        bounding_box: Rect::centered(Vec2::new(x, y), 8.0, 8.0),
        indoor,
    };
    let known: BTreeSet<String> = ["Hut A", "Hut B", "Mid Plaza"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    SceneSpec {
        name: "field".into(),
        extent: (200.0, 200.0),
        road_segments: vec![vec![Pose2D::point(0.0, 100.0), Pose2D::point(200.0, 100.0)]],
        coarse_obstacle_grid: ObstacleGrid::new(1.0, 200, 200),
        places: vec![
            mk("Hut A", 30.0, 100.0, true),
            mk("Hut B", 170.0, 100.0, true),
            mk("Mid Plaza", 100.0, 100.0, false),
        ],
        agent_roster: vec![
            AgentSpec {
                name: "Ada".into(),
                initial_place: "Hut A".into(),
                known_places: known.clone(),
                speed: 1.0,
            },
            AgentSpec {
                name: "Bo".into(),
                initial_place: "Hut B".into(),
                known_places: known,
                speed: 1.0,
            },
        ],
        sentinel_roster: sentinels,
        rng_seed: 0,
    }
}

#[test]
fn unobstructed_rendezvous_succeeds_without_catches() {
    let scene = field_scene(vec![]);
    let graph = build_waypoint_graph(&scene);
    let mut cfg = EpisodeConfig::new(2, 0, "cosar");
    cfg.horizon = 600;
    let m = run_episode(&scene, &graph, &cfg, None).unwrap();
    assert!(m.success, "reason: {:?}", m.failure_reason);
    assert_eq!(m.caught_rate, 0.0);
    assert_eq!(m.failure_reason, FailureReason::None);
    assert!(m.time_cost < 600);
}

#[test]
fn standing_in_a_cone_gets_captured_with_reason_caught() {
    // rotating sentinel 10 m from the stand spot; the scripted agent walks
    // there and freezes; capture follows the cone sweep within one rotation
    let sentinel = SentinelSpec::stationary(0, Pose2D::with_heading(110.0, 100.0, 0.0));
    let scene = field_scene(vec![sentinel]);
    let graph = build_waypoint_graph(&scene);
    let mut cfg = EpisodeConfig::new(1, 1, "cosar"); // name ignored by factory below
    cfg.horizon = 300;
    let factory = |_i: usize| -> Result<Box<dyn AgentPolicy>, sentinel_sim::harness::HarnessError> {
        Ok(Box::new(scripted::WalkThenStand {
            target: Vec2::new(100.0, 100.0),
        }))
    };
    let m = run_episode_with(&scene, &graph, &cfg, &factory, None).unwrap();
    assert_eq!(m.caught_rate, 1.0);
    assert_eq!(m.failure_reason, FailureReason::Caught);
    assert!(!m.success);
}

#[test]
fn identical_configs_reproduce_metrics_and_traces() {
    let scene = generate_scene(&small_profile(5), 21).unwrap();
    let graph = build_waypoint_graph(&scene);
    let mut cfg = EpisodeConfig::new(3, 5, "cosar");
    cfg.horizon = 400;
    cfg.seed = 9;
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    let m1 = run_episode(&scene, &graph, &cfg, Some(&mut t1)).unwrap();
    let m2 = run_episode(&scene, &graph, &cfg, Some(&mut t2)).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(t1, t2, "traces must be byte-identical");
}

#[test]
fn suite_produces_one_row_per_cell_and_aggregates() {
    let scenes: Vec<SceneSpec> = (0..2)
        .map(|i| generate_scene(&small_profile(3), 50 + i).unwrap())
        .collect();
    let mut base = EpisodeConfig::new(3, 3, "oracle");
    base.horizon = 200;
    let spec = SuiteSpec {
        seeds: vec![1, 2, 3],
        policies: vec!["oracle".into(), "oracle_dz".into()],
        base,
        jobs: 1,
    };
    let cells = run_suite(&scenes, &spec);
    assert_eq!(cells.len(), 2 * 3 * 2);
    let rows = aggregate(&cells);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.episodes, 6);
        assert!(r.detected_rate >= 0.0 && r.detected_rate <= 1.0);
        assert!(r.caught_rate >= 0.0 && r.caught_rate <= 1.0);
    }
    let failed: usize = cells
        .iter()
        .filter(|c| matches!(&c.outcome, Ok(m) if !m.success))
        .count();
    assert_eq!(failure_histogram(&cells).values().sum::<usize>(), failed);
}

#[test]
fn parallel_and_sequential_suites_write_identical_csv() {
    let scenes: Vec<SceneSpec> = (0..2)
        .map(|i| generate_scene(&small_profile(4), 90 + i).unwrap())
        .collect();
    let mut base = EpisodeConfig::new(3, 4, "cosar");
    base.horizon = 250;
    let spec1 = SuiteSpec {
        seeds: vec![1, 2],
        policies: vec!["cosar".into(), "oracle_dz".into()],
        base: base.clone(),
        jobs: 1,
    };
    let spec8 = SuiteSpec { jobs: 8, ..spec1.clone() };
    let mut csv1 = Vec::new();
    let mut csv8 = Vec::new();
    write_csv(&run_suite(&scenes, &spec1), &mut csv1).unwrap();
    write_csv(&run_suite(&scenes, &spec8), &mut csv8).unwrap();
    assert_eq!(csv1, csv8);
}

#[test]
fn mixed_policy_roster_is_honored() {
    let scene = field_scene(vec![]);
    let graph = build_waypoint_graph(&scene);
    let mut cfg = EpisodeConfig::new(2, 0, "cosar");
    cfg.horizon = 600;
    cfg.policies = PolicyAssignment::PerAgent(vec!["oracle".into(), "oracle".into()]);
    // pure oracle teams pick the place nearest the centroid and succeed here
    let m = run_episode(&scene, &graph, &cfg, None).unwrap();
    assert!(m.success);

    // a bad per-agent list is a config error
    cfg.policies = PolicyAssignment::PerAgent(vec!["oracle".into()]);
    assert!(run_episode(&scene, &graph, &cfg, None).is_err());
}

#[test]
fn oracle_perception_changes_observations_not_mechanics() {
    let sentinel = SentinelSpec::stationary(0, Pose2D::with_heading(110.0, 100.0, 0.0));
    let scene = field_scene(vec![sentinel]);
    let graph = build_waypoint_graph(&scene);
    let factory = |_i: usize| -> Result<Box<dyn AgentPolicy>, sentinel_sim::harness::HarnessError> {
        Ok(Box::new(scripted::StandStill))
    };
    let mut traces = Vec::new();
    for oracle_perception in [false, true] {
        let mut cfg = EpisodeConfig::new(2, 1, "cosar");
        cfg.horizon = 120;
        cfg.oracle_perception = oracle_perception;
        let mut t = Vec::new();
        run_episode_with(&scene, &graph, &cfg, &factory, Some(&mut t)).unwrap();
        traces.push(t);
    }
    assert_eq!(
        traces[0], traces[1],
        "with no policy consuming perception, world traces must match"
    );
}

#[test]
fn oracle_policy_never_changes_its_place() {
    let scene = field_scene(vec![]);
    let graph = build_waypoint_graph(&scene);
    let mut cfg = EpisodeConfig::new(2, 0, "oracle");
    cfg.horizon = 600;
    let mut trace = Vec::new();
    let m = run_episode(&scene, &graph, &cfg, Some(&mut trace)).unwrap();
    assert!(m.success);
    // every completion signal names the same single place over the run
    let text = String::from_utf8(trace).unwrap();
    let mut signals = BTreeSet::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for a in v["agents"].as_array().unwrap() {
            if let Some(s) = a["signal"].as_str() {
                signals.insert(s.to_string());
            }
        }
    }
    assert_eq!(signals.len(), 1);
}

#[test]
fn danger_zones_turn_a_deadly_street_into_a_detour() {
    // two parallel streets joined at both ends; a frozen sentinel guards the
    // south street between Ada and the meeting place
    let mk = |name: &str, x: f64, y: f64, indoor: bool| Place {
        name: name.into(),
        location: Pose2D::point(x, y),
        bounding_box: Rect::centered(Vec2::new(x, y), 8.0, 8.0),
        indoor,
    };
    let mut sentinel = SentinelSpec::stationary(0, Pose2D::with_heading(60.0, 10.0, std::f64::consts::PI));
    sentinel.angular_rate = 1e-12; // cone locked facing west, straight at Ada's approach
    let known: BTreeSet<String> = BTreeSet::new();
    let scene = SceneSpec {
        name: "ladder".into(),
        extent: (200.0, 60.0),
        road_segments: vec![
            vec![Pose2D::point(0.0, 10.0), Pose2D::point(196.0, 10.0)],
            vec![Pose2D::point(0.0, 50.0), Pose2D::point(196.0, 50.0)],
            vec![Pose2D::point(0.0, 10.0), Pose2D::point(0.0, 50.0)],
            vec![Pose2D::point(196.0, 10.0), Pose2D::point(196.0, 50.0)],
        ],
        coarse_obstacle_grid: ObstacleGrid::new(1.0, 200, 60),
        places: vec![
            mk("West Hut", 10.0, 10.0, true),
            mk("East Hut", 186.0, 10.0, true),
            mk("Mid Stop", 98.0, 10.0, false),
        ],
        agent_roster: vec![
            AgentSpec { name: "Ada".into(), initial_place: "West Hut".into(), known_places: known.clone(), speed: 1.0 },
            AgentSpec { name: "Bo".into(), initial_place: "East Hut".into(), known_places: known, speed: 1.0 },
        ],
        sentinel_roster: vec![sentinel],
        rng_seed: 0,
    };
    let graph = build_waypoint_graph(&scene);

    let mut cfg = EpisodeConfig::new(2, 1, "oracle");
    cfg.horizon = 800;
    let bold = run_episode(&scene, &graph, &cfg, None).unwrap();
    assert!(!bold.success);
    assert!(bold.caught_rate > 0.0, "walking into a locked cone gets caught");

    cfg.policies = PolicyAssignment::Uniform("oracle_dz".into());
    let careful = run_episode(&scene, &graph, &cfg, None).unwrap();
    assert!(careful.success, "reason: {:?}", careful.failure_reason);
    assert_eq!(careful.caught_rate, 0.0);
    assert!(
        careful.distance > bold.distance,
        "the detour is longer than the straight-line attempt"
    );
}

#[test]
fn patrolling_sentinel_suites_complete_cleanly() {
    let profile = SceneProfile {
        blocks_x: 3,
        blocks_y: 3,
        block_size_m: 70.0,
        n_places: 50,
        n_agents: 3,
        n_sentinels: 5,
        sentinel_kind: SentinelKind::Patrolling,
    };
    let scenes: Vec<SceneSpec> = (0..3).map(|i| generate_scene(&profile, 70 + i).unwrap()).collect();
    let mut base = EpisodeConfig::new(3, 5, "cosar");
    base.horizon = 900;
    base.sentinel_kind = Some(SentinelKind::Patrolling);
    let spec = SuiteSpec {
        seeds: vec![1],
        policies: vec!["oracle_dz".into(), "cosar".into()],
        base,
        jobs: 0,
    };
    let cells = run_suite(&scenes, &spec);
    assert_eq!(cells.len(), 6);
    for cell in &cells {
        let m = cell.outcome.as_ref().expect("no episode errors");
        assert!(m.detected_rate >= 0.0 && m.detected_rate <= 1.0);
    }
}
