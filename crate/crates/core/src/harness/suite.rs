//! Suite execution: the cartesian product of scenes × seeds × policies as
//! share-nothing episodes. With the `parallel` feature the cells run on a
//! rayon pool sized by `jobs` and merge deterministically by cell index;
//! without it (or with `jobs` ≤ 1) they run sequentially with identical
//! results.

use super::{run_episode, EpisodeConfig, EpisodeMetrics, PolicyAssignment};
use crate::map_tool::build_waypoint_graph;
use crate::scene::SceneSpec;

#[derive(Debug, Clone)]
pub struct SuiteSpec {
    pub seeds: Vec<u64>,
    pub policies: Vec<String>,
    pub base: EpisodeConfig,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteCell {
    pub scene: String,
    pub seed: u64,
    pub policy: String,
    pub outcome: Result<EpisodeMetrics, String>,
}

fn cell_configs(scenes: &[SceneSpec], spec: &SuiteSpec) -> Vec<(usize, u64, String)> {
    let mut cells = Vec::with_capacity(scenes.len() * spec.seeds.len() * spec.policies.len());
    for (si, _) in scenes.iter().enumerate() {
        for &seed in &spec.seeds {
            for policy in &spec.policies {
                cells.push((si, seed, policy.clone()));
            }
        }
    }
    cells
}

fn run_cell(
    scenes: &[SceneSpec],
    graphs: &[crate::map_tool::WaypointGraph],
    spec: &SuiteSpec,
    (si, seed, policy): &(usize, u64, String),
) -> SuiteCell {
    let mut cfg = spec.base.clone();
    cfg.seed = *seed;
    cfg.policies = PolicyAssignment::Uniform(policy.clone());
    let outcome = run_episode(&scenes[*si], &graphs[*si], &cfg, None).map_err(|e| e.to_string());
    SuiteCell {
        scene: scenes[*si].name.clone(),
        seed: *seed,
        policy: policy.clone(),
        outcome,
    }
}

/// Run every cell. Episode errors are recorded per cell; the suite finishes
/// regardless of individual outcomes.
pub fn run_suite(scenes: &[SceneSpec], spec: &SuiteSpec) -> Vec<SuiteCell> {
    let graphs: Vec<_> = scenes.iter().map(build_waypoint_graph).collect();
    let cells = cell_configs(scenes, spec);

    #[cfg(feature = "parallel")]
    {
        if spec.jobs != 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(spec.jobs) // 0 = rayon default
                .build()
                .expect("thread pool");
            return pool.install(|| {
                cells
                    .par_iter()
                    .map(|cell| run_cell(scenes, &graphs, spec, cell))
                    .collect()
            });
        }
    }

    cells
        .iter()
        .map(|cell| run_cell(scenes, &graphs, spec, cell))
        .collect()
}
