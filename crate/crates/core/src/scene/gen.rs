//! Synthetic grid-city generator: streets on block boundaries, buildings
//! filling block interiors, indoor pockets carved out for places.

use super::*;
use crate::geom::{Pose2D, Rect, Vec2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Half-width of a street, measured from its centerline.
pub const ROAD_HALF_WIDTH: f64 = 5.0;
/// Side length of a place bounding box.
pub const PLACE_BOX_SIZE: f64 = 8.0;
/// Sentinels "near the geometric center" are placed within this radius.
pub const CENTER_SENTINEL_RADIUS: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct SceneProfile {
    pub blocks_x: usize,
    pub blocks_y: usize,
    pub block_size_m: f64,
    pub n_places: usize,
    pub n_agents: usize,
    pub n_sentinels: usize,
    pub sentinel_kind: SentinelKind,
}

impl Default for SceneProfile {
    /// Standard profile: 11×11 blocks of 72 m ≈ 800 m × 800 m.
    fn default() -> Self {
        SceneProfile {
            blocks_x: 11,
            blocks_y: 11,
            block_size_m: 72.0,
            n_places: 80,
            n_agents: 5,
            n_sentinels: 10,
            sentinel_kind: SentinelKind::Stationary,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("profile constraint violated: {0}")]
    Profile(String),
    #[error("infeasible profile: {0}")]
    Infeasible(String),
}

struct Slot {
    center: Vec2,
    indoor: bool,
}

/// Deterministically generate a scene from a profile and a seed.
pub fn generate_scene(profile: &SceneProfile, seed: u64) -> Result<SceneSpec, GenerationError> {
    check_profile(profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let bs = profile.block_size_m;
    let width = profile.blocks_x as f64 * bs;
    let height = profile.blocks_y as f64 * bs;

    // Street centerlines along every block boundary.
    let mut roads: Vec<Vec<Pose2D>> = Vec::new();
    for i in 0..=profile.blocks_x {
        let x = (i as f64 * bs).min(width);
        roads.push(vec![Pose2D::point(x, 0.0), Pose2D::point(x, height)]);
    }
    for j in 0..=profile.blocks_y {
        let y = (j as f64 * bs).min(height);
        roads.push(vec![Pose2D::point(0.0, y), Pose2D::point(width, y)]);
    }

    let mut grid = ObstacleGrid::filled(1.0, width.ceil() as usize, height.ceil() as usize);
    carve_roads(&mut grid, &roads);

    // Candidate slots: indoor pockets along block frontages, outdoor spots on streets.
    let mut indoor_slots = indoor_pocket_slots(profile);
    let mut outdoor_slots = outdoor_slots(profile);
    let total = indoor_slots.len() + outdoor_slots.len();
    if profile.n_places > total {
        return Err(GenerationError::Infeasible(format!(
            "n_places = {} exceeds the road network's capacity of {total} place slots",
            profile.n_places
        )));
    }
    let min_indoor = indoor_count_for(profile);
    if min_indoor > indoor_slots.len() {
        return Err(GenerationError::Infeasible(format!(
            "needs {min_indoor} indoor places but the blocks only fit {}",
            indoor_slots.len()
        )));
    }

    indoor_slots.shuffle(&mut rng);
    outdoor_slots.shuffle(&mut rng);
    // aim for ~60% indoor, but shift the split when one pool runs short
    let n_indoor = min_indoor
        .max(profile.n_places.saturating_sub(outdoor_slots.len()))
        .min(profile.n_places)
        .min(indoor_slots.len());
    let n_outdoor = profile.n_places - n_indoor;
    if n_outdoor > outdoor_slots.len() {
        return Err(GenerationError::Infeasible(format!(
            "n_places = {} needs {n_outdoor} outdoor slots, streets only fit {}",
            profile.n_places,
            outdoor_slots.len()
        )));
    }

    let mut slots: Vec<Slot> = Vec::with_capacity(profile.n_places);
    slots.extend(indoor_slots.drain(..n_indoor).map(|c| Slot { center: c, indoor: true }));
    slots.extend(outdoor_slots.drain(..n_outdoor).map(|c| Slot { center: c, indoor: false }));

    let mut places = Vec::with_capacity(slots.len());
    let names = place_names(&slots, &mut rng);
    for (slot, name) in slots.iter().zip(names) {
        if slot.indoor {
            carve_pocket(&mut grid, slot.center);
        }
        places.push(Place {
            name,
            location: Pose2D::point(slot.center.x, slot.center.y),
            bounding_box: Rect::centered(slot.center, PLACE_BOX_SIZE, PLACE_BOX_SIZE),
            indoor: slot.indoor,
        });
    }

    // Agents start at distinct indoor places.
    let mut indoor_names: Vec<&str> = places
        .iter()
        .filter(|p| p.indoor)
        .map(|p| p.name.as_str())
        .collect();
    indoor_names.shuffle(&mut rng);
    let all_names: Vec<String> = places.iter().map(|p| p.name.clone()).collect();
    let mut agents = Vec::with_capacity(profile.n_agents);
    for (i, start) in indoor_names.iter().take(profile.n_agents).enumerate() {
        let mut known: BTreeSet<String> = BTreeSet::new();
        known.insert((*start).to_string());
        // each agent knows roughly 60% of the places
        for name in &all_names {
            if rng.random_range(0..100) < 60 {
                known.insert(name.clone());
            }
        }
        agents.push(AgentSpec {
            name: AGENT_NAMES[i].to_string(),
            initial_place: (*start).to_string(),
            known_places: known,
            speed: DEFAULT_AGENT_SPEED,
        });
    }

    let sentinels = place_sentinels(profile, &places, &agents, &grid, &mut rng)?;

    Ok(SceneSpec {
        name: format!(
            "grid{}x{}-s{seed}",
            profile.blocks_x, profile.blocks_y
        ),
        extent: (width, height),
        road_segments: roads,
        coarse_obstacle_grid: grid,
        places,
        agent_roster: agents,
        sentinel_roster: sentinels,
        rng_seed: seed,
    })
}

fn check_profile(p: &SceneProfile) -> Result<(), GenerationError> {
    if p.blocks_x < 2 || p.blocks_y < 2 {
        return Err(GenerationError::Profile("blocks_x and blocks_y must be ≥ 2".into()));
    }
    if !(MIN_PLACES_GENERATED..=MAX_PLACES).contains(&p.n_places) {
        return Err(GenerationError::Profile(format!(
            "n_places must be in [{MIN_PLACES_GENERATED}, {MAX_PLACES}]"
        )));
    }
    if p.n_agents == 0 || p.n_agents > MAX_AGENTS {
        return Err(GenerationError::Profile(format!("n_agents must be in [1, {MAX_AGENTS}]")));
    }
    if p.n_sentinels > MAX_SENTINELS {
        return Err(GenerationError::Profile(format!("n_sentinels must be ≤ {MAX_SENTINELS}")));
    }
    if p.block_size_m < 4.0 * ROAD_HALF_WIDTH {
        return Err(GenerationError::Profile("block_size_m too small for streets".into()));
    }
    Ok(())
}

fn indoor_count_for(profile: &SceneProfile) -> usize {
    profile.n_agents.max((profile.n_places * 3) / 5)
}

fn carve_roads(grid: &mut ObstacleGrid, roads: &[Vec<Pose2D>]) {
    for seg in roads {
        for pair in seg.windows(2) {
            let (a, b) = (pair[0].pos(), pair[1].pos());
            // axis-aligned streets: free every cell whose center lies within
            // the half-width band around the centerline
            let min_x = (a.x.min(b.x) - ROAD_HALF_WIDTH).floor().max(0.0) as usize;
            let max_x = (a.x.max(b.x) + ROAD_HALF_WIDTH).ceil() as usize;
            let min_y = (a.y.min(b.y) - ROAD_HALF_WIDTH).floor().max(0.0) as usize;
            let max_y = (a.y.max(b.y) + ROAD_HALF_WIDTH).ceil() as usize;
            for c in min_x..max_x.min(grid.width) {
                for r in min_y..max_y.min(grid.height) {
                    let center = Vec2::new((c as f64 + 0.5) * grid.cell_size, (r as f64 + 0.5) * grid.cell_size);
                    if crate::geom::point_segment_distance(center, a, b) <= ROAD_HALF_WIDTH {
                        grid.set(c, r, false);
                    }
                }
            }
        }
    }
}

/// Free the cells of an indoor pocket so agents can walk in and out.
fn carve_pocket(grid: &mut ObstacleGrid, center: Vec2) {
    let half = PLACE_BOX_SIZE / 2.0;
    let min_c = ((center.x - half) / grid.cell_size).floor().max(0.0) as usize;
    let max_c = ((center.x + half) / grid.cell_size).ceil() as usize;
    let min_r = ((center.y - half) / grid.cell_size).floor().max(0.0) as usize;
    let max_r = ((center.y + half) / grid.cell_size).ceil() as usize;
    for c in min_c..max_c.min(grid.width) {
        for r in min_r..max_r.min(grid.height) {
            grid.set(c, r, false);
        }
    }
}

/// Pocket centers along each block's street frontage, flush with the
/// building face so the opening connects to the street.
fn indoor_pocket_slots(profile: &SceneProfile) -> Vec<Vec2> {
    let bs = profile.block_size_m;
    let inner = bs - 2.0 * ROAD_HALF_WIDTH; // interior side length
    let half = PLACE_BOX_SIZE / 2.0;
    let pitch = PLACE_BOX_SIZE + 4.0;
    let per_side = ((inner - PLACE_BOX_SIZE) / pitch).floor() as usize + 1;
    let mut slots = Vec::new();
    for bi in 0..profile.blocks_x {
        for bj in 0..profile.blocks_y {
            let x0 = bi as f64 * bs + ROAD_HALF_WIDTH;
            let y0 = bj as f64 * bs + ROAD_HALF_WIDTH;
            for k in 0..per_side {
                let along = x0 + half + k as f64 * pitch;
                // south and north frontages
                slots.push(Vec2::new(along, y0 + half));
                slots.push(Vec2::new(along, y0 + inner - half));
            }
            for k in 0..per_side {
                let along = y0 + half + k as f64 * pitch;
                // west and east frontages, skipping the corners already used
                if k > 0 && k + 1 < per_side {
                    slots.push(Vec2::new(x0 + half, along));
                    slots.push(Vec2::new(x0 + inner - half, along));
                }
            }
        }
    }
    slots
}

/// Outdoor spots along each street between intersections.
fn outdoor_slots(profile: &SceneProfile) -> Vec<Vec2> {
    let bs = profile.block_size_m;
    let fractions = [0.25, 0.5, 0.75];
    let mut slots = Vec::new();
    for i in 0..=profile.blocks_x {
        for j in 0..profile.blocks_y {
            for f in fractions {
                slots.push(Vec2::new(i as f64 * bs, (j as f64 + f) * bs));
            }
        }
    }
    for j in 0..=profile.blocks_y {
        for i in 0..profile.blocks_x {
            for f in fractions {
                slots.push(Vec2::new((i as f64 + f) * bs, j as f64 * bs));
            }
        }
    }
    slots
}

const AGENT_NAMES: [&str; 15] = [
    "Ada Fontaine",
    "Bo Castellan",
    "Cyrus Vale",
    "Dara Okafor",
    "Emil Novak",
    "Farah Lindqvist",
    "Gideon Marsh",
    "Hana Petrov",
    "Ivo Santini",
    "June Abara",
    "Kofi Andersen",
    "Lena Moreau",
    "Milo Tanaka",
    "Nia Castillo",
    "Otto Kersten",
];

const WORDS: [&str; 30] = [
    "Aster", "Birch", "Cedar", "Dahlia", "Elm", "Fern", "Garnet", "Hazel", "Iris", "Juniper",
    "Kestrel", "Larch", "Maple", "Nettle", "Oak", "Pasque", "Quince", "Rowan", "Sorrel", "Tansy",
    "Umber", "Violet", "Willow", "Yarrow", "Zinnia", "Cobalt", "Saffron", "Indigo", "Sable",
    "Marigold",
];

const INDOOR_KINDS: [&str; 6] = ["Museum", "Library", "Gallery", "Cafe", "Hotel", "Archive"];
const OUTDOOR_KINDS: [&str; 5] = ["Square", "Fountain", "Garden", "Market", "Plaza"];

fn place_names(slots: &[Slot], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut used = BTreeSet::new();
    let mut names = Vec::with_capacity(slots.len());
    for slot in slots {
        let kinds: &[&str] = if slot.indoor { &INDOOR_KINDS } else { &OUTDOOR_KINDS };
        loop {
            let word = WORDS[rng.random_range(0..WORDS.len())];
            let kind = kinds[rng.random_range(0..kinds.len())];
            let candidate = format!("{word} {kind}");
            if used.insert(candidate.clone()) {
                names.push(candidate);
                break;
            }
            // pool exhausted for this combination: qualify with a number
            let qualified = format!("{word} {kind} {}", used.len());
            if used.insert(qualified.clone()) {
                names.push(qualified);
                break;
            }
        }
    }
    names
}

fn place_sentinels(
    profile: &SceneProfile,
    places: &[Place],
    agents: &[AgentSpec],
    grid: &ObstacleGrid,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SentinelSpec>, GenerationError> {
    if profile.n_sentinels == 0 {
        return Ok(Vec::new());
    }
    let centroid = {
        let mut c = Vec2::ZERO;
        for a in agents {
            let p = places.iter().find(|p| p.name == a.initial_place).unwrap();
            c = c + p.location.pos();
        }
        c * (1.0 / agents.len() as f64)
    };

    let road_points = road_point_pool(profile, grid);
    let near: Vec<Vec2> = road_points
        .iter()
        .copied()
        .filter(|p| p.distance(centroid) <= CENTER_SENTINEL_RADIUS)
        .collect();
    let n_center = profile.n_sentinels.min(5);
    if near.len() < n_center {
        return Err(GenerationError::Infeasible(format!(
            "only {} road points within {CENTER_SENTINEL_RADIUS} m of the agents' centroid, need {n_center}",
            near.len()
        )));
    }

    let mut picked: Vec<Vec2> = Vec::new();
    let mut pool = near;
    pool.shuffle(rng);
    for p in pool {
        if picked.len() == n_center {
            break;
        }
        if picked.iter().all(|q| q.distance(p) >= 10.0) {
            picked.push(p);
        }
    }
    while picked.len() < n_center {
        // dense fallback: allow closer spacing
        let p = road_points[rng.random_range(0..road_points.len())];
        if p.distance(centroid) <= CENTER_SENTINEL_RADIUS && !picked.contains(&p) {
            picked.push(p);
        }
    }

    let mut rest_pool = road_points.clone();
    rest_pool.shuffle(rng);
    for p in rest_pool {
        if picked.len() == profile.n_sentinels {
            break;
        }
        if picked.iter().all(|q| q.distance(p) >= 10.0) {
            picked.push(p);
        }
    }
    if picked.len() < profile.n_sentinels {
        return Err(GenerationError::Infeasible(format!(
            "road network too small for {} sentinels", profile.n_sentinels
        )));
    }

    let mut sentinels = Vec::with_capacity(picked.len());
    for (id, p) in picked.into_iter().enumerate() {
        match profile.sentinel_kind {
            SentinelKind::Stationary => {
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                sentinels.push(SentinelSpec::stationary(
                    id as u32,
                    Pose2D::with_heading(p.x, p.y, heading),
                ));
            }
            SentinelKind::Patrolling => {
                let route = patrol_loop_for(profile, p);
                let start = route[0];
                sentinels.push(SentinelSpec::patrolling(
                    id as u32,
                    Pose2D::with_heading(start.x, start.y, 0.0),
                    route,
                ));
            }
        }
    }
    Ok(sentinels)
}

/// Evenly spaced points along every street centerline.
fn road_point_pool(profile: &SceneProfile, grid: &ObstacleGrid) -> Vec<Vec2> {
    let bs = profile.block_size_m;
    let step = 10.0;
    let mut points = Vec::new();
    let width = profile.blocks_x as f64 * bs;
    let height = profile.blocks_y as f64 * bs;
    for i in 0..=profile.blocks_x {
        let x = i as f64 * bs;
        let n = (height / step) as usize;
        for k in 1..n {
            points.push(Vec2::new(x, k as f64 * step));
        }
    }
    for j in 0..=profile.blocks_y {
        let y = j as f64 * bs;
        let n = (width / step) as usize;
        for k in 1..n {
            points.push(Vec2::new(k as f64 * step, y));
        }
    }
    points.retain(|p| !grid.blocked(*p));
    points
}

/// The rectangular street loop around the block nearest to `p`.
fn patrol_loop_for(profile: &SceneProfile, p: Vec2) -> Vec<Pose2D> {
    let bs = profile.block_size_m;
    let bi = ((p.x / bs).floor() as usize).min(profile.blocks_x - 1);
    let bj = ((p.y / bs).floor() as usize).min(profile.blocks_y - 1);
    let (x0, y0) = (bi as f64 * bs, bj as f64 * bs);
    let (x1, y1) = (x0 + bs, y0 + bs);
    vec![
        Pose2D::point(x0, y0),
        Pose2D::point(x1, y0),
        Pose2D::point(x1, y1),
        Pose2D::point(x0, y1),
    ]
}
