//! The navigation app: waypoint graph construction along road polylines and
//! the five coarse spatial queries agents may issue.
//!
//! Nodes are sampled every 7 m of arc length (endpoints always included) and
//! any two nodes at most 7 m apart are linked, which also stitches
//! intersections where roads meet. Routing is Dijkstra with ties broken by
//! the lexicographically smallest node-index sequence.

use crate::geom::{Pose2D, Vec2};
use crate::scene::{ObstacleGrid, Place, SceneSpec};
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Sampling interval and connection threshold, in meters.
pub const WAYPOINT_INTERVAL: f64 = 7.0;
/// Slack on the ≤ 7 m edge test to avoid float-boundary flakiness.
pub const EPS_GEOM: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MapToolError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("no route between ({0:.2}, {1:.2}) and ({2:.2}, {3:.2})")]
    NoRoute(f64, f64, f64, f64),
    #[error("no route for input pair {pair_index}")]
    NoRouteForPair { pair_index: usize },
    #[error("unknown place: {0}")]
    UnknownPlace(String),
    #[error("query_refined_route needs at least 2 points")]
    TooFewPoints,
}

/// Immutable undirected waypoint graph with positive edge weights.
#[derive(Debug, Clone)]
pub struct WaypointGraph {
    nodes: Vec<Vec2>,
    /// (i, j, weight) with i < j, sorted
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
    component: Vec<u32>,
    n_components: usize,
}

impl WaypointGraph {
    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn is_connected(&self) -> bool {
        self.n_components <= 1
    }

    /// Assemble a graph from explicit parts. Nodes are sorted by (x, y) and
    /// exact duplicates removed; edges are given as index pairs into the
    /// *sorted* node list. The caller owns the weight-vs-distance invariant.
    pub fn from_parts(mut nodes: Vec<Vec2>, edges: Vec<(usize, usize, f64)>) -> Self {
        nodes.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
        nodes.dedup_by(|a, b| a == b);
        let mut norm: Vec<(usize, usize, f64)> = edges
            .into_iter()
            .filter(|&(i, j, w)| i != j && w > 0.0)
            .map(|(i, j, w)| if i < j { (i, j, w) } else { (j, i, w) })
            .collect();
        norm.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.partial_cmp(&b.2).unwrap()));
        norm.dedup_by(|a, b| (a.0, a.1) == (b.0, b.1));

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(i, j, w) in &norm {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for adj in &mut adjacency {
            adj.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let (component, n_components) = components(nodes.len(), &norm);
        WaypointGraph {
            nodes,
            edges: norm,
            adjacency,
            component,
            n_components,
        }
    }

    /// Nearest node to a point, ties broken by the smaller index.
    pub fn snap(&self, p: Vec2) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.distance(p);
            match best {
                Some((bd, _)) if d >= bd => {}
                _ => best = Some((d, i)),
            }
        }
        best.map(|(_, i)| i)
    }

    /// Text dump: `N <idx> <x> <y>` then `E <i> <j> <weight>`, 6 decimals.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(out, "N {i} {:.6} {:.6}", n.x, n.y).unwrap();
        }
        for &(i, j, w) in &self.edges {
            writeln!(out, "E {i} {j} {w:.6}").unwrap();
        }
        out
    }
}

fn components(n: usize, edges: &[(usize, usize, f64)]) -> (Vec<u32>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(i, j, _) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = HashMap::new();
    let mut component = vec![0u32; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        let next = label.len() as u32;
        let id = *label.entry(root).or_insert(next);
        component[i] = id;
    }
    (component, label.len())
}

/// Sample every road polyline at 7 m intervals and link nodes within 7 m.
pub fn build_waypoint_graph(scene: &SceneSpec) -> WaypointGraph {
    let mut raw: Vec<Vec2> = Vec::new();
    for seg in &scene.road_segments {
        raw.extend(sample_polyline(seg, WAYPOINT_INTERVAL));
    }
    let mut nodes = raw;
    nodes.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    nodes.dedup_by(|a, b| a == b);

    // spatial hash buckets so edge building is near-linear
    let cell = WAYPOINT_INTERVAL + EPS_GEOM;
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        buckets
            .entry(((n.x / cell).floor() as i64, (n.y / cell).floor() as i64))
            .or_default()
            .push(i);
    }
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        let (bc, br) = ((n.x / cell).floor() as i64, (n.y / cell).floor() as i64);
        for dc in -1..=1 {
            for dr in -1..=1 {
                if let Some(cands) = buckets.get(&(bc + dc, br + dr)) {
                    for &j in cands {
                        if j <= i {
                            continue;
                        }
                        let w = n.distance(nodes[j]);
                        if w > 0.0 && w <= WAYPOINT_INTERVAL + EPS_GEOM {
                            edges.push((i, j, w));
                        }
                    }
                }
            }
        }
    }
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for &(i, j, w) in &edges {
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }
    for adj in &mut adjacency {
        adj.sort_by(|a, b| a.0.cmp(&b.0));
    }
    let (component, n_components) = components(nodes.len(), &edges);
    WaypointGraph {
        nodes,
        edges,
        adjacency,
        component,
        n_components,
    }
}

fn sample_polyline(seg: &[Pose2D], interval: f64) -> Vec<Vec2> {
    if seg.is_empty() {
        return Vec::new();
    }
    if seg.len() == 1 {
        return vec![seg[0].pos()];
    }
    let pts: Vec<Vec2> = seg.iter().map(Pose2D::pos).collect();
    let total: f64 = pts.windows(2).map(|w| w[0].distance(w[1])).sum();
    let mut out = vec![pts[0]];
    let mut next_s = interval;
    let mut walked = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg_len = a.distance(b);
        while next_s <= walked + seg_len && next_s < total {
            let t = (next_s - walked) / seg_len;
            out.push(a + (b - a) * t);
            next_s += interval;
        }
        walked += seg_len;
    }
    let end = *pts.last().unwrap();
    if out.last() != Some(&end) {
        out.push(end);
    }
    out
}

/// A waypoint route. `node_path` lists the graph nodes traversed, in order;
/// `waypoints` additionally carries the raw (unsnapped) endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub waypoints: Vec<Pose2D>,
    pub node_path: Vec<usize>,
    pub length: f64,
}

impl Route {
    pub fn destination(&self) -> Option<Vec2> {
        self.waypoints.last().map(Pose2D::pos)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on (dist, node)
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap()
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest distances.
fn dijkstra(g: &WaypointGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in g.neighbors(u) {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    dist
}

/// Shortest node path from `s` to `t`, lexicographically smallest among
/// shortest paths: walk forward from `s`, always taking the smallest-index
/// neighbor that still lies on a shortest completion toward `t`.
fn shortest_node_path(g: &WaypointGraph, s: usize, t: usize) -> Option<Vec<usize>> {
    if g.component[s] != g.component[t] {
        return None;
    }
    let dist_t = dijkstra(g, t);
    if !dist_t[s].is_finite() {
        return None;
    }
    let mut path = vec![s];
    let mut u = s;
    let cap = g.len() + 1;
    while u != t {
        let mut next = None;
        for &(v, w) in g.neighbors(u) {
            if w + dist_t[v] == dist_t[u] {
                next = Some(v);
                break; // neighbors are sorted by index
            }
        }
        let v = next?;
        path.push(v);
        u = v;
        if path.len() > cap {
            return None;
        }
    }
    Some(path)
}

/// Route between two coordinates: snap to nearest nodes, Dijkstra between
/// them, then prepend/append the raw endpoints.
pub fn query_route(g: &WaypointGraph, p1: Pose2D, p2: Pose2D) -> Result<Route, MapToolError> {
    if g.is_empty() {
        return Err(MapToolError::EmptyGraph);
    }
    if p1.pos() == p2.pos() {
        return Ok(Route {
            waypoints: vec![p1],
            node_path: Vec::new(),
            length: 0.0,
        });
    }
    let s = g.snap(p1.pos()).unwrap();
    let t = g.snap(p2.pos()).unwrap();
    let node_path = if s == t {
        vec![s]
    } else {
        shortest_node_path(g, s, t)
            .ok_or(MapToolError::NoRoute(p1.x, p1.y, p2.x, p2.y))?
    };

    let mut length = p1.pos().distance(g.nodes[s]);
    for pair in node_path.windows(2) {
        let w = g.neighbors(pair[0])
            .iter()
            .find(|&&(v, _)| v == pair[1])
            .map(|&(_, w)| w)
            .unwrap();
        length += w;
    }
    length += g.nodes[t].distance(p2.pos());

    let mut waypoints = Vec::with_capacity(node_path.len() + 2);
    waypoints.push(p1);
    for &n in &node_path {
        waypoints.push(Pose2D::point(g.nodes[n].x, g.nodes[n].y));
    }
    waypoints.push(p2);
    waypoints.dedup_by(|a, b| a.pos() == b.pos());

    Ok(Route {
        waypoints,
        node_path,
        length,
    })
}

/// All places within `radius` of a point, nearest first, ties by name.
pub fn query_nearby<'a>(scene: &'a SceneSpec, p1: Pose2D, radius: f64) -> Vec<&'a Place> {
    let mut hits: Vec<(&Place, f64)> = scene
        .places
        .iter()
        .filter_map(|pl| {
            let d = pl.location.pos().distance(p1.pos());
            (d <= radius).then_some((pl, d))
        })
        .collect();
    hits.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.name.cmp(&b.0.name)));
    hits.into_iter().map(|(p, _)| p).collect()
}

/// Exact-name metadata lookup; names are case-sensitive and must match the
/// full form used on the message channel.
pub fn query_place<'a>(scene: &'a SceneSpec, name: &str) -> Result<&'a Place, MapToolError> {
    scene
        .place(name)
        .ok_or_else(|| MapToolError::UnknownPlace(name.to_string()))
}

/// The scene's coarse obstacle grid, verbatim: a coarse approximation of
/// the environment, not an exact layout.
pub fn query_map(scene: &SceneSpec) -> &ObstacleGrid {
    &scene.coarse_obstacle_grid
}

/// Snap each input point to its nearest waypoint and connect the snapped
/// nodes sequentially with shortest paths.
pub fn query_refined_route(g: &WaypointGraph, points: &[Pose2D]) -> Result<Route, MapToolError> {
    if points.len() < 2 {
        return Err(MapToolError::TooFewPoints);
    }
    let mut waypoints: Vec<Pose2D> = Vec::new();
    let mut node_path: Vec<usize> = Vec::new();
    let mut length = 0.0;
    for (k, pair) in points.windows(2).enumerate() {
        let leg = query_route(g, pair[0], pair[1])
            .map_err(|_| MapToolError::NoRouteForPair { pair_index: k })?;
        length += leg.length;
        let skip = usize::from(k > 0);
        waypoints.extend(leg.waypoints.into_iter().skip(skip));
        node_path.extend(leg.node_path);
    }
    waypoints.dedup_by(|a, b| a.pos() == b.pos());
    node_path.dedup();
    Ok(Route {
        waypoints,
        node_path,
        length,
    })
}
