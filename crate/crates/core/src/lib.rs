//! Deterministic desk-scale simulator and agent library for decentralized
//! rendezvous under patrolling hazards.
//!
//! A team of agents negotiates a meeting place over a broadcast channel and
//! navigates a synthetic city while avoiding sentinels whose field of view
//! starts a capture countdown. Everything is seeded and reproducible: the
//! scene generator, the world, the policies, and the benchmark harness.
//!
//! Module map:
//! - [`scene`]: scene data model, synthetic city generation, file I/O
//! - [`map_tool`]: waypoint graph and the five coarse spatial queries
//! - [`world`]: the authoritative discrete-time simulator
//! - [`memory`]: per-agent occupancy grid, danger zones, ETA map
//! - [`nav`]: safety assessment, route refinement, A*, emergency avoidance
//! - [`protocol`]: the structured broadcast message grammar and analyzer
//! - [`agents`]: the negotiating policy and the baseline planners
//! - [`harness`]: episodes, metrics, suites, reports

pub mod agents;
pub mod geom;
pub mod harness;
pub mod map_tool;
pub mod memory;
pub mod nav;
pub mod protocol;
pub mod scene;
pub mod world;
