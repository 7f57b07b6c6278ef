//! Rover surface navigation stack.
//!
//! The crate covers one full planning cycle of a rocker-bogie rover and the
//! machinery needed to exercise it in closed loop:
//!
//! - [`heightmap`]: rover-centered 2.5D terrain grid and window queries.
//! - [`terraingen`]: deterministic synthetic terrains (slope plus rocks).
//! - [`terrain_analysis`]: costmap construction and the gradient-convolution
//!   heuristic.
//! - [`ace`]: conservative clearance evaluation of rover poses and paths.
//! - [`pathtree`]: the turn-in-place plus fixed-curvature arc path tree.
//! - [`planner`]: Dijkstra cost-to-go, path ranking, ACE-gated selection.
//! - [`rover_sim`]: kinematic closed-loop trials with synthetic sensing.
//! - [`harness`]: Monte Carlo experiments, metrics and dataset export.
//! - [`bridge`]: grid file format and infeasibility-map providers.

pub mod ace;
pub mod bridge;
pub mod grid;
pub mod harness;
pub mod heightmap;
pub mod pathtree;
pub mod planner;
pub mod pose;
pub mod rover_sim;
pub mod terrain_analysis;
pub mod terraingen;

pub use ace::{AceConfig, AceLimits, AceMap, AceResult, RoverGeometry};
pub use grid::{CellRect, Field, GridGeometry};
pub use heightmap::{HeightMap, Point3};
pub use pathtree::{Maneuver, PathTree, TreeSpec};
pub use pose::Pose;
pub use terrain_analysis::{CostMap, TerrainParams};
pub use terraingen::{TerrainClass, TerrainSpec};
