//! Closed-loop kinematic trials on synthetic terrain.
//!
//! Each cycle senses a wedge of the true terrain, folds it into the rover's
//! heightmap and world costmap, plans, and executes the first part of the
//! chosen path with a simple slip model. Safety is checked on the true
//! terrain at every executed sample.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ace::{AceLimits, AceMap, AceModel};
use crate::bridge::HeuristicProvider;
use crate::grid::{GridGeometry, Rect};
use crate::heightmap::{HeightMap, Point3, PointCloud};
use crate::pathtree::Maneuver;
use crate::planner::{plan_cycle, FailureReason, PlanError, PlanInputs, PlannerConfig};
use crate::pose::{wrap_pi, Pose};
use crate::terrain_analysis::{
    build_costmap_on, gradient_maps, inject_heuristic_costs, CostMap, KeepOutMask, TerrainParams,
};
use crate::terraingen::{generate_terrain, slope_gradient, ClearZone, TerrainError, TerrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorWedge {
    pub fov_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
}

impl Default for SensorWedge {
    fn default() -> Self {
        Self {
            fov_deg: 120.0,
            min_range: 2.0,
            max_range: 8.0,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlipParams {
    pub s0: f64,
    /// Slip per radian of uphill grade.
    pub s1: f64,
    /// Heading drift per radian of cross slope.
    pub drift: f64,
}

impl Default for SlipParams {
    fn default() -> Self {
        Self {
            s0: 0.02,
            s1: 0.3,
            drift: 0.02,
        }
    }
}

impl SlipParams {
    pub fn none() -> Self {
        Self {
            s0: 0.0,
            s1: 0.0,
            drift: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HeuristicMode {
    pub gradient: bool,
    pub learned: bool,
}

impl HeuristicMode {
    pub const NONE: Self = Self {
        gradient: false,
        learned: false,
    };
    pub const GRADIENT: Self = Self {
        gradient: true,
        learned: false,
    };
    pub const LEARNED: Self = Self {
        gradient: false,
        learned: true,
    };
    pub const BOTH: Self = Self {
        gradient: true,
        learned: true,
    };

    pub fn name(&self) -> &'static str {
        match (self.gradient, self.learned) {
            (false, false) => "none",
            (true, false) => "gradient",
            (false, true) => "learned",
            (true, true) => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub terrain: TerrainSpec,
    /// Start and goal sit on the x axis, this far apart around the origin.
    pub goal_distance: f64,
    pub goal_radius: f64,
    /// Rock-free radius around the start and the goal.
    pub clear_radius: f64,
    pub timeout_cycles: usize,
    pub sensor: SensorWedge,
    pub slip: SlipParams,
    pub heightmap_extent: f64,
    pub safety_limits: AceLimits,
    pub terrain_params: TerrainParams,
    pub keepout: KeepOutMask,
    /// Band along the true terrain's border that is kept out, meters.
    pub edge_margin: f64,
    pub planner: PlannerConfig,
    pub heuristic: HeuristicMode,
    /// Keep every n-th cycle's heightmap; 0 keeps none.
    pub snapshot_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            terrain: TerrainSpec::default(),
            goal_distance: 80.0,
            goal_radius: 1.5,
            clear_radius: 3.0,
            timeout_cycles: 400,
            sensor: SensorWedge::default(),
            slip: SlipParams::default(),
            heightmap_extent: 20.0,
            safety_limits: AceLimits::true_safety(),
            terrain_params: TerrainParams::default(),
            keepout: KeepOutMask::default(),
            edge_margin: 2.5,
            planner: PlannerConfig::default(),
            heuristic: HeuristicMode::NONE,
            snapshot_every: 0,
        }
    }
}

impl SimConfig {
    pub fn start(&self) -> Pose {
        Pose::new(-self.goal_distance / 2.0, 0.0, 0.0)
    }

    pub fn goal(&self) -> (f64, f64) {
        (self.goal_distance / 2.0, 0.0)
    }

    /// Terrain spec with clear zones around the start and the goal.
    pub fn terrain_spec(&self) -> TerrainSpec {
        let mut spec = self.terrain.clone();
        let s = self.start();
        let g = self.goal();
        for (x, y) in [(s.x, s.y), g] {
            spec.clear_zones.push(ClearZone {
                x,
                y,
                radius: self.clear_radius,
            });
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Timeout,
    NoFeasiblePath,
    SafetyViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleStat {
    pub ace_evals: usize,
    pub overthink: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: Outcome,
    pub path_length: f64,
    pub straight_line: f64,
    pub cycles: usize,
    pub ace_evals: Vec<usize>,
    pub overthink: Vec<bool>,
    pub final_pose: Pose,
    /// Why planning stopped, for `NoFeasiblePath` outcomes. `None` when the goal cell itself was impassable.
    pub failure: Option<FailureReason>,
    /// Cycles in which the learned heuristic was requested but unavailable.
    pub acemap_unavailable: usize,
}

impl TrialResult {
    pub fn total_evals(&self) -> usize {
        self.ace_evals.iter().sum()
    }

    pub fn mean_evals(&self) -> f64 {
        if self.ace_evals.is_empty() {
            0.0
        } else {
            self.total_evals() as f64 / self.ace_evals.len() as f64
        }
    }

    pub fn overthink_cycles(&self) -> usize {
        self.overthink.iter().filter(|&&o| o).count()
    }

    pub fn overthink_rate(&self) -> f64 {
        if self.overthink.is_empty() {
            0.0
        } else {
            self.overthink_cycles() as f64 / self.overthink.len() as f64
        }
    }

    pub fn inefficiency(&self) -> f64 {
        self.path_length / self.straight_line - 1.0
    }

    pub fn cycle_stats(&self) -> impl Iterator<Item = CycleStat> + '_ {
        self.ace_evals
            .iter()
            .zip(&self.overthink)
            .map(|(&ace_evals, &overthink)| CycleStat { ace_evals, overthink })
    }
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub result: TrialResult,
    pub snapshots: Vec<HeightMap>,
}

/// Cell centers of `truth` inside the heading-aligned sensor wedge.
pub fn sense(truth: &HeightMap, pose: &Pose, wedge: &SensorWedge, rng: Option<&mut ChaCha8Rng>) -> PointCloud {
    let geom = truth.geom();
    let mut out = Vec::new();
    if wedge.max_range <= 0.0 {
        return out;
    }
    let r = wedge.max_range;
    let (x0, y0) = geom.cell_coords(pose.x - r, pose.y - r);
    let (x1, y1) = geom.cell_coords(pose.x + r, pose.y + r);
    let half = wedge.fov_deg.to_radians() / 2.0;
    let full = wedge.fov_deg >= 360.0;
    for iy in y0.max(0)..=y1.min(geom.height as i64 - 1) {
        for ix in x0.max(0)..=x1.min(geom.width as i64 - 1) {
            let (ix, iy) = (ix as usize, iy as usize);
            let (cx, cy) = geom.center(ix, iy);
            let d = (cx - pose.x).hypot(cy - pose.y);
            if d < wedge.min_range || d > wedge.max_range {
                continue;
            }
            if !full && wrap_pi((cy - pose.y).atan2(cx - pose.x) - pose.heading).abs() > half {
                continue;
            }
            if let Some(z) = truth.get(ix, iy) {
                out.push(Point3::new(cx, cy, z));
            }
        }
    }
    if wedge.noise_sigma > 0.0 {
        if let (Some(rng), Ok(n)) = (rng, Normal::new(0.0, wedge.noise_sigma)) {
            for p in &mut out {
                p.z += n.sample(rng);
            }
        }
    }
    out
}

/// Longitudinal slip fraction for driving along `heading` on a plane of
/// gradient `grad`.
pub fn slip_fraction(heading: f64, grad: (f64, f64), slip: &SlipParams) -> f64 {
    let along = grad.0 * heading.cos() + grad.1 * heading.sin();
    (slip.s0 + slip.s1 * along.max(0.0).atan()).clamp(0.0, 0.9)
}

/// Executed maneuver: the arc shortened by slip, then heading drift toward
/// the downhill side. Turns execute exactly.
pub fn execute_maneuver(pose: Pose, command: &Maneuver, grad: (f64, f64), slip: &SlipParams) -> (Pose, Maneuver) {
    match *command {
        Maneuver::Turn { .. } => (command.end_pose(pose), *command),
        Maneuver::Arc { curvature, length } => {
            let s = slip_fraction(pose.heading, grad, slip);
            let done = Maneuver::Arc {
                curvature,
                length: length * (1.0 - s),
            };
            let mut end = done.end_pose(pose);
            let cross = -grad.0 * end.heading.sin() + grad.1 * end.heading.cos();
            end.heading = wrap_pi(end.heading - slip.drift * cross.atan());
            (end, done)
        }
    }
}

const MAX_PERIOD: usize = 4;

struct CycleState {
    pose: Pose,
    hm: HeightMap,
    world: CostMap,
}

impl CycleState {
    fn same(&self, other: &CycleState) -> bool {
        self.pose == other.pose
            && self.world == other.world
            && self.hm.geom() == other.hm.geom()
            && self
                .hm
                .heights()
                .iter()
                .zip(other.hm.heights())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Default)]
struct CycleLog {
    lengths: Vec<f64>,
    unavailable: Vec<usize>,
    ends: Vec<Pose>,
}

impl CycleLog {
    /// Finish a trial stuck in a loop of `period` cycles by repeating the
    /// loop's logs up to the timeout, exactly as running it out would.
    fn replay(&self, result: &mut TrialResult, period: usize, timeout: usize) {
        let start = result.cycles - period;
        for i in 0..timeout - result.cycles {
            let j = start + i % period;
            result.ace_evals.push(result.ace_evals[j]);
            result.overthink.push(result.overthink[j]);
            result.path_length += self.lengths[j];
            result.acemap_unavailable += self.unavailable[j];
            result.final_pose = self.ends[j];
        }
        result.cycles = timeout;
        result.outcome = Outcome::Timeout;
    }
}

fn with_border(mask: &KeepOutMask, g: &GridGeometry, margin: f64) -> KeepOutMask {
    let mut out = mask.clone();
    if margin > 0.0 {
        let (x0, y0, x1, y1) = (g.origin_x, g.origin_y, g.max_x(), g.max_y());
        let far = 1e9;
        out.zones.extend([
            Rect::new(-far, -far, x0 + margin, far),
            Rect::new(x1 - margin, -far, far, far),
            Rect::new(-far, -far, far, y0 + margin),
            Rect::new(-far, y1 - margin, far, far),
        ]);
    }
    out
}

/// First sample of an executed arc inside the goal radius, with the arc cut there.
fn goal_on_arc(start: Pose, done: &Maneuver, goal: (f64, f64), radius: f64, interval: f64) -> Option<(Pose, Maneuver)> {
    let Maneuver::Arc { curvature, length } = *done else {
        return None;
    };
    let steps = (length / interval).ceil().max(1.0) as usize;
    (1..=steps).find_map(|k| {
        let s = (k as f64 * interval).min(length);
        let p = crate::pathtree::arc_pose(start, curvature, s);
        (p.distance_to(goal.0, goal.1) <= radius).then_some((p, Maneuver::Arc { curvature, length: s }))
    })
}

/// Generate the terrain for `config` and run one trial.
pub fn run_trial(config: &SimConfig, provider: &mut HeuristicProvider) -> Result<TrialRecord, TerrainError> {
    let spec = config.terrain_spec();
    let terrain = generate_terrain(&spec)?;
    Ok(run_trial_on(&terrain.map, slope_gradient(&spec), config, provider))
}

/// Run one trial on a given true terrain whose underlying plane has
/// gradient `grad`.
pub fn run_trial_on(
    truth: &HeightMap,
    grad: (f64, f64),
    config: &SimConfig,
    provider: &mut HeuristicProvider,
) -> TrialRecord {
    let model = AceModel::new(config.planner.ace.clone());
    let goal = config.goal();
    let mut pose = config.start();
    let straight_line = pose.distance_to(goal.0, goal.1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.terrain.seed ^ 0x5eed_5e45);
    let params = &config.terrain_params;
    let hm_geom = GridGeometry::centered(pose.x, pose.y, config.heightmap_extent, truth.cell_size());
    let mut hm = HeightMap::unknown(hm_geom).expect("valid heightmap geometry");
    let (tcx, tcy) = truth.geom().middle();
    let world_geom = GridGeometry::centered(tcx, tcy, params.costmap_extent, params.costmap_cell);
    let mut world = CostMap::unknown(world_geom, params.unknown_cost);
    let keepout = with_border(&config.keepout, truth.geom(), config.edge_margin);

    let mut result = TrialResult {
        outcome: Outcome::Timeout,
        path_length: 0.0,
        straight_line,
        cycles: 0,
        ace_evals: Vec::new(),
        overthink: Vec::new(),
        final_pose: pose,
        failure: None,
        acemap_unavailable: 0,
    };
    let mut snapshots = Vec::new();
    // A pure provider and noiseless sensing make the loop a function of the
    // cycle-start state, so a repeated state repeats forever.
    let repeatable = config.snapshot_every == 0
        && config.sensor.noise_sigma == 0.0
        && matches!(
            provider,
            HeuristicProvider::None | HeuristicProvider::Constant(_) | HeuristicProvider::GroundTruthOracle(_)
        );
    let mut recent: VecDeque<CycleState> = VecDeque::new();
    let mut log = CycleLog::default();

    loop {
        if pose.distance_to(goal.0, goal.1) <= config.goal_radius {
            result.outcome = Outcome::Success;
            break;
        }
        if result.cycles >= config.timeout_cycles {
            result.outcome = Outcome::Timeout;
            break;
        }
        if repeatable {
            let now = CycleState {
                pose,
                hm: hm.clone(),
                world: world.clone(),
            };
            if let Some(back) = recent.iter().rev().position(|s| s.same(&now)) {
                log.replay(&mut result, back + 1, config.timeout_cycles);
                break;
            }
            recent.push_back(now);
            if recent.len() > MAX_PERIOD {
                recent.pop_front();
            }
        }
        result.cycles += 1;
        let unavailable_before = result.acemap_unavailable;

        hm = hm.recenter(pose.x, pose.y);
        hm.integrate_points(&sense(truth, &pose, &config.sensor, Some(&mut noise_rng)));
        if config.snapshot_every > 0 && (result.cycles - 1).is_multiple_of(config.snapshot_every) {
            snapshots.push(hm.clone());
        }

        let acemap: Option<AceMap> = if config.heuristic.learned {
            match provider.request_acemap(&hm) {
                Ok(m) => Some(m),
                Err(e) => {
                    log::debug!("cycle {}: {e}", result.cycles);
                    result.acemap_unavailable += 1;
                    None
                }
            }
        } else {
            None
        };
        let mut fresh = build_costmap_on(world_geom, &hm, params, &keepout);
        let gc = if config.heuristic.gradient {
            gradient_maps(&hm, &params.gradient).ok().map(|g| g.gc)
        } else {
            None
        };
        let learned = acemap.as_ref().map(AceMap::mean_channels);
        inject_heuristic_costs(
            &mut fresh,
            hm.geom(),
            gc.as_ref(),
            learned.as_ref(),
            params.learned_costmap_factor,
        );
        world.merge(&fresh);

        let inputs = PlanInputs {
            pose,
            goal,
            heightmap: &hm,
            costmap: &world,
            acemap: acemap.as_ref(),
        };
        let out = match plan_cycle(&inputs, &model, &config.planner) {
            Ok(o) => o,
            Err(e) => {
                let (evals, overthink) = match e {
                    PlanError::NoFeasiblePath {
                        reason,
                        ace_evals,
                        overthink,
                    } => {
                        result.failure = Some(reason);
                        (ace_evals, overthink)
                    }
                    PlanError::GoalInfeasible => (0, false),
                };
                result.ace_evals.push(evals);
                result.overthink.push(overthink);
                result.outcome = Outcome::NoFeasiblePath;
                break;
            }
        };
        result.ace_evals.push(out.result.ace_evals);
        result.overthink.push(out.result.overthink);

        let (mut next, mut done) = execute_maneuver(pose, &out.command, grad, &config.slip);
        if let Some((p, cut)) = goal_on_arc(pose, &done, goal, config.goal_radius, config.planner.ace.interval) {
            next = p;
            done = cut;
        }
        let mut safe = true;
        let mut check = |p: Pose| {
            if safe && !model.is_safe(truth, &p, &config.safety_limits) {
                safe = false;
            }
        };
        done.for_each_sample(pose, config.planner.ace.interval, &mut check);
        check(next);
        result.path_length += done.length();
        pose = next;
        result.final_pose = pose;
        log.lengths.push(done.length());
        log.unavailable.push(result.acemap_unavailable - unavailable_before);
        log.ends.push(pose);
        if !safe {
            result.outcome = Outcome::SafetyViolation;
            break;
        }
    }
    TrialRecord { result, snapshots }
}
