//! Path selection: Dijkstra cost-to-go, ranking, and ACE-gated selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ace::{AceConfig, AceMap, AceModel};
use crate::grid::Field;
use crate::heightmap::{HeightMap, HeightQuery};
use crate::pathtree::{build_tree, extend_pruned, Maneuver, PathTree, PruneMode, TreeSpec};
use crate::pose::Pose;
use crate::terrain_analysis::CostMap;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("goal cell is impassable or off the costmap")]
    GoalInfeasible,
    /// Carries the spent evaluations so the failing cycle can be logged.
    #[error("no feasible path ({reason:?}) after {ace_evals} evaluations")]
    NoFeasiblePath {
        reason: FailureReason,
        ace_evals: usize,
        overthink: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Every ranked path had infinite cost.
    NoFiniteCandidates,
    /// All finite candidates were evaluated and rejected.
    ExhaustedList,
    /// The eval budget ran out before a feasible path was found.
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingWeights {
    pub turn_base: f64,
    pub turn_per_deg: f64,
    pub curvature_change: f64,
    /// Multiplies the costmap integral along the path.
    pub terrain: f64,
    /// Multiplies the sum of interpolated infeasibility probabilities.
    pub learned: f64,
    pub cost_to_go: f64,
}

impl Default for RankingWeights {
    fn default() -> Self {
        Self {
            turn_base: 5.0,
            turn_per_deg: 0.05,
            curvature_change: 1.0,
            terrain: 1.0,
            learned: 10.0,
            cost_to_go: 1.0,
        }
    }
}

impl RankingWeights {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            turn_base: self.turn_base * c,
            turn_per_deg: self.turn_per_deg * c,
            curvature_change: self.curvature_change * c,
            terrain: self.terrain * c,
            learned: self.learned * c,
            cost_to_go: self.cost_to_go * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionBudget {
    pub max_ace_evals: usize,
    pub min_evals_after_feasible: usize,
    pub overthink_threshold: usize,
    pub first_feasible: bool,
}

impl Default for SelectionBudget {
    fn default() -> Self {
        Self {
            max_ace_evals: 1000,
            min_evals_after_feasible: 100,
            overthink_threshold: 275,
            first_feasible: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub tree: TreeSpec,
    pub weights: RankingWeights,
    pub budget: SelectionBudget,
    pub ace: AceConfig,
    /// Longest arc prefix actuated per cycle, meters.
    pub actuation_length: f64,
    /// Largest turn actuated per cycle, degrees.
    pub actuation_turn_deg: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            tree: TreeSpec::default(),
            weights: RankingWeights::default(),
            budget: SelectionBudget::default(),
            ace: AceConfig::default(),
            actuation_length: 1.0,
            actuation_turn_deg: 30.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    cell: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Edge weight between adjacent cells of cost `a` and `b`.
#[inline]
pub fn edge_weight(a: f64, b: f64, cell: f64, diagonal: bool) -> f64 {
    let step = if diagonal {
        cell * std::f64::consts::SQRT_2
    } else {
        cell
    };
    0.5 * (a + b) * step
}

/// 8-connected cost to reach `goal` from every cell. Infinite cells are
/// impassable and unreachable cells are `+inf`.
pub fn dijkstra_cost_to_go(costmap: &CostMap, goal: (f64, f64)) -> Result<Field, PlanError> {
    let costs = costmap.costs();
    let (gx, gy) = costmap.geom.cell_of(goal.0, goal.1).ok_or(PlanError::GoalInfeasible)?;
    dijkstra_field(&costs, costmap.geom.cell, (gx, gy))
}

pub fn dijkstra_field(costs: &Field, cell: f64, goal: (usize, usize)) -> Result<Field, PlanError> {
    let (w, h) = (costs.width, costs.height);
    let g = goal.1 * w + goal.0;
    if !costs.data[g].is_finite() {
        return Err(PlanError::GoalInfeasible);
    }
    let mut dist = vec![f64::INFINITY; w * h];
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    dist[g] = 0.0;
    heap.push(HeapItem { dist: 0.0, cell: g });
    while let Some(HeapItem { dist: d, cell: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        let (ux, uy) = ((u % w) as i64, (u / w) as i64);
        let cu = costs.data[u];
        for (dx, dy) in NEIGHBORS {
            let (vx, vy) = (ux + dx, uy + dy);
            if vx < 0 || vy < 0 || vx >= w as i64 || vy >= h as i64 {
                continue;
            }
            let v = vy as usize * w + vx as usize;
            let cv = costs.data[v];
            if done[v] || !cv.is_finite() {
                continue;
            }
            let nd = d + edge_weight(cu, cv, cell, dx != 0 && dy != 0);
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem { dist: nd, cell: v });
            }
        }
    }
    Ok(Field {
        width: w,
        height: h,
        data: dist,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedPath {
    pub leaf: usize,
    pub total: f64,
    pub actuation: f64,
    pub terrain: f64,
    pub learned: f64,
    pub cost_to_go: f64,
    pub changes: usize,
    pub initial_turn_deg: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    terrain: f64,
    learned: f64,
    blocked: bool,
}

/// Costmap and infeasibility-map integrals over one maneuver's samples.
fn node_stats(
    start: Pose,
    m: &Maneuver,
    costmap: &CostMap,
    acemap: Option<&AceMap>,
    interval: f64,
    home: Option<(usize, usize)>,
) -> NodeStats {
    let mut st = NodeStats::default();
    let mut visit = |p: Pose, ds: f64| {
        if let Some(am) = acemap {
            st.learned += am.interpolate(&p);
        }
        let cell = costmap.geom.cell_of(p.x, p.y);
        let c = match cell {
            Some((ix, iy)) => costmap.cell(ix, iy).cost(),
            None => f64::INFINITY,
        };
        if c.is_finite() {
            st.terrain += c * ds;
        } else if cell != home || home.is_none() {
            st.blocked = true;
        }
    };
    match *m {
        Maneuver::Turn { .. } => m.for_each_sample(start, interval, |p| visit(p, 0.0)),
        Maneuver::Arc { curvature, length } => {
            let mut prev = 0.0;
            let mut k = 1.0;
            while k * interval < length - 1e-9 {
                let s = k * interval;
                visit(crate::pathtree::arc_pose(start, curvature, s), s - prev);
                prev = s;
                k += 1.0;
            }
            if length > 0.0 {
                visit(crate::pathtree::arc_pose(start, curvature, length), length - prev);
            }
        }
    }
    st
}

/// Rank every path of `tree`. Paths touching an impassable cell (other than
/// the cell the rover stands in) or ending where the goal is unreachable get
/// `+inf`. The sort is stable on `(total, changes, |initial turn|)`.
pub fn rank_paths(
    tree: &PathTree,
    costmap: &CostMap,
    cost_to_go: &Field,
    acemap: Option<&AceMap>,
    weights: &RankingWeights,
    interval: f64,
) -> Vec<RankedPath> {
    let home = costmap.geom.cell_of(tree.root.x, tree.root.y);
    let stats: Vec<NodeStats> = tree
        .nodes
        .iter()
        .map(|n| node_stats(n.start, &n.maneuver, costmap, acemap, interval, home))
        .collect();
    let mut out: Vec<RankedPath> = tree
        .leaves
        .iter()
        .map(|&leaf| {
            let chain = tree.chain(leaf);
            let (mut terrain, mut learned, mut blocked) = (0.0, 0.0, false);
            let mut actuation = 0.0;
            let mut changes = 0;
            let mut initial_turn_deg = 0.0;
            let mut prev_k = 0.0;
            for &n in &chain {
                let s = &stats[n];
                terrain += s.terrain;
                learned += s.learned;
                blocked |= s.blocked;
                match tree.nodes[n].maneuver {
                    Maneuver::Turn { angle_deg } => {
                        initial_turn_deg = angle_deg;
                        if angle_deg != 0.0 {
                            actuation += weights.turn_base + weights.turn_per_deg * angle_deg.abs();
                        }
                    }
                    Maneuver::Arc { curvature, .. } => {
                        if curvature != prev_k {
                            changes += 1;
                            actuation += weights.curvature_change;
                        }
                        prev_k = curvature;
                    }
                }
            }
            let end = tree.nodes[leaf].end;
            let ctg = match costmap.geom.cell_of(end.x, end.y) {
                Some((ix, iy)) => cost_to_go.get(ix, iy),
                None => f64::INFINITY,
            };
            let total = if blocked || !ctg.is_finite() {
                f64::INFINITY
            } else {
                actuation + weights.terrain * terrain + weights.learned * learned + weights.cost_to_go * ctg
            };
            RankedPath {
                leaf,
                total,
                actuation,
                terrain,
                learned,
                cost_to_go: ctg,
                changes,
                initial_turn_deg,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.total
            .total_cmp(&b.total)
            .then(a.changes.cmp(&b.changes))
            .then(a.initial_turn_deg.abs().total_cmp(&b.initial_turn_deg.abs()))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Chosen {
    pub leaf: usize,
    /// Position in the ranked list.
    pub rank: usize,
    pub total: f64,
    pub ace_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub chosen: Option<Chosen>,
    pub ace_evals: usize,
    pub overthink: bool,
    pub paths_evaluated: usize,
    pub failure: Option<FailureReason>,
    /// Leading entries of the ranked list.
    pub ranked_head: Vec<RankedPath>,
}

pub const RANKED_HEAD: usize = 5;

/// Walk the ranked list running ACE on each path until the selection rule
/// stops, returning the feasible path with the lowest rank plus ACE cost.
pub fn select_path<Q: HeightQuery>(
    ranked: &[RankedPath],
    mut poses_of: impl FnMut(&RankedPath) -> Vec<Pose>,
    map: &Q,
    model: &AceModel,
    budget: &SelectionBudget,
) -> PlanResult {
    let mut evals = 0;
    let mut paths = 0;
    let mut best: Option<Chosen> = None;
    let mut first_at: Option<usize> = None;
    let mut failure = None;
    for (rank, rp) in ranked.iter().enumerate() {
        if !rp.total.is_finite() {
            break;
        }
        if let Some(at) = first_at {
            if budget.first_feasible || evals - at >= budget.min_evals_after_feasible {
                break;
            }
        }
        if evals >= budget.max_ace_evals {
            failure = Some(FailureReason::BudgetExhausted);
            break;
        }
        let mut poses = poses_of(rp);
        let left = budget.max_ace_evals - evals;
        let truncated = poses.len() > left;
        poses.truncate(left);
        let e = model.evaluate_path(map, &poses);
        evals += e.evals;
        paths += 1;
        if !e.feasible || truncated {
            continue;
        }
        if first_at.is_none() {
            first_at = Some(evals);
        }
        let score = rp.total + e.cost;
        if best.is_none_or(|b| score < b.total + b.ace_cost) {
            best = Some(Chosen {
                leaf: rp.leaf,
                rank,
                total: rp.total,
                ace_cost: e.cost,
            });
        }
    }
    if best.is_none() && failure.is_none() {
        failure = Some(if ranked.first().is_none_or(|r| !r.total.is_finite()) {
            FailureReason::NoFiniteCandidates
        } else {
            FailureReason::ExhaustedList
        });
    }
    PlanResult {
        chosen: best,
        ace_evals: evals,
        overthink: evals > budget.overthink_threshold,
        paths_evaluated: paths,
        failure: if best.is_some() { None } else { failure },
        ranked_head: ranked.iter().take(RANKED_HEAD).copied().collect(),
    }
}

/// The command actually executed: the leading part of the first non-trivial
/// maneuver of `maneuvers`.
pub fn first_command(maneuvers: &[Maneuver], max_len: f64, max_turn_deg: f64) -> Maneuver {
    let m = maneuvers
        .iter()
        .find(|m| !matches!(m, Maneuver::Turn { angle_deg } if *angle_deg == 0.0))
        .or(maneuvers.first())
        .copied()
        .unwrap_or(Maneuver::Turn { angle_deg: 0.0 });
    m.truncated(max_len, max_turn_deg)
}

pub struct PlanInputs<'a> {
    pub pose: Pose,
    pub goal: (f64, f64),
    pub heightmap: &'a HeightMap,
    pub costmap: &'a CostMap,
    pub acemap: Option<&'a AceMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleOutput {
    pub command: Maneuver,
    pub maneuvers: Vec<Maneuver>,
    pub result: PlanResult,
}

/// Ranked candidate tree for one cycle, with pruning applied if configured.
pub fn ranked_tree(inputs: &PlanInputs, ctg: &Field, config: &PlannerConfig) -> (PathTree, Vec<RankedPath>) {
    let interval = config.ace.interval;
    let rank = |tree: &PathTree| rank_paths(tree, inputs.costmap, ctg, inputs.acemap, &config.weights, interval);
    let tree = build_tree(&config.tree, inputs.pose);
    if config.tree.prune == PruneMode::None {
        let ranked = rank(&tree);
        return (tree, ranked);
    }
    let mut costs = vec![f64::INFINITY; tree.leaves.len()];
    let pos: std::collections::HashMap<usize, usize> = tree.leaves.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for r in rank(&tree) {
        costs[pos[&r.leaf]] = r.total;
    }
    let deeper = extend_pruned(&tree, &costs, &config.tree).tree;
    let ranked = rank(&deeper);
    (deeper, ranked)
}

/// One planning cycle: cost-to-go, ranking, selection, first command.
pub fn plan_cycle(inputs: &PlanInputs, model: &AceModel, config: &PlannerConfig) -> Result<CycleOutput, PlanError> {
    let ctg = dijkstra_cost_to_go(inputs.costmap, inputs.goal)?;
    let (tree, ranked) = ranked_tree(inputs, &ctg, config);
    let interval = config.ace.interval;
    let result = select_path(
        &ranked,
        |rp| {
            let mut poses = tree.sample_path(rp.leaf, interval);
            poses.remove(0);
            poses
        },
        inputs.heightmap,
        model,
        &config.budget,
    );
    match result.chosen {
        Some(c) => {
            let maneuvers = tree.maneuvers(c.leaf);
            Ok(CycleOutput {
                command: first_command(&maneuvers, config.actuation_length, config.actuation_turn_deg),
                maneuvers,
                result,
            })
        }
        None => Err(PlanError::NoFeasiblePath {
            reason: result.failure.unwrap_or(FailureReason::ExhaustedList),
            ace_evals: result.ace_evals,
            overthink: result.overthink,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;
    use crate::terrain_analysis::CostCell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_costmap(geom: GridGeometry, c: f64) -> CostMap {
        let mut cm = CostMap::unknown(geom, c);
        for cell in &mut cm.cells {
            cell.unknown = false;
        }
        cm
    }

    pub(crate) fn bellman_ford(costs: &Field, cell: f64, goal: (usize, usize)) -> Field {
        let (w, h) = (costs.width, costs.height);
        let mut d = vec![f64::INFINITY; w * h];
        d[goal.1 * w + goal.0] = 0.0;
        loop {
            let mut changed = false;
            for u in 0..w * h {
                if !costs.data[u].is_finite() {
                    continue;
                }
                let (ux, uy) = ((u % w) as i64, (u / w) as i64);
                for (dx, dy) in NEIGHBORS {
                    let (vx, vy) = (ux + dx, uy + dy);
                    if vx < 0 || vy < 0 || vx >= w as i64 || vy >= h as i64 {
                        continue;
                    }
                    let v = vy as usize * w + vx as usize;
                    if !costs.data[v].is_finite() || !d[v].is_finite() {
                        continue;
                    }
                    let nd = d[v] + edge_weight(costs.data[v], costs.data[u], cell, dx != 0 && dy != 0);
                    if nd < d[u] {
                        d[u] = nd;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        Field {
            width: w,
            height: h,
            data: d,
        }
    }

    #[test]
    fn uniform_axis_distances() {
        let geom = GridGeometry::new(0.0, 0.0, 0.5, 20, 20);
        let cm = uniform_costmap(geom, 2.0);
        let ctg = dijkstra_cost_to_go(&cm, (5.25, 5.25)).unwrap();
        for k in 0..10 {
            assert!((ctg.get(10 + k, 10) - 2.0 * 0.5 * k as f64).abs() < 1e-12);
            assert!((ctg.get(10, 10 - k) - 2.0 * 0.5 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_disconnects() {
        let geom = GridGeometry::new(0.0, 0.0, 1.0, 9, 9);
        let mut cm = uniform_costmap(geom, 1.0);
        for iy in 2..=6 {
            for ix in 2..=6 {
                if ix == 2 || ix == 6 || iy == 2 || iy == 6 {
                    cm.cell_mut(ix, iy).infinite = true;
                }
            }
        }
        let ctg = dijkstra_cost_to_go(&cm, (4.5, 4.5)).unwrap();
        for iy in 0..9 {
            for ix in 0..9 {
                let inside = (3..=5).contains(&ix) && (3..=5).contains(&iy);
                assert_eq!(ctg.get(ix, iy).is_finite(), inside);
            }
        }
        cm.cell_mut(4, 4).infinite = true;
        assert_eq!(dijkstra_cost_to_go(&cm, (4.5, 4.5)), Err(PlanError::GoalInfeasible));
    }

    #[test]
    fn matches_bellman_ford() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let costs = Field::from_fn(12, 12, |_, _| {
                if rng.random_bool(0.15) {
                    f64::INFINITY
                } else {
                    rng.random_range(1.0..5.0)
                }
            });
            let mut costs = costs;
            costs.set(6, 6, 1.0);
            let d = dijkstra_field(&costs, 0.5, (6, 6)).unwrap();
            let b = bellman_ford(&costs, 0.5, (6, 6));
            assert_eq!(d, b);
        }
    }

    #[test]
    fn raising_a_cell_never_lowers_cost_to_go() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut costs = Field::from_fn(15, 15, |_, _| rng.random_range(1.0..3.0));
        let before = dijkstra_field(&costs, 0.5, (2, 3)).unwrap();
        costs.set(7, 7, 9.0);
        costs.set(8, 2, f64::INFINITY);
        let after = dijkstra_field(&costs, 0.5, (2, 3)).unwrap();
        for (a, b) in after.data.iter().zip(&before.data) {
            assert!(a >= b);
        }
    }

    fn flat_world() -> (HeightMap, CostMap) {
        let hm = HeightMap::from_fn(GridGeometry::centered(0.0, 0.0, 20.0, 0.1), |_, _| 0.0).unwrap();
        let cm = uniform_costmap(GridGeometry::centered(0.0, 0.0, 60.0, 0.5), 1.0);
        (hm, cm)
    }

    #[test]
    fn straight_path_ranks_first_on_flat_ground() {
        let (_, cm) = flat_world();
        let ctg = dijkstra_cost_to_go(&cm, (25.0, 0.0)).unwrap();
        let tree = build_tree(&TreeSpec::default(), Pose::default());
        let ranked = rank_paths(&tree, &cm, &ctg, None, &RankingWeights::default(), 0.25);
        assert_eq!(ranked.len(), 1694);
        let ms = tree.maneuvers(ranked[0].leaf);
        assert_eq!(ms[0], Maneuver::Turn { angle_deg: 0.0 });
        for m in &ms[1..] {
            assert!(matches!(m, Maneuver::Arc { curvature, .. } if *curvature == 0.0));
        }
        assert_eq!(ranked[0].changes, 0);
        assert_eq!(ranked[0].actuation, 0.0);
    }

    #[test]
    fn totals_match_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (_, mut cm) = flat_world();
        for c in cm.cells.iter_mut() {
            *c = CostCell {
                base_cost: rng.random_range(1.0..4.0),
                infinite: rng.random_bool(0.01),
                ..*c
            };
        }
        let goal = (20.0, 5.0);
        let gcell = cm.geom.cell_of(goal.0, goal.1).unwrap();
        cm.cell_mut(gcell.0, gcell.1).infinite = false;
        let home = cm.geom.cell_of(0.0, 0.0).unwrap();
        cm.cell_mut(home.0, home.1).infinite = false;
        let ctg = dijkstra_cost_to_go(&cm, goal).unwrap();
        let mut am = AceMap::filled(GridGeometry::centered(0.0, 0.0, 20.0, 0.1), 0.0);
        for v in am.data.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let w = RankingWeights::default();
        let start = Pose::from_degrees(0.1, -0.2, 17.0);
        let spec = TreeSpec {
            turn_options: 6,
            arc_options: 5,
            ..Default::default()
        };
        let tree = build_tree(&spec, start);
        let ranked = rank_paths(&tree, &cm, &ctg, Some(&am), &w, 0.25);
        for r in &ranked {
            // Recompute from the flat pose list of the path.
            let ms = tree.maneuvers(r.leaf);
            let mut p = start;
            let (mut terrain, mut learned, mut blocked) = (0.0, 0.0, false);
            let mut act = 0.0;
            let mut prev_k = 0.0;
            for m in &ms {
                match *m {
                    Maneuver::Turn { angle_deg } => {
                        if angle_deg != 0.0 {
                            act += 5.0 + 0.05 * angle_deg.abs();
                        }
                        for q in m.samples(p, 0.25) {
                            learned += am.interpolate(&q);
                        }
                    }
                    Maneuver::Arc { curvature, length } => {
                        if curvature != prev_k {
                            act += 1.0;
                        }
                        prev_k = curvature;
                        let n = (length / 0.25).round() as usize;
                        for i in 1..=n {
                            let q = crate::pathtree::arc_pose(p, curvature, i as f64 * 0.25);
                            learned += am.interpolate(&q);
                            let c = cm.cost_at(q.x, q.y);
                            if c.is_finite() {
                                terrain += 0.25 * c;
                            } else if cm.geom.cell_of(q.x, q.y) != Some(home) {
                                blocked = true;
                            }
                        }
                    }
                }
                p = m.end_pose(p);
            }
            let (ex, ey) = cm.geom.cell_of(p.x, p.y).unwrap();
            let expect = if blocked || !ctg.get(ex, ey).is_finite() {
                f64::INFINITY
            } else {
                act + terrain + 10.0 * learned + ctg.get(ex, ey)
            };
            if expect.is_finite() {
                assert!((r.total - expect).abs() < 1e-9 * expect);
            } else {
                assert!(r.total.is_infinite());
            }
        }
        for pair in ranked.windows(2) {
            assert!(pair[0].total <= pair[1].total);
        }
    }

    #[test]
    fn ranking_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, mut cm) = flat_world();
        for c in cm.cells.iter_mut() {
            c.base_cost = rng.random_range(1.0..4.0);
        }
        let ctg = dijkstra_cost_to_go(&cm, (20.0, -3.0)).unwrap();
        let tree = build_tree(&TreeSpec::default(), Pose::default());
        let w = RankingWeights::default();
        let a: Vec<usize> = rank_paths(&tree, &cm, &ctg, None, &w, 0.25)
            .iter()
            .map(|r| r.leaf)
            .collect();
        let b: Vec<usize> = rank_paths(&tree, &cm, &ctg, None, &w.scaled(4.0), 0.25)
            .iter()
            .map(|r| r.leaf)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn midpoint_heading_interpolation_in_ranking() {
        let (_, cm) = flat_world();
        let ctg = dijkstra_cost_to_go(&cm, (20.0, 0.0)).unwrap();
        let mut am = AceMap::filled(GridGeometry::centered(0.0, 0.0, 20.0, 0.1), 0.0);
        for i in 0..am.data.len() {
            am.data[i] = match i % 8 {
                0 => 0.2,
                1 => 0.6,
                _ => 0.0,
            };
        }
        let spec = TreeSpec {
            turn_options: 1,
            arc_options: 1,
            depth: 1,
            ..Default::default()
        };
        let tree = build_tree(&spec, Pose::from_degrees(0.0, 0.0, 22.5));
        let r = rank_paths(&tree, &cm, &ctg, Some(&am), &RankingWeights::default(), 0.25);
        assert!((r[0].learned - 12.0 * 0.4).abs() < 1e-6);
    }

    #[test]
    fn flat_first_feasible_takes_rank_one() {
        let (hm, cm) = flat_world();
        let model = AceModel::new(AceConfig::default());
        let cfg = PlannerConfig {
            budget: SelectionBudget {
                first_feasible: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let inputs = PlanInputs {
            pose: Pose::default(),
            goal: (25.0, 0.0),
            heightmap: &hm,
            costmap: &cm,
            acemap: None,
        };
        let out = plan_cycle(&inputs, &model, &cfg).unwrap();
        assert_eq!(out.result.chosen.unwrap().rank, 0);
        // The straight path has 25 poses; the current pose is not re-checked.
        assert_eq!(out.result.ace_evals, 24);
        assert!(!out.result.overthink);
        assert_eq!(
            out.command,
            Maneuver::Arc {
                curvature: 0.0,
                length: 1.0
            }
        );
    }

    #[test]
    fn baseline_continues_after_first_feasible() {
        let (hm, cm) = flat_world();
        let model = AceModel::new(AceConfig::default());
        let inputs = PlanInputs {
            pose: Pose::default(),
            goal: (25.0, 0.0),
            heightmap: &hm,
            costmap: &cm,
            acemap: None,
        };
        let out = plan_cycle(&inputs, &model, &PlannerConfig::default()).unwrap();
        assert!(out.result.ace_evals >= 125);
        assert!(out.result.ace_evals < 125 + 60);
        assert!(out.result.paths_evaluated > 1);
    }

    fn fake(n: usize) -> Vec<RankedPath> {
        (0..n)
            .map(|i| RankedPath {
                leaf: i,
                total: i as f64,
                actuation: 0.0,
                terrain: 0.0,
                learned: 0.0,
                cost_to_go: 0.0,
                changes: 0,
                initial_turn_deg: 0.0,
            })
            .collect()
    }

    /// Flat map with a tall block at x in [2, 3].
    fn blocked_map() -> HeightMap {
        HeightMap::from_fn(GridGeometry::centered(0.0, 0.0, 20.0, 0.1), |x, _| {
            if (2.0..3.0).contains(&x) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn overthink_from_many_infeasible_ranks() {
        let map = blocked_map();
        let model = AceModel::new(AceConfig::default());
        // Ranks 0..30 walk into the block after 10 feasible samples; rank 30
        // drives away from it.
        let poses_of = |r: &RankedPath| -> Vec<Pose> {
            if r.leaf < 30 {
                (0..20).map(|i| Pose::new(-1.5 + 0.25 * i as f64, 0.0, 0.0)).collect()
            } else {
                (0..13).map(|i| Pose::new(-0.25 * i as f64, 0.0, 0.0)).collect()
            }
        };
        let infeasible_len = model.evaluate_path(&map, &poses_of(&fake(1)[0])).evals;
        assert!((8..=12).contains(&infeasible_len));
        let budget = SelectionBudget {
            first_feasible: true,
            ..Default::default()
        };
        let r = select_path(&fake(40), poses_of, &map, &model, &budget);
        assert_eq!(r.chosen.unwrap().rank, 30);
        assert_eq!(r.ace_evals, 30 * infeasible_len + 13);
        assert_eq!(r.overthink, r.ace_evals > 275);
        assert!(r.overthink);
    }

    #[test]
    fn all_infeasible_exhausts_within_budget() {
        let map = blocked_map();
        let model = AceModel::new(AceConfig::default());
        let poses_of =
            |_: &RankedPath| -> Vec<Pose> { (0..20).map(|i| Pose::new(-1.5 + 0.25 * i as f64, 0.0, 0.0)).collect() };
        let budget = SelectionBudget::default();
        let r = select_path(&fake(500), poses_of, &map, &model, &budget);
        assert!(r.chosen.is_none());
        assert!(r.ace_evals <= budget.max_ace_evals);
        assert_eq!(r.failure, Some(FailureReason::BudgetExhausted));
        let r = select_path(&fake(3), poses_of, &map, &model, &budget);
        assert_eq!(r.failure, Some(FailureReason::ExhaustedList));
        let mut inf = fake(3);
        for p in inf.iter_mut() {
            p.total = f64::INFINITY;
        }
        let r = select_path(&inf, poses_of, &map, &model, &budget);
        assert_eq!((r.failure, r.ace_evals), (Some(FailureReason::NoFiniteCandidates), 0));
    }

    #[test]
    fn overthink_flag_tracks_threshold() {
        let map = blocked_map();
        let model = AceModel::new(AceConfig::default());
        let poses_of = |_: &RankedPath| -> Vec<Pose> { vec![Pose::new(-5.0, 0.0, 0.0); 7] };
        for threshold in [0, 6, 7, 50, 104, 105, 106] {
            let budget = SelectionBudget {
                overthink_threshold: threshold,
                ..Default::default()
            };
            let r = select_path(&fake(50), poses_of, &map, &model, &budget);
            assert_eq!(r.overthink, r.ace_evals > threshold);
        }
    }

    #[test]
    fn command_truncation() {
        let arc = Maneuver::Arc {
            curvature: 0.0,
            length: 3.0,
        };
        let none = Maneuver::Turn { angle_deg: 0.0 };
        assert_eq!(
            first_command(&[none, arc, arc], 1.0, 30.0),
            Maneuver::Arc {
                curvature: 0.0,
                length: 1.0
            }
        );
        assert_eq!(
            first_command(&[Maneuver::Turn { angle_deg: 90.0 }, arc], 1.0, 30.0),
            Maneuver::Turn { angle_deg: 30.0 }
        );
        assert_eq!(
            first_command(&[Maneuver::Turn { angle_deg: 20.0 }, arc], 1.0, 30.0),
            Maneuver::Turn { angle_deg: 20.0 }
        );
    }
}
