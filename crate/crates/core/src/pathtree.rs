//! Candidate path tree: a turn in place followed by fixed-curvature arcs.
//!
//! Paths share prefixes. Every tree node holds one maneuver; a path is the
//! chain from a level-0 turn node down to a leaf.

use serde::{Deserialize, Serialize};

use crate::pose::{wrap_pi, Pose};

/// Turn-in-place samples are spaced this far apart.
pub const TURN_SAMPLE_DEG: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Maneuver {
    Turn { angle_deg: f64 },
    Arc { curvature: f64, length: f64 },
}

impl Maneuver {
    pub fn end_pose(&self, start: Pose) -> Pose {
        match *self {
            Maneuver::Turn { angle_deg } => turn_pose(start, angle_deg),
            Maneuver::Arc { curvature, length } => arc_pose(start, curvature, length),
        }
    }

    /// Distance traveled by the rover body center.
    pub fn length(&self) -> f64 {
        match *self {
            Maneuver::Turn { .. } => 0.0,
            Maneuver::Arc { length, .. } => length,
        }
    }

    /// Poses along the maneuver after `start`, endpoint included.
    pub fn samples(&self, start: Pose, interval: f64) -> Vec<Pose> {
        let mut out = Vec::new();
        self.for_each_sample(start, interval, |p| out.push(p));
        out
    }

    pub fn for_each_sample(&self, start: Pose, interval: f64, mut f: impl FnMut(Pose)) {
        match *self {
            Maneuver::Turn { angle_deg } => {
                let total = angle_deg.abs();
                let sign = angle_deg.signum();
                let mut k = 1.0;
                while k * TURN_SAMPLE_DEG < total - 1e-9 {
                    f(turn_pose(start, sign * k * TURN_SAMPLE_DEG));
                    k += 1.0;
                }
                if total > 0.0 {
                    f(turn_pose(start, angle_deg));
                }
            }
            Maneuver::Arc { curvature, length } => {
                let mut k = 1.0;
                while k * interval < length - 1e-9 {
                    f(arc_pose(start, curvature, k * interval));
                    k += 1.0;
                }
                if length > 0.0 {
                    f(arc_pose(start, curvature, length));
                }
            }
        }
    }

    /// Number of poses [`Maneuver::samples`] yields.
    pub fn sample_count(&self, interval: f64) -> usize {
        let (total, step) = match *self {
            Maneuver::Turn { angle_deg } => (angle_deg.abs(), TURN_SAMPLE_DEG),
            Maneuver::Arc { length, .. } => (length, interval),
        };
        if total <= 0.0 {
            0
        } else {
            ((total - 1e-9) / step).ceil().max(1.0) as usize
        }
    }

    /// First part of the maneuver: at most `max_len` of an arc or
    /// `max_turn_deg` of a turn.
    pub fn truncated(&self, max_len: f64, max_turn_deg: f64) -> Maneuver {
        match *self {
            Maneuver::Turn { angle_deg } => Maneuver::Turn {
                angle_deg: angle_deg.signum() * angle_deg.abs().min(max_turn_deg),
            },
            Maneuver::Arc { curvature, length } => Maneuver::Arc {
                curvature,
                length: length.min(max_len),
            },
        }
    }
}

pub fn turn_pose(start: Pose, angle_deg: f64) -> Pose {
    Pose::new(start.x, start.y, wrap_pi(start.heading + angle_deg.to_radians()))
}

/// Closed-form pose after driving `s` meters at constant curvature `kappa`.
pub fn arc_pose(start: Pose, kappa: f64, s: f64) -> Pose {
    let half = 0.5 * kappa * s;
    // chord = 2 sin(k s / 2) / k, written to stay exact as k -> 0
    let chord = if half.abs() < 1e-4 {
        s * (1.0 - half * half / 6.0 + half.powi(4) / 120.0)
    } else {
        s * half.sin() / half
    };
    let dir = start.heading + half;
    Pose::new(
        start.x + chord * dir.cos(),
        start.y + chord * dir.sin(),
        wrap_pi(start.heading + kappa * s),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    #[default]
    None,
    KeepBestPerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    /// Includes the no-turn option.
    pub turn_options: usize,
    pub arc_options: usize,
    pub arc_length: f64,
    pub depth: usize,
    /// Largest |curvature| in 1/m; the arc set is evenly spaced in
    /// `[-max, max]`.
    pub max_curvature: f64,
    pub prune: PruneMode,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            turn_options: 14,
            arc_options: 11,
            arc_length: 3.0,
            depth: 2,
            max_curvature: 1.0 / 3.0,
            prune: PruneMode::None,
        }
    }
}

impl TreeSpec {
    /// Every option count raised by 4.
    pub fn broader() -> Self {
        Self {
            turn_options: 18,
            arc_options: 15,
            ..Self::default()
        }
    }

    pub fn deeper_pruned() -> Self {
        Self {
            prune: PruneMode::KeepBestPerGroup,
            ..Self::default()
        }
    }

    /// Turn angles in degrees, `i * 360 / n` wrapped to `(-180, 180]`.
    pub fn turn_set(&self) -> Vec<f64> {
        let n = self.turn_options.max(1);
        (0..n)
            .map(|i| {
                let a = i as f64 * 360.0 / n as f64;
                if a > 180.0 + 1e-9 {
                    a - 360.0
                } else {
                    a
                }
            })
            .collect()
    }

    /// Curvatures in ascending order, symmetric about zero.
    pub fn curvature_set(&self) -> Vec<f64> {
        let n = self.arc_options.max(1);
        if n == 1 {
            return vec![0.0];
        }
        let m = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - m) * self.max_curvature / m).collect()
    }

    pub fn path_count(&self) -> usize {
        self.turn_options * self.arc_options.pow(self.depth as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Node {
    pub parent: Option<usize>,
    pub maneuver: Maneuver,
    pub start: Pose,
    pub end: Pose,
    /// 0 for the turn, 1.. for arcs.
    pub level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTree {
    pub root: Pose,
    pub nodes: Vec<Node>,
    /// Leaf node index of every path, in generation order.
    pub leaves: Vec<usize>,
}

impl PathTree {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Node indices of a path from its turn node to `leaf`.
    pub fn chain(&self, leaf: usize) -> Vec<usize> {
        let mut out = vec![leaf];
        let mut n = leaf;
        while let Some(p) = self.nodes[n].parent {
            out.push(p);
            n = p;
        }
        out.reverse();
        out
    }

    pub fn maneuvers(&self, leaf: usize) -> Vec<Maneuver> {
        self.chain(leaf).into_iter().map(|n| self.nodes[n].maneuver).collect()
    }

    /// All sampled poses of a path, starting with the root pose.
    pub fn sample_path(&self, leaf: usize, interval: f64) -> Vec<Pose> {
        let mut out = vec![self.root];
        for n in self.chain(leaf) {
            let node = &self.nodes[n];
            node.maneuver.for_each_sample(node.start, interval, |p| out.push(p));
        }
        out
    }

    fn push(&mut self, parent: Option<usize>, maneuver: Maneuver, level: usize) -> usize {
        let start = parent.map_or(self.root, |p| self.nodes[p].end);
        self.nodes.push(Node {
            parent,
            maneuver,
            start,
            end: maneuver.end_pose(start),
            level,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, parent: usize, curvatures: &[f64], arc_length: f64, levels: usize) {
        let level = self.nodes[parent].level + 1;
        for &k in curvatures {
            let n = self.push(
                Some(parent),
                Maneuver::Arc {
                    curvature: k,
                    length: arc_length,
                },
                level,
            );
            if levels > 1 {
                self.grow(n, curvatures, arc_length, levels - 1);
            } else {
                self.leaves.push(n);
            }
        }
    }
}

/// Sampled poses of a maneuver sequence starting at `start`, start included.
pub fn sample_path(start: Pose, maneuvers: &[Maneuver], interval: f64) -> Vec<Pose> {
    let mut out = vec![start];
    let mut p = start;
    for m in maneuvers {
        m.for_each_sample(p, interval, |q| out.push(q));
        p = m.end_pose(p);
    }
    out
}

/// Full Cartesian product tree of `spec` rooted at `start`. The prune mode
/// is ignored here; see [`extend_pruned`].
pub fn build_tree(spec: &TreeSpec, start: Pose) -> PathTree {
    let mut tree = PathTree {
        root: start,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    let curv = spec.curvature_set();
    for a in spec.turn_set() {
        let t = tree.push(None, Maneuver::Turn { angle_deg: a }, 0);
        if spec.depth == 0 {
            tree.leaves.push(t);
        } else {
            tree.grow(t, &curv, spec.arc_length, spec.depth);
        }
    }
    tree
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrunedTree {
    pub tree: PathTree,
    pub retained: usize,
    /// Sibling groups whose costs were all infinite.
    pub dropped_groups: usize,
}

fn arc_curvature(m: &Maneuver) -> f64 {
    match m {
        Maneuver::Arc { curvature, .. } => *curvature,
        Maneuver::Turn { .. } => 0.0,
    }
}

/// Keep the cheapest leaf of every sibling group and extend each survivor
/// by the full arc set. `costs` is indexed like `tree.leaves`. Ties go to the
/// smaller |curvature|, then to the more leftward (larger) curvature.
pub fn extend_pruned(tree: &PathTree, costs: &[f64], spec: &TreeSpec) -> PrunedTree {
    assert_eq!(costs.len(), tree.leaves.len(), "one cost per path");
    let mut best: Vec<(usize, usize)> = Vec::new(); // (parent, leaf position)
    let mut order: Vec<usize> = Vec::new();
    let mut group_of = std::collections::HashMap::new();
    for (i, &leaf) in tree.leaves.iter().enumerate() {
        let parent = tree.nodes[leaf].parent.unwrap_or(usize::MAX);
        let g = *group_of.entry(parent).or_insert_with(|| {
            order.push(parent);
            best.push((parent, usize::MAX));
            best.len() - 1
        });
        if !costs[i].is_finite() {
            continue;
        }
        let cur = best[g].1;
        let better = cur == usize::MAX || {
            let (ci, cc) = (costs[i], costs[cur]);
            let ki = arc_curvature(&tree.nodes[leaf].maneuver);
            let kc = arc_curvature(&tree.nodes[tree.leaves[cur]].maneuver);
            ci < cc || (ci == cc && (ki.abs() < kc.abs() || (ki.abs() == kc.abs() && ki > kc)))
        };
        if better {
            best[g].1 = i;
        }
    }
    let mut out = PathTree {
        root: tree.root,
        nodes: Vec::new(),
        leaves: Vec::new(),
    };
    let mut remap = std::collections::HashMap::new();
    let curv = spec.curvature_set();
    let mut dropped = 0;
    let mut retained = 0;
    for &(_, pos) in &best {
        if pos == usize::MAX {
            dropped += 1;
            continue;
        }
        retained += 1;
        let mut parent = None;
        for n in tree.chain(tree.leaves[pos]) {
            let idx = *remap.entry(n).or_insert_with(|| {
                let node = tree.nodes[n];
                out.nodes.push(Node { parent, ..node });
                out.nodes.len() - 1
            });
            parent = Some(idx);
        }
        out.grow(parent.unwrap(), &curv, spec.arc_length, 1);
    }
    PrunedTree {
        tree: out,
        retained,
        dropped_groups: dropped,
    }
}
