//! Monte Carlo experiments over a terrain matrix.
//!
//! An [`ExperimentConfig`] names one arm: a heuristic mode, tree mode,
//! selection mode and provider. [`run_montecarlo`] runs every terrain case
//! of the matrix with per-case seeds that do not depend on the arm, so two
//! arms over the same matrix are paired trial by trial.

mod dataset;
mod metrics;
mod output;
mod score;

pub use dataset::{
    export_training_pairs, split_counts, DatasetError, DatasetSummary, ExportOptions, DEFAULT_TRAIN_FRACTION,
};
pub use metrics::{mean_moe, summarize, wald_moe, ClassMetrics, MetricsSummary};
pub use output::{
    output_dir, read_trials_jsonl, render_report, summary_csv, trials_jsonl, write_summary_csv, write_trials_jsonl,
    OUT_DIR_ENV,
};
pub use score::{score_acemap, AceScore, Confusion};

use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ace::AceConfig;
use crate::bridge::{HeuristicProvider, RemoteClient};
use crate::heightmap::HeightMap;
use crate::pathtree::TreeSpec;
use crate::rover_sim::{run_trial, HeuristicMode, SimConfig, TrialResult};
use crate::terraingen::{classify_terrain, TerrainClass, TerrainError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("terrain generation failed for case {index}: {source}")]
    Terrain { index: usize, source: TerrainError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerrainMatrix {
    pub slopes_deg: Vec<f64>,
    pub cfas: Vec<f64>,
    /// Repetitions per (slope, CFA) pair.
    pub seeds: u32,
}

impl Default for TerrainMatrix {
    fn default() -> Self {
        Self {
            slopes_deg: vec![0.0, 10.0, 15.0, 20.0, 25.0],
            cfas: vec![0.0, 0.05, 0.07, 0.10, 0.15],
            seeds: 10,
        }
    }
}

impl TerrainMatrix {
    pub fn len(&self) -> usize {
        self.slopes_deg.len() * self.cfas.len() * self.seeds as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every case in slope-major order.
    pub fn cases(&self, base_seed: u64) -> Vec<TerrainCase> {
        let mut out = Vec::with_capacity(self.len());
        for (si, &slope_deg) in self.slopes_deg.iter().enumerate() {
            for (ci, &cfa) in self.cfas.iter().enumerate() {
                for rep in 0..self.seeds {
                    out.push(TerrainCase {
                        index: out.len(),
                        slope_deg,
                        cfa,
                        rep,
                        seed: trial_seed(base_seed, si as u64, ci as u64, rep as u64),
                        class: classify_terrain(slope_deg, cfa),
                    });
                }
            }
        }
        out
    }

    /// The same matrix restricted to one terrain class.
    pub fn cases_of(&self, base_seed: u64, class: TerrainClass) -> Vec<TerrainCase> {
        self.cases(base_seed).into_iter().filter(|c| c.class == class).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainCase {
    pub index: usize,
    pub slope_deg: f64,
    pub cfa: f64,
    pub rep: u32,
    pub seed: u64,
    pub class: TerrainClass,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Terrain seed of one matrix case.
pub fn trial_seed(base: u64, slope_index: u64, cfa_index: u64, rep: u64) -> u64 {
    let mut s = splitmix64(base);
    for v in [slope_index, cfa_index, rep] {
        s = splitmix64(s ^ v);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMode {
    #[default]
    Default,
    Broader,
    DeeperPruned,
}

impl TreeMode {
    pub fn spec(&self) -> TreeSpec {
        match self {
            TreeMode::Default => TreeSpec::default(),
            TreeMode::Broader => TreeSpec::broader(),
            TreeMode::DeeperPruned => TreeSpec::deeper_pruned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    #[default]
    BaselineMinEvals,
    FirstFeasible,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    #[default]
    None,
    Oracle {
        #[serde(default = "default_oracle_radius")]
        radius: f64,
    },
    FileBacked {
        dir: PathBuf,
    },
    Remote {
        addr: String,
        #[serde(default = "default_deadline_ms")]
        deadline_ms: u64,
    },
    Constant {
        value: f32,
    },
}

fn default_oracle_radius() -> f64 {
    6.5
}

fn default_deadline_ms() -> u64 {
    500
}

impl ProviderSpec {
    pub fn build(&self, ace: &AceConfig) -> Result<HeuristicProvider, HarnessError> {
        Ok(match self {
            ProviderSpec::None => HeuristicProvider::None,
            ProviderSpec::Oracle { radius } => HeuristicProvider::oracle_within(ace.clone(), *radius),
            ProviderSpec::FileBacked { dir } => HeuristicProvider::FileBacked { dir: dir.clone() },
            ProviderSpec::Remote { addr, deadline_ms } => {
                let addr = addr
                    .parse()
                    .map_err(|e| HarnessError::Config(format!("bad remote address {addr:?}: {e}")))?;
                HeuristicProvider::Remote(RemoteClient::new(addr, Duration::from_millis(*deadline_ms)))
            }
            ProviderSpec::Constant { value } => HeuristicProvider::Constant(*value),
        })
    }
}

/// Occurrence weight of one (slope, CFA) terrain; unlisted terrains weigh 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceWeight {
    pub slope_deg: f64,
    pub cfa: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub base_seed: u64,
    pub matrix: TerrainMatrix,
    pub weights: Vec<OccurrenceWeight>,
    pub heuristic: HeuristicMode,
    pub tree: TreeMode,
    pub selection: SelectionMode,
    pub overthink_threshold: usize,
    pub provider: ProviderSpec,
    /// Per-trial settings; the terrain seed, slope and CFA are overridden
    /// per case.
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            base_seed: 0,
            matrix: TerrainMatrix::default(),
            weights: Vec::new(),
            heuristic: HeuristicMode::NONE,
            tree: TreeMode::Default,
            selection: SelectionMode::BaselineMinEvals,
            overthink_threshold: 275,
            provider: ProviderSpec::None,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Baseline,
    One,
    Two,
    Three,
    Four,
}

impl std::str::FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Experiment::Baseline),
            "1" => Ok(Experiment::One),
            "2" => Ok(Experiment::Two),
            "3" => Ok(Experiment::Three),
            "4" => Ok(Experiment::Four),
            _ => Err(format!("unknown experiment {s:?}, expected baseline, 1, 2, 3 or 4")),
        }
    }
}

impl Experiment {
    /// Arms of the experiment, each derived from `base` along the axes that
    /// experiment varies. `base` is used as the baseline arm unchanged.
    pub fn arms(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let arm = |name: &str, heuristic: HeuristicMode, selection: SelectionMode, tree: TreeMode| {
            let learned = heuristic.learned;
            ExperimentConfig {
                name: name.into(),
                heuristic,
                selection,
                tree,
                provider: match (&base.provider, learned) {
                    (_, false) => ProviderSpec::None,
                    (ProviderSpec::None, true) => ProviderSpec::Oracle {
                        radius: default_oracle_radius(),
                    },
                    (p, true) => p.clone(),
                },
                ..base.clone()
            }
        };
        use HeuristicMode as H;
        use SelectionMode::*;
        match self {
            Experiment::Baseline => vec![ExperimentConfig {
                name: "baseline".into(),
                ..base.clone()
            }],
            Experiment::One => vec![
                arm("gradient", H::GRADIENT, BaselineMinEvals, TreeMode::Default),
                arm("learned", H::LEARNED, BaselineMinEvals, TreeMode::Default),
            ],
            Experiment::Two => vec![
                arm("gradient_ff", H::GRADIENT, FirstFeasible, TreeMode::Default),
                arm("learned_ff", H::LEARNED, FirstFeasible, TreeMode::Default),
            ],
            Experiment::Three => vec![arm("learned_ff_broad", H::LEARNED, FirstFeasible, TreeMode::Broader)],
            Experiment::Four => vec![arm(
                "learned_ff_deep",
                H::LEARNED,
                FirstFeasible,
                TreeMode::DeeperPruned,
            )],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.matrix.is_empty() {
            return Err(HarnessError::Config("terrain matrix is empty".into()));
        }
        if self.sim.timeout_cycles == 0 {
            return Err(HarnessError::Config("timeout must be positive".into()));
        }
        if self.weights.iter().any(|w| !(w.weight >= 0.0)) {
            return Err(HarnessError::Config("occurrence weights must be non-negative".into()));
        }
        if self.heuristic.learned && self.provider == ProviderSpec::None {
            log::warn!("{}: learned heuristic with no provider runs gradient-only", self.name);
        }
        Ok(())
    }

    pub fn weight_of(&self, slope_deg: f64, cfa: f64) -> f64 {
        self.weights
            .iter()
            .find(|w| (w.slope_deg - slope_deg).abs() < 1e-9 && (w.cfa - cfa).abs() < 1e-9)
            .map_or(1.0, |w| w.weight)
    }

    /// Simulator config of one case.
    pub fn sim_config(&self, case: &TerrainCase) -> SimConfig {
        let mut sim = self.sim.clone();
        sim.terrain.seed = case.seed;
        sim.terrain.slope_deg = case.slope_deg;
        sim.terrain.cfa = case.cfa;
        sim.heuristic = self.heuristic;
        sim.planner.tree = self.tree.spec();
        sim.planner.budget.first_feasible = self.selection == SelectionMode::FirstFeasible;
        sim.planner.budget.overthink_threshold = self.overthink_threshold;
        sim
    }
}

/// One finished trial with its terrain case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub experiment: String,
    pub case: TerrainCase,
    pub weight: f64,
    pub result: TrialResult,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialRow>,
    pub summary: MetricsSummary,
}

/// Run one case; also returns the logged heightmap snapshots.
pub fn run_case(config: &ExperimentConfig, case: &TerrainCase) -> Result<(TrialRow, Vec<HeightMap>), HarnessError> {
    let sim = config.sim_config(case);
    let mut provider = config.provider.build(&sim.planner.ace)?;
    let record = run_trial(&sim, &mut provider).map_err(|source| HarnessError::Terrain {
        index: case.index,
        source,
    })?;
    let row = TrialRow {
        experiment: config.name.clone(),
        case: *case,
        weight: config.weight_of(case.slope_deg, case.cfa),
        result: record.result,
    };
    Ok((row, record.snapshots))
}

/// Run the given cases of `config` in parallel; rows come back in case order.
pub fn run_cases(config: &ExperimentConfig, cases: &[TerrainCase]) -> Result<Vec<TrialRow>, HarnessError> {
    config.validate()?;
    cases
        .par_iter()
        .map(|c| run_case(config, c).map(|(row, _)| row))
        .collect()
}

pub fn run_montecarlo(config: &ExperimentConfig) -> Result<ExperimentRun, HarnessError> {
    let cases = config.matrix.cases(config.base_seed);
    let trials = run_cases(config, &cases)?;
    let summary = summarize(&config.name, &trials);
    Ok(ExperimentRun {
        config: config.clone(),
        trials,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matrix_shape() {
        let m = TerrainMatrix::default();
        assert_eq!(m.len(), 250);
        let cases = m.cases(7);
        assert_eq!(cases.len(), 250);
        let complex = cases.iter().filter(|c| c.class == TerrainClass::Complex).count();
        assert_eq!(complex, 160);
        let mut seeds: Vec<u64> = cases.iter().map(|c| c.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 250);
        assert_eq!(m.cases(7), cases);
        assert_ne!(m.cases(8)[0].seed, cases[0].seed);
    }

    #[test]
    fn arms_differ_only_on_their_axes() {
        let base = ExperimentConfig::default();
        let strip = |c: &ExperimentConfig| ExperimentConfig {
            name: base.name.clone(),
            heuristic: base.heuristic,
            tree: base.tree,
            selection: base.selection,
            provider: base.provider.clone(),
            ..c.clone()
        };
        let all = [
            Experiment::Baseline,
            Experiment::One,
            Experiment::Two,
            Experiment::Three,
            Experiment::Four,
        ];
        for e in all {
            for arm in e.arms(&base) {
                assert_eq!(strip(&arm), base, "{}", arm.name);
                assert_eq!(arm.heuristic.learned, arm.provider != ProviderSpec::None);
            }
        }
        let two = Experiment::Two.arms(&base);
        assert!(two
            .iter()
            .all(|a| a.selection == SelectionMode::FirstFeasible && a.tree == TreeMode::Default));
        assert_eq!(Experiment::Three.arms(&base)[0].tree, TreeMode::Broader);
        assert_eq!(Experiment::Four.arms(&base)[0].tree, TreeMode::DeeperPruned);
        assert_eq!(Experiment::One.arms(&base)[0].heuristic, HeuristicMode::GRADIENT);
    }

    #[test]
    fn toml_round_trip_and_partial_tables() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            name = "small"
            base_seed = 3
            heuristic = { gradient = true, learned = false }
            [matrix]
            slopes_deg = [0.0, 20.0]
            cfas = [0.1]
            seeds = 2
            [provider]
            kind = "constant"
            value = 1.0
            [sim]
            goal_distance = 30.0
            [sim.planner.budget]
            max_ace_evals = 500
            "#,
        )
        .unwrap();
        assert_eq!(cfg.matrix.len(), 4);
        assert_eq!(cfg.provider, ProviderSpec::Constant { value: 1.0 });
        assert_eq!(cfg.sim.goal_distance, 30.0);
        assert_eq!(cfg.sim.planner.budget.max_ace_evals, 500);
        assert_eq!(cfg.sim.planner.budget.min_evals_after_feasible, 100);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml("matrix = 3").is_err());
    }

    #[test]
    fn case_overrides_reach_the_simulator() {
        let cfg = ExperimentConfig {
            selection: SelectionMode::FirstFeasible,
            tree: TreeMode::Broader,
            overthink_threshold: 50,
            ..Default::default()
        };
        let case = cfg.matrix.cases(1)[37];
        let sim = cfg.sim_config(&case);
        assert_eq!(
            (sim.terrain.seed, sim.terrain.slope_deg, sim.terrain.cfa),
            (case.seed, case.slope_deg, case.cfa)
        );
        assert!(sim.planner.budget.first_feasible);
        assert_eq!(sim.planner.budget.overthink_threshold, 50);
        assert_eq!(sim.planner.tree.path_count(), 4050);
    }

    #[test]
    fn weights_default_to_one() {
        let cfg = ExperimentConfig {
            weights: vec![OccurrenceWeight {
                slope_deg: 10.0,
                cfa: 0.05,
                weight: 3.0,
            }],
            ..Default::default()
        };
        assert_eq!(cfg.weight_of(10.0, 0.05), 3.0);
        assert_eq!(cfg.weight_of(10.0, 0.07), 1.0);
    }
}
