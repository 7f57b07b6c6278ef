use serde::{Deserialize, Serialize};

use super::TrialRow;
use crate::rover_sim::Outcome;
use crate::terraingen::TerrainClass;

const Z95: f64 = 1.96;

/// Wald 95% margin of error of a proportion, in percentage points.
pub fn wald_moe(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    100.0 * Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Weighted mean of `(value, weight)` pairs and its 95% margin of error,
/// using `n` = number of pairs.
pub fn mean_moe(values: &[(f64, f64)]) -> (f64, f64) {
    let wsum: f64 = values.iter().map(|v| v.1).sum();
    if values.is_empty() || wsum <= 0.0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().map(|(x, w)| x * w).sum::<f64>() / wsum;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / wsum;
    let n = values.len() as f64;
    (mean, Z95 * (var / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// `benign`, `complex` or `all`.
    pub class: String,
    pub trials: usize,
    pub successes: usize,
    pub timeouts: usize,
    pub no_feasible_path: usize,
    pub safety_violations: usize,
    pub cycles: usize,
    pub success_rate: f64,
    pub success_moe: f64,
    /// Mean path inefficiency of successful trials, percent.
    pub inefficiency: f64,
    pub inefficiency_moe: f64,
    pub evals_per_cycle: f64,
    pub evals_moe: f64,
    pub overthink_rate: f64,
    pub overthink_moe: f64,
    pub ace_seconds_10ms: f64,
    pub ace_seconds_20ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub experiment: String,
    pub classes: Vec<ClassMetrics>,
}

impl MetricsSummary {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.class == name)
    }
}

fn class_metrics(name: &str, rows: &[&TrialRow]) -> ClassMetrics {
    let count = |o: Outcome| rows.iter().filter(|r| r.result.outcome == o).count();
    let wsum: f64 = rows.iter().map(|r| r.weight).sum();
    let success = if wsum > 0.0 {
        rows.iter()
            .filter(|r| r.result.outcome == Outcome::Success)
            .map(|r| r.weight)
            .sum::<f64>()
            / wsum
    } else {
        0.0
    };
    let ineff: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.result.outcome == Outcome::Success)
        .map(|r| (100.0 * r.result.inefficiency(), r.weight))
        .collect();
    let (inefficiency, inefficiency_moe) = mean_moe(&ineff);

    let per_cycle: Vec<(f64, f64)> = rows
        .iter()
        .flat_map(|r| r.result.ace_evals.iter().map(move |&e| (e as f64, r.weight)))
        .collect();
    let (evals_per_cycle, evals_moe) = mean_moe(&per_cycle);
    let ot: Vec<(f64, f64)> = rows
        .iter()
        .flat_map(|r| {
            r.result
                .overthink
                .iter()
                .map(move |&o| (f64::from(u8::from(o)), r.weight))
        })
        .collect();
    let (ot_mean, _) = mean_moe(&ot);

    ClassMetrics {
        class: name.into(),
        trials: rows.len(),
        successes: count(Outcome::Success),
        timeouts: count(Outcome::Timeout),
        no_feasible_path: count(Outcome::NoFeasiblePath),
        safety_violations: count(Outcome::SafetyViolation),
        cycles: per_cycle.len(),
        success_rate: 100.0 * success,
        success_moe: wald_moe(success, rows.len()),
        inefficiency,
        inefficiency_moe,
        evals_per_cycle,
        evals_moe,
        overthink_rate: 100.0 * ot_mean,
        overthink_moe: wald_moe(ot_mean, ot.len()),
        ace_seconds_10ms: evals_per_cycle * 0.010,
        ace_seconds_20ms: evals_per_cycle * 0.020,
    }
}

/// Per-class and overall metrics of a set of trials.
pub fn summarize(experiment: &str, rows: &[TrialRow]) -> MetricsSummary {
    let mut classes = Vec::new();
    for (name, class) in [("benign", TerrainClass::Benign), ("complex", TerrainClass::Complex)] {
        let sel: Vec<&TrialRow> = rows.iter().filter(|r| r.case.class == class).collect();
        if !sel.is_empty() {
            classes.push(class_metrics(name, &sel));
        }
    }
    let all: Vec<&TrialRow> = rows.iter().collect();
    classes.push(class_metrics("all", &all));
    MetricsSummary {
        experiment: experiment.into(),
        classes,
    }
}
