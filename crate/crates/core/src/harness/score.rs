use serde::{Deserialize, Serialize};

use crate::ace::{AceMap, HEADINGS};

/// Probability at which a predicted cell counts as infeasible.
pub const THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Zero when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceScore {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub overall: Confusion,
    pub per_channel: [Confusion; HEADINGS],
}

/// Compare a predicted AceMap against ground truth. Cells unknown in the
/// truth are skipped; a NaN prediction counts as feasible.
pub fn score_acemap(pred: &AceMap, truth: &AceMap) -> Result<AceScore, String> {
    if pred.geom != truth.geom || pred.data.len() != truth.data.len() {
        return Err(format!(
            "shape mismatch: {}x{} vs {}x{}",
            pred.geom.width, pred.geom.height, truth.geom.width, truth.geom.height
        ));
    }
    let mut per_channel = [Confusion::default(); HEADINGS];
    for (i, (&p, &t)) in pred.data.iter().zip(&truth.data).enumerate() {
        if t.is_nan() {
            continue;
        }
        let c = &mut per_channel[i % HEADINGS];
        match (p >= THRESHOLD, t >= THRESHOLD) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let mut overall = Confusion::default();
    for c in &per_channel {
        overall.add(c);
    }
    Ok(AceScore {
        accuracy: overall.accuracy(),
        recall: overall.recall(),
        precision: overall.precision(),
        overall,
        per_channel,
    })
}
