use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{ClassMetrics, MetricsSummary, TrialRow};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "ROVERNAV_OUT_DIR";

pub fn output_dir(default: impl AsRef<Path>) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => default.as_ref().to_path_buf(),
    }
}

/// One JSON object per line, in row order.
pub fn trials_jsonl(rows: &[TrialRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("trial rows serialize"));
        out.push('\n');
    }
    out
}

pub fn write_trials_jsonl(path: &Path, rows: &[TrialRow]) -> io::Result<()> {
    fs::write(path, trials_jsonl(rows))
}

pub fn read_trials_jsonl(path: &Path) -> io::Result<Vec<TrialRow>> {
    let mut rows = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    Ok(rows)
}

const CSV_HEADER: [&str; 18] = [
    "experiment",
    "class",
    "trials",
    "successes",
    "timeouts",
    "no_feasible_path",
    "safety_violations",
    "cycles",
    "success_rate",
    "success_moe",
    "inefficiency",
    "inefficiency_moe",
    "evals_per_cycle",
    "evals_moe",
    "overthink_rate",
    "overthink_moe",
    "ace_seconds_10ms",
    "ace_seconds_20ms",
];

fn csv_record(experiment: &str, c: &ClassMetrics) -> Vec<String> {
    let f = |v: f64| format!("{v:.4}");
    vec![
        experiment.to_string(),
        c.class.clone(),
        c.trials.to_string(),
        c.successes.to_string(),
        c.timeouts.to_string(),
        c.no_feasible_path.to_string(),
        c.safety_violations.to_string(),
        c.cycles.to_string(),
        f(c.success_rate),
        f(c.success_moe),
        f(c.inefficiency),
        f(c.inefficiency_moe),
        f(c.evals_per_cycle),
        f(c.evals_moe),
        f(c.overthink_rate),
        f(c.overthink_moe),
        f(c.ace_seconds_10ms),
        f(c.ace_seconds_20ms),
    ]
}

/// Summary CSV with fixed four-decimal floats.
pub fn summary_csv(summaries: &[MetricsSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory csv");
    for s in summaries {
        for c in &s.classes {
            w.write_record(csv_record(&s.experiment, c)).expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

pub fn write_summary_csv(path: &Path, summaries: &[MetricsSummary]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(summary_csv(summaries).as_bytes())
}

/// Plain-text metric grid: one block per class, one row per experiment.
pub fn render_report(summaries: &[MetricsSummary]) -> String {
    let mut classes: Vec<&str> = Vec::new();
    for s in summaries {
        for c in &s.classes {
            if !classes.contains(&c.class.as_str()) {
                classes.push(&c.class);
            }
        }
    }
    let name_w = summaries.iter().map(|s| s.experiment.len()).max().unwrap_or(0).max(10);
    let mut out = String::new();
    for class in classes {
        out.push_str(&format!("[{class}]\n"));
        out.push_str(&format!(
            "{:<name_w$}  {:>6}  {:>16}  {:>16}  {:>18}  {:>16}  {:>11}\n",
            "experiment", "trials", "success %", "inefficiency %", "ACE evals/cycle", "overthink %", "ACE s@10ms"
        ));
        for s in summaries {
            let Some(c) = s.class(class) else { continue };
            out.push_str(&format!(
                "{:<name_w$}  {:>6}  {:>16}  {:>16}  {:>18}  {:>16}  {:>11.2}\n",
                s.experiment,
                c.trials,
                format!("{:.1} ± {:.1}", c.success_rate, c.success_moe),
                format!("{:.1} ± {:.1}", c.inefficiency, c.inefficiency_moe),
                format!("{:.1} ± {:.1}", c.evals_per_cycle, c.evals_moe),
                format!("{:.1} ± {:.1}", c.overthink_rate, c.overthink_moe),
                c.ace_seconds_10ms,
            ));
        }
        out.push('\n');
    }
    out
}
