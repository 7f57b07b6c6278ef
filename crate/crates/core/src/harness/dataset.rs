use std::fs;
use std::io;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trial_seed;
use crate::ace::{build_ground_truth_acemap, AceConfig};
use crate::bridge::{write_grid, GridError, GridFile};
use crate::heightmap::HeightMap;

/// Default train share: 9500 of every 12000 pairs.
pub const DEFAULT_TRAIN_FRACTION: f64 = 9500.0 / 12000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("trial {trial} logged {have} heightmaps, {need} requested")]
    InsufficientSnapshots { trial: String, have: usize, need: usize },
    #[error("train fraction {0} is outside [0, 1]")]
    BadFraction(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub samples_per_trial: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Fail on a trial with too few snapshots instead of taking them all.
    pub strict: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            samples_per_trial: 8,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            seed: 0,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: usize,
    pub trial: String,
    pub snapshot: usize,
    pub split: String,
    pub heightmap: String,
    pub acemap: String,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub pairs: usize,
    pub train: usize,
    pub validation: usize,
    /// Trials that had fewer snapshots than requested.
    pub short_trials: Vec<String>,
    pub entries: Vec<PairEntry>,
}

/// Train and validation counts for `n` pairs.
pub fn split_counts(n: usize, train_fraction: f64) -> (usize, usize) {
    let train = ((n as f64 * train_fraction).round() as usize).min(n);
    (train, n - train)
}

/// Sample heightmaps from each trial's snapshots, label them with
/// ground-truth AceMaps, and write the pairs under `out_dir/{train,val}`
/// plus a `manifest.json`.
pub fn export_training_pairs(
    trials: &[(String, Vec<HeightMap>)],
    ace: &AceConfig,
    options: &ExportOptions,
    out_dir: &Path,
) -> Result<DatasetSummary, DatasetError> {
    if !(0.0..=1.0).contains(&options.train_fraction) {
        return Err(DatasetError::BadFraction(options.train_fraction));
    }
    let mut picked: Vec<(usize, usize)> = Vec::new();
    let mut short_trials = Vec::new();
    for (t, (name, snaps)) in trials.iter().enumerate() {
        let need = options.samples_per_trial;
        if snaps.len() < need {
            if options.strict {
                return Err(DatasetError::InsufficientSnapshots {
                    trial: name.clone(),
                    have: snaps.len(),
                    need,
                });
            }
            log::warn!("trial {name}: {} snapshots, taking all", snaps.len());
            short_trials.push(name.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(options.seed, t as u64, 0, 0));
        let mut idx = sample(&mut rng, snaps.len(), need.min(snaps.len())).into_vec();
        idx.sort_unstable();
        picked.extend(idx.into_iter().map(|i| (t, i)));
    }

    let mut order: Vec<usize> = (0..picked.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(options.seed, u64::MAX, 0, 0));
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let (n_train, n_val) = split_counts(picked.len(), options.train_fraction);

    for split in ["train", "val"] {
        fs::create_dir_all(out_dir.join(split))?;
    }
    let mut entries = Vec::with_capacity(picked.len());
    for (rank, &k) in order.iter().enumerate() {
        let (t, s) = picked[k];
        let map = &trials[t].1[s];
        let split = if rank < n_train { "train" } else { "val" };
        let label = build_ground_truth_acemap(map, ace);
        let hname = format!("{split}/{k:05}_height.grid");
        let aname = format!("{split}/{k:05}_ace.grid");
        write_grid(&out_dir.join(&hname), &GridFile::from_heightmap(map))?;
        write_grid(&out_dir.join(&aname), &GridFile::from_acemap(&label))?;
        entries.push(PairEntry {
            id: k,
            trial: trials[t].0.clone(),
            snapshot: s,
            split: split.into(),
            heightmap: hname,
            acemap: aname,
            positive_fraction: label.positive_fraction(),
        });
    }
    entries.sort_by_key(|e| e.id);
    let summary = DatasetSummary {
        pairs: picked.len(),
        train: n_train,
        validation: n_val,
        short_trials,
        entries,
    };
    let manifest = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
    fs::write(out_dir.join("manifest.json"), manifest)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::read_grid;
    use crate::grid::GridGeometry;

    fn flat_maps(n: usize) -> Vec<HeightMap> {
        (0..n)
            .map(|i| HeightMap::from_fn(GridGeometry::centered(i as f64, 0.0, 6.0, 0.1), |_, _| 0.0).unwrap())
            .collect()
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_counts(12000, DEFAULT_TRAIN_FRACTION), (9500, 2500));
        assert_eq!(split_counts(80, DEFAULT_TRAIN_FRACTION), (63, 17));
        assert_eq!(split_counts(10, 1.0), (10, 0));
        assert_eq!(split_counts(0, 0.5), (0, 0));
    }

    #[test]
    fn flat_trials_export_zero_labels() {
        let dir = tempfile::tempdir().unwrap();
        let trials: Vec<(String, Vec<HeightMap>)> = (0..10).map(|t| (format!("t{t}"), flat_maps(9))).collect();
        let s = export_training_pairs(&trials, &AceConfig::default(), &ExportOptions::default(), dir.path()).unwrap();
        assert_eq!((s.pairs, s.train, s.validation), (80, 63, 17));
        assert!(s.short_trials.is_empty());
        assert_eq!(s.entries.iter().filter(|e| e.split == "train").count(), 63);
        for e in s.entries.iter().take(5) {
            let ace = read_grid(&dir.path().join(&e.acemap)).unwrap().to_acemap().unwrap();
            assert!(ace.data.iter().all(|v| v.is_nan() || *v == 0.0));
            assert!(ace.data.contains(&0.0));
            read_grid(&dir.path().join(&e.heightmap))
                .unwrap()
                .to_heightmap()
                .unwrap();
        }
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn sampling_is_seeded_and_without_replacement() {
        let trials = vec![("a".to_string(), flat_maps(30))];
        let run = |seed| {
            let dir = tempfile::tempdir().unwrap();
            let opts = ExportOptions {
                seed,
                ..Default::default()
            };
            let s = export_training_pairs(&trials, &AceConfig::default(), &opts, dir.path()).unwrap();
            let mut snaps: Vec<usize> = s.entries.iter().map(|e| e.snapshot).collect();
            snaps.sort();
            snaps
        };
        let a = run(1);
        assert_eq!(a, run(1));
        let mut d = a.clone();
        d.dedup();
        assert_eq!(d.len(), 8);
        assert_ne!(a, run(2));
    }

    #[test]
    fn short_trials() {
        let dir = tempfile::tempdir().unwrap();
        let trials = vec![("a".to_string(), flat_maps(3)), ("b".to_string(), flat_maps(8))];
        let strict = ExportOptions {
            strict: true,
            ..Default::default()
        };
        match export_training_pairs(&trials, &AceConfig::default(), &strict, dir.path()) {
            Err(DatasetError::InsufficientSnapshots {
                trial,
                have: 3,
                need: 8,
            }) => assert_eq!(trial, "a"),
            other => panic!("{other:?}"),
        }
        let s = export_training_pairs(&trials, &AceConfig::default(), &ExportOptions::default(), dir.path()).unwrap();
        assert_eq!(s.pairs, 11);
        assert_eq!(s.short_trials, vec!["a".to_string()]);
    }
}
