//! Aggregation over seeds and configurations, and the average-placement ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use hsi_core::cube::DatasetId;
use serde::{Deserialize, Serialize};

use crate::results::RunResult;

/// Mean and spread of one (model, configuration) cell over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: String,
    pub config: String,
    pub dataset: DatasetId,
    pub train_ratio: Option<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    /// Mean over the dataset's configurations.
    pub dataset_scores: BTreeMap<DatasetId, f64>,
    /// Unweighted mean of the dataset scores.
    pub overall: f64,
    /// Competition rank within each dataset, 1 = best.
    pub dataset_ranks: BTreeMap<DatasetId, usize>,
    pub mean_rank: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<Cell>,
    pub datasets: Vec<DatasetId>,
    /// Sorted by final rank.
    pub rows: Vec<ModelRow>,
    pub warnings: Vec<String>,
}

/// Row label of a result; pretrained runs are kept apart from scratch runs.
pub fn model_label(r: &RunResult) -> String {
    if r.pretrained_on.is_empty() {
        r.model.clone()
    } else {
        format!("{}<-{}", r.model, r.pretrained_on.join("+"))
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Competition ranks (1 + number of strictly better scores).
pub fn competition_ranks(scores: &[f64]) -> Vec<usize> {
    scores.iter().map(|s| 1 + scores.iter().filter(|o| *o > s).count()).collect()
}

/// Averages seeds per cell, configurations per dataset and datasets overall,
/// then orders models by mean per-dataset rank, overall accuracy descending, name.
pub fn aggregate_and_rank(results: &[RunResult]) -> Report {
    let mut warnings = Vec::new();
    let mut runs: BTreeMap<(String, String), BTreeMap<u64, &RunResult>> = BTreeMap::new();
    for r in results {
        let key = (model_label(r), r.config_id());
        if runs.entry(key.clone()).or_default().insert(r.seed, r).is_some() {
            warnings.push(format!("duplicate run {} / {} seed {}: keeping the last record", key.0, key.1, r.seed));
        }
    }

    let mut seeds_per_config: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    for ((_, config), by_seed) in &runs {
        seeds_per_config.entry(config.clone()).or_default().extend(by_seed.keys());
    }
    let mut cells = Vec::new();
    for ((model, config), by_seed) in &runs {
        let expected = &seeds_per_config[config];
        let missing: Vec<_> = expected.iter().filter(|s| !by_seed.contains_key(s)).collect();
        if !missing.is_empty() {
            warnings.push(format!("{model} / {config}: missing seeds {missing:?}"));
        }
        let accs: Vec<f64> = by_seed.values().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&accs);
        let first = by_seed.values().next().expect("non-empty");
        cells.push(Cell {
            model: model.clone(),
            config: config.clone(),
            dataset: first.config.dataset,
            train_ratio: first.config.train_ratio.map(|r| r.get()),
            mean,
            std,
            seeds: by_seed.keys().copied().collect(),
        });
    }

    let datasets: Vec<DatasetId> = cells.iter().map(|c| c.dataset).collect::<BTreeSet<_>>().into_iter().collect();
    let models: Vec<String> = cells.iter().map(|c| c.model.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let configs_of =
        |d: DatasetId| cells.iter().filter(|c| c.dataset == d).map(|c| c.config.clone()).collect::<BTreeSet<_>>();

    let mut rows: Vec<ModelRow> = models
        .iter()
        .map(|m| {
            let mut dataset_scores = BTreeMap::new();
            for &d in &datasets {
                let mine: Vec<f64> = cells.iter().filter(|c| &c.model == m && c.dataset == d).map(|c| c.mean).collect();
                if mine.is_empty() {
                    warnings.push(format!("{m}: no results for dataset {d}"));
                    continue;
                }
                if mine.len() < configs_of(d).len() {
                    warnings.push(format!("{m}: {} of {} {d} configurations covered", mine.len(), configs_of(d).len()));
                }
                dataset_scores.insert(d, mine.iter().sum::<f64>() / mine.len() as f64);
            }
            let overall = dataset_scores.values().sum::<f64>() / dataset_scores.len() as f64;
            ModelRow {
                model: m.clone(),
                dataset_scores,
                overall,
                dataset_ranks: BTreeMap::new(),
                mean_rank: 0.0,
                rank: 0,
            }
        })
        .collect();

    for &d in &datasets {
        let holders: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].dataset_scores.contains_key(&d)).collect();
        let scores: Vec<f64> = holders.iter().map(|&i| rows[i].dataset_scores[&d]).collect();
        for (&i, r) in holders.iter().zip(competition_ranks(&scores)) {
            rows[i].dataset_ranks.insert(d, r);
        }
    }
    for row in &mut rows {
        row.mean_rank = row.dataset_ranks.values().sum::<usize>() as f64 / row.dataset_ranks.len() as f64;
    }
    rows.sort_by(|a, b| {
        a.mean_rank.total_cmp(&b.mean_rank).then(b.overall.total_cmp(&a.overall)).then_with(|| a.model.cmp(&b.model))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    Report { cells, datasets, rows, warnings }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl Report {
    pub fn row(&self, model: &str) -> Option<&ModelRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Dataset, overall and ranking columns, one line per model in rank order.
    pub fn ranking_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}", "model");
        for d in &self.datasets {
            let _ = write!(s, " {:>8}", d.to_string());
        }
        let _ = writeln!(s, " {:>8} {:>9} {:>4}", "overall", "mean_rank", "rank");
        for r in &self.rows {
            let _ = write!(s, "{:<width$}", r.model);
            for d in &self.datasets {
                let v = r.dataset_scores.get(d).map(|x| pct(*x)).unwrap_or_else(|| "-".into());
                let _ = write!(s, " {v:>8}");
            }
            let _ = writeln!(s, " {:>8} {:>9.2} {:>4}", pct(r.overall), r.mean_rank, r.rank);
        }
        s
    }

    /// Per-configuration accuracies as mean +- std over seeds.
    pub fn configs_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            let _ = writeln!(s, "{}\t{}\t{} +- {}\t(n={})", c.model, c.config, pct(c.mean), pct(c.std), c.seeds.len());
        }
        s
    }

    pub fn ranking_csv(&self) -> String {
        let mut s = String::from("model");
        for d in &self.datasets {
            let _ = write!(s, ",{d}");
        }
        s.push_str(",overall,mean_rank,rank\n");
        for r in &self.rows {
            s.push_str(&r.model);
            for d in &self.datasets {
                let v = r.dataset_scores.get(d).map(|x| pct(*x)).unwrap_or_default();
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{},{},{}", pct(r.overall), r.mean_rank, r.rank);
        }
        s
    }

    pub fn configs_csv(&self) -> String {
        let mut s = String::from("model,config,dataset,mean,std,seeds\n");
        for c in &self.cells {
            let _ =
                writeln!(s, "{},{},{},{},{},{}", c.model, c.config, c.dataset, pct(c.mean), pct(c.std), c.seeds.len());
        }
        s
    }

    /// Accuracy against train ratio for every model and scene evaluated at
    /// more than one ratio; `None` when no sweep is present.
    pub fn curve_csv(&self) -> Option<String> {
        let mut series: BTreeMap<(String, String), Vec<&Cell>> = BTreeMap::new();
        for c in self.cells.iter().filter(|c| c.train_ratio.is_some()) {
            let scene = c.config.rsplit_once('/').map(|(head, _)| head.to_string()).unwrap_or_default();
            series.entry((c.model.clone(), scene)).or_default().push(c);
        }
        series.retain(|_, v| v.len() > 1);
        if series.is_empty() {
            return None;
        }
        let mut s = String::from("model,scene,train_ratio,mean,std,seeds\n");
        for ((model, scene), mut cells) in series {
            cells.sort_by(|a, b| a.train_ratio.partial_cmp(&b.train_ratio).expect("finite ratios"));
            for c in cells {
                let _ = writeln!(
                    s,
                    "{model},{scene},{},{},{},{}",
                    c.train_ratio.unwrap_or_default(),
                    pct(c.mean),
                    pct(c.std),
                    c.seeds.len()
                );
            }
        }
        Some(s)
    }
}
