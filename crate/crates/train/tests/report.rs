use std::collections::BTreeMap;

use hsi_core::cube::{DataConfig, DatasetId, LabelTarget, TaskKind};
use hsi_train::report::competition_ranks;
use hsi_train::{aggregate_and_rank, ResultStore, RunResult};
use proptest::prelude::*;

const PUBLISHED: &str = include_str!("fixtures/published_accuracies.csv");

fn config(dataset: DatasetId, scene: &str) -> DataConfig {
    match dataset {
        DatasetId::Hrss => DataConfig::hrss(scene, "aviris", 0.3).unwrap(),
        DatasetId::Fruit => {
            DataConfig::new(dataset, scene, "specim_fx10", TaskKind::Objectwise, Some(LabelTarget::Ripeness), None)
                .unwrap()
        }
        DatasetId::Debris => DataConfig::new(dataset, scene, "specim_fx17", TaskKind::Patchwise, None, None).unwrap(),
    }
}

fn run(model: &str, config: DataConfig, seed: u64, accuracy: f64) -> RunResult {
    RunResult {
        config,
        model: model.into(),
        seed,
        accuracy,
        train_accuracy: 1.0,
        best_epoch: 0,
        epochs_run: 1,
        best_val_loss: 0.0,
        wall_time_s: 0.0,
        pretrained_on: vec![],
        manifest_hash: "m".into(),
        code_version: "0".into(),
        resolved: serde_json::Value::Null,
    }
}

/// One configuration per dataset carrying the dataset-level accuracy.
fn dataset_rows(rows: &[(&str, [f64; 3])]) -> Vec<RunResult> {
    let datasets = [DatasetId::Hrss, DatasetId::Fruit, DatasetId::Debris];
    rows.iter()
        .flat_map(|(m, accs)| datasets.iter().zip(accs).map(move |(&d, &a)| run(m, config(d, "all"), 0, a / 100.0)))
        .collect()
}

fn published() -> Vec<(String, [f64; 3], usize)> {
    PUBLISHED
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                [f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap()],
                f[4].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn published_table_ranks_are_reproduced() {
    let rows = published();
    let input: Vec<(&str, [f64; 3])> = rows.iter().map(|(m, a, _)| (m.as_str(), *a)).collect();
    let report = aggregate_and_rank(&dataset_rows(&input));
    assert!(report.warnings.is_empty(), "{:?}", report.warnings);
    for (model, _, rank) in &rows {
        assert_eq!(report.row(model).unwrap().rank, *rank, "{model}");
    }
    let three_d = report.row("3d_cnn").unwrap();
    assert!((100.0 * three_d.overall - 81.12).abs() <= 0.01);
    let two_d = report.row("2d_cnn").unwrap();
    assert!((100.0 * two_d.overall - 77.17).abs() <= 0.01);
}

#[test]
fn three_model_excerpt_puts_3d_cnn_first() {
    let report = aggregate_and_rank(&dataset_rows(&[
        ("3d_cnn", [99.73, 56.06, 87.56]),
        ("2d_cnn", [99.71, 54.42, 77.39]),
        ("deephs_net", [98.33, 58.28, 75.32]),
    ]));
    let top = &report.rows[0];
    assert_eq!(top.model, "3d_cnn");
    assert!((100.0 * top.overall - 81.12).abs() <= 0.01);
}

#[test]
fn single_dataset_ranking_is_the_dataset_ranking() {
    let accs = [0.7, 0.9, 0.8, 0.6];
    let results: Vec<_> =
        accs.iter().enumerate().map(|(i, &a)| run(&format!("m{i}"), config(DatasetId::Hrss, "x"), 0, a)).collect();
    let report = aggregate_and_rank(&results);
    let ranks = competition_ranks(&accs);
    for (i, r) in ranks.iter().enumerate() {
        assert_eq!(report.row(&format!("m{i}")).unwrap().rank, *r);
    }
}

#[test]
fn identical_accuracies_are_ordered_by_name() {
    let results: Vec<_> =
        ["zeta", "alpha", "mid"].iter().map(|m| run(m, config(DatasetId::Hrss, "x"), 0, 0.5)).collect();
    let report = aggregate_and_rank(&results);
    let order: Vec<_> = report.rows.iter().map(|r| r.model.as_str()).collect();
    assert_eq!(order, ["alpha", "mid", "zeta"]);
    assert!(report.rows.iter().all(|r| r.dataset_ranks[&DatasetId::Hrss] == 1));
}

#[test]
fn seeds_give_mean_and_sample_std() {
    let c = config(DatasetId::Hrss, "x");
    let results: Vec<_> = [0.8, 0.9, 1.0].iter().enumerate().map(|(s, &a)| run("m", c.clone(), s as u64, a)).collect();
    let report = aggregate_and_rank(&results);
    let cell = &report.cells[0];
    assert!((cell.mean - 0.9).abs() < 1e-12);
    assert!((cell.std - 0.1).abs() < 1e-12);
    assert_eq!(cell.seeds, [0, 1, 2]);
}

#[test]
fn datasets_weigh_equally_regardless_of_config_count() {
    let results = vec![
        run("m", config(DatasetId::Hrss, "a"), 0, 0.9),
        run("m", config(DatasetId::Hrss, "b"), 0, 0.7),
        run("m", config(DatasetId::Hrss, "c"), 0, 0.8),
        run("m", config(DatasetId::Fruit, "avocado"), 0, 0.4),
    ];
    let row = aggregate_and_rank(&results).rows.remove(0);
    assert!((row.dataset_scores[&DatasetId::Hrss] - 0.8).abs() < 1e-12);
    assert!((row.overall - 0.6).abs() < 1e-12);
}

#[test]
fn missing_seeds_warn_without_failing() {
    let c = config(DatasetId::Hrss, "x");
    let results = vec![run("a", c.clone(), 0, 0.5), run("a", c.clone(), 1, 0.6), run("b", c, 0, 0.7)];
    let report = aggregate_and_rank(&results);
    assert_eq!(report.rows.len(), 2);
    assert!(report.warnings.iter().any(|w| w.contains("b") && w.contains("missing seeds")), "{:?}", report.warnings);
}

#[test]
fn pretrained_runs_form_their_own_rows() {
    let c = config(DatasetId::Hrss, "x");
    let mut pre = run("deephs_net_hyve", c.clone(), 0, 0.9);
    pre.pretrained_on = vec!["hrss/salinas/aviris/patchwise/r0.3".into()];
    let report = aggregate_and_rank(&[run("deephs_net_hyve", c, 0, 0.8), pre]);
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].model, "deephs_net_hyve<-hrss/salinas/aviris/patchwise/r0.3");
}

#[test]
fn curve_csv_needs_a_ratio_sweep() {
    let at = |r: f64, a: f64| run("m", DataConfig::hrss("pavia", "rosis", r).unwrap(), 0, a);
    assert!(aggregate_and_rank(&[at(0.3, 0.9)]).curve_csv().is_none());
    let csv = aggregate_and_rank(&[at(0.3, 0.9), at(0.05, 0.7)]).curve_csv().unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("m,hrss/pavia/rosis/patchwise,0.05,70.00"));
}

#[test]
fn tables_list_every_model() {
    let report = aggregate_and_rank(&dataset_rows(&[("a", [90.0, 50.0, 60.0]), ("b", [80.0, 40.0, 50.0])]));
    let text = report.ranking_text();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("a "));
    let csv = report.ranking_csv();
    assert_eq!(csv.lines().next().unwrap(), "model,hrss,fruit,debris,overall,mean_rank,rank");
    assert_eq!(csv.lines().nth(1).unwrap(), "a,90.00,50.00,60.00,66.67,1,1");
}

#[test]
fn store_round_trips_and_skips_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let store = ResultStore::new(dir.path().join("sub/results.jsonl"));
    let a = run("a", config(DatasetId::Hrss, "x"), 0, 0.5);
    store.append(&a).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(store.path())
        .and_then(|mut f| std::io::Write::write_all(&mut f, b"{not json\n"))
        .unwrap();
    store.append(&a).unwrap();
    let loaded = store.load().unwrap();
    assert_eq!(loaded.records, [a.clone(), a]);
    assert_eq!(loaded.warnings.len(), 1);
}

#[test]
fn concurrent_appends_keep_whole_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    std::thread::scope(|s| {
        for t in 0..8 {
            let store = ResultStore::new(&path);
            s.spawn(move || {
                for i in 0..25 {
                    store.append(&run(&format!("m{t}"), config(DatasetId::Hrss, "x"), i, 0.5)).unwrap();
                }
            });
        }
    });
    let loaded = ResultStore::new(&path).load().unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.records.len(), 200);
}

proptest! {
    /// Per-dataset and mean ranks depend only on the order of accuracies within a dataset.
    #[test]
    fn ranks_invariant_under_monotone_transforms(
        accs in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 2..8),
        scale in prop::array::uniform3(0.1f64..5.0),
        power in prop::array::uniform3(0.5f64..3.0),
    ) {
        let names: Vec<String> = (0..accs.len()).map(|i| format!("m{i}")).collect();
        let rows = |f: &dyn Fn(usize, f64) -> f64| {
            let v: Vec<(&str, [f64; 3])> =
                names.iter().zip(&accs).map(|(n, a)| (n.as_str(), [f(0, a[0]), f(1, a[1]), f(2, a[2])])).collect();
            aggregate_and_rank(&dataset_rows(&v))
        };
        let base = rows(&|_, x| 100.0 * x);
        let warped = rows(&|d, x| 100.0 * scale[d] * x.powf(power[d]));
        let ranks = |r: &hsi_train::Report| -> BTreeMap<String, (Vec<usize>, f64)> {
            r.rows.iter().map(|row| (row.model.clone(), (row.dataset_ranks.values().copied().collect(), row.mean_rank))).collect()
        };
        prop_assert_eq!(ranks(&base), ranks(&warped));
    }
}
