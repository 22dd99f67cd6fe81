mod common;

use common::*;
use sdds_core::harness::{
    parse_csv, report, run_grid, summarize, GridResult, ReportFormat, Scenario, CSV_HEADER, FEATURE_TABLE, RESULTS_FILE,
};

/// Feature matrix transcribed independently, one row per experiment.
const MATRIX: [(&str, &str); 8] = [
    ("E1", "xxxxx----xx-"),
    ("E2", "xxxxx--x-xxx"),
    ("E3", "xxxxx--x-xxx"),
    ("E4", "xxxxx---x-xx"),
    ("E5", "xxxx-x---xx-"),
    ("E6", "xxxx-x-x-xxx"),
    ("E7", "xxxx--x--x--"),
    ("E8", "xxxx--xx-x--"),
];

#[test]
fn feature_table_matches_transcription() {
    assert_eq!(FEATURE_TABLE.len(), 8);
    for (id, row) in MATRIX {
        let s = Scenario::paper(id, vec![1]).unwrap();
        let want: Vec<bool> = row.chars().map(|c| c == 'x').collect();
        assert_eq!(s.features.0.to_vec(), want, "{id}");
    }
}

#[test]
fn empty_results_cannot_be_reported() {
    let err = report(&GridResult::default(), ReportFormat::Table).unwrap_err();
    assert!(err.to_string().contains("nonempty results required"), "{err}");
}

fn strip_timing(mut r: GridResult) -> GridResult {
    r.setup_seconds.clear();
    for run in &mut r.runs {
        run.seconds = 0.0;
    }
    r
}

#[test]
fn tiny_grid_end_to_end() {
    let cfg = tiny_grid();
    let dir = tempfile::tempdir().unwrap();
    let result = run_grid(&cfg, Some(dir.path())).unwrap();
    assert!(result.failures.is_empty(), "{:?}", result.failures);
    assert_eq!(result.runs.len(), 8);

    // Artifacts on disk.
    for id in ["E1", "E4", "E8"] {
        for f in ["weights.sdds", "history.csv", "metrics.json"] {
            assert!(dir.path().join(id).join("seed1").join(f).exists(), "{id}/{f}");
        }
    }
    assert!(dir.path().join("saliency_0.png").exists());
    assert_eq!(strip_timing(GridResult::load(&dir.path().join(RESULTS_FILE)).unwrap()), strip_timing(result.clone()));

    // E4 has no early stopping, so every epoch runs.
    let e4 = result.runs_of("E4").next().unwrap();
    assert_eq!(e4.history.epochs.len(), cfg.train.max_epochs);
    // Segmentation runs tune a threshold; multiclass runs keep macro metrics.
    assert!(result.runs_of("E7").next().unwrap().threshold.is_some());
    assert!(result.runs_of("E5").next().unwrap().macro_metrics.is_some());

    // Table: fixed column order, rows in experiment order.
    let table = report(&result, ReportFormat::Table).unwrap();
    let header = table.lines().next().unwrap();
    let cols = ["Experiment", "Accuracy", "Precision", "Recall", "F1 score"];
    let pos: Vec<usize> = cols.iter().map(|c| header.find(c).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{header}");
    let rows: Vec<&str> = table.lines().filter(|l| l.starts_with('E') && !l.starts_with("Experiment")).map(|l| &l[..2]).collect();
    assert_eq!(rows, ["E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8"]);

    // CSV round trip.
    let csv = report(&result, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    let parsed = parse_csv(&csv).unwrap();
    for (row, s) in parsed.iter().zip(summarize(&result)) {
        assert_eq!(row.0, s.id);
        assert_eq!(row.1, [s.accuracy.mean, s.precision.mean, s.recall.mean, s.f1.mean]);
    }

    // Same config, same numbers.
    let again = run_grid(&cfg, None).unwrap();
    assert_eq!(strip_timing(again.clone()), strip_timing(result));
    assert_eq!(report(&again, ReportFormat::Csv).unwrap(), csv);
}

#[test]
fn unknown_scenario_is_rejected_by_name() {
    let mut cfg = tiny_grid();
    cfg.scenarios[0].id = "E42".into();
    let err = run_grid(&cfg, None).unwrap_err().to_string();
    assert!(err.contains("E42"), "{err}");
}
