use metabnn::config::{ExperimentConfig, Method};
use metabnn::datasets::Splits;
use metabnn::flip_run::{run_flip_importance, train_reference_model, Checkpoint};
use metabnn::harness::{run_permuted, run_permuted_unvalidated, run_stream, stream_baseline};
use metabnn::metrics::{read_metrics_csv, write_run};
use metabnn::LabError;
use metabnn_core::data::{LabeledDataset, PIXELS};

/// Class `c` lights up a band of rows; a little deterministic noise.
fn synthetic(n: usize, salt: usize) -> LabeledDataset {
    let labels: Vec<u8> = (0..n).map(|i| ((i * 3 + salt) % 10) as u8).collect();
    let mut pixels = vec![0u8; n * PIXELS];
    for (i, &l) in labels.iter().enumerate() {
        for p in 0..PIXELS {
            let row = p / 28;
            let on = row / 3 == l as usize;
            let noise = ((i * 131 + p * 71 + salt) % 97) as u8;
            pixels[i * PIXELS + p] = if on { 150 + noise } else { noise };
        }
    }
    LabeledDataset::new("synthetic", pixels, labels).unwrap()
}

fn splits() -> Splits {
    Splits {
        train: synthetic(400, 0),
        test: synthetic(100, 1),
    }
}

fn small(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        hidden_size: 32,
        n_tasks: 3,
        epochs_per_task: 1,
        batch_size: 20,
        lr: 5e-3,
        seed: 3,
        fisher_samples: 50,
        k_splits: 4,
        n_weights: 30,
        eval_batch: 50,
        ..ExperimentConfig::default()
    }
}

#[test]
fn single_task_average_is_its_accuracy() {
    let data = splits();
    let cfg = ExperimentConfig { n_tasks: 1, ..small(Method::Plain) };
    let run = run_permuted(&cfg, &data).unwrap();
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.average_after(1), Some(run.records[0].accuracy));
    assert!(run.records[0].accuracy > 0.5, "{}", run.records[0].accuracy);
}

#[test]
fn rows_follow_task_triangle_and_average_matches() {
    let data = splits();
    let run = run_permuted(&small(Method::Ewc), &data).unwrap();
    assert_eq!(run.records.len(), 1 + 2 + 3);
    for k in 1..=3 {
        let accs: Vec<f64> = run.records.iter().filter(|r| r.task_index == k).map(|r| r.accuracy).collect();
        assert_eq!(accs.len(), k);
        let summary = run.summary["average_accuracy"][k - 1].as_f64().unwrap();
        assert!((summary - accs.iter().sum::<f64>() / k as f64).abs() < 1e-9);
    }
    assert!(run.records.iter().all(|r| r.eval_task >= 1 && r.eval_task <= r.task_index));
    assert_eq!(run.summary["notes"].as_array().unwrap().len(), 1);
}

#[test]
fn reruns_are_identical_except_wall_clock() {
    let data = splits();
    let dir = tempfile::tempdir().unwrap();
    let a = run_permuted(&small(Method::Meta), &data).unwrap();
    let b = run_permuted(&small(Method::Meta), &data).unwrap();
    assert_eq!(a.timeless(), b.timeless());
    let (csv, _) = write_run(dir.path(), &a).unwrap();
    let back = read_metrics_csv(&csv).unwrap();
    assert_eq!(back.len(), a.records.len());
    assert!(back.iter().zip(&a.records).all(|(x, y)| x.accuracy.to_bits() == y.accuracy.to_bits()));
}

#[test]
fn meta_without_consolidation_equals_plain() {
    let data = splits();
    let plain = run_permuted(&small(Method::Plain), &data).unwrap();
    let meta0 = ExperimentConfig { m: 0.0, ..small(Method::Meta) };
    assert!(matches!(run_permuted(&meta0, &data), Err(LabError::Config(_))));
    let meta0 = run_permuted_unvalidated(&meta0, &data).unwrap();
    assert_eq!(meta0.timeless(), plain.timeless());
}

#[test]
fn config_errors_come_before_training() {
    let data = splits();
    let bad = ExperimentConfig { lambda: 0.0, ..small(Method::Ewc) };
    let err = run_permuted(&bad, &data).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let too_many = ExperimentConfig { k_splits: 1000, ..small(Method::Plain) };
    assert_eq!(run_stream(&too_many, &data, Some(0.5)).unwrap_err().exit_code(), 1);
}

#[test]
fn stream_rows_and_degenerate_split() {
    let data = splits();
    let run = run_stream(&small(Method::Meta), &data, Some(0.9)).unwrap();
    assert_eq!(run.records.len(), 4);
    assert!(run.records.iter().enumerate().all(|(s, r)| r.task_index == s + 1 && r.eval_task == 0));
    assert_eq!(run.summary["baseline_accuracy"].as_f64(), Some(0.9));

    let one = ExperimentConfig { k_splits: 1, ..small(Method::Plain) };
    let single = run_stream(&one, &data, Some(0.0)).unwrap();
    let baseline = stream_baseline(&small(Method::Meta), &data).unwrap();
    assert_eq!(single.records[0].accuracy.to_bits(), baseline.to_bits());
}

#[test]
fn flip_importance_restores_and_checkpoints() {
    let data = splits();
    let cfg = small(Method::Plain);
    let model = train_reference_model(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::of(&model).save(&path).unwrap();
    let reloaded = Checkpoint::load(&path).unwrap().into_model().unwrap();
    assert_eq!(reloaded.hidden_weights(), model.hidden_weights());

    let out = run_flip_importance(&cfg, &data, reloaded).unwrap();
    assert!(out.restored);
    assert_eq!(out.rows.len(), 30);
    for l in 0..3 {
        assert_eq!(out.rows.iter().filter(|r| r.layer == l).count(), 10);
    }
    assert!(out.rows.iter().all(|r| (0.0..=1.0).contains(&r.wh_norm)));
    let again = run_flip_importance(&cfg, &data, model).unwrap();
    assert_eq!(again.rows, out.rows);
}
