use metabnn_core::bnn::{BnnModel, FlipProbe, Mode};
use metabnn_core::data::{encode_idx, make_permuted_task, make_stream_splits, parse_idx, Idx, LabeledDataset, Permutation, PIXELS};
use metabnn_core::meta::{train_step, MetaConfig, Optimizer};
use metabnn_core::toy::QuadraticProblem;

fn dataset(n: usize) -> LabeledDataset {
    let labels: Vec<u8> = (0..n).map(|i| (i * 7 % 10) as u8).collect();
    let pixels = (0..n * PIXELS).map(|i| ((i * 2654435761) >> 7) as u8).collect();
    LabeledDataset::new("t", pixels, labels).unwrap()
}

#[test]
fn data_invariants_over_100_seeds() {
    let labels: Vec<u8> = (0..997).map(|i| (i * 31 % 10) as u8).collect();
    for seed in 0..100u64 {
        let p = Permutation::shuffled(seed, 1 + seed % 7);
        let mut sorted = p.as_slice().to_vec();
        sorted.sort_unstable();
        assert!(sorted.iter().enumerate().all(|(i, &v)| i == v as usize));

        let k = 1 + (seed as usize % 9);
        let split = make_stream_splits(&labels, k, seed).unwrap();
        let mut all: Vec<u32> = split.subsets.concat();
        all.sort_unstable();
        assert_eq!(all, (0..labels.len() as u32).collect::<Vec<_>>());
        for c in 0..10u8 {
            let counts: Vec<usize> = split
                .subsets
                .iter()
                .map(|s| s.iter().filter(|&&i| labels[i as usize] == c).count())
                .collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }
}

#[test]
fn idx_round_trip_through_dataset() {
    let ds = dataset(5);
    let images = Idx::Images {
        count: 5,
        rows: 28,
        cols: 28,
        pixels: (0..5).flat_map(|i| ds.image(i).to_vec()).collect(),
    };
    let labels = Idx::Labels(ds.labels().to_vec());
    let back = LabeledDataset::from_idx(
        "t",
        parse_idx(&encode_idx(&images)).unwrap(),
        parse_idx(&encode_idx(&labels)).unwrap(),
    )
    .unwrap();
    assert_eq!(back, ds);
}

#[test]
fn train_and_test_views_share_permutation() {
    let (train, test) = (dataset(20), dataset(7));
    for k in 0..4 {
        assert_eq!(
            make_permuted_task(&train, 11, k).permutation(),
            make_permuted_task(&test, 11, k).permutation()
        );
    }
}

#[test]
fn flip_probe_leaves_training_unaffected() {
    let ds = dataset(64);
    let view = make_permuted_task(&ds, 3, 1);
    let (x, y) = view.gather::<f32>(&(0..32).collect::<Vec<_>>());
    let mut a = BnnModel::<f32>::new(&[PIXELS, 32, 10], 5).unwrap();
    let mut b = a.clone();
    {
        let probe = FlipProbe::new(&a, &x, &y).unwrap();
        for c in 0..50 {
            probe.delta_loss(0, c % 32, c * 13 % PIXELS).unwrap();
        }
    }
    let cfg = MetaConfig::new(1.35f32, 5e-3).unwrap();
    let (mut oa, mut ob) = (Optimizer::new(&a), Optimizer::new(&b));
    for _ in 0..3 {
        train_step(&mut a, &mut oa, &x, &y, &cfg, None).unwrap();
        train_step(&mut b, &mut ob, &x, &y, &cfg, None).unwrap();
    }
    assert_eq!(a.hidden_weights(), b.hidden_weights());
    let la = a.forward(&x, Mode::Eval).unwrap().into_logits();
    let lb = b.forward(&x, Mode::Eval).unwrap().into_logits();
    assert_eq!(la, lb);
}

#[test]
fn toy_worked_example_end_to_end() {
    let p = QuadraticProblem::new(vec![1.0, 0.9, 0.9, 1.0], vec![0.95, 0.0]).unwrap();
    let (c, l) = p.brute_force_optimum().unwrap();
    assert_eq!(c, vec![1.0, -1.0]);
    assert!((l - 0.45625).abs() < 1e-15);
    let dx = p.flip_importance(&c, 0).unwrap();
    let dy = p.flip_importance(&c, 1).unwrap();
    assert!((dx - 3.70).abs() < 1e-12 && (dy - 0.09).abs() < 1e-12);
}
