use hcal::dataset::LogitDataset;
use hcal::loss::HCalConfig;
use hcal::maps::{CalibrationMap, Hyper};
use hcal::metrics::{compute, MetricId, MetricSettings};
use hcal::optim::{select_model, train_one, BatchSize, LossKind, TrainConfig};
use hcal::synthetic::{generate, SyntheticSpec};

fn data(seed: u64, n: usize) -> LogitDataset {
    generate(&SyntheticSpec {
        n_samples: n,
        n_classes: 4,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .data
}

fn short() -> TrainConfig {
    TrainConfig {
        max_epochs: 120,
        scheduler_patience: 5,
        early_stop_patience: 25,
        ..TrainConfig::default()
    }
}

fn hcal_small() -> LossKind {
    LossKind::Hcal(HCalConfig {
        window: 50,
        ..HCalConfig::default()
    })
}

#[test]
fn zero_epochs_return_the_initial_map() {
    let d = data(1, 300);
    let map = CalibrationMap::init(Hyper::Piecewise { z: 10 }, 7).unwrap();
    let cfg = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let (out, hist) = train_one(map.clone(), &d, &hcal_small(), &cfg).unwrap();
    assert_eq!(out, map);
    assert!(hist.records.is_empty());
    assert_eq!(hist.best_epoch, None);
}

#[test]
fn returned_map_is_the_best_recorded_snapshot() {
    let d = data(2, 800);
    for (hyper, loss) in [
        (Hyper::Ensemble { m: 2 }, hcal_small()),
        (Hyper::Monotonic { groups: 2, units: 3 }, LossKind::Nll),
        (Hyper::Piecewise { z: 5 }, LossKind::Brier),
    ] {
        let map = CalibrationMap::init(hyper, 0).unwrap();
        let (out, hist) = train_one(map, &d, &loss, &short()).unwrap();
        let best = hist.best_epoch.unwrap();
        let lowest = hist.records.iter().map(|r| r.metric).fold(f64::INFINITY, f64::min);
        assert_eq!(hist.best_metric(), Some(lowest));
        // the first epoch reaching the minimum wins
        assert_eq!(hist.records.iter().position(|r| r.metric == lowest), Some(best - 1));
        let p = out.apply(d.logits()).unwrap();
        let again = compute(hist.monitor, &p, d.labels(), &MetricSettings::default()).unwrap();
        assert_eq!(again, lowest);
        assert!(hist.records.len() <= 120);
    }
}

#[test]
fn learning_rate_only_steps_down_by_the_factor() {
    let d = data(3, 600);
    let map = CalibrationMap::init(Hyper::Piecewise { z: 10 }, 0).unwrap();
    let (_, hist) = train_one(map, &d, &hcal_small(), &short()).unwrap();
    assert_eq!(hist.records[0].lr, 0.005);
    for w in hist.records.windows(2) {
        let (a, b) = (w[0].lr, w[1].lr);
        assert!(b == a || b == a * 0.5, "{a} -> {b}");
    }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let d = data(4, 500);
    let cfg = TrainConfig {
        batch_size: BatchSize::Size(128),
        seed: 9,
        ..short()
    };
    let run = |cfg: &TrainConfig| {
        let map = CalibrationMap::init(Hyper::Ensemble { m: 2 }, cfg.seed).unwrap();
        train_one(map, &d, &hcal_small(), cfg).unwrap()
    };
    let (a, ha) = run(&cfg);
    let (b, hb) = run(&cfg);
    assert_eq!(a, b);
    assert_eq!(ha.records, hb.records);
    let (c, _) = run(&TrainConfig { seed: 10, ..cfg });
    assert_ne!(a.params(), c.params());
}

#[test]
fn selection_keeps_the_best_candidate() {
    let d = data(5, 600);
    let cfg = TrainConfig {
        selector: MetricId::EceEw,
        ..short()
    };
    let candidates = [Hyper::Ensemble { m: 1 }, Hyper::Piecewise { z: 10 }, Hyper::Monotonic { groups: 2, units: 2 }];
    let sel = select_model(&d, &candidates, &hcal_small(), &cfg).unwrap();
    let values: Vec<f64> = sel.candidates.iter().map(|c| c.selector_value.unwrap()).collect();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(sel.best_index, values.iter().position(|&v| v == min).unwrap());
    assert_eq!(sel.best.hyper(), candidates[sel.best_index]);

    let single = select_model(&d, &candidates[1..2], &hcal_small(), &cfg).unwrap();
    let (alone, _) = train_one(CalibrationMap::init(candidates[1], cfg.seed).unwrap(), &d, &hcal_small(), &cfg).unwrap();
    assert_eq!(single.best_index, 0);
    assert_eq!(single.best, alone);
}

#[test]
fn calibration_improves_a_held_out_split() {
    let train = data(6, 2000);
    let test = data(7, 4000);
    let s = MetricSettings::default();
    let raw = hcal::dataset::softmax_rows(test.logits());
    let before = compute(MetricId::EceEw, &raw, test.labels(), &s).unwrap();
    for loss in [LossKind::Hcal(HCalConfig::default()), LossKind::Nll, LossKind::Brier] {
        let map = CalibrationMap::init(Hyper::Piecewise { z: 10 }, 0).unwrap();
        let (out, _) = train_one(map, &train, &loss, &TrainConfig::default()).unwrap();
        let after = compute(MetricId::EceEw, &out.apply(test.logits()).unwrap(), test.labels(), &s).unwrap();
        assert!(after < 0.5 * before, "{}: {after} vs {before}", loss.name());
    }
}

#[test]
fn too_few_events_for_the_window_is_an_error() {
    let d = data(8, 10);
    let map = CalibrationMap::init(Hyper::Ensemble { m: 1 }, 0).unwrap();
    let err = train_one(map, &d, &LossKind::Hcal(HCalConfig::default()), &short()).unwrap_err();
    assert!(err.to_string().contains("200"), "{err}");
}
