use lka_core::readiness::features::{MARKING_CONDITIONS, N_CLASSES};
use lka_core::readiness::io::{read_features_csv, read_labeled_csv, write_features_csv, write_labeled_csv};
use lka_core::readiness::synthetic::MPH;
use lka_core::readiness::tree::Node;
use lka_core::readiness::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> TrainParams {
    TrainParams { n_trees: 25, seed, ..TrainParams::default() }
}

fn continuous(names: &[&str]) -> Schema {
    Schema {
        features: names.iter().map(|n| FeatureSpec { name: n.to_string(), kind: FeatureKind::Continuous }).collect(),
    }
}

/// Rows with `f` uniform columns; label from `label_of(row)`.
fn uniform_data(n: usize, f: usize, seed: u64, label_of: impl Fn(&[f64], &mut ChaCha8Rng) -> usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..f).map(|i| format!("x{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let row: Vec<f64> = (0..f).map(|_| rng.random::<f64>()).collect();
        labels.push(label_of(&row, &mut rng));
        rows.push(row);
    }
    Dataset::new(continuous(&refs), rows, labels).unwrap()
}

fn marking(name: &str) -> usize {
    MARKING_CONDITIONS.iter().position(|m| *m == name).unwrap()
}

// Generator

#[test]
fn benign_low_curvature_is_mostly_normal() {
    let mut cfg = GeneratorConfig::default();
    for f in &Feature::ALL[2..] {
        cfg.pin_level(*f, 0);
    }
    cfg.kappa_range = [0.0, 0.002];
    let data = generate_synthetic(1000, 11, &cfg).unwrap();
    let normal = data.iter().filter(|(_, c)| *c == OutcomeClass::Normal).count();
    assert!(normal as f64 / 1000.0 > 0.9, "{normal}");
}

#[test]
fn sharp_curve_with_faded_markings_is_mostly_deviation() {
    let mut cfg = GeneratorConfig::default();
    cfg.kappa_range = [0.012, 0.012];
    cfg.pin_level(Feature::MarkingCondition, marking("faded"));
    let data = generate_synthetic(1000, 12, &cfg).unwrap();
    let dev = data.iter().filter(|(_, c)| *c == OutcomeClass::Deviation).count();
    assert!(dev > 500, "{dev}");
}

#[test]
fn generator_is_byte_identical_per_seed() {
    let cfg = GeneratorConfig::default();
    let csv = |seed| {
        let mut buf = Vec::new();
        write_labeled_csv(&generate_synthetic(500, seed, &cfg).unwrap(), &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(3), csv(3));
    assert_ne!(csv(3), csv(4));
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn noiseless_labels_follow_rule_table() {
    let mut cfg = GeneratorConfig::default();
    cfg.noise_sd_m = 0.0;
    cfg.speed_knee_width_mps = 1e-9;
    let data = generate_synthetic(2000, 5, &cfg).unwrap();
    let mult = [
        &cfg.adverse_multipliers.road_type,
        &cfg.adverse_multipliers.marking_condition,
        &cfg.adverse_multipliers.lighting,
        &cfg.adverse_multipliers.weather,
        &cfg.adverse_multipliers.surface,
    ];
    let mut checked = 0;
    for (fv, class) in &data {
        let codes = [fv.road_type, fv.marking_condition, fv.lighting, fv.weather, fv.surface];
        let w = codes.iter().zip(mult).map(|(&c, m)| m[c as usize]).product::<f64>().min(3.0);
        let sat = logistic((fv.kappa - 0.006) / 0.0006);
        let d = w * (0.03 + 8.327 * fv.kappa) + 0.25 * sat;
        let knee = 60.7 * 0.44704 - sat;
        let margin = (fv.speed - knee).abs();
        if w >= 2.0 && margin < 1e-6 || (d - 0.25).abs() < 1e-9 {
            continue;
        }
        let expected = if w >= 2.0 && fv.speed > knee {
            OutcomeClass::Disengagement
        } else if d >= 0.25 {
            OutcomeClass::Deviation
        } else {
            OutcomeClass::Normal
        };
        assert_eq!(*class, expected, "{fv:?}");
        checked += 1;
    }
    assert!(checked > 1990);
}

#[test]
fn generator_rejects_bad_configs() {
    let mut cfg = GeneratorConfig::default();
    cfg.adverse_multipliers.marking_condition[1] = -1.0;
    assert!(generate_synthetic(10, 1, &cfg).is_err());
    let mut cfg = GeneratorConfig::default();
    cfg.level_weights.weather = vec![1.0, 1.0];
    assert!(generate_synthetic(10, 1, &cfg).is_err());
    let mut cfg = GeneratorConfig::default();
    cfg.version = 99;
    assert!(generate_synthetic(10, 1, &cfg).is_err());
    assert!(generate_synthetic(0, 1, &GeneratorConfig::default()).is_err());
}

#[test]
fn generator_config_round_trips_json() {
    let cfg = GeneratorConfig::default();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: GeneratorConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert!((cfg.speed_knee_mps - 60.7 * MPH).abs() < 1e-12);
    assert!((cfg.speed_knee_mps - 27.1353).abs() < 1e-4);
}

// Training and prediction

#[test]
fn separable_data_trains_to_full_accuracy() {
    let data = uniform_data(200, 3, 1, |r, _| usize::from(r[0] > 0.5));
    let model = train(&data, &small(1)).unwrap();
    let m = evaluate(&model, &data).unwrap();
    assert_eq!(m.accuracy, 1.0);
}

#[test]
fn training_errors() {
    let one = uniform_data(50, 2, 1, |_, _| 0);
    assert_eq!(train(&one, &small(1)).unwrap_err(), ReadinessError::SingleClass);
    let empty = Dataset::new(continuous(&["a"]), vec![], vec![]).unwrap();
    assert_eq!(train(&empty, &small(1)).unwrap_err(), ReadinessError::EmptyData);
    let tiny = uniform_data(6, 2, 1, |r, _| usize::from(r[0] > 0.5));
    assert!(matches!(train(&tiny, &small(1)), Err(ReadinessError::TooFewRows { .. })));
}

#[test]
fn training_is_deterministic() {
    let data = Dataset::from_labeled(&generate_synthetic(800, 9, &GeneratorConfig::default()).unwrap());
    let a = train(&data, &small(4)).unwrap();
    let b = train(&data, &small(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
    let c = train(&data, &small(5)).unwrap();
    assert_ne!(a.trees, c.trees);
}

#[test]
fn tree_structure_invariants() {
    let data = Dataset::from_labeled(&generate_synthetic(600, 2, &GeneratorConfig::default()).unwrap());
    let model = train(&data, &small(2)).unwrap();
    assert_eq!(model.feature_subsample, 3);
    for tree in &model.trees {
        assert_eq!(tree.node_count(0) as usize, data.len());
        assert!(tree.depth() <= 8);
        for node in &tree.nodes {
            match node {
                Node::Split { left, right, .. } => {
                    assert!(*left < tree.nodes.len() && *right < tree.nodes.len());
                    assert_ne!(left, right);
                }
                Node::Leaf { histogram } => assert!(histogram.iter().sum::<u32>() >= 5),
            }
        }
    }
}

#[test]
fn categorical_subset_split_is_found() {
    let schema = Schema {
        features: vec![FeatureSpec { name: "cat".into(), kind: FeatureKind::Categorical(5) }],
    };
    let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 5) as f64]).collect();
    let labels: Vec<usize> = rows.iter().map(|r| usize::from(r[0] == 1.0 || r[0] == 3.0)).collect();
    let data = Dataset::new(schema, rows, labels).unwrap();
    let model = train(&data, &TrainParams { n_trees: 5, max_depth: 1, ..TrainParams::default() }).unwrap();
    assert_eq!(evaluate(&model, &data).unwrap().accuracy, 1.0);
}

#[test]
fn represented_point_predicted_confidently() {
    let data = uniform_data(300, 2, 3, |r, _| if r[0] < 0.3 { 0 } else if r[0] < 0.7 { 1 } else { 2 });
    let model = train(&data, &small(3)).unwrap();
    let p = model.predict_row(&[0.5, 0.5]);
    assert_eq!(p.class, OutcomeClass::Deviation);
    assert!(p.probabilities[1] >= 0.9);
}

#[test]
fn benign_straight_segment_predicts_normal() {
    let data = Dataset::from_labeled(&generate_synthetic(2000, 21, &GeneratorConfig::default()).unwrap());
    let model = train(&data, &small(21)).unwrap();
    for v in [18.0, 25.0, 35.0] {
        assert_eq!(model.predict(&FeatureVector::benign(0.0, v)).class, OutcomeClass::Normal);
    }
}

#[test]
fn model_json_round_trip_and_version_check() {
    let data = uniform_data(100, 2, 1, |r, _| usize::from(r[1] > 0.4));
    let model = train(&data, &small(1)).unwrap();
    let back = ReadinessModel::from_json(&model.to_json()).unwrap();
    assert_eq!(back, model);
    let mut v: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
    v["format_version"] = serde_json::json!(MODEL_FORMAT_VERSION + 1);
    assert!(matches!(ReadinessModel::from_json(&v.to_string()), Err(ReadinessError::Version { .. })));
    assert!(matches!(ReadinessModel::from_json("{}"), Err(ReadinessError::Version { found: None, .. })));
}

// Importance and partial dependence

#[test]
fn single_informative_feature_dominates_importance() {
    let data = uniform_data(600, 4, 7, |r, _| usize::from(r[0] > 0.5));
    let imp = variable_importance(&train(&data, &small(7)).unwrap());
    assert!(imp.score("x0").unwrap() > 0.9);
    assert!((imp.ranked.iter().map(|f| f.score).sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn noise_labels_spread_importance() {
    for seed in 0..5 {
        let data = uniform_data(400, 4, 100 + seed, |_, rng| rng.random_range(0..3));
        let imp = variable_importance(&train(&data, &small(seed)).unwrap());
        assert!(imp.ranked.iter().all(|f| f.score <= 0.5), "{imp:?}");
        assert!(imp.ranked.iter().all(|f| f.score >= 0.0));
    }
}

#[test]
fn duplicated_noise_column_barely_moves_informative_ranks() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = 500;
        let mut base_rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let (a, b, c, noise): (f64, f64, f64, f64) = (rng.random(), rng.random(), rng.random(), rng.random());
            let score = 3.0 * a + 1.5 * b + 0.7 * c + 0.3 * rng.random::<f64>();
            labels.push(if score < 1.8 { 0 } else if score < 3.0 { 1 } else { 2 });
            base_rows.push(vec![a, b, c, noise]);
        }
        let base = Dataset::new(continuous(&["a", "b", "c", "noise"]), base_rows.clone(), labels.clone()).unwrap();
        let dup_rows = base_rows.iter().map(|r| vec![r[0], r[1], r[2], r[3], r[3]]).collect();
        let dup = Dataset::new(continuous(&["a", "b", "c", "noise", "noise2"]), dup_rows, labels).unwrap();
        let r1 = variable_importance(&train(&base, &small(seed)).unwrap());
        let r2 = variable_importance(&train(&dup, &small(seed)).unwrap());
        for f in ["a", "b", "c"] {
            let (p, q) = (r1.rank(f).unwrap() as i64, r2.rank(f).unwrap() as i64);
            assert!((p - q).abs() <= 1, "{f}: {p} -> {q}");
        }
    }
}

#[test]
fn unused_feature_has_flat_dependence() {
    let data = uniform_data(300, 3, 4, |r, _| usize::from(r[0] > 0.5));
    let model = train(&data, &TrainParams { feature_subsample: Some(3), ..small(4) }).unwrap();
    let unused = (0..3).find(|f| model.trees.iter().all(|t| t.impurity_decrease(3)[*f] == 0.0));
    let Some(f) = unused else { panic!("every feature was split on") };
    let curve = partial_dependence(&model, &format!("x{f}"), &linear_grid(0.0, 1.0, 11), &data.rows).unwrap();
    assert!(curve.windows(2).all(|w| w[0].probabilities == w[1].probabilities));
}

#[test]
fn dependence_errors() {
    let data = uniform_data(100, 2, 4, |r, _| usize::from(r[0] > 0.5));
    let model = train(&data, &small(4)).unwrap();
    assert_eq!(
        partial_dependence(&model, "nope", &[0.0], &data.rows).unwrap_err(),
        ReadinessError::UnknownFeature("nope".into())
    );
    assert!(partial_dependence(&model, "x0", &[], &data.rows).is_err());
    assert!(partial_dependence(&model, "x0", &[0.1], &[]).is_err());
}

#[test]
fn synthetic_knees_recovered() {
    let cfg = GeneratorConfig::default();
    let data = Dataset::from_labeled(&generate_synthetic(3000, 8, &cfg).unwrap());
    let model = train(&data, &TrainParams { n_trees: 60, seed: 8, ..TrainParams::default() }).unwrap();
    let bg = &data.rows[..200];
    let k = partial_dependence(&model, "kappa", &linear_grid(0.0, 0.015, 31), bg).unwrap();
    let (lo, hi) = steepest_rise(&k, OutcomeClass::Deviation.index()).unwrap();
    assert!(((lo + hi) / 2.0 - 0.006).abs() <= 0.002, "{lo}..{hi}");
    let s = partial_dependence(&model, "speed", &linear_grid(15.0, 38.0, 47), bg).unwrap();
    let (lo, hi) = steepest_rise(&s, OutcomeClass::Disengagement.index()).unwrap();
    assert!(((lo + hi) / 2.0 - 27.1).abs() <= 2.0, "{lo}..{hi}");
}

#[test]
fn curvature_dependence_is_monotone_up_to_one_inversion() {
    for seed in [8, 9] {
        let data = Dataset::from_labeled(&generate_synthetic(3000, seed, &GeneratorConfig::default()).unwrap());
        let model = train(&data, &TrainParams { n_trees: 60, seed, ..TrainParams::default() }).unwrap();
        let curve = partial_dependence(&model, "kappa", &linear_grid(0.0, 0.015, 31), &data.rows[..200]).unwrap();
        let risk: Vec<f64> = curve.iter().map(|p| 1.0 - p.probabilities[0]).collect();
        let inversions = risk.windows(2).filter(|w| w[1] < w[0] - 0.02).count();
        assert!(inversions <= 1, "{risk:?}");
    }
}

// Metrics

#[test]
fn perfect_predictions() {
    let t = [0, 1, 2, 2, 1, 0];
    let m = metrics_from_predictions(&t, &t).unwrap();
    assert_eq!(m.accuracy, 1.0);
    for r in 0..3 {
        for c in 0..3 {
            assert_eq!(m.confusion[r][c] > 0, r == c);
        }
    }
    assert_eq!(m.precision, [1.0; 3]);
    assert_eq!(m.recall, [1.0; 3]);
}

#[test]
fn constant_predictor_on_balanced_data() {
    let truth: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let m = metrics_from_predictions(&truth, &vec![0; 300]).unwrap();
    assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.recall, [1.0, 0.0, 0.0]);
    assert_eq!(m.precision[1], 0.0);
}

#[test]
fn metrics_match_brute_force_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let truth: Vec<usize> = (0..500).map(|_| rng.random_range(0..3)).collect();
    let pred: Vec<usize> = (0..500).map(|_| rng.random_range(0..3)).collect();
    let m = metrics_from_predictions(&truth, &pred).unwrap();
    let hits = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
    assert!((m.accuracy - hits as f64 / 500.0).abs() < 1e-12);
    for c in 0..N_CLASSES {
        let tp = truth.iter().zip(&pred).filter(|(a, b)| **a == c && **b == c).count() as f64;
        let predicted = pred.iter().filter(|p| **p == c).count() as f64;
        let actual = truth.iter().filter(|t| **t == c).count() as f64;
        assert!((m.precision[c] - tp / predicted).abs() < 1e-12);
        assert!((m.recall[c] - tp / actual).abs() < 1e-12);
        for k in 0..N_CLASSES {
            let n = truth.iter().zip(&pred).filter(|(a, b)| **a == c && **b == k).count();
            assert_eq!(m.confusion[c][k], n);
        }
    }
    let mut buf = Vec::new();
    m.write_confusion_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("true_class,pred_normal,pred_deviation,pred_disengagement\n"));
}

#[test]
fn metrics_need_data() {
    assert!(metrics_from_predictions(&[], &[]).is_err());
}

// CSV

#[test]
fn csv_round_trips() {
    let data = generate_synthetic(50, 1, &GeneratorConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_labeled_csv(&data, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("kappa_inv_m,speed_mps,road_type,marking_condition,lighting,weather,surface,outcome\n"));
    assert_eq!(read_labeled_csv(buf.as_slice()).unwrap(), data);

    let fvs: Vec<_> = data.iter().map(|(f, _)| *f).collect();
    let mut buf = Vec::new();
    write_features_csv(&fvs, &mut buf).unwrap();
    assert_eq!(read_features_csv(buf.as_slice()).unwrap(), fvs);
    assert!(read_features_csv("kappa_inv_m\n0.1\n".as_bytes()).is_err());
    let bad = "kappa_inv_m,speed_mps,road_type,marking_condition,lighting,weather,surface\n0.001,20,highway,smudged,day,clear,good\n";
    assert!(matches!(read_features_csv(bad.as_bytes()), Err(ReadinessError::Parse { row: 1, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_form_a_distribution(
        kappa in 0.0f64..0.02,
        speed in 10.0f64..40.0,
        codes in (0u8..5, 0u8..4, 0u8..4, 0u8..4, 0u8..4),
    ) {
        use std::sync::OnceLock;
        static MODEL: OnceLock<ReadinessModel> = OnceLock::new();
        let model = MODEL.get_or_init(|| {
            let data = Dataset::from_labeled(&generate_synthetic(1000, 31, &GeneratorConfig::default()).unwrap());
            train(&data, &small(31)).unwrap()
        });
        let fv = FeatureVector {
            kappa,
            speed,
            road_type: codes.0,
            marking_condition: codes.1,
            lighting: codes.2,
            weather: codes.3,
            surface: codes.4,
        };
        let p = model.predict(&fv).probabilities;
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
