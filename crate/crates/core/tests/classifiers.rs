use dormant_core::eval::auprc;
use dormant_core::features::Standardizer;
use dormant_core::graph::CoAppearanceGraph;
use dormant_core::models::{
    node_key, Classifier, Ensemble, Fitted, GraphContext, Inputs, LogisticModel, ModelBundle, ModelKind, ModelSpec,
    TrainConfig,
};
use dormant_core::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn keys(n: usize) -> Vec<u64> {
    (0..n).map(|i| node_key(&format!("a{i:03}"))).collect()
}

fn fit(kind: ModelKind, cfg: TrainConfig, x: &Array2<f64>, y: &[bool], train: &[usize]) -> Classifier {
    let k = keys(x.nrows());
    let inputs = Inputs {
        features: x,
        keys: &k,
        graph: None,
    };
    let mut c = Classifier::new(ModelSpec::new(kind), cfg);
    c.fit(&inputs, y, train, &[]).unwrap();
    c
}

fn predict(c: &Classifier, x: &Array2<f64>) -> Vec<f64> {
    let k = keys(x.nrows());
    c.predict(&Inputs {
        features: x,
        keys: &k,
        graph: None,
    })
    .unwrap()
}

fn xor() -> (Array2<f64>, Vec<bool>) {
    let x = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    (x, vec![false, true, true, false])
}

/// Noisy two-class data: positives shifted along every feature.
fn blobs(seed: u64, n: usize, d: usize, rate: f64) -> (Array2<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
    let x = Array2::from_shape_fn((n, d), |(r, _)| rng.gen_range(-1.0..1.0) + if y[r] { 0.8 } else { 0.0 });
    (x, y)
}

#[test]
fn logreg_fits_separable_data() {
    let x = Array2::from_shape_vec((6, 2), vec![0.0, 0.1, 0.4, 0.0, 0.2, 0.6, 2.0, 2.2, 2.5, 1.9, 3.0, 2.4]).unwrap();
    let y = [false, false, false, true, true, true];
    let c = fit(ModelKind::Logreg, TrainConfig::default(), &x, &y, &[0, 1, 2, 3, 4, 5]);
    let p = predict(&c, &x);
    assert!(p.iter().zip(&y).all(|(p, &l)| (*p >= 0.5) == l));
}

fn forest_xor_accuracy(trees: usize, seed: u64) -> bool {
    let (x, y) = xor();
    let cfg = TrainConfig {
        seed,
        forest_trees: trees,
        forest_max_depth: 2,
        ..TrainConfig::default()
    };
    let c = fit(ModelKind::RandomForest, cfg, &x, &y, &[0, 1, 2, 3]);
    predict(&c, &x).iter().zip(&y).all(|(p, &l)| (*p >= 0.5) == l)
}

#[test]
fn forest_fits_xor_exactly() {
    assert!(forest_xor_accuracy(25, 0));
    // A left-out bootstrap point is always misread by its tree, so larger
    // forests are needed for the majority to be right under every seed.
    for seed in 0..10 {
        assert!(forest_xor_accuracy(101, seed), "seed {seed}");
    }
}

#[test]
fn boosting_without_shrinkage_predicts_the_prior() {
    let (x, y) = blobs(1, 40, 3, 0.5);
    let cfg = TrainConfig {
        gbt_shrinkage: 0.0,
        ..TrainConfig::default()
    };
    let rows: Vec<usize> = (0..40).collect();
    let c = fit(ModelKind::Gbt, cfg, &x, &y, &rows);
    let p = predict(&c, &x);
    let Some(Fitted::Gbt(g)) = c.fitted() else { panic!() };
    let prior = 1.0 / (1.0 + (-g.prior).exp());
    assert!(p.iter().all(|&v| (v - prior).abs() < 1e-15));
    // Balanced weighting makes the weighted log-odds zero.
    assert!(g.prior.abs() < 1e-12);
}

fn constant_base(p: f64) -> Classifier {
    let logit = (p / (1.0 - p)).ln();
    Classifier::from_fitted(
        ModelSpec::new(ModelKind::Logreg),
        TrainConfig::default(),
        Fitted::Logreg(LogisticModel {
            weights: vec![0.0],
            bias: logit,
        }),
    )
}

fn vote(kind: ModelKind, probs: &[f64]) -> f64 {
    let e = Ensemble {
        kind,
        bases: probs.iter().map(|&p| constant_base(p)).collect(),
        meta: None,
    };
    let x = Array2::zeros((1, 1));
    let k = keys(1);
    e.predict(&Inputs {
        features: &x,
        keys: &k,
        graph: None,
    })
    .unwrap()[0]
}

#[test]
fn soft_vote_averages() {
    assert!((vote(ModelKind::SoftVote, &[0.2, 0.4, 0.9]) - 0.5).abs() < 1e-12);
}

#[test]
fn hard_vote_scores_the_vote_fraction() {
    let s = vote(ModelKind::HardVote, &[0.7, 0.6, 0.2]);
    assert!((s - 2.0 / 3.0).abs() < 1e-12);
    assert!(s >= 0.5);
}

#[test]
fn empty_base_list_rejected() {
    let (x, y) = blobs(2, 30, 2, 0.5);
    let cfg = TrainConfig {
        ensemble_bases: vec![],
        ..TrainConfig::default()
    };
    let k = keys(30);
    let mut c = Classifier::new(ModelSpec::new(ModelKind::SoftVote), cfg);
    let rows: Vec<usize> = (0..30).collect();
    let r = c.fit(
        &Inputs {
            features: &x,
            keys: &k,
            graph: None,
        },
        &y,
        &rows,
        &[],
    );
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn stacking_one_base_tracks_that_base() {
    for seed in 0..3 {
        let (x, y) = blobs(10 + seed, 400, 3, 0.4);
        let train: Vec<usize> = (0..280).collect();
        let test: Vec<usize> = (280..400).collect();
        let cfg = TrainConfig {
            seed,
            ensemble_bases: vec![ModelSpec::new(ModelKind::Logreg)],
            ..TrainConfig::default()
        };
        let base = fit(ModelKind::Logreg, cfg.clone(), &x, &y, &train);
        let stack = fit(ModelKind::Stacking, cfg, &x, &y, &train);
        let at = |c: &Classifier| {
            let p = predict(c, &x);
            let s: Vec<f64> = test.iter().map(|&r| p[r]).collect();
            let l: Vec<bool> = test.iter().map(|&r| y[r]).collect();
            auprc(&s, &l).unwrap()
        };
        let (a, b) = (at(&base), at(&stack));
        assert!((a - b).abs() <= 0.02, "seed {seed}: base {a} stack {b}");
    }
}

#[test]
fn stacking_meta_learner_sees_every_base() {
    let (x, y) = blobs(4, 200, 3, 0.4);
    let train: Vec<usize> = (0..200).collect();
    let cfg = TrainConfig {
        forest_trees: 10,
        gbt_rounds: 20,
        ..TrainConfig::default()
    };
    let c = fit(ModelKind::Stacking, cfg, &x, &y, &train);
    let Some(Fitted::Ensemble(e)) = c.fitted() else { panic!() };
    assert_eq!(e.bases.len(), 3);
    assert_eq!(e.meta.as_ref().unwrap().weights.len(), 3);
    assert!(predict(&c, &x).iter().all(|p| (0.0..=1.0).contains(p)));
}

/// Two dense clusters joined by one edge; the positive triangle carries a
/// higher suspect-like feature.
fn clique_fixture() -> (CoAppearanceGraph, Array2<f64>, Vec<bool>) {
    let ids: Vec<String> = (0..6).map(|i| format!("a{i:03}")).collect();
    let groups = vec![vec![0, 1, 2], vec![3, 4, 5], vec![2, 3]];
    let g = CoAppearanceGraph::from_groups(ids, groups);
    let x = Array2::from_shape_vec(
        (6, 2),
        vec![1.2, 0.1, 0.9, -0.2, 1.0, 0.3, -0.8, 0.2, -1.1, -0.1, -1.2, 0.0],
    )
    .unwrap();
    (g, x, vec![true, true, true, false, false, false])
}

fn small_gnn_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        hidden: vec![8, 8],
        gat_heads: 2,
        max_epochs: 150,
        patience: 150,
        ..TrainConfig::default()
    }
}

fn train_gnn(spec: ModelSpec, g: &CoAppearanceGraph, x: &Array2<f64>, y: &[bool], cfg: TrainConfig) -> Vec<f64> {
    let ctx = GraphContext::new(g);
    let k: Vec<u64> = g.ids().iter().map(|id| node_key(id)).collect();
    let inputs = Inputs {
        features: x,
        keys: &k,
        graph: Some(&ctx),
    };
    let all: Vec<usize> = (0..x.nrows()).collect();
    let mut c = Classifier::new(spec, cfg);
    c.fit(&inputs, y, &all, &all).unwrap();
    c.predict(&inputs).unwrap()
}

fn gnn_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(ModelKind::Gcn),
        ModelSpec::tagcn(1),
        ModelSpec::tagcn(3),
        ModelSpec::new(ModelKind::Gat),
    ]
}

#[test]
fn gnns_separate_the_positive_clique() {
    let (g, x, y) = clique_fixture();
    for spec in gnn_specs() {
        let p = train_gnn(spec, &g, &x, &y, small_gnn_config(3));
        let pos = p[..3].iter().sum::<f64>() / 3.0;
        let neg = p[3..].iter().sum::<f64>() / 3.0;
        assert!(pos > neg, "{spec}: {p:?}");
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn same_seed_gives_identical_scores() {
    let (g, x, y) = clique_fixture();
    for spec in gnn_specs() {
        let a = train_gnn(spec, &g, &x, &y, small_gnn_config(5));
        let b = train_gnn(spec, &g, &x, &y, small_gnn_config(5));
        assert_eq!(a, b, "{spec}");
    }
}

#[test]
fn relabeled_nodes_get_the_same_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 24;
    let ids: Vec<String> = (0..n).map(|i| format!("a{i:03}")).collect();
    let groups: Vec<Vec<usize>> = (0..14)
        .map(|_| (0..4).map(|_| rng.gen_range(0..n)).collect())
        .collect();
    let y: Vec<bool> = (0..n).map(|i| i % 4 == 0).collect();
    let x = Array2::from_shape_fn((n, 3), |(r, _)| rng.gen_range(-1.0..1.0) + if y[r] { 0.5 } else { 0.0 });
    let g = CoAppearanceGraph::from_groups(ids.clone(), groups.clone());

    for trial in 0..10u64 {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut inv = vec![0; n];
        for (p, &o) in perm.iter().enumerate() {
            inv[o] = p;
        }
        let pids: Vec<String> = perm.iter().map(|&o| ids[o].clone()).collect();
        let pgroups = groups.iter().map(|grp| grp.iter().map(|&o| inv[o]).collect());
        let pg = CoAppearanceGraph::from_groups(pids, pgroups);
        let px = Array2::from_shape_fn((n, 3), |(r, c)| x[[perm[r], c]]);
        let py: Vec<bool> = perm.iter().map(|&o| y[o]).collect();

        let spec = gnn_specs()[trial as usize % 4];
        let cfg = TrainConfig {
            max_epochs: 30,
            ..small_gnn_config(trial)
        };
        let a = train_gnn(spec, &g, &x, &y, cfg.clone());
        let b = train_gnn(spec, &pg, &px, &py, cfg);
        for p in 0..n {
            assert!((b[p] - a[perm[p]]).abs() < 1e-9, "{spec} trial {trial}");
        }
    }
}

#[test]
fn graph_models_require_a_graph() {
    let (_, x, y) = clique_fixture();
    let k = keys(6);
    let mut c = Classifier::new(ModelSpec::new(ModelKind::Gcn), small_gnn_config(0));
    let r = c.fit(
        &Inputs {
            features: &x,
            keys: &k,
            graph: None,
        },
        &y,
        &[0, 1, 2, 3, 4, 5],
        &[],
    );
    assert!(matches!(r, Err(Error::Misaligned(_))));
}

#[test]
fn bundle_round_trip_preserves_scores() {
    let (g, x, y) = clique_fixture();
    let ctx = GraphContext::new(&g);
    let k: Vec<u64> = g.ids().iter().map(|id| node_key(id)).collect();
    let inputs = Inputs {
        features: &x,
        keys: &k,
        graph: Some(&ctx),
    };
    let all: Vec<usize> = (0..6).collect();
    let mut c = Classifier::new(ModelSpec::tagcn(2), small_gnn_config(1));
    c.fit(&inputs, &y, &all, &all).unwrap();
    let before = c.predict(&inputs).unwrap();
    let bundle = ModelBundle::new(c, true, Standardizer::fit(&x, &all), vec!["a001".into(), "a000".into()]);
    let mut buf = Vec::new();
    bundle.write(&mut buf).unwrap();
    let back = ModelBundle::read(buf.as_slice()).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.classifier.predict(&inputs).unwrap(), before);
    assert_eq!(back.training_spammers, vec!["a000", "a001"]);
}

#[test]
fn bundle_with_wrong_header_rejected() {
    let text = r#"{"format":"other","version":1}"#;
    assert!(ModelBundle::read(text.as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trees_ignore_monotone_feature_transforms(seed in 0u64..1000, col in 0usize..3) {
        let (x, y) = blobs(seed, 60, 3, 0.5);
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let mut tx = x.clone();
        tx.column_mut(col).mapv_inplace(|v| (2.0 * v).exp() + 3.0);
        let rows: Vec<usize> = (0..60).collect();
        let cfg = TrainConfig { seed, forest_trees: 15, gbt_rounds: 25, ..TrainConfig::default() };
        for kind in [ModelKind::RandomForest, ModelKind::Gbt] {
            let a = predict(&fit(kind, cfg.clone(), &x, &y, &rows), &x);
            let b = predict(&fit(kind, cfg.clone(), &tx, &y, &rows), &tx);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn baseline_scores_are_probabilities(seed in 0u64..1000) {
        let (x, y) = blobs(seed, 50, 2, 0.5);
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let rows: Vec<usize> = (0..35).collect();
        prop_assume!(rows.iter().any(|&r| y[r]) && rows.iter().any(|&r| !y[r]));
        let cfg = TrainConfig { seed, forest_trees: 10, gbt_rounds: 10, ..TrainConfig::default() };
        for kind in [ModelKind::Logreg, ModelKind::RandomForest, ModelKind::Gbt, ModelKind::SoftVote, ModelKind::HardVote] {
            let p = predict(&fit(kind, cfg.clone(), &x, &y, &rows), &x);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
