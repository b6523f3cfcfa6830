mod common;

use std::collections::{BTreeSet, HashSet};

use common::*;
use dormant_core::features::{assign_decile_groups, assemble_feature_matrix, ActivenessTable, DatasetIndex};
use dormant_core::graph::CoAppearanceGraph;
use dormant_core::ingest::{Article, LabelSet, Sentiment};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Suspect value by exhaustive (account, article, participant) loops.
fn oracle_suspect(articles: &[Article], account: &str, spammers: &BTreeSet<String>, exclude_self: bool) -> Ratio<u64> {
    let mut activity = 0u64;
    let mut hits = 0u64;
    for a in articles {
        let authored = (a.author == account) as u64;
        let comments = a.comments.iter().filter(|c| c.user == account).count() as u64;
        activity += authored + comments;
        if authored + comments == 0 {
            continue;
        }
        let mut contains = false;
        let mut people = vec![a.author.as_str()];
        people.extend(a.comments.iter().map(|c| c.user.as_str()));
        for p in people {
            if exclude_self && p == account {
                continue;
            }
            if spammers.contains(p) {
                contains = true;
            }
        }
        hits += contains as u64;
    }
    if activity == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(hits, activity)
    }
}

#[test]
fn suspect_value_matches_exhaustive_oracle() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_accounts = rng.gen_range(5..=30);
        let n_articles = rng.gen_range(1..=40);
        let arts = random_articles(&mut rng, n_accounts, n_articles, 6);
        let ds = dataset(arts.clone(), LabelSet::new());
        let index = DatasetIndex::new(&ds);
        let spammers: BTreeSet<String> = index
            .accounts()
            .iter()
            .filter(|_| rng.gen_bool(0.25))
            .cloned()
            .collect();
        let mask = index.spammer_mask(spammers.iter().map(String::as_str));
        for exclude_self in [true, false] {
            let bulk = index.suspect_values(&mask, exclude_self);
            for (i, account) in index.accounts().iter().enumerate() {
                let expected = oracle_suspect(&arts, account, &spammers, exclude_self);
                let single = index
                    .suspect_value(account, spammers.iter().map(String::as_str), exclude_self)
                    .unwrap();
                let activity = index.activity()[i];
                // Exact: hits/activity reduces to the oracle's rational.
                assert_eq!(Ratio::new(single.hits, activity.max(1)), expected, "seed {seed} {account}");
                assert_eq!(bulk[i], single);
                assert_eq!(single.value, *expected.numer() as f64 / *expected.denom() as f64);
                assert!(single.hits as usize <= index.associated(i).len());
            }
        }
    }
}

#[test]
fn worked_examples() {
    // 10 posts and 35 comments; 3 of the associated articles hold a spammer.
    let mut arts = Vec::new();
    for p in 0..10 {
        let mut comments = vec![comment("target", Sentiment::Like, p * 100 + 1)];
        if p < 3 {
            comments.push(comment("spam", Sentiment::Like, p * 100 + 2));
        }
        arts.push(article(&format!("own{p}"), "target", comments));
    }
    let comments = (0..25).map(|k| comment("target", Sentiment::Neutral, 5000 + k)).collect();
    arts.push(article("other", "someone", comments));
    let ds = dataset(arts, LabelSet::from_spammers(["spam"]));
    let index = DatasetIndex::new(&ds);
    let (a, rate) = index.activeness_value("target").unwrap();
    assert_eq!(a, 45);
    assert!((rate - 45.0 / 547.0).abs() < 1e-15);
    let s = index.suspect_value("target", ["spam"], true).unwrap();
    assert_eq!(s.hits, 3);
    assert!((s.value - 3.0 / 45.0).abs() < 1e-15);
    assert_eq!(index.suspect_value("target", [], true).unwrap().value, 0.0);
    assert!(index.activeness_value("ghost").is_err());
}

#[test]
fn base_feature_examples() {
    let mut a1 = article("a1", "x", vec![comment("u", Sentiment::Like, 0)]);
    let mut a2 = article("a2", "y", vec![comment("u", Sentiment::Like, 10 * 86_400)]);
    a1.posted_at = ts(0);
    a2.posted_at = ts(0);
    let ds = dataset(vec![a1, a2], LabelSet::new());
    let mut articles = ds.articles().to_vec();
    articles[0].raw.comments = 100;
    articles[0].raw.likes = 30;
    articles[0].raw.dislikes = 10;
    articles[1].raw.comments = 200;
    articles[1].raw.likes = 0;
    articles[1].raw.dislikes = 4;
    let ds = dormant_core::ingest::Dataset::new(articles, LabelSet::new(), window()).unwrap();
    let f = DatasetIndex::new(&ds).base_feature_vector("u").unwrap();
    assert_eq!(f.avg_popularity, 150.0);
    assert_eq!(f.avg_sentiment, 8.0);
    assert_eq!(f.active_period, 11.0);
}

#[test]
fn ties_at_a_boundary_share_a_group() {
    // 20 accounts; the 2nd and 3rd smallest tie on the nearest-rank 10th percentile.
    let mut values: Vec<u64> = (0..20).map(|v| v * 10).collect();
    values[2] = values[1];
    let groups = assign_decile_groups(&values).unwrap();
    assert_eq!(groups[1], groups[2]);
    // Direct percentile: group g covers values whose strictly-below share is in [(g-1)/10, g/10).
    let n = values.len();
    for (v, g) in values.iter().zip(&groups) {
        let below = values.iter().filter(|x| *x < v).count();
        let lo = (*g as usize - 1) * n;
        assert!(lo <= 10 * below && (10 * below < *g as usize * n || *g == 10));
    }
}

#[test]
fn test_labels_never_reach_the_suspect_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let arts = random_articles(&mut rng, 30, 40, 6);
    let ds = dataset(arts, random_labels(&mut rng, 30, 0.3));
    let index = DatasetIndex::new(&ds);
    let graph = CoAppearanceGraph::build(&ds);
    let n = index.len();
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let (train, test) = rows.split_at(n * 7 / 10);
    let train_spammers: HashSet<String> = train
        .iter()
        .map(|&i| index.accounts()[i].clone())
        .filter(|a| ds.labels().is_spammer(a))
        .collect();
    let base = assemble_feature_matrix(&index, &graph, true, &train_spammers, train).unwrap();

    // Flip every test-split label; the matrix is built from the same spammer set.
    let mut flipped = LabelSet::new();
    for (i, a) in index.accounts().iter().enumerate() {
        let spam = ds.labels().is_spammer(a) != test.contains(&i);
        if spam {
            flipped.insert(a.clone(), dormant_core::ingest::Label::Spammer).unwrap();
        }
    }
    let ds2 = ds.clone().with_labels(flipped);
    let index2 = DatasetIndex::new(&ds2);
    let again = assemble_feature_matrix(&index2, &graph, true, &train_spammers, train).unwrap();
    assert_eq!(base.raw, again.raw);
}

#[test]
fn standardized_training_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let arts = random_articles(&mut rng, 40, 50, 8);
    let ds = dataset(arts, random_labels(&mut rng, 40, 0.3));
    let index = DatasetIndex::new(&ds);
    let graph = CoAppearanceGraph::build(&ds);
    let train: Vec<usize> = (0..index.len()).filter(|i| i % 3 != 0).collect();
    let spam: HashSet<String> = ds.labels().spammers().map(String::from).collect();
    for social in [false, true] {
        let fm = assemble_feature_matrix(&index, &graph, social, &spam, &train).unwrap();
        assert_eq!(fm.values.ncols(), if social { 4 } else { 3 });
        for c in 0..fm.values.ncols() {
            let col: Vec<f64> = train.iter().map(|&r| fm.values[[r, c]]).collect();
            let m = col.len() as f64;
            let mean = col.iter().sum::<f64>() / m;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
            assert!(mean.abs() <= 1e-9);
            assert!((std - 1.0).abs() <= 1e-9 || std == 0.0);
        }
        assert!(fm.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn misaligned_graph_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = dataset(random_articles(&mut rng, 20, 10, 5), LabelSet::new());
    let other = dataset(random_articles(&mut rng, 25, 10, 5), LabelSet::new());
    let index = DatasetIndex::new(&ds);
    let graph = CoAppearanceGraph::build(&other);
    assert!(assemble_feature_matrix(&index, &graph, false, &HashSet::new(), &[0]).is_err());
}

#[test]
fn activeness_table_groups_cover_all_accounts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = dataset(random_articles(&mut rng, 60, 80, 10), LabelSet::new());
    let t = ActivenessTable::new(&DatasetIndex::new(&ds)).unwrap();
    assert_eq!(t.groups.len(), t.values.len());
    let total: usize = (1..=10).map(|g| t.members(g, g).len()).sum();
    assert_eq!(total, t.values.len());
    let bounds: Vec<u64> = t.lower_bounds.iter().flatten().copied().collect();
    assert!(bounds.windows(2).all(|w| w[0] <= w[1]));
}

proptest! {
    #[test]
    fn distinct_values_fill_deciles_evenly(mut values in proptest::collection::btree_set(0u64..1_000_000, 10..400)
        .prop_map(|s| s.into_iter().collect::<Vec<_>>()), seed in any::<u64>()) {
        values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = values.len();
        let groups = assign_decile_groups(&values).unwrap();
        for g in 1..=10u8 {
            let count = groups.iter().filter(|&&x| x == g).count() as f64;
            prop_assert!((count - n as f64 / 10.0).abs() <= 1.0);
        }
        for i in 0..n {
            for j in 0..n {
                if values[i] < values[j] {
                    prop_assert!(groups[i] <= groups[j]);
                }
            }
        }
    }

    #[test]
    fn empty_spammer_set_gives_zero_everywhere(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = dataset(random_articles(&mut rng, 15, 12, 6), LabelSet::new());
        let index = DatasetIndex::new(&ds);
        let s = index.suspect_values(&vec![false; index.len()], true);
        prop_assert!(s.iter().all(|v| v.value == 0.0));
    }
}
