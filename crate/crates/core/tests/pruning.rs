mod common;

use std::collections::{BTreeSet, HashMap};

use common::*;
use dormant_core::ingest::{
    parse_articles, parse_labels, prune_dataset, write_articles, write_labels, Article, Dataset, LabelSet, ParseOptions,
    PruneConfig, Sentiment,
};
use dormant_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn commentors(a: &Article) -> BTreeSet<String> {
    a.comments
        .iter()
        .filter(|c| c.user != a.author)
        .map(|c| c.user.clone())
        .collect()
}

/// 100 distinct commentors, one comment each at second `i`; spammers at fixed positions.
fn hundred_commentor_article() -> (Article, LabelSet, Vec<usize>) {
    let spam_pos = vec![3, 41, 77, 88, 99];
    let comments = (0..100)
        .map(|i| comment(&format!("c{i:03}"), Sentiment::Neutral, i as i64 + 1))
        .collect();
    let a = article("big", "author", comments);
    let labels = LabelSet::from_spammers(spam_pos.iter().map(|i| format!("c{i:03}")));
    (a, labels, spam_pos)
}

#[test]
fn hundred_commentors_five_spammers_keeps_all_spammers_and_earliest_regulars() {
    let (a, labels, spam_pos) = hundred_commentor_article();
    let ds = prune_dataset(&[a], &labels, &PruneConfig::default(), window()).unwrap();
    assert_eq!(ds.articles().len(), 1);
    let kept = commentors(&ds.articles()[0].article);
    assert_eq!(kept.len(), 80);

    // Hand enumeration: regulars in chronological order skip the spammer slots.
    let regulars: Vec<String> = (0..100)
        .filter(|i| !spam_pos.contains(i))
        .map(|i| format!("c{i:03}"))
        .collect();
    let mut expected: BTreeSet<String> = regulars[..75].iter().cloned().collect();
    expected.extend(spam_pos.iter().map(|i| format!("c{i:03}")));
    assert_eq!(kept, expected);
    assert!(kept.contains("c076") && !kept.contains("c078"));
    assert_eq!(ds.articles()[0].raw.comments, 100);
}

#[test]
fn article_with_89_comments_excluded() {
    let comments = (0..89)
        .map(|i| comment(&format!("c{}", i % 30), Sentiment::Like, i))
        .collect();
    let labels = LabelSet::from_spammers(["c1", "c2", "c3"]);
    let ds = prune_dataset(&[article("a", "x", comments)], &labels, &PruneConfig::default(), window()).unwrap();
    assert!(ds.articles().is_empty());
}

#[test]
fn article_with_two_spammers_excluded() {
    let comments = (0..120)
        .map(|i| comment(&format!("c{i}"), Sentiment::Like, i))
        .collect();
    let labels = LabelSet::from_spammers(["c1", "c2"]);
    let ds = prune_dataset(&[article("a", "x", comments)], &labels, &PruneConfig::default(), window()).unwrap();
    assert!(ds.articles().is_empty());
}

#[test]
fn author_counts_toward_spammer_minimum_but_not_cap() {
    let comments = (0..95)
        .map(|i| comment(&format!("c{i:03}"), Sentiment::Like, i))
        .collect();
    let labels = LabelSet::from_spammers(["boss", "c001", "c002"]);
    let ds = prune_dataset(&[article("a", "boss", comments)], &labels, &PruneConfig::default(), window()).unwrap();
    assert_eq!(ds.articles().len(), 1);
    let a = &ds.articles()[0].article;
    assert_eq!(commentors(a).len(), 80);
    assert!(ds.accounts().contains("boss"));
    assert_eq!(ds.accounts().len(), 81);
}

#[test]
fn spammers_beyond_cap_keep_earliest_spammers_only() {
    let comments = (0..100)
        .map(|i| comment(&format!("c{i:03}"), Sentiment::Like, i))
        .collect();
    let labels = LabelSet::from_spammers((10..95).map(|i| format!("c{i:03}")));
    let ds = prune_dataset(&[article("a", "x", comments)], &labels, &PruneConfig::default(), window()).unwrap();
    let kept = commentors(&ds.articles()[0].article);
    let expected: BTreeSet<String> = (10..90).map(|i| format!("c{i:03}")).collect();
    assert_eq!(kept, expected);
}

#[test]
fn repeat_commentor_counts_once_and_keeps_all_comments() {
    let mut comments: Vec<_> = (0..90)
        .map(|i| comment(&format!("c{i:03}"), Sentiment::Like, 10 + i))
        .collect();
    comments.push(comment("c000", Sentiment::Dislike, 500));
    comments.push(comment("c000", Sentiment::Like, 501));
    let labels = LabelSet::from_spammers(["c050", "c060", "c070"]);
    let ds = prune_dataset(&[article("a", "x", comments)], &labels, &PruneConfig::default(), window()).unwrap();
    let a = &ds.articles()[0].article;
    assert_eq!(a.comments.iter().filter(|c| c.user == "c000").count(), 3);
    assert_eq!(commentors(a).len(), 80);
}

#[test]
fn timestamp_ties_break_by_account_id() {
    let mut comments: Vec<_> = (0..95)
        .map(|i| comment(&format!("c{i:03}"), Sentiment::Like, 100))
        .collect();
    comments.reverse();
    let labels = LabelSet::from_spammers(["c090", "c091", "c092"]);
    let ds = prune_dataset(&[article("a", "x", comments)], &labels, &PruneConfig::default(), window()).unwrap();
    let kept = commentors(&ds.articles()[0].article);
    assert!(kept.contains("c076") && !kept.contains("c077"));
}

#[test]
fn cap_below_spammer_minimum_is_config_error() {
    let cfg = PruneConfig {
        min_comments: 1,
        min_spammers: 5,
        cap: 4,
    };
    assert!(matches!(
        prune_dataset(&[], &LabelSet::new(), &cfg, window()),
        Err(Error::Config(_))
    ));
}

#[test]
fn labels_parse_dedup_and_conflict() {
    let three = "{\"user\":\"a\",\"label\":\"spammer\"}\n{\"user\":\"b\",\"label\":\"spammer\"}\n{\"user\":\"c\",\"label\":\"spammer\"}\n";
    assert_eq!(parse_labels(three.as_bytes(), false).unwrap().labels.len(), 3);
    let dup = "{\"user\":\"a\",\"label\":\"spammer\"}\n{\"user\":\"a\",\"label\":\"spammer\"}\n";
    assert_eq!(parse_labels(dup.as_bytes(), false).unwrap().labels.len(), 1);
    let conflict = "{\"user\":\"a\",\"label\":\"spammer\"}\n{\"user\":\"a\",\"label\":\"normal\"}\n";
    assert!(matches!(
        parse_labels(conflict.as_bytes(), false),
        Err(Error::ConflictingLabel(_))
    ));
}

fn serialize(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    ds.write_container(&mut buf).unwrap();
    buf
}

#[test]
fn container_round_trip_and_version_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let arts = random_articles(&mut rng, 20, 10, 12);
    let ds = dataset(arts, random_labels(&mut rng, 20, 0.3));
    let bytes = serialize(&ds);
    let back = Dataset::read_container(bytes.as_slice()).unwrap();
    assert_eq!(back, ds);
    let tampered = String::from_utf8(bytes).unwrap().replacen("\"schema_version\":1", "\"schema_version\":9", 1);
    assert!(Dataset::read_container(tampered.as_bytes()).is_err());
}

fn arb_case() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..12, 1usize..4, 2usize..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_rules_hold((seed, min_comments, min_spammers, cap) in arb_case()) {
        prop_assume!(cap >= min_spammers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arts = random_articles(&mut rng, 25, 15, 20);
        let labels = random_labels(&mut rng, 25, 0.3);
        let cfg = PruneConfig { min_comments, min_spammers, cap };
        let ds = prune_dataset(&arts, &labels, &cfg, window()).unwrap();
        let originals: HashMap<&str, &Article> = arts.iter().map(|a| (a.article_id.as_str(), a)).collect();

        for kept in ds.articles() {
            let orig = originals[kept.article.article_id.as_str()];
            prop_assert!(orig.comments.len() >= min_comments);
            let spam = orig.participants().into_iter().filter(|u| labels.is_spammer(u)).count();
            prop_assert!(spam >= min_spammers);

            let retained = commentors(&kept.article);
            prop_assert!(retained.len() <= cap);

            // Every comment of a retained commentor survives.
            for c in &orig.comments {
                let keep = c.user == orig.author || retained.contains(&c.user);
                prop_assert_eq!(keep, kept.article.comments.contains(c));
            }

            // Chronological rule on first comments, ties by id.
            let mut first: HashMap<&str, (i64, &str)> = HashMap::new();
            for c in orig.comments.iter().filter(|c| c.user != orig.author) {
                let key = (c.commented_at.timestamp(), c.user.as_str());
                first.entry(c.user.as_str()).and_modify(|k| *k = (*k).min(key)).or_insert(key);
            }
            let all = commentors(orig);
            let spam_commentors: Vec<&String> = all.iter().filter(|u| labels.is_spammer(u)).collect();
            let (kept_reg, dropped_reg): (Vec<&String>, Vec<&String>) = all
                .iter()
                .filter(|u| !labels.is_spammer(u))
                .partition(|u| retained.contains(*u));
            if spam_commentors.len() >= cap {
                prop_assert!(kept_reg.is_empty());
            } else {
                prop_assert!(spam_commentors.iter().all(|u| retained.contains(*u)));
                for k in &kept_reg {
                    for d in &dropped_reg {
                        prop_assert!(first[k.as_str()] < first[d.as_str()]);
                    }
                }
                if !dropped_reg.is_empty() {
                    prop_assert_eq!(retained.len(), cap);
                }
            }
        }

        // Dropped articles violate a rule.
        let kept_ids: BTreeSet<&str> = ds.articles().iter().map(|a| a.article.article_id.as_str()).collect();
        for a in &arts {
            if !kept_ids.contains(a.article_id.as_str()) {
                let spam = a.participants().into_iter().filter(|u| labels.is_spammer(u)).count();
                prop_assert!(a.comments.len() < min_comments || spam < min_spammers);
            }
        }

        // Deterministic serialization.
        let again = prune_dataset(&arts, &labels, &cfg, window()).unwrap();
        prop_assert_eq!(serialize(&ds), serialize(&again));
    }

    #[test]
    fn parse_serialize_parse_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arts = random_articles(&mut rng, 15, 8, 10);
        let mut buf = Vec::new();
        write_articles(&mut buf, &arts).unwrap();
        let parsed = parse_articles(buf.as_slice(), &ParseOptions { window: Some(window()), strict: true }).unwrap();
        prop_assert_eq!(&parsed.articles, &arts);
        let mut again = Vec::new();
        write_articles(&mut again, &parsed.articles).unwrap();
        prop_assert_eq!(buf, again);

        let labels = random_labels(&mut rng, 15, 0.4);
        let mut lbuf = Vec::new();
        write_labels(&mut lbuf, &labels).unwrap();
        prop_assert_eq!(parse_labels(lbuf.as_slice(), true).unwrap().labels, labels);
    }
}
