#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use dormant_core::eval::SplitRatios;
use dormant_core::experiment::{split_seed, train_seed, Benchmark};
use dormant_core::ingest::PruneConfig;
use dormant_core::models::{ModelBundle, ModelSpec, TrainConfig};
use dormant_core::synthgen::{generate, SynthConfig, SyntheticForum};
use dormant_service::{Engine, EngineConfig};

/// Moderators start from a fifth of the accounts labelled.
pub const FIXTURE_SPLIT: SplitRatios = SplitRatios {
    train: 0.20,
    val: 0.15,
    test: 0.65,
};

pub struct Fixture {
    pub forum: SyntheticForum,
    pub bench: Arc<Benchmark>,
    pub bundle: ModelBundle,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let forum = generate(&SynthConfig::default()).unwrap();
        let bench = Benchmark::new(forum.prune(&PruneConfig::small_benchmark()).unwrap()).unwrap();
        let split = bench.split(FIXTURE_SPLIT, split_seed(0, 0)).unwrap();
        let config = TrainConfig {
            seed: train_seed(0, 0),
            ..TrainConfig::default()
        };
        let spec = ModelSpec::tagcn(3);
        let (bundle, _) = bench.train_bundle(spec, &config, true, &split).unwrap();
        Fixture {
            forum,
            bench: Arc::new(bench),
            bundle,
        }
    })
}

pub fn engine_config(dir: &std::path::Path) -> EngineConfig {
    EngineConfig {
        state_dir: dir.to_path_buf(),
        k_grid: vec![100, 200, 300, 400],
        checkpoint: "model.json".into(),
    }
}

pub fn open_engine(dir: &std::path::Path) -> Arc<Engine> {
    let f = fixture();
    Arc::new(Engine::open(f.bench.clone(), f.bundle.clone(), engine_config(dir)).unwrap())
}

/// Suspect value by enumerating articles: hits over records, self excluded.
pub fn oracle_suspect(bench: &Benchmark, account: &str, spammers: &BTreeSet<String>) -> f64 {
    let (mut records, mut hits) = (0u64, 0u64);
    for a in bench.dataset.articles() {
        let a = &a.article;
        let own = (a.author == account) as u64 + a.comments.iter().filter(|c| c.user == account).count() as u64;
        if own == 0 {
            continue;
        }
        records += own;
        let other = std::iter::once(a.author.as_str())
            .chain(a.comments.iter().map(|c| c.user.as_str()))
            .any(|p| p != account && spammers.contains(p));
        hits += other as u64;
    }
    if records == 0 {
        0.0
    } else {
        hits as f64 / records as f64
    }
}

/// First held-out spammer (by id) in the bottom two groups whose cell has
/// another member in the dataset, with those cell-mates.
pub fn dormant_target(f: &Fixture) -> (String, Vec<String>) {
    let bench = &f.bench;
    let known: BTreeSet<&str> = f.bundle.training_spammers.iter().map(String::as_str).collect();
    for (i, a) in bench.index.accounts().iter().enumerate() {
        if !bench.labels[i] || known.contains(a.as_str()) || bench.groups()[i] > 2 {
            continue;
        }
        let Some(cell) = f.forum.cell_of(a) else { continue };
        let mates: Vec<String> = bench
            .index
            .accounts()
            .iter()
            .filter(|m| *m != a && f.forum.cell_of(m) == Some(cell))
            .cloned()
            .collect();
        if !mates.is_empty() {
            return (a.clone(), mates);
        }
    }
    panic!("no dormant spammer with cell-mates in the fixture");
}

pub struct LoopOutcome {
    pub target: String,
    pub neighbors: usize,
    /// Neighbours whose service suspect value differs from the brute-force count.
    pub oracle_mismatches: usize,
    pub decreased: usize,
    /// Neighbours whose count gains a hit; each must strictly rise.
    pub expected_rise: usize,
    pub rose: usize,
    pub mates: usize,
    pub mean_rank_before: f64,
    pub mean_rank_after: f64,
    pub version_before: u64,
    pub version_after: u64,
}

/// Confirms a dormant spammer, recomputes features only, and compares
/// neighbours and cell-mates across the two snapshots.
pub fn run_service_loop(dir: &std::path::Path) -> LoopOutcome {
    use dormant_service::{RecomputeMode, Verdict};
    let f = fixture();
    let engine = open_engine(dir);
    let bench = &f.bench;
    let (target, mates) = dormant_target(f);
    let before = engine.current().unwrap();
    engine.post_verdict(&target, Verdict::ConfirmSpammer, "acceptance").unwrap();
    let after = engine.recompute(RecomputeMode::FeaturesOnly).unwrap();

    let idx = |a: &str| bench.index.position(a).unwrap();
    let t = idx(&target);
    let old_set: BTreeSet<String> = before.spammer_set.iter().cloned().collect();
    let new_set: BTreeSet<String> = after.spammer_set.iter().cloned().collect();
    let neighbors: Vec<usize> = bench.graph.neighbors(t).map(|(j, _)| j).collect();
    let (mut mismatches, mut decreased, mut expected, mut rose) = (0, 0, 0, 0);
    for &j in &neighbors {
        let id = &bench.index.accounts()[j];
        let old = oracle_suspect(bench, id, &old_set);
        let new = oracle_suspect(bench, id, &new_set);
        if (after.suspect[j] - new).abs() > 1e-12 || (before.suspect[j] - old).abs() > 1e-12 {
            mismatches += 1;
        }
        if after.suspect[j] < before.suspect[j] {
            decreased += 1;
        }
        if new > old {
            expected += 1;
            if after.suspect[j] > before.suspect[j] {
                rose += 1;
            }
        }
    }
    let mean_rank = |s: &dormant_service::Snapshot| {
        mates.iter().map(|m| s.rank(idx(m)) as f64).sum::<f64>() / mates.len() as f64
    };
    LoopOutcome {
        target,
        neighbors: neighbors.len(),
        oracle_mismatches: mismatches,
        decreased,
        expected_rise: expected,
        rose,
        mates: mates.len(),
        mean_rank_before: mean_rank(&before),
        mean_rank_after: mean_rank(&after),
        version_before: before.version,
        version_after: after.version,
    }
}
