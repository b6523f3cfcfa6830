//! Snapshot store and recompute logic behind the HTTP API.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use dormant_core::experiment::Benchmark;
use dormant_core::features::assemble_feature_matrix;
use dormant_core::models::{mix_seed, Classifier, Inputs, ModelBundle};
use serde::{Deserialize, Serialize};

use crate::verdicts::{Status, Verdict, VerdictLog, VerdictMap, VerdictRecord};
use crate::{Result, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecomputeMode {
    #[default]
    FeaturesOnly,
    Retrain,
}

/// One published, immutable scoring of every account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u64,
    pub mode: RecomputeMode,
    /// Verdict-log position the spammer set was read at.
    pub log_position: u64,
    /// Training seed when the model was refit for this version.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// File name of the model bundle that produced the scores.
    pub checkpoint: String,
    pub spammer_set: Vec<String>,
    pub scores: Vec<f64>,
    pub suspect: Vec<f64>,
    #[serde(skip)]
    order: Vec<u32>,
    #[serde(skip)]
    rank: Vec<u32>,
}

impl Snapshot {
    fn index(mut self, accounts: &[String]) -> Self {
        let mut order: Vec<u32> = (0..self.scores.len() as u32).collect();
        order.sort_by(|&a, &b| {
            let (a, b) = (a as usize, b as usize);
            self.scores[b].total_cmp(&self.scores[a]).then_with(|| accounts[a].cmp(&accounts[b]))
        });
        let mut rank = vec![0u32; order.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i as usize] = r as u32 + 1;
        }
        self.order = order;
        self.rank = rank;
        self
    }

    /// Account indices by descending score, ties by account id.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    /// 1-based rank of account `i`.
    pub fn rank(&self, i: usize) -> u32 {
        self.rank[i]
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub state_dir: PathBuf,
    pub k_grid: Vec<usize>,
    /// Name recorded for the initial model bundle.
    pub checkpoint: String,
}

pub struct Engine {
    pub bench: Arc<Benchmark>,
    pub config: EngineConfig,
    base_spammers: BTreeSet<String>,
    model: RwLock<Arc<ModelBundle>>,
    log: Mutex<VerdictLog>,
    snapshots: RwLock<Vec<Arc<Snapshot>>>,
    writer: Mutex<()>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl Engine {
    /// Replays the verdict log and published snapshots under `state_dir`, then
    /// publishes version 1 if nothing was published yet.
    pub fn open(bench: Arc<Benchmark>, bundle: ModelBundle, config: EngineConfig) -> Result<Self> {
        fs::create_dir_all(config.state_dir.join("snapshots"))?;
        fs::create_dir_all(config.state_dir.join("models"))?;
        let log = VerdictLog::open(&config.state_dir.join("verdicts.jsonl"))?;
        let base_spammers: BTreeSet<String> = bundle.training_spammers.iter().cloned().collect();
        if let Some(u) = base_spammers.iter().find(|u| bench.index.position(u).is_none()) {
            return Err(ServiceError::Corrupt(format!("training spammer {u:?} is not in the dataset")));
        }

        let mut snapshots = Vec::new();
        let mut names: Vec<PathBuf> = fs::read_dir(config.state_dir.join("snapshots"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        names.sort();
        for path in names {
            let snap: Snapshot = serde_json::from_slice(&fs::read(&path)?)?;
            if snap.scores.len() != bench.len() {
                return Err(ServiceError::Corrupt(format!("{} does not match the dataset", path.display())));
            }
            snapshots.push(Arc::new(snap.index(bench.index.accounts())));
        }
        if snapshots.windows(2).any(|w| w[0].version >= w[1].version) {
            return Err(ServiceError::Corrupt("snapshot versions are not increasing".into()));
        }

        let mut model = bundle;
        if let Some(last) = snapshots.last() {
            if last.checkpoint != config.checkpoint {
                let path = config.state_dir.join("models").join(&last.checkpoint);
                model = ModelBundle::read(fs::File::open(&path)?)?;
            }
        }
        let engine = Self {
            bench,
            config,
            base_spammers,
            model: RwLock::new(Arc::new(model)),
            log: Mutex::new(log),
            snapshots: RwLock::new(snapshots),
            writer: Mutex::new(()),
        };
        if engine.current().is_none() {
            engine.recompute(RecomputeMode::FeaturesOnly)?;
        }
        Ok(engine)
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.snapshots.read().unwrap_or_else(|e| e.into_inner()).last().cloned()
    }

    pub fn history(&self) -> Vec<Arc<Snapshot>> {
        self.snapshots.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn model(&self) -> Arc<ModelBundle> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn verdicts(&self) -> VerdictMap {
        lock(&self.log).current().clone()
    }

    pub fn log_records(&self) -> Vec<VerdictRecord> {
        lock(&self.log).records().to_vec()
    }

    pub fn log_position(&self) -> u64 {
        lock(&self.log).position()
    }

    pub fn status(&self, user: &str) -> Status {
        lock(&self.log).status(user)
    }

    /// Training spammers plus confirmed verdicts minus rejected ones.
    pub fn spammer_set(base: &BTreeSet<String>, verdicts: &VerdictMap) -> BTreeSet<String> {
        let mut set = base.clone();
        for (user, status) in verdicts {
            match status {
                Status::Confirmed => {
                    set.insert(user.clone());
                }
                Status::Rejected => {
                    set.remove(user);
                }
                Status::Pending => {}
            }
        }
        set
    }

    pub fn base_spammers(&self) -> &BTreeSet<String> {
        &self.base_spammers
    }

    pub fn post_verdict(&self, user: &str, verdict: Verdict, actor: &str) -> Result<(u64, bool)> {
        if self.bench.index.position(user).is_none() {
            return Err(ServiceError::UnknownAccount(user.to_string()));
        }
        let mut log = lock(&self.log);
        let appended = log.append(user, verdict, actor)?.is_some();
        Ok((log.position(), appended))
    }

    /// Computes and publishes the next snapshot. Calls are serialized; a call
    /// arriving during another waits for it and then runs on the newer state.
    pub fn recompute(&self, mode: RecomputeMode) -> Result<Arc<Snapshot>> {
        let _writer = lock(&self.writer);
        let (position, verdicts) = {
            let log = lock(&self.log);
            (log.position(), log.current().clone())
        };
        let spammers = Self::spammer_set(&self.base_spammers, &verdicts);
        let version = self.current().map_or(1, |s| s.version + 1);
        let bench = &self.bench;
        let spammer_hash: HashSet<String> = spammers.iter().cloned().collect();

        let (model, checkpoint, seed) = match mode {
            RecomputeMode::FeaturesOnly => {
                let model = self.model();
                let name = self.current().map_or_else(|| self.config.checkpoint.clone(), |s| s.checkpoint.clone());
                (model, name, None)
            }
            RecomputeMode::Retrain => {
                let old = self.model();
                let seed = mix_seed(old.classifier.config.seed, &[0x4e7, version]);
                let mut train: BTreeSet<usize> = old
                    .train_accounts
                    .iter()
                    .filter_map(|a| bench.index.position(a))
                    .collect();
                train.extend(verdicts.keys().filter_map(|a| bench.index.position(a)));
                train.extend(spammers.iter().filter_map(|a| bench.index.position(a)));
                let train: Vec<usize> = train.into_iter().collect();
                let labels: Vec<bool> = bench.index.accounts().iter().map(|a| spammers.contains(a)).collect();
                let features =
                    assemble_feature_matrix(&bench.index, &bench.graph, old.include_social, &spammer_hash, &train)?;
                let mut config = old.classifier.config.clone();
                config.seed = seed;
                let mut classifier = Classifier::new(old.classifier.spec, config);
                let inputs = Inputs {
                    features: &features.values,
                    keys: &bench.keys,
                    graph: Some(&bench.context),
                };
                classifier.fit(&inputs, &labels, &train, &[])?;
                let mut bundle = ModelBundle::new(
                    classifier,
                    old.include_social,
                    features.standardizer,
                    spammers.iter().cloned().collect(),
                );
                bundle.train_accounts = train.iter().map(|&r| bench.index.accounts()[r].clone()).collect();
                let name = format!("v{version:06}.json");
                let mut bytes = Vec::new();
                bundle.write(&mut bytes)?;
                write_atomic(&self.config.state_dir.join("models").join(&name), &bytes)?;
                (Arc::new(bundle), name, Some(seed))
            }
        };

        let scored = bench.score_bundle(&model, &spammer_hash)?;
        let snap = Snapshot {
            version,
            mode,
            log_position: position,
            seed,
            checkpoint,
            spammer_set: spammers.into_iter().collect(),
            scores: scored.scores,
            suspect: scored.suspect.iter().map(|s| s.value).collect(),
            order: Vec::new(),
            rank: Vec::new(),
        };
        let bytes = serde_json::to_vec(&snap)?;
        let path = self.config.state_dir.join("snapshots").join(format!("v{version:06}.json"));
        write_atomic(&path, &bytes)?;
        let snap = Arc::new(snap.index(bench.index.accounts()));
        if mode == RecomputeMode::Retrain {
            *self.model.write().unwrap_or_else(|e| e.into_inner()) = model;
        }
        self.snapshots.write().unwrap_or_else(|e| e.into_inner()).push(snap.clone());
        log::info!("published snapshot v{version} ({mode:?}, log position {position})");
        Ok(snap)
    }
}
