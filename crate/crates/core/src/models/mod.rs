//! Classifiers behind one fit/predict contract: logistic regression, a
//! fully-connected net, random forest, gradient-boosted trees, three ensembles
//! and the GCN, TAGCN and GAT node classifiers.

pub mod ensemble;
pub mod layers;
pub mod linear;
pub mod neural;
pub mod tree;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::Error;
pub use ensemble::Ensemble;
pub use layers::{gat_layer, gcn_layer, tagcn_layer, Activation, GatHead, GraphContext, HeadCombine};
pub use linear::LogisticModel;
pub use neural::{Architecture, EpochRecord, NeuralModel};
pub use tree::{BoostParams, Forest, ForestParams, GradientBoosted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Fc,
    RandomForest,
    Gbt,
    SoftVote,
    HardVote,
    Stacking,
    Gcn,
    Tagcn,
    Gat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Logreg,
        ModelKind::Fc,
        ModelKind::RandomForest,
        ModelKind::Gbt,
        ModelKind::SoftVote,
        ModelKind::HardVote,
        ModelKind::Stacking,
        ModelKind::Gcn,
        ModelKind::Tagcn,
        ModelKind::Gat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Fc => "fc",
            ModelKind::RandomForest => "random_forest",
            ModelKind::Gbt => "gbt",
            ModelKind::SoftVote => "soft_vote",
            ModelKind::HardVote => "hard_vote",
            ModelKind::Stacking => "stacking",
            ModelKind::Gcn => "gcn",
            ModelKind::Tagcn => "tagcn",
            ModelKind::Gat => "gat",
        }
    }

    pub fn is_gnn(self) -> bool {
        matches!(self, ModelKind::Gcn | ModelKind::Tagcn | ModelKind::Gat)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, ModelKind::SoftVote | ModelKind::HardVote | ModelKind::Stacking)
    }

    /// Trained by gradient steps on the autodiff tape.
    pub fn is_neural(self) -> bool {
        matches!(self, ModelKind::Fc) || self.is_gnn()
    }
}

/// A model kind plus its propagation depth for TAGCN (`tagcn:3`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub k: Option<usize>,
}

impl ModelSpec {
    pub const NAMES: [&'static str; 10] = [
        "logreg",
        "fc",
        "random_forest",
        "gbt",
        "soft_vote",
        "hard_vote",
        "stacking",
        "gcn",
        "tagcn[:K]",
        "gat",
    ];

    pub fn new(kind: ModelKind) -> Self {
        let k = (kind == ModelKind::Tagcn).then_some(3);
        Self { kind, k }
    }

    pub fn tagcn(k: usize) -> Self {
        Self {
            kind: ModelKind::Tagcn,
            k: Some(k),
        }
    }

    /// Parses a comma-separated list such as `gbt,tagcn:3`.
    pub fn parse_list(list: &str) -> Result<Vec<Self>, Error> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.k {
            Some(k) => write!(f, "{}:{}", self.kind.name(), k),
            None => f.write_str(self.kind.name()),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (name, k) = match s.split_once(':') {
            Some((n, k)) => (n, Some(k)),
            None => (s, None),
        };
        let kind = ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))?;
        match (kind, k) {
            (ModelKind::Tagcn, None) => Ok(Self::tagcn(3)),
            (ModelKind::Tagcn, Some(k)) => match k.parse::<usize>() {
                Ok(k @ 1..=3) => Ok(Self::tagcn(k)),
                _ => Err(Error::Config(format!("TAGCN depth must be 1, 2 or 3, got {k:?}"))),
            },
            (_, None) => Ok(Self::new(kind)),
            (_, Some(_)) => Err(Error::UnknownModel(s.to_string())),
        }
    }
}

impl TryFrom<String> for ModelSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<ModelSpec> for String {
    fn from(m: ModelSpec) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    /// Positives weigh `#neg / #pos`.
    Balanced,
    None,
}

/// Hyperparameters for every model kind. Fields irrelevant to a kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub class_weight: ClassWeight,
    pub gat_heads: usize,
    pub logreg_l2: f64,
    pub forest_trees: usize,
    pub forest_max_depth: usize,
    pub forest_min_samples_leaf: usize,
    pub gbt_rounds: usize,
    pub gbt_max_depth: usize,
    pub gbt_shrinkage: f64,
    pub gbt_lambda: f64,
    pub ensemble_bases: Vec<ModelSpec>,
    pub stacking_folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: 300,
            patience: 20,
            learning_rate: 0.01,
            hidden: vec![64, 64],
            dropout: 0.5,
            class_weight: ClassWeight::Balanced,
            gat_heads: 4,
            logreg_l2: 1e-4,
            forest_trees: 100,
            forest_max_depth: 12,
            forest_min_samples_leaf: 1,
            gbt_rounds: 200,
            gbt_max_depth: 3,
            gbt_shrinkage: 0.1,
            gbt_lambda: 1.0,
            ensemble_bases: vec![
                ModelSpec::new(ModelKind::Logreg),
                ModelSpec::new(ModelKind::RandomForest),
                ModelSpec::new(ModelKind::Gbt),
            ],
            stacking_folds: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_epochs == 0 || self.patience == 0 {
            return bad("max_epochs and patience must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.gat_heads == 0 || self.hidden.iter().any(|h| h % self.gat_heads != 0) {
            return bad("every hidden size must be divisible by gat_heads");
        }
        if self.forest_trees == 0 || self.forest_max_depth == 0 || self.gbt_max_depth == 0 {
            return bad("tree counts and depths must be positive");
        }
        if self.gbt_shrinkage < 0.0 || self.gbt_lambda < 0.0 || self.logreg_l2 < 0.0 {
            return bad("shrinkage, lambda and l2 must be non-negative");
        }
        if self.stacking_folds < 2 {
            return bad("stacking needs at least 2 folds");
        }
        if self.ensemble_bases.is_empty() {
            return bad("ensemble_bases must not be empty");
        }
        if self.ensemble_bases.iter().any(|b| b.kind.is_ensemble()) {
            return bad("ensemble bases cannot themselves be ensembles");
        }
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            trees: self.forest_trees,
            max_depth: self.forest_max_depth,
            min_samples_leaf: self.forest_min_samples_leaf,
            max_features: None,
            bootstrap: true,
        }
    }

    pub fn boost_params(&self) -> BoostParams {
        BoostParams {
            rounds: self.gbt_rounds,
            max_depth: self.gbt_max_depth,
            shrinkage: self.gbt_shrinkage,
            lambda: self.gbt_lambda,
            min_child_hessian: 1e-6,
        }
    }
}

/// Everything a model reads at fit and predict time, aligned by row.
#[derive(Clone, Copy)]
pub struct Inputs<'a> {
    pub features: &'a Array2<f64>,
    /// Stable per-account keys (see [`node_key`]) used to draw dropout masks.
    pub keys: &'a [u64],
    pub graph: Option<&'a GraphContext>,
}

impl Inputs<'_> {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    fn check(&self, needs_graph: bool) -> Result<(), Error> {
        if self.keys.len() != self.rows() {
            return Err(Error::Misaligned(format!("{} keys for {} rows", self.keys.len(), self.rows())));
        }
        match self.graph {
            Some(g) if g.n != self.rows() => Err(Error::Misaligned(format!(
                "graph has {} nodes, features have {} rows",
                g.n,
                self.rows()
            ))),
            None if needs_graph => Err(Error::Misaligned("graph model called without a graph".into())),
            _ => Ok(()),
        }
    }
}

/// 64-bit FNV-1a of an account id.
pub fn node_key(id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed derivation.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub(crate) fn pos_weight(labels: &[bool], rows: &[usize], mode: ClassWeight) -> Result<f64, Error> {
    let pos = rows.iter().filter(|&&r| labels[r]).count();
    let neg = rows.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok(match mode {
        ClassWeight::Balanced => neg as f64 / pos as f64,
        ClassWeight::None => 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Fitted {
    Logreg(LogisticModel),
    Forest(Forest),
    Gbt(GradientBoosted),
    Ensemble(Ensemble),
    Neural(NeuralModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub spec: ModelSpec,
    pub config: TrainConfig,
    fitted: Option<Fitted>,
    /// Per-epoch training records for neural models.
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

impl Classifier {
    pub fn new(spec: ModelSpec, config: TrainConfig) -> Self {
        Self {
            spec,
            config,
            fitted: None,
            history: Vec::new(),
        }
    }

    pub fn from_fitted(spec: ModelSpec, config: TrainConfig, fitted: Fitted) -> Self {
        Self {
            spec,
            config,
            fitted: Some(fitted),
            history: Vec::new(),
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn fitted(&self) -> Option<&Fitted> {
        self.fitted.as_ref()
    }

    /// Trains on `train` rows; neural models early-stop on `val` rows.
    /// Labels outside `train ∪ val` are never read.
    pub fn fit(&mut self, inputs: &Inputs<'_>, labels: &[bool], train: &[usize], val: &[usize]) -> Result<(), Error> {
        self.config.validate()?;
        inputs.check(self.spec.kind.is_gnn())?;
        if labels.len() != inputs.rows() {
            return Err(Error::Misaligned(format!(
                "{} labels for {} rows",
                labels.len(),
                inputs.rows()
            )));
        }
        if let Some(&r) = train.iter().chain(val).find(|&&r| r >= inputs.rows()) {
            return Err(Error::Misaligned(format!("row {r} out of range")));
        }
        let w = pos_weight(labels, train, self.config.class_weight)?;
        let x = inputs.features;
        let cfg = &self.config;
        self.history.clear();
        let fitted = match self.spec.kind {
            ModelKind::Logreg => {
                let weights: Vec<f64> = labels.iter().map(|&l| if l { w } else { 1.0 }).collect();
                Fitted::Logreg(LogisticModel::fit(x, labels, train, &weights, cfg.logreg_l2)?)
            }
            ModelKind::RandomForest => Fitted::Forest(Forest::fit(x, labels, train, w, &cfg.forest_params(), cfg.seed)),
            ModelKind::Gbt => Fitted::Gbt(GradientBoosted::fit(x, labels, train, w, &cfg.boost_params())),
            ModelKind::SoftVote | ModelKind::HardVote | ModelKind::Stacking => {
                Fitted::Ensemble(Ensemble::fit(self.spec.kind, cfg, inputs, labels, train, val)?)
            }
            ModelKind::Fc | ModelKind::Gcn | ModelKind::Tagcn | ModelKind::Gat => {
                let arch = Architecture::from_spec(self.spec, cfg);
                let (model, history) = neural::train(arch, cfg, inputs, labels, train, val, w)?;
                self.history = history;
                Fitted::Neural(model)
            }
        };
        self.fitted = Some(fitted);
        Ok(())
    }

    /// Spam probability per row.
    pub fn predict(&self, inputs: &Inputs<'_>) -> Result<Vec<f64>, Error> {
        let fitted = self.fitted.as_ref().ok_or(Error::NotFitted)?;
        inputs.check(self.spec.kind.is_gnn())?;
        let x = inputs.features;
        Ok(match fitted {
            Fitted::Logreg(m) => m.predict(x.view()),
            Fitted::Forest(f) => f.predict(x),
            Fitted::Gbt(g) => g.predict(x),
            Fitted::Ensemble(e) => e.predict(inputs)?,
            Fitted::Neural(n) => n.predict(inputs)?,
        })
    }
}

pub const BUNDLE_FORMAT: &str = "dormant-model";
pub const BUNDLE_VERSION: u32 = 1;

/// A fitted classifier with what is needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub classifier: Classifier,
    pub include_social: bool,
    pub standardizer: crate::features::Standardizer,
    /// Spammer set the suspect-value column was computed from at training time.
    pub training_spammers: Vec<String>,
    /// Accounts whose labels the classifier was fit on.
    #[serde(default)]
    pub train_accounts: Vec<String>,
}

impl ModelBundle {
    pub fn new(
        classifier: Classifier,
        include_social: bool,
        standardizer: crate::features::Standardizer,
        mut training_spammers: Vec<String>,
    ) -> Self {
        training_spammers.sort();
        training_spammers.dedup();
        Self {
            format: BUNDLE_FORMAT.to_string(),
            version: BUNDLE_VERSION,
            classifier,
            include_social,
            standardizer,
            training_spammers,
            train_accounts: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), Error> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self, Error> {
        let bundle: Self = serde_json::from_reader(r)?;
        if bundle.format != BUNDLE_FORMAT || bundle.version != BUNDLE_VERSION {
            return Err(Error::Container(format!(
                "expected {BUNDLE_FORMAT} v{BUNDLE_VERSION}, found {} v{}",
                bundle.format, bundle.version
            )));
        }
        Ok(bundle)
    }
}
