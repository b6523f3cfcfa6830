//! Repeated stratified evaluation of a model grid on one dataset.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate_run, stratified_split, Cell, RunMetrics, Slice, Split, SplitRatios};
use crate::features::{
    assemble_feature_matrix, raw_features, ActivenessTable, DatasetIndex, FeatureMatrix, SuspectValue, GROUP_COUNT,
};
use crate::graph::CoAppearanceGraph;
use crate::ingest::{Dataset, PruneConfig};
use crate::models::{mix_seed, node_key, Classifier, GraphContext, Inputs, ModelBundle, ModelSpec, TrainConfig};
use crate::synthgen::SynthConfig;
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "dormant-report";
pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_K_GRID: [usize; 4] = [100, 200, 300, 400];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repeats: usize,
    pub models: Vec<ModelSpec>,
    /// Feature sets to evaluate: `false` = base features, `true` = plus suspect value.
    pub social: Vec<bool>,
    pub split: SplitRatios,
    pub k_grid: Vec<usize>,
    pub prune: PruneConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 10,
            models: ModelSpec::parse_list("logreg,fc,random_forest,gbt,soft_vote,hard_vote,stacking,gcn,tagcn:3,gat")
                .expect("valid model list"),
            social: vec![false, true],
            split: SplitRatios::default(),
            k_grid: DEFAULT_K_GRID.to_vec(),
            prune: PruneConfig::small_benchmark(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.models.is_empty() || self.social.is_empty() {
            return Err(Error::Config("need at least one model and one feature set".into()));
        }
        if self.k_grid.contains(&0) {
            return Err(Error::Config("k values must be positive".into()));
        }
        self.split.validate()?;
        self.train.validate()
    }
}

/// A dataset with everything derived from it that does not depend on a split.
pub struct Benchmark {
    pub dataset: Dataset,
    pub index: DatasetIndex,
    pub graph: CoAppearanceGraph,
    pub context: GraphContext,
    pub activeness: ActivenessTable,
    pub labels: Vec<bool>,
    pub keys: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: u8,
    pub lower_bound: Option<u64>,
    pub normals: usize,
    pub spammers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub accounts: usize,
    pub spammers: usize,
    pub articles: usize,
    pub edges: usize,
    pub groups: Vec<GroupSummary>,
}

impl Benchmark {
    pub fn new(dataset: Dataset) -> Result<Self> {
        let index = DatasetIndex::new(&dataset);
        let graph = CoAppearanceGraph::build(&dataset);
        let context = GraphContext::new(&graph);
        let activeness = ActivenessTable::new(&index)?;
        let labels: Vec<bool> = index
            .accounts()
            .iter()
            .map(|a| dataset.labels().is_spammer(a))
            .collect();
        let keys = index.accounts().iter().map(|a| node_key(a)).collect();
        Ok(Self {
            dataset,
            index,
            graph,
            context,
            activeness,
            labels,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn groups(&self) -> &[u8] {
        &self.activeness.groups
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut groups: Vec<GroupSummary> = (1..=GROUP_COUNT as u8)
            .map(|g| GroupSummary {
                group: g,
                lower_bound: self.activeness.lower_bounds[g as usize - 1],
                normals: 0,
                spammers: 0,
            })
            .collect();
        for (&g, &l) in self.activeness.groups.iter().zip(&self.labels) {
            let s = &mut groups[g as usize - 1];
            if l {
                s.spammers += 1;
            } else {
                s.normals += 1;
            }
        }
        DatasetSummary {
            accounts: self.len(),
            spammers: self.labels.iter().filter(|&&l| l).count(),
            articles: self.dataset.articles().len(),
            edges: self.graph.edge_count(),
            groups,
        }
    }

    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<Split> {
        stratified_split(&self.labels, self.groups(), ratios, seed)
    }

    /// Feature matrix whose suspect value sees only the training spammers.
    pub fn features(&self, include_social: bool, split: &Split) -> Result<FeatureMatrix> {
        let spammers: HashSet<String> = split
            .train
            .iter()
            .filter(|&&r| self.labels[r])
            .map(|&r| self.index.accounts()[r].clone())
            .collect();
        assemble_feature_matrix(&self.index, &self.graph, include_social, &spammers, &split.train)
    }

    pub fn inputs<'a>(&'a self, features: &'a FeatureMatrix) -> Inputs<'a> {
        Inputs {
            features: &features.values,
            keys: &self.keys,
            graph: Some(&self.context),
        }
    }

    /// Trains one model on `split` and scores every account.
    pub fn fit_predict(
        &self,
        spec: ModelSpec,
        config: &TrainConfig,
        features: &FeatureMatrix,
        split: &Split,
    ) -> Result<(Classifier, Vec<f64>)> {
        let inputs = self.inputs(features);
        let mut model = Classifier::new(spec, config.clone());
        model.fit(&inputs, &self.labels, &split.train, &split.val)?;
        let scores = model.predict(&inputs)?;
        Ok((model, scores))
    }
}

/// Scores of every account under one model and spammer set.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub scores: Vec<f64>,
    pub suspect: Vec<SuspectValue>,
}

impl Benchmark {
    /// Trains `spec` on `split` and packages it with its standardizer and
    /// training accounts.
    pub fn train_bundle(
        &self,
        spec: ModelSpec,
        config: &TrainConfig,
        include_social: bool,
        split: &Split,
    ) -> Result<(ModelBundle, Vec<f64>)> {
        let features = self.features(include_social, split)?;
        let (model, scores) = self.fit_predict(spec, config, &features, split)?;
        let spammers = split
            .train
            .iter()
            .filter(|&&r| self.labels[r])
            .map(|&r| self.index.accounts()[r].clone())
            .collect();
        let mut bundle = ModelBundle::new(model, include_social, features.standardizer, spammers);
        bundle.train_accounts = split.train.iter().map(|&r| self.index.accounts()[r].clone()).collect();
        bundle.train_accounts.sort();
        Ok((bundle, scores))
    }

    /// Re-runs a fitted bundle with suspect values computed from `spammers`.
    pub fn score_bundle(&self, bundle: &ModelBundle, spammers: &HashSet<String>) -> Result<Scored> {
        let mask = self.index.spammer_mask(spammers.iter().map(String::as_str));
        let suspect = self.index.suspect_values(&mask, true);
        let (raw, _) = raw_features(&self.index, bundle.include_social.then_some(suspect.as_slice()));
        if raw.ncols() != bundle.standardizer.mean.len() {
            return Err(Error::Misaligned(format!(
                "bundle expects {} feature columns, dataset gives {}",
                bundle.standardizer.mean.len(),
                raw.ncols()
            )));
        }
        let values = bundle.standardizer.apply(&raw);
        let inputs = Inputs {
            features: &values,
            keys: &self.keys,
            graph: Some(&self.context),
        };
        let scores = bundle.classifier.predict(&inputs)?;
        Ok(Scored { scores, suspect })
    }
}

/// Seed of the split used in repeat `r`.
pub fn split_seed(seed: u64, repeat: usize) -> u64 {
    mix_seed(seed, &[0x5b17, repeat as u64])
}

/// Seed handed to the models trained in repeat `r`.
pub fn train_seed(seed: u64, repeat: usize) -> u64 {
    mix_seed(seed, &[0x7a11, repeat as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCell {
    pub slice: String,
    #[serde(flatten)]
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKCell {
    pub k: usize,
    pub f1: Cell,
    pub precision: Cell,
    pub recall: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelSpec,
    pub social: bool,
    pub auprc: Vec<SliceCell>,
    pub top_k: Vec<TopKCell>,
    /// Selected epoch per repeat for early-stopped models.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub best_epochs: Vec<usize>,
}

impl ReportRow {
    pub fn auprc(&self, slice: Slice) -> Option<&Cell> {
        let label = slice.label();
        self.auprc.iter().find(|c| c.slice == label).map(|c| &c.cell)
    }

    pub fn top_k(&self, k: usize) -> Option<&TopKCell> {
        self.top_k.iter().find(|c| c.k == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub notes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn row(&self, model: ModelSpec, social: bool) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.social == social)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        let report: Self = serde_json::from_reader(r)?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(Error::Container(format!(
                "expected {REPORT_FORMAT} v{REPORT_VERSION}, found {} v{}",
                report.format, report.version
            )));
        }
        Ok(report)
    }

    /// AUPRC grid as tab-separated `model social slice… ` rows of `mean±std`.
    pub fn write_auprc_table<W: Write>(&self, mut w: W) -> Result<()> {
        let slices: Vec<String> = self
            .rows
            .first()
            .map(|r| r.auprc.iter().map(|c| c.slice.clone()).collect())
            .unwrap_or_default();
        writeln!(w, "model\tsocial\t{}", slices.join("\t"))?;
        for row in &self.rows {
            let cells: Vec<String> = row.auprc.iter().map(|c| fmt_cell(&c.cell)).collect();
            writeln!(w, "{}\t{}\t{}", row.model, on_off(row.social), cells.join("\t"))?;
        }
        Ok(())
    }

    /// F1@k grid as tab-separated rows of `mean±std`.
    pub fn write_f1_table<W: Write>(&self, mut w: W) -> Result<()> {
        let ks: Vec<String> = self.config.k_grid.iter().map(|k| format!("k={k}")).collect();
        writeln!(w, "model\tsocial\t{}", ks.join("\t"))?;
        for row in &self.rows {
            let cells: Vec<String> = self
                .config
                .k_grid
                .iter()
                .map(|&k| row.top_k(k).map_or_else(|| "-".to_string(), |c| fmt_cell(&c.f1)))
                .collect();
            writeln!(w, "{}\t{}\t{}", row.model, on_off(row.social), cells.join("\t"))?;
        }
        Ok(())
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn fmt_cell(c: &Cell) -> String {
    match (c.mean, c.std) {
        (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
        _ => "undefined".to_string(),
    }
}

struct RepeatResult {
    test_len: usize,
    runs: Vec<(RunMetrics, Option<usize>)>,
}

fn run_repeat(bench: &Benchmark, config: &ExperimentConfig, repeat: usize, slices: &[Slice]) -> Result<RepeatResult> {
    let split = bench.split(config.split, split_seed(config.seed, repeat))?;
    let mut train = config.train.clone();
    train.seed = train_seed(config.seed, repeat);
    let mut runs = Vec::with_capacity(config.social.len() * config.models.len());
    for &social in &config.social {
        let features = bench.features(social, &split)?;
        for &spec in &config.models {
            let (model, scores) = bench.fit_predict(spec, &train, &features, &split)?;
            let metrics = evaluate_run(
                bench.index.accounts(),
                &scores,
                &bench.labels,
                bench.groups(),
                &split.test,
                slices,
                &config.k_grid,
            )?;
            let best = match model.fitted() {
                Some(crate::models::Fitted::Neural(n)) => Some(n.best_epoch),
                _ => None,
            };
            log::debug!("repeat {repeat} {spec} social={social} done");
            runs.push((metrics, best));
        }
    }
    Ok(RepeatResult {
        test_len: split.test.len(),
        runs,
    })
}

/// Runs every (feature set, model) pair on `repeats` fresh splits and
/// aggregates per-slice AUPRC and top-k metrics.
pub fn run_experiment(bench: &Benchmark, config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let slices = Slice::standard();
    let results: Vec<RepeatResult> = (0..config.repeats)
        .into_par_iter()
        .map(|r| run_repeat(bench, config, r, &slices))
        .collect::<Result<_>>()?;

    let mut notes = vec![
        "graph models: two propagation layers, hidden sizes from train.hidden, linear sigmoid head".to_string(),
        "suspect value computed from training-split spammers only, self excluded".to_string(),
    ];
    let mut rows = Vec::new();
    let mut idx = 0;
    for &social in &config.social {
        for &spec in &config.models {
            let per_run: Vec<(&RunMetrics, Option<usize>, usize)> =
                results.iter().map(|r| (&r.runs[idx].0, r.runs[idx].1, r.test_len)).collect();
            idx += 1;
            let auprc = slices
                .iter()
                .enumerate()
                .map(|(s, slice)| {
                    let cell = Cell::from_runs(per_run.iter().map(|(m, _, _)| m.auprc[s].1).collect());
                    if cell.defined() < config.repeats {
                        notes.push(format!(
                            "{spec} social={}: slice {} undefined in {} of {} repeats",
                            on_off(social),
                            slice.label(),
                            config.repeats - cell.defined(),
                            config.repeats
                        ));
                    }
                    SliceCell {
                        slice: slice.label(),
                        cell,
                    }
                })
                .collect();
            let top_k = config
                .k_grid
                .iter()
                .map(|&k| {
                    let pick = |f: fn(&crate::eval::RankingMetrics) -> f64| {
                        Cell::from_runs(
                            per_run
                                .iter()
                                .map(|(m, _, n)| m.ranking.iter().find(|x| x.k == k.min(*n)).map(f))
                                .collect(),
                        )
                    };
                    TopKCell {
                        k,
                        f1: pick(|m| m.f1),
                        precision: pick(|m| m.precision),
                        recall: pick(|m| m.recall),
                    }
                })
                .collect();
            let best_epochs = per_run.iter().filter_map(|(_, b, _)| *b).collect();
            rows.push(ReportRow {
                model: spec,
                social,
                auprc,
                top_k,
                best_epochs,
            });
        }
    }
    Ok(EvaluationReport {
        format: REPORT_FORMAT.to_string(),
        version: REPORT_VERSION,
        config: config.clone(),
        dataset: bench.summary(),
        notes,
        rows,
    })
}
