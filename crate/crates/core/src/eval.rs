//! Precision-recall metrics, top-k ranking metrics, stratified splits and
//! aggregation of repeated runs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<usize, Error> {
    if scores.len() != labels.len() {
        return Err(Error::Misaligned(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    Ok(positives)
}

/// Indices sorted by score descending.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// One point per distinct score, from the highest threshold down.
pub fn precision_recall_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>, Error> {
    let positives = check_inputs(scores, labels)? as f64;
    let order = descending(scores);
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        while k < order.len() && scores[order[k]] == threshold {
            tp += usize::from(labels[order[k]]);
            seen += 1;
            k += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / positives,
            precision: tp as f64 / seen as f64,
        });
    }
    Ok(points)
}

/// Step-wise average precision over the curve points.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, Error> {
    let curve = precision_recall_curve(scores, labels)?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(ap)
}

/// Area under the ROC curve with ties counted half. Diagnostic only.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, Error> {
    let positives = check_inputs(scores, labels)?;
    let negatives = labels.len() - positives;
    if negatives == 0 {
        return Err(Error::Config("AUROC needs at least one negative".into()));
    }
    let order = descending(scores);
    let (mut area, mut neg_above) = (0.0, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        let (mut p, mut q) = (0usize, 0usize);
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]] {
                p += 1;
            } else {
                q += 1;
            }
            k += 1;
        }
        area += p as f64 * (negatives - neg_above) as f64 - p as f64 * q as f64 / 2.0;
        neg_above += q;
    }
    Ok(area / (positives * negatives) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub account: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group: Option<u8>,
}

/// Accounts by descending score, ties by ascending account id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<RankedEntry>,
}

fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.account.cmp(&b.account))
}

impl RankedList {
    pub fn new(mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(rank_order);
        Self { entries }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn is_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater)
    }

    /// Tab-separated `account score [label] [group]`, one entry per line. Scores
    /// are printed with round-trip precision.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<(), Error> {
        writeln!(w, "account\tscore\tlabel\tgroup")?;
        for e in &self.entries {
            let label = e.label.map_or(String::new(), |l| u8::from(l).to_string());
            let group = e.group.map_or(String::new(), |g| format!("G{g}"));
            writeln!(w, "{}\t{:?}\t{}\t{}", e.account, e.score, label, group)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, Error> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let bad = |reason: &str| Error::Rejected {
                line: i + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let score = cols[1].parse::<f64>().map_err(|_| bad("bad score"))?;
            let label = match cols[2] {
                "" => None,
                "1" => Some(true),
                "0" => Some(false),
                _ => return Err(bad("bad label")),
            };
            let group = match cols[3] {
                "" => None,
                g => Some(
                    g.strip_prefix('G')
                        .and_then(|n| n.parse::<u8>().ok())
                        .ok_or_else(|| bad("bad group"))?,
                ),
            };
            entries.push(RankedEntry {
                account: cols[0].to_string(),
                score,
                label,
                group,
            });
        }
        Ok(Self::new(entries))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub k: usize,
    pub hits: usize,
    pub positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of the top `k` entries; entries with a known
/// positive label are the abnormal accounts.
pub fn ranking_metrics(ranked: &RankedList, k: usize) -> Result<RankingMetrics, Error> {
    let n = ranked.len();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let positives = ranked.entries.iter().filter(|e| e.label == Some(true)).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let hits = ranked.top(k).iter().filter(|e| e.label == Some(true)).count();
    let precision = hits as f64 / k as f64;
    let recall = hits as f64 / positives as f64;
    let f1 = if hits == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RankingMetrics {
        k,
        hits,
        positives,
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), Error> {
        let sum = self.train + self.val + self.test;
        if self.train <= 0.0 || self.val < 0.0 || self.test <= 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be positive and sum to 1, got {}/{}/{}",
                self.train, self.val, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits rows stratified by `(label, group)`. Each stratum is shuffled and laid
/// on evenly spaced points of `[0, 1)` with a random offset, so every stratum's
/// train/val/test counts match the ratios to within one row.
pub fn stratified_split(labels: &[bool], groups: &[u8], ratios: SplitRatios, seed: u64) -> Result<Split, Error> {
    ratios.validate()?;
    if labels.len() != groups.len() {
        return Err(Error::Misaligned("labels and groups differ in length".into()));
    }
    let mut strata: BTreeMap<(bool, u8), Vec<usize>> = BTreeMap::new();
    for (i, (&l, &g)) in labels.iter().zip(groups).enumerate() {
        strata.entry((l, g)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut rows) in strata {
        rows.shuffle(&mut rng);
        let offset: f64 = rng.gen();
        let m = rows.len() as f64;
        for (p, row) in rows.into_iter().enumerate() {
            let u = (offset + p as f64 / m).fract();
            if u < ratios.train {
                split.train.push(row);
            } else if u < ratios.train + ratios.val {
                split.val.push(row);
            } else {
                split.test.push(row);
            }
        }
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// A subset of accounts scored separately in the AUPRC grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    /// Decile groups `lo..=hi` (1-based).
    Groups(u8, u8),
    All,
}

impl Slice {
    pub fn group(g: u8) -> Self {
        Slice::Groups(g, g)
    }

    /// The ten single-decile slices, the two quintile extremes and the full set.
    pub fn standard() -> Vec<Slice> {
        let mut out: Vec<Slice> = (1..=10).map(Slice::group).collect();
        out.push(Slice::Groups(1, 2));
        out.push(Slice::Groups(9, 10));
        out.push(Slice::All);
        out
    }

    pub fn contains(&self, group: u8) -> bool {
        match *self {
            Slice::Groups(lo, hi) => (lo..=hi).contains(&group),
            Slice::All => true,
        }
    }

    /// Percentile-range label, e.g. `[10%,20%)` or `[0%,100%]`.
    pub fn label(&self) -> String {
        match *self {
            Slice::All => "[0%,100%]".to_string(),
            Slice::Groups(lo, hi) => {
                let close = if hi == 10 { ']' } else { ')' };
                format!("[{}%,{}%{}", (lo - 1) as u32 * 10, hi as u32 * 10, close)
            }
        }
    }
}

/// Metrics of one trained model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `None` where the slice's test rows hold no positives.
    pub auprc: Vec<(Slice, Option<f64>)>,
    pub ranking: Vec<RankingMetrics>,
}

/// Scores the `test` rows: AUPRC per slice and top-k metrics on the test ranking.
pub fn evaluate_run(
    accounts: &[String],
    scores: &[f64],
    labels: &[bool],
    groups: &[u8],
    test: &[usize],
    slices: &[Slice],
    k_grid: &[usize],
) -> Result<RunMetrics, Error> {
    let mut auprc_cells = Vec::with_capacity(slices.len());
    for &slice in slices {
        let rows: Vec<usize> = test.iter().copied().filter(|&r| slice.contains(groups[r])).collect();
        let s: Vec<f64> = rows.iter().map(|&r| scores[r]).collect();
        let l: Vec<bool> = rows.iter().map(|&r| labels[r]).collect();
        let value = match auprc(&s, &l) {
            Ok(v) => Some(v),
            Err(Error::NoPositives) => {
                log::warn!("slice {} has no test positives; cell left undefined", slice.label());
                None
            }
            Err(e) => return Err(e),
        };
        auprc_cells.push((slice, value));
    }
    let ranked = RankedList::new(
        test.iter()
            .map(|&r| RankedEntry {
                account: accounts[r].clone(),
                score: scores[r],
                label: Some(labels[r]),
                group: Some(groups[r]),
            })
            .collect(),
    );
    let mut ranking = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        match ranking_metrics(&ranked, k.min(ranked.len())) {
            Ok(m) => ranking.push(m),
            Err(Error::NoPositives) => log::warn!("test split has no positives; top-{k} metrics skipped"),
            Err(e) => return Err(e),
        }
    }
    Ok(RunMetrics {
        auprc: auprc_cells,
        ranking,
    })
}

/// Mean and population standard deviation of the defined per-run values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub runs: Vec<Option<f64>>,
}

impl Cell {
    pub fn from_runs(runs: Vec<Option<f64>>) -> Self {
        let defined: Vec<f64> = runs.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Self {
                mean: None,
                std: None,
                runs,
            };
        }
        let n = defined.len() as f64;
        let mut sum = 0.0;
        for v in &defined {
            sum += v;
        }
        let mean = sum / n;
        let mut sq = 0.0;
        for v in &defined {
            sq += (v - mean) * (v - mean);
        }
        Self {
            mean: Some(mean),
            std: Some((sq / n).sqrt()),
            runs,
        }
    }

    pub fn defined(&self) -> usize {
        self.runs.iter().flatten().count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_curve() {
        let c = precision_recall_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!((c[0].recall, c[0].precision), (0.5, 1.0));
        assert_eq!((c[1].recall, c[1].precision), (1.0, 1.0));
        assert_eq!(auprc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
    }

    #[test]
    fn equal_scores_collapse() {
        let c = precision_recall_curve(&[0.3; 4], &[true, false, false, false]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].recall, c[0].precision), (1.0, 0.25));
    }

    #[test]
    fn worst_ranking_is_five_twelfths() {
        let ap = auprc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert!((ap - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn no_positives_is_undefined() {
        assert!(matches!(auprc(&[0.1, 0.2], &[false, false]), Err(Error::NoPositives)));
    }

    #[test]
    fn top_two_of_eight() {
        let entries = (0..20)
            .map(|i| RankedEntry {
                account: format!("a{i:02}"),
                score: 1.0 - i as f64 / 100.0,
                label: Some(i < 2 || (10..16).contains(&i)),
                group: None,
            })
            .collect();
        let m = ranking_metrics(&RankedList::new(entries), 2).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 0.25));
        assert!((m.f1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn ties_rank_by_account_id() {
        let e = |a: &str, s: f64| RankedEntry {
            account: a.into(),
            score: s,
            label: None,
            group: None,
        };
        let r = RankedList::new(vec![e("b", 0.5), e("a", 0.5), e("c", 0.9)]);
        let ids: Vec<_> = r.entries().iter().map(|x| x.account.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn k_out_of_range() {
        let r = RankedList::new(vec![RankedEntry {
            account: "a".into(),
            score: 0.1,
            label: Some(true),
            group: None,
        }]);
        assert!(matches!(ranking_metrics(&r, 0), Err(Error::KOutOfRange { .. })));
        assert!(matches!(ranking_metrics(&r, 2), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn single_run_has_zero_std() {
        let c = Cell::from_runs(vec![Some(0.3)]);
        assert_eq!(c.std, Some(0.0));
        let c = Cell::from_runs(vec![None, Some(0.2), Some(0.4)]);
        assert!((c.mean.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(c.defined(), 2);
    }

    #[test]
    fn slice_labels() {
        assert_eq!(Slice::group(2).label(), "[10%,20%)");
        assert_eq!(Slice::group(10).label(), "[90%,100%]");
        assert_eq!(Slice::Groups(9, 10).label(), "[80%,100%]");
        assert_eq!(Slice::All.label(), "[0%,100%]");
    }
}
