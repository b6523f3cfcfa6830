//! Activeness, decile groups, per-account baseline features and the suspect value.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::graph::CoAppearanceGraph;
use crate::ingest::Dataset;
use crate::Error;

pub const GROUP_COUNT: usize = 10;

/// Lower bounds of G2..G10 reported for the forum this method was first applied to.
/// Useful for placing a single activity count without a population at hand.
pub const REFERENCE_LOWER_BOUNDS: [u64; GROUP_COUNT - 1] = [19, 46, 85, 136, 212, 316, 495, 818, 1664];

pub const BASE_COLUMNS: [&str; 3] = ["avg_popularity", "avg_sentiment", "active_period"];
pub const SOCIAL_COLUMN: &str = "suspect_value";

/// Per-account activity lookups over a dataset. Account order is lexicographic,
/// matching [`CoAppearanceGraph`] node order.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    accounts: Vec<String>,
    position: HashMap<String, usize>,
    activity: Vec<u64>,
    /// Distinct associated article indices, ascending.
    associated: Vec<Vec<u32>>,
    /// Distinct participant account indices per article, ascending.
    participants: Vec<Vec<u32>>,
    popularity: Vec<f64>,
    sentiment: Vec<f64>,
    first_day: Vec<Option<NaiveDate>>,
    last_day: Vec<Option<NaiveDate>>,
    window_days: i64,
}

impl DatasetIndex {
    pub fn new(dataset: &Dataset) -> Self {
        let accounts: Vec<String> = dataset.accounts().iter().cloned().collect();
        let position: HashMap<String, usize> = accounts.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let n = accounts.len();
        let mut activity = vec![0u64; n];
        let mut associated: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut participants = Vec::with_capacity(dataset.articles().len());
        let mut first_day: Vec<Option<NaiveDate>> = vec![None; n];
        let mut last_day: Vec<Option<NaiveDate>> = vec![None; n];
        let mut touch = |i: usize, day: NaiveDate| {
            first_day[i] = Some(first_day[i].map_or(day, |d| d.min(day)));
            last_day[i] = Some(last_day[i].map_or(day, |d| d.max(day)));
        };
        let mut popularity = Vec::with_capacity(dataset.articles().len());
        let mut sentiment = Vec::with_capacity(dataset.articles().len());

        for (p, da) in dataset.articles().iter().enumerate() {
            let article = &da.article;
            let author = position[&article.author];
            activity[author] += 1;
            touch(author, article.posted_at.date_naive());
            let mut members = vec![author as u32];
            for c in &article.comments {
                let u = position[&c.user];
                activity[u] += 1;
                touch(u, c.commented_at.date_naive());
                members.push(u as u32);
            }
            members.sort_unstable();
            members.dedup();
            for &u in &members {
                associated[u as usize].push(p as u32);
            }
            participants.push(members);
            popularity.push(da.raw.comments as f64);
            sentiment.push(da.raw.net_sentiment() as f64);
        }

        Self {
            accounts,
            position,
            activity,
            associated,
            participants,
            popularity,
            sentiment,
            first_day,
            last_day,
            window_days: dataset.window().days(),
        }
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    pub fn accounts(&self) -> &[String] {
        &self.accounts
    }

    pub fn position(&self, account: &str) -> Option<usize> {
        self.position.get(account).copied()
    }

    fn require(&self, account: &str) -> Result<usize, Error> {
        self.position(account).ok_or_else(|| Error::UnknownAccount(account.to_string()))
    }

    pub fn article_count(&self) -> usize {
        self.participants.len()
    }

    /// Associated article indices of account `i`.
    pub fn associated(&self, i: usize) -> &[u32] {
        &self.associated[i]
    }

    /// Participant account indices of article `p`.
    pub fn participants(&self, p: usize) -> &[u32] {
        &self.participants[p]
    }

    pub fn activity(&self) -> &[u64] {
        &self.activity
    }

    pub fn window_days(&self) -> i64 {
        self.window_days
    }

    /// Activeness value and per-day rate of one account.
    pub fn activeness_value(&self, account: &str) -> Result<(u64, f64), Error> {
        let i = self.require(account)?;
        let a = self.activity[i];
        Ok((a, a as f64 / self.window_days as f64))
    }

    /// Base features of account `i`; `None` when it has no activity.
    pub fn base_features(&self, i: usize) -> Option<BaseFeatures> {
        let assoc = &self.associated[i];
        if assoc.is_empty() {
            return None;
        }
        let m = assoc.len() as f64;
        let popularity = assoc.iter().map(|&p| self.popularity[p as usize]).sum::<f64>() / m;
        let sentiment = assoc.iter().map(|&p| self.sentiment[p as usize]).sum::<f64>() / m;
        let period = (self.last_day[i]? - self.first_day[i]?).num_days() + 1;
        Some(BaseFeatures {
            avg_popularity: popularity,
            avg_sentiment: sentiment,
            active_period: period as f64,
        })
    }

    pub fn base_feature_vector(&self, account: &str) -> Result<BaseFeatures, Error> {
        let i = self.require(account)?;
        Ok(self.base_features(i).unwrap_or_default())
    }

    /// Marks the members of `spammers` that are indexed accounts.
    pub fn spammer_mask<'a, I>(&self, spammers: I) -> Vec<bool>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut mask = vec![false; self.len()];
        for s in spammers {
            if let Some(i) = self.position(s) {
                mask[i] = true;
            }
        }
        mask
    }

    /// Suspect value of one account against a spammer set.
    pub fn suspect_value<'a, I>(&self, account: &str, spammers: I, exclude_self: bool) -> Result<SuspectValue, Error>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let i = self.require(account)?;
        let mask = self.spammer_mask(spammers);
        let a = self.activity[i];
        if a == 0 {
            return Ok(SuspectValue::DEGENERATE);
        }
        let hits = self.associated[i]
            .iter()
            .filter(|&&p| {
                self.participants[p as usize]
                    .iter()
                    .any(|&u| mask[u as usize] && !(exclude_self && u as usize == i))
            })
            .count();
        Ok(SuspectValue {
            value: hits as f64 / a as f64,
            hits: hits as u64,
            degenerate: false,
        })
    }

    /// Suspect values of every account, in index order.
    pub fn suspect_values(&self, spammer_mask: &[bool], exclude_self: bool) -> Vec<SuspectValue> {
        let per_article: Vec<u32> = self
            .participants
            .iter()
            .map(|ps| ps.iter().filter(|&&u| spammer_mask[u as usize]).count() as u32)
            .collect();
        (0..self.len())
            .map(|i| {
                let a = self.activity[i];
                if a == 0 {
                    return SuspectValue::DEGENERATE;
                }
                let own = u32::from(exclude_self && spammer_mask[i]);
                let hits = self.associated[i]
                    .iter()
                    .filter(|&&p| per_article[p as usize] > own)
                    .count() as u64;
                SuspectValue {
                    value: hits as f64 / a as f64,
                    hits,
                    degenerate: false,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseFeatures {
    pub avg_popularity: f64,
    pub avg_sentiment: f64,
    pub active_period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspectValue {
    pub value: f64,
    /// Associated articles that contain a spammer.
    pub hits: u64,
    /// Set when the account has no activity and the ratio is undefined.
    pub degenerate: bool,
}

impl SuspectValue {
    const DEGENERATE: Self = Self {
        value: 0.0,
        hits: 0,
        degenerate: true,
    };
}

/// Activity counts, daily rates and decile groups (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivenessTable {
    pub values: Vec<u64>,
    pub per_day: Vec<f64>,
    pub groups: Vec<u8>,
    /// Smallest member value of G1..G10; `None` for an empty group.
    pub lower_bounds: Vec<Option<u64>>,
}

impl ActivenessTable {
    pub fn new(index: &DatasetIndex) -> Result<Self, Error> {
        let values = index.activity().to_vec();
        let groups = assign_decile_groups(&values)?;
        let per_day = values.iter().map(|&v| v as f64 / index.window_days() as f64).collect();
        let mut lower_bounds = vec![None; GROUP_COUNT];
        for (&v, &g) in values.iter().zip(&groups) {
            let slot: &mut Option<u64> = &mut lower_bounds[g as usize - 1];
            *slot = Some(slot.map_or(v, |b| b.min(v)));
        }
        Ok(Self {
            values,
            per_day,
            groups,
            lower_bounds,
        })
    }

    /// Indices of accounts whose group lies in `lo..=hi`.
    pub fn members(&self, lo: u8, hi: u8) -> Vec<usize> {
        (0..self.groups.len())
            .filter(|&i| (lo..=hi).contains(&self.groups[i]))
            .collect()
    }
}

/// Decile group of every value. An account lands in group `g` when the share of
/// accounts strictly below it is in `[(g-1)/10, g/10)`, so boundaries fall on
/// nearest-rank percentiles, ranges are half-open and tied values never split.
pub fn assign_decile_groups(values: &[u64]) -> Result<Vec<u8>, Error> {
    let n = values.len();
    if n < GROUP_COUNT {
        return Err(Error::TooFewAccounts {
            needed: GROUP_COUNT,
            got: n,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    if sorted[0] == sorted[n - 1] {
        log::warn!("all {n} accounts share activeness {}; every account placed in G1", sorted[0]);
    }
    Ok(values
        .iter()
        .map(|v| {
            let below = sorted.partition_point(|x| x < v);
            ((GROUP_COUNT * below / n) + 1).min(GROUP_COUNT) as u8
        })
        .collect())
}

/// Group of a single value given lower bounds of G2..G10.
pub fn group_for_value(value: u64, lower_bounds: &[u64]) -> u8 {
    1 + lower_bounds.iter().filter(|&&b| b <= value).count() as u8
}

/// Per-column z-scoring with population moments fit on a row subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(raw: &Array2<f64>, rows: &[usize]) -> Self {
        let cols = raw.ncols();
        let m = rows.len().max(1) as f64;
        let mut mean = vec![0.0; cols];
        let mut std = vec![0.0; cols];
        for c in 0..cols {
            let mu = rows.iter().map(|&r| raw[[r, c]]).sum::<f64>() / m;
            let var = rows.iter().map(|&r| (raw[[r, c]] - mu).powi(2)).sum::<f64>() / m;
            mean[c] = mu;
            std[c] = var.sqrt();
        }
        Self { mean, std }
    }

    /// Constant columns (zero spread on the fit rows) map to zero.
    pub fn apply(&self, raw: &Array2<f64>) -> Array2<f64> {
        let mut out = raw.clone();
        for ((_, c), v) in out.indexed_iter_mut() {
            let s = self.std[c];
            *v = if s > f64::EPSILON * self.mean[c].abs().max(1.0) {
                (*v - self.mean[c]) / s
            } else {
                0.0
            };
        }
        out
    }
}

/// Standardized per-account features aligned to graph node order.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub accounts: Vec<String>,
    pub columns: Vec<String>,
    pub raw: Array2<f64>,
    pub values: Array2<f64>,
    pub standardizer: Standardizer,
    /// Accounts without any activity (features are zero).
    pub inactive: Vec<bool>,
}

impl FeatureMatrix {
    pub fn include_social(&self) -> bool {
        self.columns.len() == BASE_COLUMNS.len() + 1
    }

    pub fn len(&self) -> usize {
        self.accounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accounts.is_empty()
    }

    /// Writes `account,<columns...>` then one row of raw values per account.
    pub fn write_csv<W: Write>(&self, w: W, standardized: bool) -> Result<(), Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["account".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header).map_err(csv_error)?;
        let data = if standardized { &self.values } else { &self.raw };
        for (i, account) in self.accounts.iter().enumerate() {
            let mut row = vec![account.clone()];
            row.extend(data.row(i).iter().map(|v| v.to_string()));
            out.write_record(&row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Raw feature rows in index order (base columns, then the suspect value when requested).
pub fn raw_features(index: &DatasetIndex, suspect: Option<&[SuspectValue]>) -> (Array2<f64>, Vec<bool>) {
    let cols = BASE_COLUMNS.len() + usize::from(suspect.is_some());
    let mut raw = Array2::zeros((index.len(), cols));
    let mut inactive = vec![false; index.len()];
    for i in 0..index.len() {
        match index.base_features(i) {
            Some(f) => {
                raw[[i, 0]] = f.avg_popularity;
                raw[[i, 1]] = f.avg_sentiment;
                raw[[i, 2]] = f.active_period;
            }
            None => inactive[i] = true,
        }
        if let Some(s) = suspect {
            raw[[i, 3]] = s[i].value;
        }
    }
    (raw, inactive)
}

/// Builds the standardized feature matrix. Standardization moments are fit on
/// `train_rows`; the suspect value sees only `spammers`.
pub fn assemble_feature_matrix(
    index: &DatasetIndex,
    graph: &CoAppearanceGraph,
    include_social: bool,
    spammers: &HashSet<String>,
    train_rows: &[usize],
) -> Result<FeatureMatrix, Error> {
    if index.accounts() != graph.ids() {
        return Err(Error::Misaligned(format!(
            "{} indexed accounts vs {} graph nodes",
            index.len(),
            graph.node_count()
        )));
    }
    if let Some(&r) = train_rows.iter().find(|&&r| r >= index.len()) {
        return Err(Error::Misaligned(format!("training row {r} out of range")));
    }
    let suspect = include_social.then(|| {
        let mask = index.spammer_mask(spammers.iter().map(String::as_str));
        index.suspect_values(&mask, true)
    });
    let (raw, inactive) = raw_features(index, suspect.as_deref());
    let standardizer = Standardizer::fit(&raw, train_rows);
    let values = standardizer.apply(&raw);
    let mut columns: Vec<String> = BASE_COLUMNS.iter().map(|c| c.to_string()).collect();
    if include_social {
        columns.push(SOCIAL_COLUMN.to_string());
    }
    Ok(FeatureMatrix {
        accounts: index.accounts().to_vec(),
        columns,
        raw,
        values,
        standardizer,
        inactive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_distinct_values_fill_every_group() {
        let groups = assign_decile_groups(&[5, 1, 9, 3, 7, 0, 2, 8, 4, 6]).unwrap();
        assert_eq!(groups, vec![6, 2, 10, 4, 8, 1, 3, 9, 5, 7]);
    }

    #[test]
    fn identical_values_all_land_in_first_group() {
        let groups = assign_decile_groups(&[4; 25]).unwrap();
        assert!(groups.iter().all(|&g| g == 1));
    }

    #[test]
    fn fewer_than_ten_accounts_rejected() {
        assert!(matches!(
            assign_decile_groups(&[1; 9]),
            Err(Error::TooFewAccounts { got: 9, .. })
        ));
    }

    #[test]
    fn reference_bounds_place_examples() {
        assert_eq!(group_for_value(45, &REFERENCE_LOWER_BOUNDS), 2);
        assert_eq!(group_for_value(1700, &REFERENCE_LOWER_BOUNDS), 10);
        assert_eq!(group_for_value(0, &REFERENCE_LOWER_BOUNDS), 1);
        assert_eq!(group_for_value(1664, &REFERENCE_LOWER_BOUNDS), 10);
    }

    #[test]
    fn standardizer_zeroes_constant_columns() {
        let raw = Array2::from_shape_vec((3, 2), vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let s = Standardizer::fit(&raw, &[0, 1, 2]);
        let z = s.apply(&raw);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        assert!((z[[0, 0]] + 1.224744871391589).abs() < 1e-12);
    }
}
