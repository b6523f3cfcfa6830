//! Seeded synthetic forums with planted spammer cells.
//!
//! Normal accounts draw a log-normal activity budget and spend it on posts and
//! on threaded discussion in background articles. Spammers are grouped into
//! cells; each cell pushes a handful of campaign articles in short bursts
//! (one comment per member per article) alongside a few recurring normal
//! contacts. Whatever budget a spammer has left is spread as single comments
//! over popular background articles.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    prune_dataset, write_articles, write_labels, Article, Comment, Dataset, Label, LabelSet, PruneConfig, Sentiment,
    Window,
};
use crate::{Error, Result};

/// Share of spammers per activeness decile, lowest first.
pub const DEFAULT_SPAMMER_DECILE_MASS: [f64; 10] = [0.24, 0.18, 0.10, 0.06, 0.06, 0.09, 0.12, 0.07, 0.06, 0.02];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_accounts: usize,
    pub spammer_fraction: f64,
    pub start_date: NaiveDate,
    pub window_days: u32,
    /// Median total activity (posts + comments) of a normal account.
    pub activity_median: f64,
    /// Log-scale spread of normal activity.
    pub activity_sigma: f64,
    /// Chance that one unit of normal activity is a post rather than a comment.
    pub post_fraction: f64,
    /// Poisson mean of follow-up comments in one normal thread visit.
    pub thread_extra_comments: f64,
    /// Elasticity of a normal account's thread length with respect to its budget.
    pub chattiness: f64,
    /// Share of normal accounts that never follow up, leaving one comment per visit.
    pub drive_by_share: f64,
    /// Smallest budget at which a normal account can be a drive-by commenter.
    pub drive_by_min_budget: usize,
    /// Log-scale spread of article attractiveness.
    pub attractiveness_sigma: f64,
    /// Spread of the per-article shift in like probability.
    pub tilt_sigma: f64,
    pub spammer_decile_mass: Vec<f64>,
    /// Spammer budgets are decile-matched normal budgets times this factor,
    /// which offsets the share of normal activity that pruning discards.
    pub spammer_budget_scale: f64,
    pub cell_size: usize,
    pub campaigns_per_cell: usize,
    /// Spammers pushing each campaign article.
    pub burst_size: usize,
    pub burst_minutes: u32,
    /// Days over which one cell's campaign articles are posted.
    pub campaign_span_days: u32,
    pub contacts_per_cell: usize,
    /// Chance that a contact shows up on a given campaign article.
    pub contact_presence: f64,
    /// Poisson mean of follow-up comments by a contact on a campaign article.
    pub contact_extra_comments: f64,
    /// Attractiveness multiplier of campaign articles for ordinary traffic.
    pub campaign_attractiveness: f64,
    /// Chance that a normal account's first visit goes to a campaign article.
    pub campaign_draw: f64,
    /// Exponent on attractiveness when spammers pick background articles.
    pub camouflage_focus: f64,
    /// Preference of spammers for articles with a positive tilt.
    pub camouflage_lean: f64,
    /// Chance that a spammer comment is a like.
    pub like_bias: f64,
    /// Extra like probability for normal comments on campaign articles.
    pub campaign_tilt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_accounts: 5000,
            spammer_fraction: 0.0204,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            window_days: 547,
            activity_median: 12.0,
            activity_sigma: 1.1,
            post_fraction: 0.0015,
            thread_extra_comments: 4.0,
            drive_by_share: 0.15,
            drive_by_min_budget: 3,
            chattiness: 0.0,
            attractiveness_sigma: 0.3,
            tilt_sigma: 0.2,
            spammer_decile_mass: DEFAULT_SPAMMER_DECILE_MASS.to_vec(),
            spammer_budget_scale: 0.7,
            cell_size: 10,
            campaigns_per_cell: 5,
            burst_size: 8,
            burst_minutes: 90,
            campaign_span_days: 5,
            contacts_per_cell: 5,
            contact_presence: 0.8,
            contact_extra_comments: 3.0,
            campaign_attractiveness: 1.0,
            campaign_draw: 0.0,
            camouflage_focus: 0.5,
            camouflage_lean: 8.0,
            like_bias: 0.7,
            campaign_tilt: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn spammer_count(&self) -> usize {
        (self.n_accounts as f64 * self.spammer_fraction).round() as usize
    }

    pub fn window(&self) -> Result<Window> {
        if self.window_days < 2 {
            return Err(Error::Config("window_days must be at least 2".into()));
        }
        Window::new(self.start_date, self.start_date + Duration::days(self.window_days as i64 - 1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_accounts < 10 {
            return bad("n_accounts must be at least 10");
        }
        if !(self.spammer_fraction > 0.0 && self.spammer_fraction < 1.0) {
            return bad("spammer_fraction must lie in (0, 1)");
        }
        if self.spammer_decile_mass.len() != 10
            || self.spammer_decile_mass.iter().any(|m| !(*m >= 0.0))
            || (self.spammer_decile_mass.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("spammer_decile_mass must hold 10 non-negative shares summing to 1");
        }
        let positive = [
            self.activity_median,
            self.activity_sigma,
            self.post_fraction,
            self.attractiveness_sigma,
            self.tilt_sigma,
            self.campaign_attractiveness,
            self.camouflage_focus,
            self.spammer_budget_scale,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("activity, attractiveness and focus parameters must be positive");
        }
        let rates = [self.post_fraction, self.contact_presence, self.like_bias, self.drive_by_share, self.campaign_draw];
        if rates.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !self.campaign_tilt.is_finite() || !self.camouflage_lean.is_finite() || !self.chattiness.is_finite() {
            return bad("tilt and lean must be finite");
        }
        if self.thread_extra_comments < 0.0 || self.contact_extra_comments < 0.0 {
            return bad("extra comment rates must be non-negative");
        }
        if self.cell_size < 2 || self.burst_size < 2 || self.campaigns_per_cell == 0 || self.burst_minutes == 0 {
            return bad("cells, bursts and campaigns must be non-trivial");
        }
        if self.campaign_span_days == 0 || self.campaign_span_days >= self.window_days {
            return bad("campaign_span_days must lie in 1..window_days");
        }
        if self.burst_size > self.cell_size {
            return bad("burst_size cannot exceed cell_size");
        }
        let spammers = self.spammer_count();
        if spammers < 2 || spammers >= self.n_accounts {
            return bad("spammer count must be at least 2 and below n_accounts");
        }
        if self.contacts_per_cell >= self.n_accounts - spammers {
            return bad("not enough normal accounts for the requested contacts");
        }
        self.window()?;
        Ok(())
    }
}

/// Ground truth for one account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub account: String,
    pub label: Label,
    pub cell: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticForum {
    pub config: SynthConfig,
    /// Sorted by article id.
    pub articles: Vec<Article>,
    pub labels: LabelSet,
    /// Sorted by account id.
    pub truth: Vec<TruthRecord>,
    pub window: Window,
}

impl SyntheticForum {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_articles(self.articles.clone(), self.labels.clone(), self.window)
    }

    pub fn prune(&self, config: &PruneConfig) -> Result<Dataset> {
        prune_dataset(&self.articles, &self.labels, config, self.window)
    }

    pub fn cell_of(&self, account: &str) -> Option<usize> {
        self.truth
            .binary_search_by(|t| t.account.as_str().cmp(account))
            .ok()
            .and_then(|i| self.truth[i].cell)
    }

    pub fn write_truth<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "account\tlabel\tcell")?;
        for t in &self.truth {
            let label = match t.label {
                Label::Spammer => "spammer",
                Label::Normal => "normal",
            };
            let cell = t.cell.map_or_else(|| "-".to_string(), |c| c.to_string());
            writeln!(w, "{}\t{label}\t{cell}", t.account)?;
        }
        Ok(())
    }

    /// Writes `articles.jsonl`, `labels.jsonl` and `truth.tsv` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join("articles.jsonl"))?);
        write_articles(&mut w, &self.articles)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("labels.jsonl"))?);
        write_labels(&mut w, &self.labels)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("truth.tsv"))?);
        self.write_truth(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

struct Draft {
    author: usize,
    posted: i64,
    campaign: bool,
    /// Shift of the like probability for normal comments.
    tilt: f64,
    comments: Vec<(usize, Sentiment, i64)>,
}

const THREAD_SECONDS: i64 = 3 * 86_400;

fn normal_sentiment(rng: &mut ChaCha8Rng, tilt: f64) -> Sentiment {
    let like = (0.35 + tilt).clamp(0.05, 0.9);
    let dislike = (0.2 - tilt / 2.0).clamp(0.02, 0.6);
    let u: f64 = rng.gen();
    if u < like {
        Sentiment::Like
    } else if u < like + dislike {
        Sentiment::Dislike
    } else {
        Sentiment::Neutral
    }
}

fn spammer_sentiment(rng: &mut ChaCha8Rng, like_bias: f64) -> Sentiment {
    let u: f64 = rng.gen();
    if u < like_bias {
        Sentiment::Like
    } else if u < like_bias + (1.0 - like_bias) / 2.0 {
        Sentiment::Dislike
    } else {
        Sentiment::Neutral
    }
}

/// Largest-remainder apportionment of `total` over `shares`.
fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticForum> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let window = config.window()?;
    let n = config.n_accounts;
    let n_spam = config.spammer_count();
    let width = (n - 1).to_string().len().max(4);
    let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());

    // Role r < n_spam is a spammer; identifiers are shuffled so they carry no label.
    let mut ids: Vec<String> = (0..n).map(|i| format!("u{i:0width$}")).collect();
    ids.shuffle(&mut rng);

    let activity = LogNormal::new(config.activity_median.ln(), config.activity_sigma).map_err(|e| cfg_err(&e))?;
    let mut budget = vec![0usize; n];
    for b in budget.iter_mut().skip(n_spam) {
        *b = (activity.sample(&mut rng).round() as usize).max(1);
    }
    // Spammer budgets are drawn from the matching decile of normal activity.
    let mut sorted_normal: Vec<usize> = budget[n_spam..].to_vec();
    sorted_normal.sort_unstable();
    let per_decile = apportion(n_spam, &config.spammer_decile_mass);
    let mut r = 0;
    for (g, &count) in per_decile.iter().enumerate() {
        let lo = g * sorted_normal.len() / 10;
        let hi = ((g + 1) * sorted_normal.len() / 10).max(lo + 1).min(sorted_normal.len());
        for _ in 0..count {
            let b = sorted_normal[rng.gen_range(lo..hi)] as f64 * config.spammer_budget_scale;
            budget[r] = (b.round() as usize).max(1);
            r += 1;
        }
    }

    let mut spam_roles: Vec<usize> = (0..n_spam).collect();
    spam_roles.shuffle(&mut rng);
    let mut cells: Vec<Vec<usize>> = spam_roles.chunks(config.cell_size).map(|c| c.to_vec()).collect();
    if cells.len() > 1 && cells.last().map_or(false, |c| c.len() < config.burst_size) {
        let tail = cells.pop().expect("nonempty");
        cells.last_mut().expect("nonempty").extend(tail);
    }
    let slots = cells.len() * config.campaigns_per_cell * config.burst_size;
    let spam_budget: usize = budget[..n_spam].iter().sum();
    if slots > spam_budget {
        return Err(Error::Infeasible(format!(
            "{slots} campaign slots exceed the total spammer activity budget of {spam_budget}"
        )));
    }
    let mut cell_of = vec![None; n];
    for (c, members) in cells.iter().enumerate() {
        for &m in members {
            cell_of[m] = Some(c);
        }
    }

    let start = Utc
        .from_utc_datetime(&window.start.and_hms_opt(0, 0, 0).expect("midnight"))
        .timestamp();
    let last_post = start + (config.window_days as i64 - 1) * 86_400 - THREAD_SECONDS;
    let mut remaining = budget.clone();
    let mut drafts: Vec<Draft> = Vec::new();
    let attract_dist = LogNormal::new(0.0, config.attractiveness_sigma).map_err(|e| cfg_err(&e))?;
    let tilt_dist = Normal::new(0.0, config.tilt_sigma).map_err(|e| cfg_err(&e))?;
    let mut attract: Vec<f64> = Vec::new();

    // Campaigns: a contact posts, a burst of cell members comments once each,
    // the cell's contacts join in, and ordinary traffic arrives later.
    let normals_with_room: Vec<usize> = (n_spam..n).filter(|&r| budget[r] >= 4).collect();
    let contact_pool = if normals_with_room.len() >= config.contacts_per_cell {
        normals_with_room
    } else {
        (n_spam..n).collect()
    };
    let contact_visits = Poisson::new(config.contact_extra_comments.max(1e-9)).map_err(|e| cfg_err(&e))?;
    for members in &cells {
        let contacts: Vec<usize> = contact_pool
            .choose_multiple(&mut rng, config.contacts_per_cell)
            .copied()
            .collect();
        let mut used = vec![0usize; members.len()];
        let span = config.campaign_span_days as i64 * 86_400;
        let opening = rng.gen_range(start..=(last_post - span).max(start));
        for j in 0..config.campaigns_per_cell {
            let posted = rng.gen_range(opening..=(opening + span).min(last_post));
            let author = if contacts.is_empty() {
                contact_pool[rng.gen_range(0..contact_pool.len())]
            } else {
                contacts[j % contacts.len()]
            };
            remaining[author] = remaining[author].saturating_sub(1);
            let mut draft = Draft {
                author,
                posted,
                campaign: true,
                tilt: config.campaign_tilt + tilt_dist.sample(&mut rng),
                comments: Vec::new(),
            };
            let burst = posted + rng.gen_range(0..3600);
            let mut order: Vec<(usize, u64, usize)> = (0..members.len())
                .filter(|&k| remaining[members[k]] > 0)
                .map(|k| (used[k], rng.gen(), k))
                .collect();
            order.sort_unstable();
            for &(_, _, k) in order.iter().take(config.burst_size) {
                let m = members[k];
                used[k] += 1;
                remaining[m] -= 1;
                let at = burst + rng.gen_range(0..config.burst_minutes as i64 * 60);
                draft.comments.push((m, spammer_sentiment(&mut rng, config.like_bias), at));
            }
            for &c in &contacts {
                if !rng.gen_bool(config.contact_presence) {
                    continue;
                }
                let k = 1 + contact_visits.sample(&mut rng) as usize;
                remaining[c] = remaining[c].saturating_sub(k);
                for _ in 0..k {
                    let at = posted + rng.gen_range(0..THREAD_SECONDS);
                    draft.comments.push((c, normal_sentiment(&mut rng, draft.tilt), at));
                }
            }
            drafts.push(draft);
            attract.push(config.campaign_attractiveness * attract_dist.sample(&mut rng));
        }
    }
    let n_campaign = drafts.len();

    // Background posts.
    for r in n_spam..n {
        if remaining[r] == 0 {
            continue;
        }
        let posts = Binomial::new(remaining[r] as u64, config.post_fraction)
            .map_err(|e| cfg_err(&e))?
            .sample(&mut rng) as usize;
        remaining[r] -= posts;
        for _ in 0..posts {
            drafts.push(Draft {
                author: r,
                posted: rng.gen_range(start..=last_post),
                campaign: false,
                tilt: tilt_dist.sample(&mut rng),
                comments: Vec::new(),
            });
            attract.push(attract_dist.sample(&mut rng));
        }
    }
    if drafts.len() == n_campaign {
        return Err(Error::Infeasible("no background articles were generated".into()));
    }

    // Normal discussion: threads of one or more comments on attractive articles.
    // Drive-by accounts instead leave one early comment per visit on the same
    // popular, positively tilted background articles that spammers favour.
    let background: Vec<usize> = (n_campaign..drafts.len()).collect();
    let hot: Vec<f64> = background
        .iter()
        .map(|&a| attract[a].powf(config.camouflage_focus) * (config.camouflage_lean * drafts[a].tilt).exp())
        .collect();
    let pick = WeightedIndex::new(&attract).map_err(|e| cfg_err(&e))?;
    let pick_campaign = WeightedIndex::new(&attract[..n_campaign]).map_err(|e| cfg_err(&e))?;
    let pick_hot = WeightedIndex::new(&hot).map_err(|e| cfg_err(&e))?;
    for r in n_spam..n {
        let drive_by = rng.gen_bool(config.drive_by_share) && budget[r] >= config.drive_by_min_budget;
        let lambda = config.thread_extra_comments * (budget[r] as f64 / config.activity_median).powf(config.chattiness);
        let extra = Poisson::new(lambda.max(1e-9)).map_err(|e| cfg_err(&e))?;
        let mut first = true;
        while remaining[r] > 0 {
            if drive_by {
                let d = &mut drafts[background[pick_hot.sample(&mut rng)]];
                let at = d.posted + rng.gen_range(0..3600);
                let s = normal_sentiment(&mut rng, d.tilt);
                d.comments.push((r, s, at));
                remaining[r] -= 1;
                continue;
            }
            let a = if first && rng.gen_bool(config.campaign_draw) {
                pick_campaign.sample(&mut rng)
            } else {
                pick.sample(&mut rng)
            };
            first = false;
            let k = (1 + extra.sample(&mut rng) as usize).min(remaining[r]);
            remaining[r] -= k;
            let d = &mut drafts[a];
            for _ in 0..k {
                let at = d.posted + rng.gen_range(0..THREAD_SECONDS);
                let s = normal_sentiment(&mut rng, d.tilt);
                d.comments.push((r, s, at));
            }
        }
    }

    // Spammer camouflage: single comments on popular background articles that
    // lean their way.
    let pick_bg = pick_hot;
    for r in 0..n_spam {
        let mut visited: Vec<usize> = Vec::new();
        let mut tries = 0;
        while remaining[r] > 0 {
            let a = background[pick_bg.sample(&mut rng)];
            tries += 1;
            if visited.contains(&a) && tries < 50 * budget[r] {
                continue;
            }
            visited.push(a);
            remaining[r] -= 1;
            let d = &mut drafts[a];
            let at = d.posted + rng.gen_range(0..THREAD_SECONDS);
            d.comments.push((r, spammer_sentiment(&mut rng, config.like_bias), at));
        }
    }

    let boards = ["Gossiping", "HatePolitics", "Stock", "Baseball"];
    let width_a = drafts.len().to_string().len().max(5);
    let to_ts = |s: i64| -> DateTime<Utc> { Utc.timestamp_opt(s, 0).single().expect("in range") };
    // Article ids follow posting time so files read chronologically.
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.sort_by_key(|&i| (drafts[i].posted, i));
    let mut articles = Vec::with_capacity(drafts.len());
    for (idx, &i) in order.iter().enumerate() {
        let d = &drafts[i];
        let board = if d.campaign {
            boards[1]
        } else {
            boards[[0, 2, 3][rng.gen_range(0..3)]]
        };
        let mut article = Article {
            article_id: format!("A{idx:0width_a$}"),
            board: board.to_string(),
            author: ids[d.author].clone(),
            posted_at: to_ts(d.posted),
            comments: d
                .comments
                .iter()
                .map(|&(u, sentiment, at)| Comment {
                    user: ids[u].clone(),
                    sentiment,
                    commented_at: to_ts(at),
                })
                .collect(),
        };
        article.sort_comments();
        articles.push(article);
    }

    let labels = LabelSet::from_spammers(ids[..n_spam].iter().cloned());
    let mut truth: Vec<TruthRecord> = (0..n)
        .map(|r| TruthRecord {
            account: ids[r].clone(),
            label: if r < n_spam { Label::Spammer } else { Label::Normal },
            cell: cell_of[r],
        })
        .collect();
    truth.sort_by(|a, b| a.account.cmp(&b.account));

    Ok(SyntheticForum {
        config: config.clone(),
        articles,
        labels,
        truth,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_preserves_total() {
        let c = apportion(102, &DEFAULT_SPAMMER_DECILE_MASS);
        // Floors sum to 100; the two largest remainders (.48, .36) take the rest.
        assert_eq!(c, vec![25, 19, 10, 6, 6, 9, 12, 7, 6, 2]);
    }

    #[test]
    fn oversized_campaigns_are_infeasible() {
        let cfg = SynthConfig {
            n_accounts: 400,
            campaigns_per_cell: 500,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn invalid_mass_rejected() {
        let cfg = SynthConfig {
            spammer_decile_mass: vec![0.5; 10],
            ..SynthConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
