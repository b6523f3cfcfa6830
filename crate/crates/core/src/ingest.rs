//! Activity-log and label parsing, dataset validation, and article pruning.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::Error;

pub const DATASET_FORMAT: &str = "dormant-dataset";
pub const DATASET_SCHEMA_VERSION: u32 = 1;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

/// UTC timestamps serialized as `YYYY-MM-DDTHH:MM:SSZ`.
pub mod timestamp {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.format(TIMESTAMP_FORMAT).to_string()
    }

    pub fn parse(raw: &str) -> Result<DateTime<Utc>, String> {
        NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
            .map(|naive| naive.and_utc())
            .map_err(|e| format!("bad timestamp {raw:?}: {e}"))
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Like,
    Neutral,
    Dislike,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comment {
    pub user: String,
    pub sentiment: Sentiment,
    #[serde(with = "timestamp")]
    pub commented_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Article {
    pub article_id: String,
    pub board: String,
    pub author: String,
    #[serde(with = "timestamp")]
    pub posted_at: DateTime<Utc>,
    pub comments: Vec<Comment>,
}

impl Article {
    /// Sorts comments by `(commented_at, user)`. The sort is stable so one user's
    /// comments at the same second keep their input order.
    pub fn sort_comments(&mut self) {
        self.comments
            .sort_by(|a, b| (a.commented_at, &a.user).cmp(&(b.commented_at, &b.user)));
    }

    pub fn is_chronological(&self) -> bool {
        self.comments
            .windows(2)
            .all(|w| (w[0].commented_at, &w[0].user) <= (w[1].commented_at, &w[1].user))
    }

    /// Author plus every distinct commenter.
    pub fn participants(&self) -> BTreeSet<&str> {
        let mut out: BTreeSet<&str> = self.comments.iter().map(|c| c.user.as_str()).collect();
        out.insert(self.author.as_str());
        out
    }
}

/// Article-level counts taken before any commentor cap is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleStats {
    pub comments: u32,
    pub likes: u32,
    pub dislikes: u32,
}

impl ArticleStats {
    pub fn of(article: &Article) -> Self {
        let mut stats = Self {
            comments: article.comments.len() as u32,
            likes: 0,
            dislikes: 0,
        };
        for c in &article.comments {
            match c.sentiment {
                Sentiment::Like => stats.likes += 1,
                Sentiment::Dislike => stats.dislikes += 1,
                Sentiment::Neutral => {}
            }
        }
        stats
    }

    pub fn net_sentiment(&self) -> i64 {
        self.likes as i64 - self.dislikes as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Spammer,
    Normal,
}

/// Account labels. Accounts absent from the map are normal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: BTreeMap<String, Label>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label; re-inserting the same label is a no-op, a different one is an error.
    pub fn insert(&mut self, user: impl Into<String>, label: Label) -> Result<(), Error> {
        let user = user.into();
        match self.labels.get(&user) {
            Some(existing) if *existing != label => Err(Error::ConflictingLabel(user)),
            Some(_) => Ok(()),
            None => {
                self.labels.insert(user, label);
                Ok(())
            }
        }
    }

    pub fn from_spammers<I, S>(spammers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            labels: spammers
                .into_iter()
                .map(|s| (s.into(), Label::Spammer))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, user: &str) -> Label {
        self.labels.get(user).copied().unwrap_or(Label::Normal)
    }

    pub fn is_spammer(&self, user: &str) -> bool {
        self.label(user) == Label::Spammer
    }

    pub fn spammers(&self) -> impl Iterator<Item = &str> {
        self.labels
            .iter()
            .filter(|(_, l)| **l == Label::Spammer)
            .map(|(u, _)| u.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Label)> {
        self.labels.iter().map(|(u, l)| (u.as_str(), *l))
    }

    /// Keeps only entries for accounts in `accounts`.
    pub fn restricted_to(&self, accounts: &BTreeSet<String>) -> Self {
        Self {
            labels: self
                .labels
                .iter()
                .filter(|(u, _)| accounts.contains(*u))
                .map(|(u, l)| (u.clone(), *l))
                .collect(),
        }
    }
}

/// Inclusive range of UTC calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, Error> {
        if start >= end {
            return Err(Error::InvalidWindow { start, end });
        }
        Ok(Self { start, end })
    }

    /// Number of days covered, counting both ends.
    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days() + 1
    }

    pub fn contains(&self, ts: &DateTime<Utc>) -> bool {
        let day = ts.date_naive();
        day >= self.start && day <= self.end
    }

    /// Smallest window covering every timestamp in `articles`.
    pub fn covering(articles: &[Article]) -> Option<Self> {
        let days = articles.iter().flat_map(|a| {
            std::iter::once(a.posted_at.date_naive())
                .chain(a.comments.iter().map(|c| c.commented_at.date_naive()))
        });
        let (mut lo, mut hi) = (None::<NaiveDate>, None::<NaiveDate>);
        for d in days {
            lo = Some(lo.map_or(d, |l| l.min(d)));
            hi = Some(hi.map_or(d, |h| h.max(d)));
        }
        let (lo, hi) = (lo?, hi?);
        let hi = if hi > lo { hi } else { lo.succ_opt()? };
        Some(Self { start: lo, end: hi })
    }
}

/// An article as kept in a dataset: retained comments plus pre-cap counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetArticle {
    pub article: Article,
    pub raw: ArticleStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    articles: Vec<DatasetArticle>,
    accounts: BTreeSet<String>,
    labels: LabelSet,
    window: Window,
}

impl Dataset {
    /// Wraps parsed (unpruned) articles; raw counts are taken from the articles themselves.
    pub fn from_articles(articles: Vec<Article>, labels: LabelSet, window: Window) -> Result<Self, Error> {
        let articles = articles
            .into_iter()
            .map(|article| DatasetArticle {
                raw: ArticleStats::of(&article),
                article,
            })
            .collect();
        Self::new(articles, labels, window)
    }

    pub fn new(mut articles: Vec<DatasetArticle>, labels: LabelSet, window: Window) -> Result<Self, Error> {
        if window.start >= window.end {
            return Err(Error::InvalidWindow {
                start: window.start,
                end: window.end,
            });
        }
        let mut seen = HashSet::new();
        let mut accounts = BTreeSet::new();
        for a in &mut articles {
            if !seen.insert(a.article.article_id.clone()) {
                return Err(Error::DuplicateArticle(a.article.article_id.clone()));
            }
            if !a.article.is_chronological() {
                a.article.sort_comments();
            }
            accounts.insert(a.article.author.clone());
            accounts.extend(a.article.comments.iter().map(|c| c.user.clone()));
        }
        Ok(Self {
            articles,
            accounts,
            labels,
            window,
        })
    }

    pub fn articles(&self) -> &[DatasetArticle] {
        &self.articles
    }

    pub fn accounts(&self) -> &BTreeSet<String> {
        &self.accounts
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn spammer_count(&self) -> usize {
        self.accounts.iter().filter(|a| self.labels.is_spammer(a)).count()
    }

    /// Replaces the label set (used when serving with a restricted set of known labels).
    pub fn with_labels(mut self, labels: LabelSet) -> Self {
        self.labels = labels;
        self
    }

    /// Writes the versioned container: a header line followed by the JSON body.
    pub fn write_container<W: Write>(&self, mut writer: W) -> Result<(), Error> {
        let header = ContainerHeader {
            format: DATASET_FORMAT.to_string(),
            schema_version: DATASET_SCHEMA_VERSION,
        };
        serde_json::to_writer(&mut writer, &header)?;
        writer.write_all(b"\n")?;
        serde_json::to_writer(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_container<R: BufRead>(mut reader: R) -> Result<Self, Error> {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: ContainerHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Container(format!("bad header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(Error::Container(format!("unexpected format tag {:?}", header.format)));
        }
        if header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Container(format!(
                "unsupported schema version {}",
                header.schema_version
            )));
        }
        let body: Dataset = serde_json::from_reader(reader)?;
        Dataset::new(body.articles, body.labels, body.window)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    schema_version: u32,
}

/// A line that failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// When set, every timestamp must fall inside the window.
    pub window: Option<Window>,
    /// Turn the first rejected line into a fatal error.
    pub strict: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedArticles {
    pub articles: Vec<Article>,
    pub rejected: Vec<RejectedLine>,
}

fn validate_article(article: &Article, window: Option<&Window>) -> Result<(), String> {
    if article.article_id.is_empty() {
        return Err("empty article_id".into());
    }
    if article.author.is_empty() {
        return Err("empty author".into());
    }
    if let Some(w) = window {
        if !w.contains(&article.posted_at) {
            return Err(format!(
                "posted_at {} outside window",
                timestamp::format(&article.posted_at)
            ));
        }
    }
    for c in &article.comments {
        if c.user.is_empty() {
            return Err("comment with empty user".into());
        }
        if let Some(w) = window {
            if !w.contains(&c.commented_at) {
                return Err(format!(
                    "comment at {} outside window",
                    timestamp::format(&c.commented_at)
                ));
            }
        }
    }
    Ok(())
}

/// Parses one article record per non-empty line.
pub fn parse_articles<R: BufRead>(reader: R, options: &ParseOptions) -> Result<ParsedArticles, Error> {
    let mut out = ParsedArticles::default();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Article>(&line)
            .map_err(|e| e.to_string())
            .and_then(|a| validate_article(&a, options.window.as_ref()).map(|_| a));
        match parsed {
            Ok(mut article) => {
                if !ids.insert(article.article_id.clone()) {
                    return Err(Error::DuplicateArticle(article.article_id));
                }
                article.sort_comments();
                out.articles.push(article);
            }
            Err(reason) if options.strict => {
                return Err(Error::Rejected {
                    line: line_no,
                    reason,
                })
            }
            Err(reason) => out.rejected.push(RejectedLine {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    user: String,
    label: Label,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLabels {
    pub labels: LabelSet,
    pub rejected: Vec<RejectedLine>,
}

/// Parses `{"user": .., "label": "spammer"|"normal"}` records.
pub fn parse_labels<R: BufRead>(reader: R, strict: bool) -> Result<ParsedLabels, Error> {
    let mut out = ParsedLabels::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LabelRecord>(&line) {
            Ok(rec) if rec.user.is_empty() => {
                if strict {
                    return Err(Error::Rejected {
                        line: i + 1,
                        reason: "empty user".into(),
                    });
                }
                out.rejected.push(RejectedLine {
                    line: i + 1,
                    reason: "empty user".into(),
                })
            }
            Ok(rec) => out.labels.insert(rec.user, rec.label)?,
            Err(e) if strict => {
                return Err(Error::Rejected {
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
            Err(e) => out.rejected.push(RejectedLine {
                line: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn write_articles<'a, W, I>(mut writer: W, articles: I) -> Result<(), Error>
where
    W: Write,
    I: IntoIterator<Item = &'a Article>,
{
    for a in articles {
        serde_json::to_writer(&mut writer, a)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(mut writer: W, labels: &LabelSet) -> Result<(), Error> {
    for (user, label) in labels.iter() {
        let rec = LabelRecord {
            user: user.to_string(),
            label,
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub min_comments: usize,
    pub min_spammers: usize,
    pub cap: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            min_comments: 90,
            min_spammers: 3,
            cap: 80,
        }
    }
}

impl PruneConfig {
    /// Thresholds for the few-thousand-account synthetic benchmark.
    pub fn small_benchmark() -> Self {
        Self {
            min_comments: 15,
            min_spammers: 2,
            cap: 40,
        }
    }
}

/// Commentors of an article (author excluded) ordered by `(first comment, id)`.
fn commentors_by_first_comment(article: &Article) -> Vec<&str> {
    let mut first: HashMap<&str, DateTime<Utc>> = HashMap::new();
    for c in &article.comments {
        if c.user == article.author {
            continue;
        }
        first
            .entry(c.user.as_str())
            .and_modify(|t| *t = (*t).min(c.commented_at))
            .or_insert(c.commented_at);
    }
    let mut order: Vec<(DateTime<Utc>, &str)> = first.into_iter().map(|(u, t)| (t, u)).collect();
    order.sort();
    order.into_iter().map(|(_, u)| u).collect()
}

/// Commentors kept for one article under the cap rule.
pub fn select_commentors<'a>(article: &'a Article, labels: &LabelSet, cap: usize) -> BTreeSet<&'a str> {
    let ordered = commentors_by_first_comment(article);
    let (spammers, regulars): (Vec<&str>, Vec<&str>) =
        ordered.into_iter().partition(|u| labels.is_spammer(u));
    if spammers.len() >= cap {
        spammers.into_iter().take(cap).collect()
    } else {
        let room = cap - spammers.len();
        spammers
            .into_iter()
            .chain(regulars.into_iter().take(room))
            .collect()
    }
}

/// Applies the engagement, spammer-presence and commentor-cap rules.
pub fn prune_dataset(
    articles: &[Article],
    labels: &LabelSet,
    config: &PruneConfig,
    window: Window,
) -> Result<Dataset, Error> {
    if config.cap < config.min_spammers {
        return Err(Error::Config(format!(
            "commentor cap {} is below the spammer minimum {}",
            config.cap, config.min_spammers
        )));
    }
    let mut kept = Vec::new();
    for article in articles {
        if article.comments.len() < config.min_comments {
            continue;
        }
        let spammer_participants = article
            .participants()
            .into_iter()
            .filter(|u| labels.is_spammer(u))
            .count();
        if spammer_participants < config.min_spammers {
            continue;
        }
        let keep = select_commentors(article, labels, config.cap);
        let mut retained = article.clone();
        retained
            .comments
            .retain(|c| c.user == article.author || keep.contains(c.user.as_str()));
        retained.sort_comments();
        kept.push(DatasetArticle {
            raw: ArticleStats::of(article),
            article: retained,
        });
    }
    let mut dataset = Dataset::new(kept, LabelSet::new(), window)?;
    dataset.labels = labels.restricted_to(&dataset.accounts);
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(sec: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_530_403_200 + sec, 0).unwrap()
    }

    fn window() -> Window {
        Window::new(
            NaiveDate::from_ymd_opt(2018, 7, 1).unwrap(),
            NaiveDate::from_ymd_opt(2019, 12, 29).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn parses_single_record_and_sorts_comments() {
        let line = r#"{"article_id":"a1","board":"Gossiping","author":"u0","posted_at":"2018-07-01T00:00:00Z","comments":[{"user":"u2","sentiment":"dislike","commented_at":"2018-07-01T00:05:00Z"},{"user":"u1","sentiment":"like","commented_at":"2018-07-01T00:01:00Z"}]}"#;
        let parsed = parse_articles(line.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(parsed.articles.len(), 1);
        let users: Vec<_> = parsed.articles[0].comments.iter().map(|c| c.user.as_str()).collect();
        assert_eq!(users, ["u1", "u2"]);
        assert!(parsed.rejected.is_empty());
    }

    #[test]
    fn empty_stream_gives_no_articles() {
        let parsed = parse_articles("".as_bytes(), &ParseOptions::default()).unwrap();
        assert!(parsed.articles.is_empty());
    }

    #[test]
    fn bad_sentiment_rejected_with_line_number() {
        let input = concat!(
            r#"{"article_id":"a1","board":"b","author":"u0","posted_at":"2018-07-01T00:00:00Z","comments":[]}"#,
            "\n",
            r#"{"article_id":"a2","board":"b","author":"u0","posted_at":"2018-07-01T00:00:00Z","comments":[{"user":"u1","sentiment":"love","commented_at":"2018-07-01T00:01:00Z"}]}"#,
            "\n",
            r#"{"article_id":"a3","board":"b","author":"u0","posted_at":"2018-07-01T00:00:00Z","comments":[]}"#,
        );
        let parsed = parse_articles(input.as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(parsed.articles.len(), 2);
        assert_eq!(parsed.rejected.len(), 1);
        assert_eq!(parsed.rejected[0].line, 2);

        let strict = ParseOptions {
            strict: true,
            ..Default::default()
        };
        assert!(matches!(
            parse_articles(input.as_bytes(), &strict),
            Err(Error::Rejected { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_article_id_is_fatal() {
        let rec = r#"{"article_id":"a1","board":"b","author":"u0","posted_at":"2018-07-01T00:00:00Z","comments":[]}"#;
        let input = format!("{rec}\n{rec}\n");
        assert!(matches!(
            parse_articles(input.as_bytes(), &ParseOptions::default()),
            Err(Error::DuplicateArticle(_))
        ));
    }

    #[test]
    fn out_of_window_timestamp_rejected() {
        let rec = r#"{"article_id":"a1","board":"b","author":"u0","posted_at":"2017-01-01T00:00:00Z","comments":[]}"#;
        let opts = ParseOptions {
            window: Some(window()),
            strict: false,
        };
        let parsed = parse_articles(rec.as_bytes(), &opts).unwrap();
        assert_eq!(parsed.rejected.len(), 1);
    }

    #[test]
    fn labels_dedup_and_conflict() {
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

    fn article(id: &str, author: &str, commenters: &[&str]) -> Article {
        Article {
            article_id: id.into(),
            board: "b".into(),
            author: author.into(),
            posted_at: ts(0),
            comments: commenters
                .iter()
                .enumerate()
                .map(|(i, u)| Comment {
                    user: u.to_string(),
                    sentiment: Sentiment::Neutral,
                    commented_at: ts(10 + i as i64),
                })
                .collect(),
        }
    }

    #[test]
    fn cap_below_min_spammers_is_config_error() {
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
    fn author_exempt_from_cap_but_counted_for_spammers() {
        let commenters: Vec<String> = (0..10).map(|i| format!("c{i:02}")).collect();
        let refs: Vec<&str> = commenters.iter().map(String::as_str).collect();
        let a = article("a", "boss", &refs);
        let labels = LabelSet::from_spammers(["boss", "c09"]);
        let cfg = PruneConfig {
            min_comments: 10,
            min_spammers: 2,
            cap: 3,
        };
        let ds = prune_dataset(&[a], &labels, &cfg, window()).unwrap();
        let kept = &ds.articles()[0].article;
        let users: BTreeSet<_> = kept.comments.iter().map(|c| c.user.as_str()).collect();
        assert_eq!(users, BTreeSet::from(["c00", "c01", "c09"]));
        assert!(ds.accounts().contains("boss"));
        assert_eq!(ds.articles()[0].raw.comments, 10);
    }

    #[test]
    fn spammer_overflow_keeps_earliest_spammers_only() {
        let commenters = ["s1", "n1", "s2", "s3", "n2"];
        let a = article("a", "n0", &commenters);
        let labels = LabelSet::from_spammers(["s1", "s2", "s3"]);
        let cfg = PruneConfig {
            min_comments: 5,
            min_spammers: 2,
            cap: 2,
        };
        let ds = prune_dataset(&[a], &labels, &cfg, window()).unwrap();
        let users: BTreeSet<_> = ds.articles()[0]
            .article
            .comments
            .iter()
            .map(|c| c.user.as_str())
            .collect();
        assert_eq!(users, BTreeSet::from(["s1", "s2"]));
        assert!(!ds.accounts().contains("n1"));
    }

    #[test]
    fn repeat_commentor_counts_once_and_keeps_all_comments() {
        let a = article("a", "x", &["u1", "u1", "u2", "u3", "u1"]);
        let labels = LabelSet::from_spammers(["x", "u3"]);
        let cfg = PruneConfig {
            min_comments: 5,
            min_spammers: 2,
            cap: 2,
        };
        let ds = prune_dataset(&[a], &labels, &cfg, window()).unwrap();
        let kept: Vec<_> = ds.articles()[0]
            .article
            .comments
            .iter()
            .map(|c| c.user.as_str())
            .collect();
        assert_eq!(kept, ["u1", "u1", "u3", "u1"]);
    }

    #[test]
    fn container_round_trip() {
        let a = article("a", "x", &["u1", "u2"]);
        let ds = Dataset::from_articles(vec![a], LabelSet::from_spammers(["u1"]), window()).unwrap();
        let mut buf = Vec::new();
        ds.write_container(&mut buf).unwrap();
        let back = Dataset::read_container(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert!(std::str::from_utf8(&buf).unwrap().starts_with(r#"{"format":"dormant-dataset","schema_version":1}"#));
    }

    #[test]
    fn window_days_inclusive() {
        assert_eq!(window().days(), 547);
    }
}
