#![allow(dead_code)]

use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use dormant_core::ingest::{Article, Comment, Dataset, LabelSet, Sentiment, Window};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn ts(sec: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_530_403_200 + sec, 0).unwrap()
}

pub fn window() -> Window {
    Window::new(
        NaiveDate::from_ymd_opt(2018, 7, 1).unwrap(),
        NaiveDate::from_ymd_opt(2019, 12, 29).unwrap(),
    )
    .unwrap()
}

pub fn user(i: usize) -> String {
    format!("u{i:03}")
}

pub fn comment(u: &str, sentiment: Sentiment, sec: i64) -> Comment {
    Comment {
        user: u.to_string(),
        sentiment,
        commented_at: ts(sec),
    }
}

pub fn article(id: &str, author: &str, comments: Vec<Comment>) -> Article {
    let mut a = Article {
        article_id: id.to_string(),
        board: "Gossiping".into(),
        author: author.to_string(),
        posted_at: ts(0),
        comments,
    };
    a.sort_comments();
    a
}

fn sentiment<R: Rng>(rng: &mut R) -> Sentiment {
    *[Sentiment::Like, Sentiment::Neutral, Sentiment::Dislike].choose(rng).unwrap()
}

/// Random articles over `n_accounts` accounts. Timestamps spread over ~60 days so
/// active periods vary.
pub fn random_articles<R: Rng>(rng: &mut R, n_accounts: usize, n_articles: usize, max_comments: usize) -> Vec<Article> {
    (0..n_articles)
        .map(|a| {
            let author = user(rng.gen_range(0..n_accounts));
            let k = rng.gen_range(0..=max_comments);
            let comments = (0..k)
                .map(|_| {
                    let u = user(rng.gen_range(0..n_accounts));
                    comment(&u, sentiment(rng), rng.gen_range(0..60 * 86_400))
                })
                .collect();
            let mut art = article(&format!("a{a:03}"), &author, comments);
            art.posted_at = ts(rng.gen_range(0..60 * 86_400));
            art
        })
        .collect()
}

pub fn random_labels<R: Rng>(rng: &mut R, n_accounts: usize, p: f64) -> LabelSet {
    LabelSet::from_spammers((0..n_accounts).filter(|_| rng.gen_bool(p)).map(user))
}

pub fn dataset(articles: Vec<Article>, labels: LabelSet) -> Dataset {
    Dataset::from_articles(articles, labels, window()).unwrap()
}
