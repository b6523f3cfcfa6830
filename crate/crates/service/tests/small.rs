mod common;

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use common::{call, engine_config};
use dormant_core::eval::SplitRatios;
use dormant_core::experiment::Benchmark;
use dormant_core::ingest::{Article, Comment, Dataset, LabelSet, Sentiment, Window};
use dormant_core::models::{ModelSpec, TrainConfig};
use dormant_service::{router, Engine, ServeOptions};

fn article(id: usize, author: String, commenters: &[String]) -> Article {
    let at = |s: i64| Utc.timestamp_opt(1_530_403_200 + s, 0).unwrap();
    let mut a = Article {
        article_id: format!("a{id:03}"),
        board: "Gossiping".into(),
        author,
        posted_at: at(id as i64 * 3_600),
        comments: commenters
            .iter()
            .enumerate()
            .map(|(k, u)| Comment {
                user: u.clone(),
                sentiment: [Sentiment::Like, Sentiment::Neutral, Sentiment::Dislike][k % 3],
                commented_at: at(id as i64 * 3_600 + 60 * k as i64 + 60),
            })
            .collect(),
    };
    a.sort_comments();
    a
}

#[tokio::test]
async fn isolated_account_has_no_neighbors() {
    let users: Vec<String> = (0..40).map(|i| format!("u{i:02}")).collect();
    let mut articles: Vec<Article> = (0..60)
        .map(|a| {
            let commenters: Vec<String> = (1..4).map(|k| users[(a * 7 + k * 5) % 40].clone()).collect();
            article(a, users[a % 40].clone(), &commenters)
        })
        .collect();
    articles.push(article(60, "loner".into(), &[]));
    let labels = LabelSet::from_spammers(users.iter().step_by(5).cloned());
    let window = Window::covering(&articles).unwrap();
    let bench = Benchmark::new(Dataset::from_articles(articles, labels, window).unwrap()).unwrap();
    let split = bench
        .split(
            SplitRatios {
                train: 0.5,
                val: 0.25,
                test: 0.25,
            },
            1,
        )
        .unwrap();
    let (bundle, _) = bench
        .train_bundle("logreg".parse::<ModelSpec>().unwrap(), &TrainConfig::default(), true, &split)
        .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let engine = Arc::new(Engine::open(Arc::new(bench), bundle, engine_config(dir.path())).unwrap());
    let app = router(engine, &ServeOptions::default());
    let (status, detail) = call(&app, "GET", "/api/accounts/loner", None).await;
    assert_eq!(status, 200);
    assert_eq!(detail["neighbors"], serde_json::json!([]));
    assert_eq!(detail["features"]["suspect_value"], 0.0);

    let (_, other) = call(&app, "GET", "/api/accounts/u01", None).await;
    assert!(!other["neighbors"].as_array().unwrap().is_empty());
}
