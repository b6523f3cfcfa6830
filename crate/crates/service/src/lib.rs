//! Moderation backend: serves the ranked suspect queue, records human
//! verdicts, and republishes scores after the spammer set changes.

pub mod engine;
pub mod verdicts;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dormant_core::eval::{ranking_metrics, RankedEntry, RankedList};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub use engine::{Engine, EngineConfig, RecomputeMode, Snapshot};
pub use verdicts::{Status, Verdict, VerdictLog, VerdictRecord};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] dormant_core::Error),
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("corrupt service state: {0}")]
    Corrupt(String),
    #[error("no snapshot has been published yet")]
    NotReady,
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("missing or wrong API token")]
    Unauthorized,
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownAccount(_) => StatusCode::NOT_FOUND,
            ServiceError::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Required as `Authorization: Bearer <token>` on every `/api` route when set.
    pub token: Option<String>,
    /// Directory served at `/` (the triage UI build).
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    token: Option<Arc<str>>,
}

pub fn router(engine: Arc<Engine>, options: &ServeOptions) -> Router {
    let state = AppState {
        engine,
        token: options.token.as_deref().map(Arc::from),
    };
    let api = Router::new()
        .route("/api/ranking", get(ranking))
        .route("/api/accounts/{id}", get(account))
        .route("/api/verdicts", post(post_verdict))
        .route("/api/recompute", post(recompute))
        .route("/api/metrics", get(metrics))
        .route("/api/snapshot", get(snapshot))
        .route_layer(middleware::from_fn_with_state(state.clone(), check_token))
        .with_state(state);
    match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, options: ServeOptions, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine, &options))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn check_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

fn current(engine: &Engine) -> Result<Arc<Snapshot>> {
    engine.current().ok_or(ServiceError::NotReady)
}

fn group_label(g: u8) -> String {
    format!("G{g}")
}

#[derive(Debug, Deserialize)]
struct RankingQuery {
    limit: Option<usize>,
    group: Option<String>,
    verdict: Option<Status>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankingEntry {
    pub rank: u32,
    pub account: String,
    pub score: f64,
    pub suspect_value: f64,
    pub group: String,
    pub verdict: Status,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RankingPage {
    pub version: u64,
    pub stale: bool,
    pub total: usize,
    pub entries: Vec<RankingEntry>,
}

fn parse_group(raw: &str) -> Result<u8> {
    raw.strip_prefix('G')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|g| (1..=10).contains(g))
        .ok_or_else(|| ServiceError::Invalid(format!("group must be G1..G10, got {raw:?}")))
}

async fn ranking(State(state): State<AppState>, query: Result<Query<RankingQuery>, axum::extract::rejection::QueryRejection>) -> Result<Json<RankingPage>> {
    let Query(q) = query.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let engine = &state.engine;
    let snap = current(engine)?;
    let group = q.group.as_deref().map(parse_group).transpose()?;
    let verdicts = engine.verdicts();
    let bench = &engine.bench;
    let status = |a: &str| verdicts.get(a).copied().unwrap_or(Status::Pending);
    let matching: Vec<usize> = snap
        .order()
        .iter()
        .map(|&i| i as usize)
        .filter(|&i| group.is_none_or(|g| bench.groups()[i] == g))
        .filter(|&i| q.verdict.is_none_or(|v| status(&bench.index.accounts()[i]) == v))
        .collect();
    let limit = q.limit.unwrap_or(100);
    let entries = matching
        .iter()
        .take(limit)
        .map(|&i| {
            let account = &bench.index.accounts()[i];
            RankingEntry {
                rank: snap.rank(i),
                account: account.clone(),
                score: snap.scores[i],
                suspect_value: snap.suspect[i],
                group: group_label(bench.groups()[i]),
                verdict: status(account),
            }
        })
        .collect();
    Ok(Json(RankingPage {
        version: snap.version,
        stale: engine.log_position() > snap.log_position,
        total: matching.len(),
        entries,
    }))
}

async fn account(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>> {
    let engine = &state.engine;
    let snap = current(engine)?;
    let bench = &engine.bench;
    let i = bench.index.position(&id).ok_or_else(|| ServiceError::UnknownAccount(id.clone()))?;
    let verdicts = engine.verdicts();
    let status = |a: &str| verdicts.get(a).copied().unwrap_or(Status::Pending);
    let base = bench.index.base_features(i).unwrap_or_default();
    let neighbors: Vec<serde_json::Value> = bench
        .graph
        .neighbors(i)
        .map(|(j, count)| {
            let a = &bench.index.accounts()[j];
            json!({ "account": a, "co_appearances": count, "verdict": status(a) })
        })
        .collect();
    let history: Vec<serde_json::Value> = engine
        .history()
        .iter()
        .filter(|s| s.version <= snap.version)
        .map(|s| json!({ "version": s.version, "score": s.scores[i], "suspect_value": s.suspect[i] }))
        .collect();
    Ok(Json(json!({
        "version": snap.version,
        "account": id,
        "verdict": status(&id),
        "score": snap.scores[i],
        "rank": snap.rank(i),
        "features": {
            "avg_popularity": base.avg_popularity,
            "avg_sentiment": base.avg_sentiment,
            "active_period": base.active_period,
            "suspect_value": snap.suspect[i],
        },
        "activeness": {
            "value": bench.activeness.values[i],
            "per_day": bench.activeness.per_day[i],
            "group": group_label(bench.groups()[i]),
        },
        "neighbors": neighbors,
        "history": history,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    user: String,
    verdict: Verdict,
    #[serde(default)]
    actor: Option<String>,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Invalid(e.to_string()))
}

async fn post_verdict(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>> {
    let req: VerdictBody = parse_body(&body)?;
    let engine = state.engine.clone();
    let actor = req.actor.unwrap_or_else(|| "anonymous".to_string());
    let (position, appended) = tokio::task::spawn_blocking({
        let user = req.user.clone();
        move || engine.post_verdict(&user, req.verdict, &actor)
    })
    .await
    .map_err(|e| ServiceError::Corrupt(e.to_string()))??;
    Ok(Json(json!({
        "user": req.user,
        "verdict": req.verdict,
        "position": position,
        "appended": appended,
        "status": state.engine.status(&req.user),
    })))
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RecomputeBody {
    #[serde(default)]
    mode: RecomputeMode,
}

async fn recompute(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>> {
    let req: RecomputeBody = if body.iter().all(u8::is_ascii_whitespace) {
        RecomputeBody::default()
    } else {
        parse_body(&body)?
    };
    let engine = state.engine.clone();
    let snap = tokio::task::spawn_blocking(move || engine.recompute(req.mode))
        .await
        .map_err(|e| ServiceError::Corrupt(e.to_string()))??;
    Ok(Json(json!({
        "version": snap.version,
        "mode": snap.mode,
        "seed": snap.seed,
        "log_position": snap.log_position,
        "checkpoint": snap.checkpoint,
    })))
}

async fn metrics(State(state): State<AppState>) -> Result<Json<serde_json::Value>> {
    let engine = &state.engine;
    let snap = current(engine)?;
    let verdicts = engine.verdicts();
    let accounts = engine.bench.index.accounts();
    let ranked = RankedList::new(
        (0..accounts.len())
            .map(|i| RankedEntry {
                account: accounts[i].clone(),
                score: snap.scores[i],
                label: match verdicts.get(&accounts[i]) {
                    Some(Status::Confirmed) => Some(true),
                    Some(Status::Rejected) => Some(false),
                    _ => None,
                },
                group: None,
            })
            .collect(),
    );
    let confirmed = verdicts.values().filter(|&&s| s == Status::Confirmed).count();
    let rows: Vec<serde_json::Value> = engine
        .config
        .k_grid
        .iter()
        .map(|&k| {
            let k_eff = k.min(ranked.len());
            match ranking_metrics(&ranked, k_eff) {
                Ok(m) => json!({ "k": k, "precision": m.precision, "recall": m.recall, "f1": m.f1, "hits": m.hits }),
                Err(e) => json!({ "k": k, "precision": null, "recall": null, "f1": null, "note": e.to_string() }),
            }
        })
        .collect();
    Ok(Json(json!({
        "version": snap.version,
        "confirmed": confirmed,
        "rejected": verdicts.values().filter(|&&s| s == Status::Rejected).count(),
        "metrics": rows,
    })))
}

async fn snapshot(State(state): State<AppState>) -> Result<Json<serde_json::Value>> {
    let engine = &state.engine;
    let snap = current(engine)?;
    let model = engine.model();
    Ok(Json(json!({
        "version": snap.version,
        "mode": snap.mode,
        "seed": snap.seed,
        "stale": engine.log_position() > snap.log_position,
        "log_position": snap.log_position,
        "checkpoint": snap.checkpoint,
        "spammer_set_size": snap.spammer_set.len(),
        "accounts": snap.scores.len(),
        "config": {
            "model": model.classifier.spec,
            "include_social": model.include_social,
            "k_grid": engine.config.k_grid,
            "train": model.classifier.config,
        },
    })))
}
