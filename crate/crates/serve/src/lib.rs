//! HTTP boundary between a running active-labeling loop and a human
//! annotator.
//!
//! The loop runs on its own thread. When it needs labels it publishes a
//! [`PendingBatch`] and blocks; `POST /v1/labels` validates a complete
//! submission, updates the snapshot and hands the decisions back. Readers
//! only ever see snapshots, so `GET` handlers never wait on training.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use ard_core::active::{
    read_events, replay, ActiveSession, Annotation, Annotator, Decision, OracleAnnotator, Query,
    RoundRecord,
};
use ard_core::config::ExperimentConfig;
use ard_core::data::{Instance, Span};
use ard_core::experiment::{run_seed_with, seed_dir, ExperimentError, LoopHooks, SeedRun};
use ard_core::metrics::MetricReport;

pub const DEFAULT_BIND: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("invalid address: {0}")]
    Address(String),
    #[error("refusing to start: {path}: {message}")]
    BadLog { path: PathBuf, message: String },
    #[error("{0}")]
    Experiment(#[from] ExperimentError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
    #[error("loop thread ended without a result")]
    LoopLost,
}

/// Bind address from flags, then `ARD_BIND` / `ARD_PORT`, then defaults.
pub fn resolve_addr(
    bind: Option<&str>,
    port: Option<u16>,
    env: impl Fn(&str) -> Option<String>,
) -> Result<SocketAddr, ServeError> {
    let host = bind
        .map(str::to_string)
        .or_else(|| env("ARD_BIND"))
        .unwrap_or_else(|| DEFAULT_BIND.into());
    let port = match port {
        Some(p) => p,
        None => match env("ARD_PORT") {
            Some(p) => p
                .trim()
                .parse()
                .map_err(|_| ServeError::Address(format!("ARD_PORT={p}")))?,
            None => DEFAULT_PORT,
        },
    };
    let ip: IpAddr = host
        .trim()
        .parse()
        .map_err(|_| ServeError::Address(format!("bind address {host:?}")))?;
    Ok(SocketAddr::new(ip, port))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub round: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub label_names: Vec<String>,
    /// Mean discriminator confidence on the unlabeled pool at the last
    /// selection.
    pub mean_confidence: Option<f64>,
    pub pending_batch: Option<String>,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub head_span: Span,
    pub tail_span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub head_span: Span,
    pub tail_span: Span,
    pub disc_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingBatch {
    pub batch_id: String,
    pub round: usize,
    /// Most confident first, ties by id.
    pub items: Vec<BatchItem>,
    pub existing_labels: BTreeMap<usize, String>,
    pub exemplars: BTreeMap<usize, Vec<Exemplar>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Assign(usize),
    Create { surface_name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDecision {
    pub instance_id: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub batch_id: String,
    pub decisions: Vec<ItemDecision>,
}

#[derive(Default)]
struct Inner {
    summary: Option<SessionSummary>,
    pending: Option<PendingBatch>,
    /// Rounds 1.. in order; round 0 is the seminal set and is not reported.
    progress: Vec<RoundRecord>,
    exemplars: BTreeMap<usize, Vec<Exemplar>>,
    submit: Option<mpsc::Sender<HashMap<String, Decision>>>,
    applied: HashSet<String>,
    /// Order in which the loop applies the pending batch.
    query_order: Vec<String>,
}

/// State shared by the handlers and the loop thread.
pub struct Shared {
    inner: Mutex<Inner>,
    max_exemplars: usize,
}

impl Shared {
    fn new(
        max_exemplars: usize,
        submit: Option<mpsc::Sender<HashMap<String, Decision>>>,
    ) -> Arc<Self> {
        Arc::new(Shared {
            inner: Mutex::new(Inner {
                submit,
                ..Inner::default()
            }),
            max_exemplars,
        })
    }

    /// State with no session behind it: every endpoint reports "nothing yet".
    pub fn empty() -> Arc<Self> {
        Self::new(0, None)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn summary(&self) -> Option<SessionSummary> {
        self.lock().summary.clone()
    }

    pub fn pending(&self) -> Option<PendingBatch> {
        self.lock().pending.clone()
    }

    pub fn progress(&self) -> Vec<RoundRecord> {
        self.lock().progress.clone()
    }

    /// Stops accepting submissions. A loop waiting for labels gives up.
    pub fn close(&self) {
        let mut g = self.lock();
        g.submit = None;
        g.pending = None;
        if let Some(s) = g.summary.as_mut() {
            s.pending_batch = None;
        }
    }

    fn refresh(
        &self,
        session: &ActiveSession,
        latest: Option<(&RoundRecord, Option<&MetricReport>)>,
    ) {
        let mut g = self.lock();
        let pool: HashMap<&str, &Instance> = session
            .pool()
            .instances()
            .iter()
            .map(|i| (i.id.as_str(), i))
            .collect();
        let mut by_label: BTreeMap<usize, Vec<Exemplar>> = BTreeMap::new();
        for (id, label) in session.labeled() {
            let list = by_label.entry(label).or_default();
            if list.len() < self.max_exemplars {
                if let Some(inst) = pool.get(id.as_str()) {
                    list.push(Exemplar {
                        instance_id: inst.id.clone(),
                        tokens: inst.tokens.clone(),
                        head_span: inst.head_span,
                        tail_span: inst.tail_span,
                    });
                }
            }
        }
        g.exemplars = by_label;
        if let Some((rec, metrics)) = latest {
            if rec.round > 0 && g.progress.last().is_none_or(|p| p.round < rec.round) {
                g.progress.push(RoundRecord {
                    labeled_count: session.labeled_count(),
                    label_count: session.label_names().len(),
                    metrics: metrics.copied(),
                    ..rec.clone()
                });
            }
        }
        let mean_confidence = session
            .history()
            .last()
            .and_then(|r| r.disc_confidence_mean)
            .or_else(|| g.summary.as_ref().and_then(|s| s.mean_confidence));
        let pending_batch = g.pending.as_ref().map(|p| p.batch_id.clone());
        g.summary = Some(SessionSummary {
            round: session.round(),
            labeled: session.labeled_count(),
            unlabeled: session.unlabeled_count(),
            label_names: session.label_names().to_vec(),
            mean_confidence,
            pending_batch,
            finished: false,
        });
    }

    fn finish(&self) {
        let mut g = self.lock();
        g.pending = None;
        g.submit = None;
        if let Some(s) = g.summary.as_mut() {
            s.pending_batch = None;
            s.finished = true;
        }
    }
}

/// The loop-side half of the hand-off.
pub struct HttpAnnotator {
    shared: Arc<Shared>,
    rx: Option<mpsc::Receiver<HashMap<String, Decision>>>,
}

impl HttpAnnotator {
    fn publish(&self, round: usize, queries: &[Query<'_>], label_names: &[String]) -> PendingBatch {
        let mut items: Vec<BatchItem> = queries
            .iter()
            .map(|q| BatchItem {
                instance_id: q.instance.id.clone(),
                tokens: q.instance.tokens.clone(),
                head_span: q.instance.head_span,
                tail_span: q.instance.tail_span,
                disc_confidence: q.confidence,
            })
            .collect();
        items.sort_by(|a, b| {
            b.disc_confidence
                .total_cmp(&a.disc_confidence)
                .then_with(|| a.instance_id.cmp(&b.instance_id))
        });
        let mut g = self.shared.lock();
        let batch = PendingBatch {
            batch_id: format!("round-{round}"),
            round,
            items,
            existing_labels: label_names.iter().cloned().enumerate().collect(),
            exemplars: g.exemplars.clone(),
        };
        if let Some(s) = g.summary.as_mut() {
            s.round = round;
            s.pending_batch = Some(batch.batch_id.clone());
        }
        g.query_order = queries.iter().map(|q| q.instance.id.clone()).collect();
        g.pending = Some(batch.clone());
        batch
    }
}

impl Annotator for HttpAnnotator {
    fn annotate(
        &mut self,
        round: usize,
        queries: &[Query<'_>],
        label_names: &[String],
    ) -> Annotation {
        let batch = self.publish(round, queries, label_names);
        let Some(rx) = &self.rx else {
            // Oracle mode: answer at once, as if the batch had been posted.
            let answer = OracleAnnotator.annotate(round, queries, label_names);
            let mut g = self.shared.lock();
            g.pending = None;
            g.applied.insert(batch.batch_id);
            return answer;
        };
        match rx.recv() {
            Ok(mut by_id) => {
                let decisions: Option<Vec<Decision>> = queries
                    .iter()
                    .map(|q| by_id.remove(&q.instance.id))
                    .collect();
                match decisions {
                    Some(d) => Annotation::complete(d),
                    None => Annotation {
                        decisions: Vec::new(),
                        aborted: Some("submission does not match the batch".into()),
                    },
                }
            }
            Err(_) => Annotation {
                decisions: Vec::new(),
                aborted: Some("annotation service stopped".into()),
            },
        }
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn get_session(State(shared): State<Arc<Shared>>) -> Response {
    match shared.summary() {
        Some(s) => Json(s).into_response(),
        None => error(StatusCode::NOT_FOUND, "no active session"),
    }
}

async fn get_batch(State(shared): State<Arc<Shared>>) -> Response {
    match shared.pending() {
        Some(b) => Json(b).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn get_progress(State(shared): State<Arc<Shared>>) -> Response {
    Json(shared.progress()).into_response()
}

/// Checks a submission against the pending batch and turns it into
/// per-instance decisions. Returns the status to answer with on failure.
fn validate(
    batch: &PendingBatch,
    sub: &LabelSubmission,
) -> Result<HashMap<String, Decision>, (StatusCode, String)> {
    let unprocessable = |m: String| Err((StatusCode::UNPROCESSABLE_ENTITY, m));
    let in_batch: HashSet<&str> = batch.items.iter().map(|i| i.instance_id.as_str()).collect();
    let mut out = HashMap::with_capacity(sub.decisions.len());
    for d in &sub.decisions {
        if !in_batch.contains(d.instance_id.as_str()) {
            return unprocessable(format!(
                "{} is not in batch {}",
                d.instance_id, batch.batch_id
            ));
        }
        let decision = match &d.action {
            Action::Assign(l) if batch.existing_labels.contains_key(l) => Decision::Assign(*l),
            Action::Assign(l) => {
                return unprocessable(format!("{}: label index {l} does not exist", d.instance_id))
            }
            Action::Create { surface_name } => {
                let name = surface_name.trim();
                if name.is_empty() {
                    return unprocessable(format!("{}: empty surface name", d.instance_id));
                }
                Decision::Create(name.to_string())
            }
        };
        if out.insert(d.instance_id.clone(), decision).is_some() {
            return unprocessable(format!("{} is decided twice", d.instance_id));
        }
    }
    if out.len() != batch.items.len() {
        let missing: Vec<&str> = batch
            .items
            .iter()
            .map(|i| i.instance_id.as_str())
            .filter(|id| !out.contains_key(*id))
            .collect();
        return unprocessable(format!("no decision for {}", missing.join(", ")));
    }
    Ok(out)
}

async fn post_labels(
    State(shared): State<Arc<Shared>>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Response {
    let Json(sub) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()),
    };
    let mut g = shared.lock();
    let Some(batch) = g.pending.clone().filter(|b| b.batch_id == sub.batch_id) else {
        let why = if g.applied.contains(&sub.batch_id) {
            "already applied"
        } else {
            "not the pending batch"
        };
        return error(
            StatusCode::CONFLICT,
            format!("batch {}: {why}", sub.batch_id),
        );
    };
    let decisions = match validate(&batch, &sub) {
        Ok(d) => d,
        Err((status, message)) => return error(status, message),
    };
    let mut names: Vec<String> = batch.existing_labels.values().cloned().collect();
    for id in &g.query_order {
        if let Some(Decision::Create(n)) = decisions.get(id) {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    let Some(tx) = g.submit.clone() else {
        return error(
            StatusCode::SERVICE_UNAVAILABLE,
            "session is not accepting labels",
        );
    };
    if tx.send(decisions).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "labeling loop has stopped");
    }
    g.pending = None;
    g.applied.insert(batch.batch_id.clone());
    let summary = g.summary.as_mut().map(|s| {
        s.labeled += batch.items.len();
        s.unlabeled = s.unlabeled.saturating_sub(batch.items.len());
        s.label_names = names;
        s.pending_batch = None;
        s.clone()
    });
    drop(g);
    log::info!(
        "applied batch {} ({} items)",
        batch.batch_id,
        batch.items.len()
    );
    Json(summary).into_response()
}

pub fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/session", get(get_session))
        .route("/v1/batch", get(get_batch))
        .route("/v1/labels", post(post_labels))
        .route("/v1/progress", get(get_progress))
        .with_state(shared)
}

/// A labeling loop running on its own thread.
pub struct Running {
    pub shared: Arc<Shared>,
    pub dir: PathBuf,
    pub done: tokio::sync::oneshot::Receiver<Result<SeedRun, ExperimentError>>,
}

/// Fails when `dir` holds a session log that does not replay.
pub fn check_log(dir: &Path) -> Result<(), ServeError> {
    let path = dir.join("session.jsonl");
    if !path.exists() {
        return Ok(());
    }
    let bad = |message: String| ServeError::BadLog {
        path: path.clone(),
        message,
    };
    let events = read_events(&path).map_err(|e| bad(e.to_string()))?;
    replay(&events).map_err(|e| bad(e.to_string()))?;
    Ok(())
}

/// Starts seed `seed` of `cfg` in `seed-<seed>/` under the output directory,
/// resuming from its session log when one exists. In oracle mode the loop
/// labels by itself and the endpoints only observe it.
pub fn start(cfg: ExperimentConfig, seed: u64, oracle: bool) -> Result<Running, ServeError> {
    cfg.validate().map_err(ExperimentError::from)?;
    let dir = seed_dir(&cfg.output, seed);
    check_log(&dir)?;
    let (tx, rx) = mpsc::channel();
    let shared = Shared::new(cfg.serve_exemplars, (!oracle).then_some(tx));
    let (done_tx, done) = tokio::sync::oneshot::channel();
    let thread_shared = Arc::clone(&shared);
    let thread_dir = dir.clone();
    std::thread::Builder::new()
        .name(format!("ard-loop-{seed}"))
        .spawn(move || {
            let mut annotator = HttpAnnotator {
                shared: Arc::clone(&thread_shared),
                rx: (!oracle).then_some(rx),
            };
            let s1 = Arc::clone(&thread_shared);
            let s2 = Arc::clone(&thread_shared);
            let hooks = LoopHooks {
                resume: None,
                on_start: Some(Box::new(move |s: &ActiveSession| s1.refresh(s, None))),
                on_round: Some(Box::new(move |s: &ActiveSession, m| {
                    s2.refresh(s, s.history().last().map(|r| (r, m)))
                })),
            };
            let result = run_seed_with(&cfg, seed, &mut annotator, &thread_dir, true, hooks);
            thread_shared.finish();
            let _ = done_tx.send(result);
        })?;
    Ok(Running { shared, dir, done })
}

/// Serves `/v1` on `addr` until the loop of `seed` finishes.
pub async fn serve(
    cfg: ExperimentConfig,
    seed: u64,
    addr: SocketAddr,
) -> Result<SeedRun, ServeError> {
    let oracle = cfg.mode == ard_core::config::Mode::Oracle;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let Running { shared, dir, done } = start(cfg, seed, oracle)?;
    log::info!(
        "serving {} on http://{}",
        dir.display(),
        listener.local_addr()?
    );
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let waiter = tokio::spawn(async move {
        let r = done.await;
        let _ = stop_tx.send(());
        r
    });
    axum::serve(listener, router(shared))
        .with_graceful_shutdown(async {
            let _ = stop_rx.await;
        })
        .await?;
    let result = waiter
        .await
        .map_err(|_| ServeError::LoopLost)?
        .map_err(|_| ServeError::LoopLost)?;
    Ok(result?)
}
