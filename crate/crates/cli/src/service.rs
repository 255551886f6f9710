//! `/v1` HTTP service.
//!
//! Reads work on the latest committed snapshot. Record appends go through one
//! writer thread, which persists the graph before publishing the new
//! snapshot. Retrieval indexes are rebuilt lazily: the first diagnosis after a
//! write rebuilds on a blocking worker, and concurrent diagnoses wait for it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot, Mutex};

use fbsdiag::config::Config;
use fbsdiag::diagnose::DiagnoseError;
use fbsdiag::eval::run_ablation;
use fbsdiag::ingest::{add_maintenance_record, list_records, IngestError};
use fbsdiag::ontology::{GraphError, GraphView};
use fbsdiag::store::{self, StoreError};
use fbsdiag::{
    infer_causes, ChunkMethod, DiagnoseOptions, DiagnosisIndex, DiagnosisQuery, EdgeKind,
    EvalSuite, KnowledgeGraph, Level, NodeId, RecordSpec,
};

use crate::envelope::ApiEnvelope;

/// Committed graph plus a counter bumped on every write.
#[derive(Debug)]
pub struct Snapshot {
    pub graph: Arc<KnowledgeGraph>,
    pub version: u64,
}

type IndexKey = (ChunkMethod, Option<Level>);

struct WriteJob {
    record: RecordSpec,
    reply: oneshot::Sender<Result<Value, ApiError>>,
}

pub struct AppState {
    config: Config,
    snapshot: Arc<RwLock<Arc<Snapshot>>>,
    writer: mpsc::Sender<WriteJob>,
    indexes: Mutex<HashMap<IndexKey, (u64, Arc<DiagnosisIndex>)>>,
}

impl AppState {
    /// `persist`: where the writer saves the graph after each append.
    pub fn new(graph: KnowledgeGraph, config: Config, persist: Option<PathBuf>) -> Arc<Self> {
        let snapshot = Arc::new(RwLock::new(Arc::new(Snapshot {
            graph: Arc::new(graph.clone()),
            version: 0,
        })));
        let (tx, rx) = mpsc::channel(64);
        let published = Arc::clone(&snapshot);
        std::thread::Builder::new()
            .name("graph-writer".into())
            .spawn(move || writer_loop(graph, rx, published, persist))
            .expect("writer thread starts");
        Arc::new(AppState {
            config,
            snapshot,
            writer: tx,
            indexes: Mutex::new(HashMap::new()),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.read().expect("snapshot lock"))
    }

    /// Index for `key` built from `snap`, rebuilt when the cached one is older.
    async fn index_for(
        &self,
        key: IndexKey,
        snap: &Arc<Snapshot>,
    ) -> Result<Arc<DiagnosisIndex>, ApiError> {
        let mut cache = self.indexes.lock().await;
        if let Some((version, idx)) = cache.get(&key) {
            if *version == snap.version {
                return Ok(Arc::clone(idx));
            }
        }
        let graph = Arc::clone(&snap.graph);
        let chunking = self.config.chunking;
        let embedder = self.config.embedder.clone();
        let built = tokio::task::spawn_blocking(move || {
            DiagnosisIndex::build(&graph, key.0, key.1, chunking, &embedder)
        })
        .await
        .map_err(ApiError::internal)??;
        let built = Arc::new(built);
        cache.insert(key, (snap.version, Arc::clone(&built)));
        Ok(built)
    }
}

fn writer_loop(
    mut graph: KnowledgeGraph,
    mut rx: mpsc::Receiver<WriteJob>,
    published: Arc<RwLock<Arc<Snapshot>>>,
    persist: Option<PathBuf>,
) {
    let mut version = 0;
    while let Some(job) = rx.blocking_recv() {
        let mut next = graph.clone();
        let result = add_maintenance_record(&mut next, &job.record)
            .map_err(ApiError::from)
            .and_then(|id| {
                if let Some(path) = &persist {
                    store::save_graph(&next, path)?;
                }
                Ok(id)
            });
        let reply = match result {
            Ok(id) => {
                graph = next;
                version += 1;
                let records = list_records(&graph).len();
                let failures = graph.failure_count();
                *published.write().expect("snapshot lock") = Arc::new(Snapshot {
                    graph: Arc::new(graph.clone()),
                    version,
                });
                Ok(
                    json!({"record_id": id, "records": records, "failures": failures, "graph_version": version}),
                )
            }
            Err(e) => Err(e),
        };
        let _ = job.reply.send(reply);
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub detail: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            detail: None,
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid-body", e.body_text())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let detail = match &e {
            IngestError::Graph(GraphError::Violation(v)) => Some(json!(v)),
            IngestError::Invalid(report) => Some(json!(report)),
            _ => None,
        };
        let status = match e {
            IngestError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError {
            status,
            code: e.code().into(),
            message: e.to_string(),
            detail,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string())
    }
}

impl From<DiagnoseError> for ApiError {
    fn from(e: DiagnoseError) -> Self {
        let status = match e {
            DiagnoseError::Embed(_) => StatusCode::BAD_GATEWAY,
            DiagnoseError::Store(_) | DiagnoseError::UnknownMember { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<fbsdiag::eval::EvalError> for ApiError {
    fn from(e: fbsdiag::eval::EvalError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ApiEnvelope::error(self.code, self.message, self.detail)),
        )
            .into_response()
    }
}

type ApiResult = Result<Json<ApiEnvelope>, ApiError>;

fn ok(payload: impl Serialize) -> ApiResult {
    Ok(Json(ApiEnvelope::ok(
        serde_json::to_value(payload).map_err(ApiError::internal)?,
    )))
}

pub fn router(state: Arc<AppState>) -> Router {
    let ui_dir = state.config.service.ui_dir.clone();
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/graph", get(graph_summary))
        .route("/v1/graph/tree", get(graph_tree))
        .route("/v1/records", get(records).post(add_record))
        .route("/v1/diagnose", axum::routing::post(diagnose))
        .route("/v1/eval", axum::routing::post(eval))
        .route("/v1/failures/{*id}", get(failure_detail))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn health(State(state): State<Arc<AppState>>) -> ApiResult {
    let snap = state.snapshot();
    ok(
        json!({"service": "fbsdiag", "version": env!("CARGO_PKG_VERSION"), "graph_version": snap.version}),
    )
}

async fn graph_summary(State(state): State<Arc<AppState>>) -> ApiResult {
    let snap = state.snapshot();
    let g = &snap.graph;
    let mut systems_by_level = BTreeMap::new();
    let mut failures_by_level = BTreeMap::new();
    for level in Level::ALL {
        systems_by_level.insert(level.as_str(), 0usize);
        failures_by_level.insert(level.as_str(), 0usize);
    }
    for s in g.system_nodes() {
        *systems_by_level
            .get_mut(s.level().as_str())
            .expect("all levels present") += 1;
    }
    let view = GraphView::new(g);
    for f in g.failure_nodes() {
        if let Some(level) = view.attachment_level(&f.id) {
            *failures_by_level
                .get_mut(level.as_str())
                .expect("all levels present") += 1;
        }
    }
    ok(json!({
        "graph_version": snap.version,
        "validated": g.is_validated(),
        "system_nodes": g.system_count(),
        "system_edges": g.system_edge_count(),
        "failure_nodes": g.failure_count(),
        "edges": g.edge_count(),
        "records": list_records(g).len(),
        "system_nodes_by_level": systems_by_level,
        "failures_by_level": failures_by_level,
    }))
}

#[derive(Debug, Serialize)]
struct TreeNode {
    id: NodeId,
    label: String,
    level: Level,
    failures: usize,
    children: Vec<TreeNode>,
}

/// Siblings in StepAfter order (earlier steps first), ties and unordered
/// siblings by id.
fn step_order<'g>(view: &GraphView<'g>, siblings: &[&'g NodeId]) -> Vec<&'g NodeId> {
    let set: BTreeSet<&NodeId> = siblings.iter().copied().collect();
    let mut preds: BTreeMap<&NodeId, usize> = siblings.iter().map(|s| (*s, 0)).collect();
    for s in siblings {
        for next in view.next_steps(s) {
            if set.contains(next) {
                *preds.get_mut(next).expect("sibling") += 1;
            }
        }
    }
    let mut ready: BTreeSet<&'g NodeId> =
        siblings.iter().copied().filter(|s| preds[s] == 0).collect();
    let mut out = Vec::with_capacity(siblings.len());
    while let Some(s) = ready.pop_first() {
        out.push(s);
        for next in view.next_steps(s) {
            if let Some(p) = preds.get_mut(next) {
                *p -= 1;
                if *p == 0 {
                    ready.insert(next);
                }
            }
        }
    }
    out
}

fn tree_node(view: &GraphView<'_>, id: &NodeId) -> TreeNode {
    let s = view.system(id).expect("tree walks system nodes");
    let children = step_order(view, view.children(id))
        .into_iter()
        .map(|c| tree_node(view, c))
        .collect();
    TreeNode {
        id: s.id.clone(),
        label: s.label.clone(),
        level: s.level(),
        failures: view.failures_at(id).len(),
        children,
    }
}

async fn graph_tree(State(state): State<Arc<AppState>>) -> ApiResult {
    let snap = state.snapshot();
    let view = GraphView::new(&snap.graph);
    let roots: Vec<&NodeId> = snap
        .graph
        .system_nodes()
        .filter(|s| view.parents(&s.id).is_empty())
        .map(|s| &s.id)
        .collect();
    let tree: Vec<TreeNode> = step_order(&view, &roots)
        .into_iter()
        .map(|r| tree_node(&view, r))
        .collect();
    ok(json!({"graph_version": snap.version, "roots": tree}))
}

async fn records(State(state): State<Arc<AppState>>) -> ApiResult {
    let snap = state.snapshot();
    ok(list_records(&snap.graph))
}

async fn add_record(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RecordSpec>, JsonRejection>,
) -> ApiResult {
    let Json(record) = body?;
    let (reply, rx) = oneshot::channel();
    state
        .writer
        .send(WriteJob { record, reply })
        .await
        .map_err(|_| {
            ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "writer-stopped",
                "graph writer is not running",
            )
        })?;
    let ack = rx.await.map_err(|_| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "writer-stopped",
            "graph writer dropped the request",
        )
    })??;
    ok(ack)
}

/// Diagnosis query with optional retrieval overrides; unset fields come from
/// the service configuration.
#[derive(Debug, Deserialize)]
pub struct DiagnoseRequest {
    #[serde(flatten)]
    pub query: DiagnosisQuery,
    #[serde(default)]
    pub options: Option<DiagnoseOptions>,
}

async fn diagnose(
    State(state): State<Arc<AppState>>,
    body: Result<Json<DiagnoseRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let DiagnoseRequest { query, options } = req;
    if query.method == ChunkMethod::Proposed && query.level.is_none() {
        return Err(DiagnoseError::LevelMissing.into());
    }
    let options = options.unwrap_or(state.config.retrieval);
    let snap = state.snapshot();
    let level = if query.method == ChunkMethod::Proposed {
        query.level
    } else {
        None
    };
    let index = state.index_for((query.method, level), &snap).await?;
    let graph = Arc::clone(&snap.graph);
    let list = tokio::task::spawn_blocking(move || infer_causes(&graph, &index, &query, &options))
        .await
        .map_err(ApiError::internal)??;
    ok(list)
}

#[derive(Debug, Deserialize)]
pub struct EvalRequest {
    pub suite: EvalSuite,
    #[serde(default = "both_methods")]
    pub methods: Vec<ChunkMethod>,
}

fn both_methods() -> Vec<ChunkMethod> {
    vec![ChunkMethod::Proposed, ChunkMethod::Baseline]
}

async fn eval(
    State(state): State<Arc<AppState>>,
    body: Result<Json<EvalRequest>, JsonRejection>,
) -> ApiResult {
    let Json(req) = body?;
    let snap = state.snapshot();
    let embedder = state.config.embedder.clone();
    let report = tokio::task::spawn_blocking(move || {
        run_ablation(&snap.graph, &req.suite, &req.methods, &embedder)
    })
    .await
    .map_err(ApiError::internal)??;
    ok(report)
}

async fn failure_detail(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult {
    let snap = state.snapshot();
    let g = &snap.graph;
    let id = NodeId::new(id);
    let Some(f) = g.failure_node(&id) else {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown-failure",
            format!("no failure `{id}`"),
        ));
    };
    let view = GraphView::new(g);
    let brief = |ids: &[&NodeId]| -> Vec<Value> {
        ids.iter()
            .filter_map(|i| view.failure(i))
            .map(|n| json!({"id": n.id, "label": n.label, "record_id": n.record_id}))
            .collect()
    };
    let attached = view.attachment(&id);
    let path: Vec<Value> = attached
        .map(|s| {
            let mut chain: Vec<&NodeId> = view.ancestors(&s.id);
            chain.reverse();
            chain.push(&s.id);
            chain
                .into_iter()
                .filter_map(|a| view.system(a))
                .map(|a| json!({"id": a.id, "label": a.label, "level": a.level()}))
                .collect()
        })
        .unwrap_or_default();
    ok(json!({
        "failure": f,
        "attached_to": attached,
        "path": path,
        "causes": brief(view.causes(&id)),
        "effects": brief(view.effects(&id)),
        "record": g.record(&f.record_id),
        "has_cause_edges": g.edges_of_kind(EdgeKind::HasCause).filter(|e| e.src == id || e.dst == id).count(),
    }))
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot load graph: {0}")]
    Load(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Io(std::io::Error),
}

impl ServeError {
    pub fn code(&self) -> &'static str {
        match self {
            ServeError::Load(e) => e.code(),
            ServeError::Bind { .. } => "bind-error",
            ServeError::Io(_) => "io-error",
        }
    }
}

/// Loads the configured graph and serves until Ctrl-C.
pub async fn serve(config: Config) -> Result<(), ServeError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .try_init();
    let graph = store::load_graph(&config.service.graph_path)?;
    let addr = format!("{}:{}", config.service.bind, config.service.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind {
            addr: addr.clone(),
            source,
        })?;
    let local: SocketAddr = listener.local_addr().map_err(ServeError::Io)?;
    tracing::info!(%local, graph = %config.service.graph_path.display(), "serving /v1");
    let persist = Some(config.service.graph_path.clone());
    let app = router(AppState::new(graph, config, persist));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Io)
}
