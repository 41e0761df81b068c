//! Operator HTTP API and the feed ingest endpoint.
//!
//! Every route except login, health and feed ingest needs a session token,
//! sent as `Authorization: Bearer <token>` or, for event streams opened by a
//! browser, an `access_token` query parameter. Feed ingest takes the shared
//! feed key instead.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use darts_core::feed::FeedRecord;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::{FlightQuery, FlightSummary};
use crate::auth::{Auth, AuthError, Credentials, Session};
use crate::config::ServiceConfig;
use crate::detect::preview_frame;
use crate::lanes::Disposition;
use crate::logs::{LogHub, LogLine};
use crate::service::{ResultEvent, Service, ServiceState, StartRequest};
use crate::ServiceError;

/// Longest feed line accepted before the line is dropped as malformed.
const MAX_LINE: usize = 1 << 20;
const MAX_LONG_POLL_S: u64 = 30;

#[derive(Clone)]
pub struct AppState {
    pub service: Service,
    pub auth: Arc<Auth>,
    pub feed_key: Arc<String>,
}

impl AppState {
    pub fn from_config(service: Service, config: &ServiceConfig) -> Self {
        Self {
            service,
            auth: Arc::new(Auth::new(config.operator.clone())),
            feed_key: Arc::new(config.feed_key.clone()),
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    Auth(AuthError),
    Service(ServiceError),
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        ApiError::Auth(e)
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Service(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::Auth(e) => {
                let code = match e {
                    AuthError::BadCredentials => "authentication_failed",
                    AuthError::Expired => "token_expired",
                    AuthError::MissingToken | AuthError::UnknownToken => "unauthorized",
                };
                (StatusCode::UNAUTHORIZED, code, e.to_string())
            }
            ApiError::Service(e) => {
                let (status, code) = match &e {
                    ServiceError::State(_) => (StatusCode::CONFLICT, "invalid_state"),
                    ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
                    ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                    _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                };
                (status, code, e.to_string())
            }
        };
        (status, Json(json!({ "error": code, "message": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

#[derive(Debug, Default, Deserialize)]
struct TokenQuery {
    access_token: Option<String>,
}

fn authorize(st: &AppState, headers: &HeaderMap, query: Option<&str>) -> ApiResult<()> {
    Ok(st.auth.check(bearer(headers).or(query))?)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/auth/login", post(login))
        .route("/control/start", post(start))
        .route("/control/pause", post(pause))
        .route("/control/stop", post(stop))
        .route("/live/results", get(live_results))
        .route("/live/state", get(live_state))
        .route("/flights", get(list_flights))
        .route("/flights/{id}", get(flight))
        .route("/flights/{id}/segments/{sid}/preview", get(preview))
        .route("/logs/stream", get(logs_stream))
        .route("/feed", post(feed))
        .with_state(state)
}

async fn login(State(st): State<AppState>, Json(c): Json<Credentials>) -> ApiResult<Json<Session>> {
    match st.auth.login(&c) {
        Ok(s) => {
            st.service.log(crate::logs::Level::Info, format!("operator {} logged in", c.username));
            Ok(Json(s))
        }
        Err(e) => {
            st.service.log(crate::logs::Level::Warn, "failed login attempt");
            Err(e.into())
        }
    }
}

async fn start(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<ServiceState>> {
    authorize(&st, &headers, None)?;
    let req: StartRequest = if body.iter().all(u8::is_ascii_whitespace) {
        StartRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?
    };
    Ok(Json(st.service.start(req).await?))
}

async fn pause(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<Json<ServiceState>> {
    authorize(&st, &headers, None)?;
    Ok(Json(st.service.pause().await?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopResponse {
    pub state: ServiceState,
    pub flight: FlightSummary,
}

async fn stop(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<Json<StopResponse>> {
    authorize(&st, &headers, None)?;
    let (state, flight) = st.service.stop().await?;
    Ok(Json(StopResponse { state, flight }))
}

async fn live_state(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<TokenQuery>) -> ApiResult<Json<ServiceState>> {
    authorize(&st, &headers, q.access_token.as_deref())?;
    Ok(Json(st.service.state()))
}

#[derive(Debug, Default, Deserialize)]
struct StreamQuery {
    access_token: Option<String>,
    /// Deliver items with a sequence number above this.
    after: Option<u64>,
    /// Poll only: wait up to this many seconds for something new.
    wait_s: Option<u64>,
}

fn wants_sse(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

/// Resume point: `Last-Event-ID` from a reconnecting event source wins.
fn cursor(headers: &HeaderMap, after: Option<u64>) -> u64 {
    headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok())
        .or(after)
        .unwrap_or(0)
}

/// Items after `after`, each exactly once, waking on `rx`.
fn sequence_stream<T, F>(
    fetch: F,
    rx: tokio::sync::watch::Receiver<u64>,
    after: u64,
    seq: fn(&T) -> u64,
    name: &'static str,
) -> impl Stream<Item = Result<Event, Infallible>>
where
    T: Serialize + Send + 'static,
    F: Fn(u64) -> Vec<T> + Send + 'static,
{
    futures::stream::unfold((fetch, rx, after, VecDeque::new()), move |(fetch, mut rx, mut after, mut buf)| async move {
        loop {
            if let Some(item) = buf.pop_front() {
                after = seq(&item);
                let ev = Event::default().id(after.to_string()).event(name).json_data(&item).expect("serializable");
                return Some((Ok(ev), (fetch, rx, after, buf)));
            }
            let batch = fetch(after);
            if !batch.is_empty() {
                buf.extend(batch);
                continue;
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsPage {
    pub events: Vec<ResultEvent>,
    pub last_seq: u64,
}

async fn live_results(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<StreamQuery>) -> ApiResult<Response> {
    authorize(&st, &headers, q.access_token.as_deref())?;
    let after = cursor(&headers, q.after);
    let svc = st.service.clone();
    if wants_sse(&headers) {
        let stream = sequence_stream(
            move |a| svc.results_since(a),
            st.service.subscribe_results(),
            after,
            |e: &ResultEvent| e.segment.seq,
            "result",
        );
        return Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response());
    }
    let mut rx = st.service.subscribe_results();
    let mut events = svc.results_since(after);
    if events.is_empty() {
        if let Some(w) = q.wait_s.filter(|w| *w > 0) {
            let wait = Duration::from_secs(w.min(MAX_LONG_POLL_S));
            let _ = tokio::time::timeout(wait, async {
                while svc.results_since(after).is_empty() {
                    if rx.changed().await.is_err() {
                        break;
                    }
                }
            })
            .await;
            events = svc.results_since(after);
        }
    }
    let last_seq = events.last().map_or(after, |e| e.segment.seq);
    Ok(Json(ResultsPage { events, last_seq }).into_response())
}

async fn logs_stream(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<StreamQuery>) -> ApiResult<Response> {
    authorize(&st, &headers, q.access_token.as_deref())?;
    let after = cursor(&headers, q.after);
    let hub: Arc<LogHub> = st.service.logs().clone();
    if wants_sse(&headers) {
        let rx = hub.subscribe();
        let stream = sequence_stream(move |a| hub.since(a), rx, after, |l: &LogLine| l.seq, "log");
        return Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response());
    }
    Ok(Json(hub.since(after)).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ListQuery {
    access_token: Option<String>,
    freeway: Option<String>,
    date: Option<String>,
    datetime: Option<String>,
}

async fn list_flights(State(st): State<AppState>, headers: HeaderMap, Query(q): Query<ListQuery>) -> ApiResult<Json<Vec<FlightSummary>>> {
    authorize(&st, &headers, q.access_token.as_deref())?;
    let query = FlightQuery { freeway: q.freeway, date: q.date, datetime: q.datetime };
    Ok(Json(st.service.with_archive(|a| a.query(&query))))
}

async fn flight(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
) -> ApiResult<Response> {
    authorize(&st, &headers, q.access_token.as_deref())?;
    match st.service.with_archive(|a| a.detail(&id)) {
        Some(d) => Ok(Json(d).into_response()),
        None => Err(ServiceError::NotFound(format!("flight {id}")).into()),
    }
}

#[derive(Debug, Default, Deserialize)]
struct PreviewQuery {
    access_token: Option<String>,
    frame: Option<usize>,
}

/// The whole strip, or one frame with `?frame=k`.
async fn preview(
    State(st): State<AppState>,
    headers: HeaderMap,
    Path((id, sid)): Path<(String, u32)>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    authorize(&st, &headers, q.access_token.as_deref())?;
    let found = st.service.with_archive(|a| Some((a.segment(&id, sid)?, a.preview_path(&id, sid)?)));
    let Some((seg, path)) = found else {
        return Err(ServiceError::NotFound(format!("preview for segment {sid} of flight {id}")).into());
    };
    let strip = tokio::fs::read(&path).await.map_err(ServiceError::Io)?;
    let png = match q.frame {
        None => strip,
        Some(k) => preview_frame(&strip, seg.preview_frames, k).map_err(|e| ServiceError::NotFound(e.to_string()))?,
    };
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::HeaderName::from_static("x-preview-frames"), seg.preview_frames.to_string()),
        ],
        png,
    )
        .into_response())
}

/// Outcome of one feed connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines: usize,
    pub buffered: usize,
    pub discarded_paused: usize,
    pub late: usize,
    pub malformed: usize,
    /// Segments completed in the flight so far.
    pub completed_segments: u32,
    /// The flight stopped while the feed was still arriving.
    pub cut_off: bool,
}

fn key_matches(given: Option<&str>, key: &str) -> bool {
    let Some(g) = given else { return false };
    g.len() == key.len() && g.bytes().zip(key.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

/// Line-delimited feed records, processed as they arrive.
async fn feed(State(st): State<AppState>, headers: HeaderMap, body: Body) -> ApiResult<Json<IngestReport>> {
    if !key_matches(bearer(&headers), &st.feed_key) {
        return Err(AuthError::MissingToken.into());
    }
    if st.service.state().mode == crate::service::Mode::Idle {
        return Err(ServiceError::State("no active flight; start detection first".into()).into());
    }
    let mut report = IngestReport::default();
    let mut stream = body.into_data_stream();
    let mut buf: Vec<u8> = Vec::new();
    'read: while let Some(chunk) = stream.next().await {
        let chunk = chunk.map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        buf.extend_from_slice(&chunk);
        while let Some(pos) = buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = buf.drain(..=pos).collect();
            if !take_line(&st, &line, &mut report) {
                break 'read;
            }
        }
        if buf.len() > MAX_LINE {
            report.lines += 1;
            report.malformed += 1;
            buf.clear();
        }
    }
    if !report.cut_off && !buf.is_empty() {
        take_line(&st, &buf, &mut report);
    }
    if report.malformed > 0 {
        st.service.log(crate::logs::Level::Warn, format!("{} malformed feed lines skipped", report.malformed));
    }
    if !report.cut_off {
        match st.service.end_of_stream() {
            Ok(n) => report.completed_segments = n,
            Err(_) => report.cut_off = true,
        }
    }
    if report.cut_off {
        report.completed_segments = st.service.state().completed;
    }
    Ok(Json(report))
}

/// False once the flight no longer accepts feed.
fn take_line(st: &AppState, line: &[u8], report: &mut IngestReport) -> bool {
    let Ok(text) = std::str::from_utf8(line) else {
        report.lines += 1;
        report.malformed += 1;
        return true;
    };
    if text.trim().is_empty() {
        return true;
    }
    report.lines += 1;
    let record = match FeedRecord::decode_line(text) {
        Ok(r) => r,
        Err(_) => {
            report.malformed += 1;
            return true;
        }
    };
    match st.service.ingest(record) {
        Ok(Disposition::Buffered) => report.buffered += 1,
        Ok(Disposition::DiscardedPaused) => report.discarded_paused += 1,
        Ok(Disposition::Late) => report.late += 1,
        Ok(Disposition::Ignored) => {}
        Err(_) => {
            report.cut_off = true;
            return false;
        }
    }
    true
}

/// Bind and serve until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
