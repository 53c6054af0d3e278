//! Read-only HTTP service over a trained checkpoint.
//!
//! | route                         | result                                   |
//! |-------------------------------|------------------------------------------|
//! | `GET /videos`                 | `[{video_id, original_frame_count, default_query}]` |
//! | `POST /summarize`             | [`SummaryResponse`] for `{video_id, query, k}` |
//! | `GET /frames/{video_id}/{i}`  | the sampled frame image                  |
//!
//! Errors are `{"error": {"code": "...", "message": "..."}}`. Features for
//! every listed video are computed at startup, so a request only runs the
//! projection, fusion and head.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use qvsum_core::checkpoint::{load_checkpoint, WeightsChoice};
use qvsum_core::dataset::{DiskFrameStore, FrameStore};
use qvsum_core::features::{load_feature_bank, FeatureBank};
use qvsum_core::generator::Model;
use qvsum_core::manifest::{DatasetManifest, QueryVideoPair, Split};
use qvsum_core::output::{select_summary, threshold_relevance, SelectionPolicy};
use qvsum_core::Error;

/// Overrides the directory that manifest frame paths are resolved against.
pub const DATA_ROOT_ENV: &str = "QVSUM_DATA_ROOT";

/// Machine-readable error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownVideo,
    FrameOutOfRange,
    InvalidK,
    EmptyQuery,
    InvalidBody,
    MalformedJson,
    UnsupportedMediaType,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::UnknownVideo | ErrorCode::FrameOutOfRange => StatusCode::NOT_FOUND,
            ErrorCode::InvalidK | ErrorCode::EmptyQuery | ErrorCode::InvalidBody => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ErrorCode::MalformedJson => StatusCode::BAD_REQUEST,
            ErrorCode::UnsupportedMediaType => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: self.message,
            },
        };
        (self.code.status(), Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        tracing::error!(error = %e, "request failed");
        ApiError::new(ErrorCode::Internal, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub original_frame_count: usize,
    pub default_query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeRequest {
    pub video_id: String,
    pub query: String,
    /// Signed so that `k: 0` and `k: -3` are reported as a bad `k` rather
    /// than a schema error.
    pub k: i64,
    #[serde(default)]
    pub policy: SelectionPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryResponse {
    pub video_id: String,
    pub query: String,
    pub k: usize,
    pub indices: Vec<usize>,
    /// Predicted score of each of the 199 padded frames.
    pub scores: Vec<u8>,
    pub mask: Vec<bool>,
    pub original_frame_count: usize,
    /// One URL per entry of `indices`.
    pub frame_urls: Vec<String>,
    pub oov_warning: bool,
    pub empty_summary: bool,
    pub selection_policy: SelectionPolicy,
}

/// Immutable after construction; shared by all requests.
pub struct AppState {
    model: Model,
    videos: BTreeMap<String, QueryVideoPair>,
    features: FeatureBank,
    store: Box<dyn FrameStore>,
}

impl AppState {
    /// Extracts features for every pair with the model's backbone.
    pub fn new(
        model: Model,
        pairs: impl IntoIterator<Item = QueryVideoPair>,
        store: Box<dyn FrameStore>,
    ) -> qvsum_core::Result<Self> {
        let videos: BTreeMap<String, QueryVideoPair> =
            pairs.into_iter().map(|p| (p.video_id.clone(), p)).collect();
        let features = FeatureBank::compute(videos.values(), store.as_ref(), &model.backbone)?;
        Ok(Self {
            model,
            videos,
            features,
            store,
        })
    }

    /// Uses precomputed features; every pair must have an entry.
    pub fn with_features(
        model: Model,
        pairs: impl IntoIterator<Item = QueryVideoPair>,
        store: Box<dyn FrameStore>,
        features: FeatureBank,
    ) -> qvsum_core::Result<Self> {
        let videos: BTreeMap<String, QueryVideoPair> =
            pairs.into_iter().map(|p| (p.video_id.clone(), p)).collect();
        if features.dim() != model.backbone.feature_dim() {
            return Err(Error::Shape(format!(
                "features have width {}, the model expects {}",
                features.dim(),
                model.backbone.feature_dim()
            )));
        }
        for id in videos.keys() {
            features.get(id)?;
        }
        Ok(Self {
            model,
            videos,
            features,
            store,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn videos(&self) -> Vec<VideoEntry> {
        self.videos
            .values()
            .map(|p| VideoEntry {
                video_id: p.video_id.clone(),
                original_frame_count: p.original_frame_count,
                default_query: p.query.clone(),
            })
            .collect()
    }

    fn pair(&self, video_id: &str) -> Result<&QueryVideoPair, ApiError> {
        self.videos.get(video_id).ok_or_else(|| {
            ApiError::new(
                ErrorCode::UnknownVideo,
                format!("no video `{video_id}` is loaded"),
            )
        })
    }

    /// The full request pipeline, independent of HTTP.
    pub fn summarize(&self, req: &SummarizeRequest) -> Result<SummaryResponse, ApiError> {
        let pair = self.pair(&req.video_id)?;
        if req.k < 1 {
            return Err(ApiError::new(
                ErrorCode::InvalidK,
                format!("k must be at least 1, got {}", req.k),
            ));
        }
        if req.query.trim().is_empty() {
            return Err(ApiError::new(ErrorCode::EmptyQuery, "query is empty"));
        }
        let k = usize::try_from(req.k).unwrap_or(usize::MAX);
        let features = self.features.get(&pair.video_id)?;
        let pred = self.model.predict_features(features.view(), &req.query)?;
        let mask = threshold_relevance(&pred);
        let selection = select_summary(&mask, k, pair.original_frame_count, req.policy)?;
        Ok(SummaryResponse {
            video_id: pair.video_id.clone(),
            query: req.query.clone(),
            k,
            frame_urls: selection
                .indices
                .iter()
                .map(|i| frame_url(&pair.video_id, *i))
                .collect(),
            indices: selection.indices,
            scores: pred.scores.iter().map(|s| s.value()).collect(),
            mask,
            original_frame_count: pair.original_frame_count,
            oov_warning: pred.oov_warning,
            empty_summary: selection.empty_summary,
            selection_policy: selection.policy,
        })
    }

    pub fn frame(&self, video_id: &str, index: &str) -> Result<(Vec<u8>, &'static str), ApiError> {
        let pair = self.pair(video_id)?;
        let out_of_range = || {
            ApiError::new(
                ErrorCode::FrameOutOfRange,
                format!(
                    "frame `{index}` out of range for `{video_id}` ({} frames)",
                    pair.original_frame_count
                ),
            )
        };
        let i: usize = index.parse().map_err(|_| out_of_range())?;
        if i >= pair.original_frame_count {
            return Err(out_of_range());
        }
        let bytes = self.store.frame_bytes(pair, i)?;
        let mime = match image::guess_format(&bytes) {
            Ok(image::ImageFormat::Jpeg) => "image/jpeg",
            Ok(image::ImageFormat::Png) => "image/png",
            Ok(image::ImageFormat::Bmp) => "image/bmp",
            _ => "application/octet-stream",
        };
        Ok((bytes, mime))
    }
}

pub fn frame_url(video_id: &str, index: usize) -> String {
    format!("/frames/{video_id}/{index}")
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub weights: WeightsChoice,
    /// Serve only this split; all pairs otherwise.
    pub split: Option<Split>,
    /// Frame root; defaults to `$QVSUM_DATA_ROOT`, then the manifest's
    /// directory.
    pub data_root: Option<PathBuf>,
    /// Directory of `<video_id>.feat` files to use instead of extracting.
    pub feature_cache: Option<PathBuf>,
}

/// Where frame directories are resolved: explicit option, then the
/// environment override, then the manifest's own directory.
pub fn resolve_data_root(
    explicit: Option<&Path>,
    env: Option<&str>,
    manifest_path: &Path,
) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Loads a checkpoint and manifest from disk and precomputes features.
pub fn load_state(
    ckpt: &Path,
    manifest_path: &Path,
    opts: &LoadOptions,
) -> qvsum_core::Result<AppState> {
    let model = load_checkpoint(ckpt, opts.weights)?.model;
    let manifest = DatasetManifest::load(manifest_path)?;
    let env = std::env::var(DATA_ROOT_ENV).ok();
    let root = resolve_data_root(opts.data_root.as_deref(), env.as_deref(), manifest_path);
    let pairs: Vec<QueryVideoPair> = match opts.split {
        Some(split) => manifest.split_pairs(split).into_iter().cloned().collect(),
        None => manifest.pairs.clone(),
    };
    let store = Box::new(DiskFrameStore::new(root));
    match &opts.feature_cache {
        Some(dir) => {
            let bank = load_feature_bank(dir, &pairs, model.backbone.feature_dim())?;
            AppState::with_features(model, pairs, store, bank)
        }
        None => AppState::new(model, pairs, store),
    }
}

async fn list_videos(State(state): State<Arc<AppState>>) -> Json<Vec<VideoEntry>> {
    Json(state.videos())
}

async fn summarize(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<SummarizeRequest>, JsonRejection>,
) -> Result<Json<SummaryResponse>, ApiError> {
    let Json(req) = payload.map_err(|rej| {
        let code = match rej {
            JsonRejection::JsonSyntaxError(_) => ErrorCode::MalformedJson,
            JsonRejection::MissingJsonContentType(_) => ErrorCode::UnsupportedMediaType,
            _ => ErrorCode::InvalidBody,
        };
        ApiError::new(code, rej.body_text())
    })?;
    state.summarize(&req).map(Json)
}

async fn frame(
    State(state): State<Arc<AppState>>,
    UrlPath((video_id, index)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let (bytes, mime) = state.frame(&video_id, &index)?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

/// Builds the router. `cors_origin` restricts cross-origin access to one
/// origin; without it any origin may call the API.
pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/videos", get(list_videos))
        .route("/summarize", post(summarize))
        .route("/frames/{video_id}/{index}", get(frame))
        .layer(cors)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    cors_origin: Option<&str>,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "serving");
    axum::serve(listener, router(state, cors_origin)).await
}
