use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flowline::etf::visualize_field;
use flowline::io::{decode_image, encode_flo, encode_png, image_dimensions};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use super::store::{EtfData, ImageEntry, Item, LcmEntry, SessionStore};
use crate::render::{self, Control, DEFAULT_PASSES};

pub const DEFAULT_MAX_PIXELS: usize = 2048 * 2048;
const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Byte budget of the session store.
    pub cache_bytes: usize,
    /// Largest accepted image, in pixels.
    pub max_pixels: usize,
    /// Largest accepted request body.
    pub max_body_bytes: usize,
    /// Static assets served under `/` when set.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            cache_bytes: 512 << 20,
            max_pixels: DEFAULT_MAX_PIXELS,
            max_body_bytes: 64 << 20,
            static_dir: None,
        }
    }
}

pub struct AppState {
    pub store: SessionStore,
    pub config: ServiceConfig,
    etf_runs: AtomicUsize,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            store: SessionStore::new(config.cache_bytes),
            config,
            etf_runs: AtomicUsize::new(0),
        })
    }

    /// Number of tangent-field computations performed so far.
    pub fn etf_computations(&self) -> usize {
        self.etf_runs.load(Ordering::SeqCst)
    }

    async fn etf(&self, entry: &Arc<ImageEntry>) -> Result<Arc<EtfData>, ApiError> {
        let data = entry
            .etf
            .get_or_try_init(|| {
                let entry = Arc::clone(entry);
                self.etf_runs.fetch_add(1, Ordering::SeqCst);
                blocking(move || {
                    let field = render::default_field(&entry.image)?;
                    let (flo, _) = encode_flo(&field);
                    let png = encode_png(&visualize_field(&field))?;
                    Ok(Arc::new(EtfData { field, flo, png }))
                })
            })
            .await?;
        Ok(Arc::clone(data))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what} id {id:?}"))
    }
}

impl From<flowline::Error> for ApiError {
    fn from(e: flowline::Error) -> Self {
        use flowline::Error as E;
        let status = match &e {
            E::Decode(_) | E::UnsupportedChannels(_) | E::Json(_) => StatusCode::BAD_REQUEST,
            E::InvalidParameter(_) | E::DimensionMismatch(_) | E::TooSmall { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = %self.status, "{}", self.message);
        }
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs CPU-bound work off the async workers so other requests keep flowing.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> flowline::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn check_size(bytes: &[u8], limit: usize) -> ApiResult<(usize, usize)> {
    let (w, h) = image_dimensions(bytes)?;
    if w.saturating_mul(h) > limit {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image of {w}x{h} exceeds the {limit} pixel limit"),
        ));
    }
    Ok((w, h))
}

fn image_entry(state: &AppState, id: &str) -> ApiResult<Arc<ImageEntry>> {
    state.store.image(id).ok_or_else(|| ApiError::not_found("image", id))
}

async fn upload_image(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let (width, height) = check_size(&body, state.config.max_pixels)?;
    let entry = blocking(move || {
        let image = decode_image(&body)?;
        let png = if body.starts_with(PNG_SIGNATURE) {
            body.to_vec()
        } else {
            encode_png(&image)?
        };
        Ok(ImageEntry {
            image,
            png,
            etf: Default::default(),
        })
    })
    .await?;
    let id = state.store.insert(Item::Image(Arc::new(entry)));
    tracing::info!(%id, width, height, "image stored");
    Ok(Json(json!({ "image_id": id, "width": width, "height": height })).into_response())
}

async fn get_image(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png_response(image_entry(&state, &id)?.png.clone()))
}

#[derive(Deserialize)]
struct EtfQuery {
    format: Option<String>,
}

async fn get_etf(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EtfQuery>,
) -> ApiResult<Response> {
    let entry = image_entry(&state, &id)?;
    let flo = match q.format.as_deref().unwrap_or("png") {
        "png" => false,
        "flo" => true,
        other => return Err(ApiError::bad_request(format!("unknown format {other:?}, expected png or flo"))),
    };
    let data = state.etf(&entry).await?;
    Ok(if flo {
        ([(header::CONTENT_TYPE, "application/octet-stream")], data.flo.clone()).into_response()
    } else {
        png_response(data.png.clone())
    })
}

#[derive(Deserialize)]
struct LcmQuery {
    image_id: Option<String>,
}

async fn upload_lcm(
    State(state): State<Arc<AppState>>,
    Query(q): Query<LcmQuery>,
    body: Bytes,
) -> ApiResult<Response> {
    let image_id = q.image_id.ok_or_else(|| ApiError::bad_request("missing image_id query parameter"))?;
    let image = image_entry(&state, &image_id)?;
    check_size(&body, state.config.max_pixels)?;
    let lcm = blocking(move || {
        let lcm = render::decode_lcm(&body)?;
        render::check_lcm_size(&lcm, &image.image)?;
        Ok(lcm)
    })
    .await?;
    let id = state.store.insert(Item::Lcm(Arc::new(LcmEntry { image_id, lcm })));
    Ok(Json(json!({ "lcm_id": id })).into_response())
}

#[derive(Deserialize)]
struct RenderRequest {
    image_id: String,
    alpha: Option<f64>,
    lcm_id: Option<String>,
    passes: Option<usize>,
}

async fn render_drawing(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    // Parsed by hand so every malformed body maps to 400.
    let req: RenderRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    let control = match (req.alpha, req.lcm_id) {
        (Some(a), None) => {
            flowline::fdog::check_alpha(a)?;
            Control::Alpha(a)
        }
        (None, Some(id)) => {
            let entry = state.store.lcm(&id).ok_or_else(|| ApiError::not_found("lcm", &id))?;
            Control::Matrix(entry.lcm.clone())
        }
        _ => return Err(ApiError::bad_request("exactly one of alpha and lcm_id is required")),
    };
    let passes = req.passes.unwrap_or(DEFAULT_PASSES);
    render::check_passes(passes)?;
    let image = image_entry(&state, &req.image_id)?;
    if let Control::Matrix(m) = &control {
        render::check_lcm_size(m, &image.image)?;
    }
    let etf = state.etf(&image).await?;
    let png = blocking(move || render::render_png(&image.image, &etf.field, &control, passes)).await?;
    Ok(png_response(png))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/images", post(upload_image))
        .route("/api/images/{id}", get(get_image))
        .route("/api/images/{id}/etf", get(get_etf))
        .route("/api/lcm", post(upload_lcm))
        .route("/api/render", post(render_drawing))
        .layer(DefaultBodyLimit::max(state.config.max_body_bytes));
    let app = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.with_state(state).layer(TraceLayer::new_for_http())
}

/// Serves until interrupted.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
