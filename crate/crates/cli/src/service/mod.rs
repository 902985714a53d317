//! HTTP service for interactive rendering.

mod api;
pub mod store;

pub use api::{router, serve, AppState, ServiceConfig, DEFAULT_MAX_PIXELS};
