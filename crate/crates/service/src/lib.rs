//! HTTP search over a trained mapper: embed the query, map it into code
//! space, and return the nearest indexed snippets.
//!
//! `GET /health` reports corpus size and model dims. `POST /search` takes
//! `{"query": text}` or `{"vector": [..]}` plus `"n"`.

mod engine;
mod http;

pub use engine::{Engine, Hit, SearchResponse};
pub use http::{
    router, serve, AppState, HealthBody, ServiceConfig, ServiceError, DEFAULT_MAX_N, DEFAULT_REQUEST_TIMEOUT,
};
