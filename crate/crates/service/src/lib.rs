//! HTTP/JSON API for the loan-fairness workbench: model explanation,
//! application browsing, fairness judgments, weight suggestions and
//! fairness reports, with an append-only NDJSON event log that is replayed
//! on start.

mod api;
mod error;
pub mod query;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, ROUTES};
pub use error::{ApiError, ErrorBody};
pub use state::{
    system_clock, Acknowledgement, ApplicationDetail, Clock, Comparison, FairnessReportView, ListItem, ListQuery,
    ModelView, Page, Service, Session, SessionView, StartupError, DEFAULT_PAGE, LOG_FILE, MAX_PAGE,
};

/// Header carrying the session token.
pub const SESSION_HEADER: &str = "x-session-token";

/// The committed API description.
pub const OPENAPI: &str = include_str!("../openapi.json");

/// Binds `addr` and serves until the process ends.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(service))).await
}
