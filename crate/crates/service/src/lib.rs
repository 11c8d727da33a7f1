//! HTTP service behind the annotation UI.
//!
//! Serves per-cluster heatmaps as raw matrices and persists one annotation
//! record per class. Apart from the annotations directory the service is
//! stateless; heatmaps are cached in memory only.
//!
//! | method | path                                          | response                  |
//! |--------|-----------------------------------------------|---------------------------|
//! | GET    | `/api/classes`                                | classes in λ₂ order       |
//! | GET    | `/api/classes/{y}`                            | clusters, samples, λs     |
//! | GET    | `/api/classes/{y}/images/{id}/heatmaps`       | base scores and heatmaps  |
//! | POST   | `/api/classes/{y}/annotation`                 | 204, 404, 409 or 422      |
//! | GET    | `/api/annotations`                            | every stored record       |
//! | GET    | `/static/*`                                   | UI bundle, display images |

mod error;
mod routes;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ApiError, FieldErrors};
pub use routes::router;
pub use state::{AppState, ServiceConfig};

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "listening on {} with {} classes",
        listener.local_addr()?,
        state.models.len()
    );
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
