//! HTTP/JSON management API under `/v1`, and a blocking client for it.

pub mod client;
mod server;
pub mod types;

pub use client::{ClientError, DemandQuery, ManageClient};
pub use server::{router, ApiError, ManageServer, DEFAULT_PAGE, MAX_PAGE};
