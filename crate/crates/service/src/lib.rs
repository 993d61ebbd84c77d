//! Judgment collection over HTTP: annotators pull their assigned samples in
//! a fixed order and submit one binary verdict per sample. Every accepted
//! verdict is on disk before it is acknowledged.

pub mod api;
pub mod store;

pub use api::{router, serve, AppState};
pub use store::{ServiceError, Session, SessionConfig, SessionStore, SCHEMA_VERSION};
