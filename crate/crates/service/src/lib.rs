//! HTTP annotation service for the SF-type labeling loop: serves ranked
//! batches, records labels to an append-only log, and retrains on demand.

pub mod api;
pub mod error;
pub mod log;
pub mod session;

pub use api::{router, serve};
pub use error::ServiceError;
pub use log::LabelLog;
pub use session::{Session, SessionConfig, TrainingSummary};
