//! Review service for flagged images.
//!
//! Annotators confirm or reject detections and label ground-truth PII spans.
//! Every annotation is appended to a newline-delimited JSON log and synced to
//! disk before the request is acknowledged; the service state is rebuilt by
//! replaying that log on start.

mod annotation;
mod consolidate;
mod queue;
mod server;

pub use annotation::{AnnotationLog, AnnotationRecord, AnnotationRequest, LogError, Verdict};
pub use consolidate::{consolidate, export_retraining, Consolidated, RetrainingExport};
pub use queue::{build_queue, QueueItem, ReviewItem, ReviewStatus, Stats};
pub use server::{router, serve, AppState, ANNOTATOR_HEADER};
