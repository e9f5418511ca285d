//! Auditing toolkit for embedding-indexed image collections.
//!
//! The pipeline flags images of a sensitive category (by query retrieval or
//! a trained classifier), collapses near-duplicates, clusters what remains,
//! extracts private-information entities from OCR text and scores the
//! extraction against human ground truth.
//!
//! - [`embedding`]: `EMB1` files, metadata, exact cosine scans
//! - [`retrieval`], [`classifier`]: the two detection routes
//! - [`dedup`]: similarity-graph duplicate removal
//! - [`cluster`]: PCA, HDBSCAN, t-SNE and caption themes
//! - [`ocr`]: preprocessing plan and external OCR/correction commands
//! - [`pii`]: rule and gazetteer based entity recognizers
//! - [`pii_eval`]: fuzzy string matching, P/R/F1, co-occurrence codes

pub mod classifier;
pub mod cluster;
pub mod dedup;
pub mod embedding;
pub mod ocr;
pub mod pii;
pub mod pii_eval;
pub mod retrieval;

pub use embedding::{load_embeddings, Dataset, EmbeddingMatrix, ImageRecord, QueryKind, QuerySet};
pub use retrieval::{Detection, DetectionSource};
