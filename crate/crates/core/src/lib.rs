//! Chain-of-action generative labeling harness.
//!
//! A vision-capable chat model is driven through a staged sequence of
//! actions per image (caption, per-entity yes/no correction, appearance,
//! relationships, final list). The resulting labels are normalized and
//! scored with an embedding-based comprehensiveness metric and a
//! tagger-based accuracy metric over multi-label dataset splits.
//!
//! Module map:
//! - [`domain`]: shared value types (labels, image records, transcripts).
//! - [`filter`]: caption tokenization, noun retention, singularization.
//! - [`backends`]: chat / embed / tag clients, scripted mock, disk cache.
//! - [`chain`]: the action engine, ablation subsets and baselines.
//! - [`metrics`]: per-image scores, split aggregation, report tables.
//! - [`datasets`]: manifest loading, COCO conversion, split verification.
//! - [`config`]: the harness configuration file.

pub mod backends;
pub mod chain;
pub mod config;
pub mod datasets;
pub mod domain;
pub mod filter;
pub mod metrics;

pub use domain::{labelset_from, normalize_label, ActionKind, ChainState, ImageRecord, Interaction, LabelSet, SplitId};
