//! Desk-scale federation simulator and conversation-aware moderation toolkit
//! for fediverse-style micro-blogging networks.
//!
//! The crate models a network of independently administered instances that
//! exchange posts ("toots") through follow-based federation. It reconstructs
//! global conversation trees from reply links, simulates the fragmented view
//! each instance has of those conversations, and trains per-instance toxicity
//! scorers that pull in conversational context through root-seeking random
//! walks. On top of that sit the federation strategies an instance can use to
//! compensate for thin local data: completing fragmented conversations,
//! borrowing long conversations from a larger partner, or adopting and
//! fine-tuning the partner's trained model.
//!
//! Modules, bottom to top:
//!
//! - [`corpus`]: toot/instance/corpus data model, JSONL ingest, instance size
//!   classes.
//! - [`convgraph`]: global conversation-tree reconstruction and corpus
//!   characterisation statistics.
//! - [`fednet`]: follow graphs, federation delivery, per-instance fragmented
//!   views and fragmentation metrics.
//! - [`synthgen`]: deterministic synthetic corpus generator with planted,
//!   context-dependent toxicity.
//! - [`walks`]: biased root-seeking random walks over trees and fragments.
//! - [`model`]: hashed-feature linear toxicity regressors, training and the
//!   binary parameter-exchange format.
//! - [`strategies`]: the global/local training-inference matrix and the
//!   federation strategies, orchestrated per instance.
//! - [`evalkit`]: MSE / accuracy / macro-F1 metrics and grouped experiment
//!   reports.
//! - [`labeler`]: optional HTTP client for scoring real corpora against an
//!   external toxicity API, with caching and rate limiting.

pub mod convgraph;
pub mod corpus;
pub mod evalkit;
pub mod fednet;
pub mod labeler;
pub mod model;
pub mod strategies;
pub mod synthgen;
pub mod util;
pub mod walks;
