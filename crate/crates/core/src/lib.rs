//! Modular, calibrated re-ranking of spoken-language-understanding hypotheses.
//!
//! Every domain owns a domain classifier, an intent classifier and a slot tagger. Their
//! outputs are combined into per-domain hypothesis lists, each domain scores its list with
//! its own linear re-ranker, and the lists are merged into one cross-domain n-best.
//! Re-rankers are trained against an expected semantic-error loss, an expected
//! cross-entropy loss that calibrates `σ(score)`, or both.
//!
//! ```
//! use nlurank::reranker::{score, WeightVector};
//!
//! let l = [0.6f64.ln(), 0.9f64.ln(), 0.8f64.ln()];
//! let s = score(&WeightVector::uniform(), &l).unwrap();
//! assert!((s - 0.432f64.ln()).abs() < 1e-12);
//! ```

pub mod calibration;
pub mod components;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod experiment;
pub mod features;
pub mod hypothesis;
pub mod maxent;
pub mod metrics;
pub mod reranker;
pub mod schema;

mod par;

pub use error::{Error, Result};
