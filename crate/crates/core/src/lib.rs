//! Cross-domain sentiment transfer with contrastive learning.
//!
//! A shared text encoder feeds a projection head trained with an InfoNCE
//! objective over augmented pairs and a sentiment classifier trained with
//! cross-entropy on labeled source documents. Depending on how far the
//! target domain's label distribution drifts from the source, training
//! either pools both domains in one contrastive objective and adds entropy
//! minimization on target predictions, or contrasts each domain separately.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalviz;
pub mod losses;
pub mod model;
pub mod optim;
pub mod strategy;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
