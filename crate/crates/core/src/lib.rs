// SPDX-License-Identifier: MIT OR Apache-2.0

//! Behavioral and causal probing of masked language models for verbal aspect.
//!
//! The crate is organised bottom-up:
//!
//! * [`lexicon`] and [`dataset`] load the aspect bank, vocabulary tags, cue
//!   patterns and probing/boundedness instances;
//! * [`backend`] defines the [`MaskedLm`] session contract with a built-in toy
//!   model and an HTTP bridge client;
//! * [`behavioral`] scores instances by iterative masking or aspect inference;
//! * [`subspace`] trains INLP boundedness directions and builds counterfactuals,
//!   which [`causal`] substitutes back into the forward pass;
//! * [`cuemine`] mines boundedness instances from CoNLL-U corpora;
//! * [`classifier`] trains a linear aspect head, scores F0.5 and estimates
//!   MC-dropout uncertainty;
//! * [`report`] writes digest-stamped CSV tables, SVG charts and manifests.

pub mod backend;
pub mod behavioral;
pub mod causal;
pub mod classifier;
pub mod cuemine;
pub mod dataset;
pub mod error;
pub mod lexicon;
pub mod report;
pub mod stats;
pub mod subspace;
pub mod types;

pub use backend::{BackendMeta, BridgeSession, MaskDistribution, MaskedLm, TokenizedTarget, ToyMlm};
pub use dataset::{BoundednessInstance, ProbingInstance};
pub use error::{Error, Result};
pub use lexicon::{AspectBank, CuePattern, VocabFeatureMap};
pub use report::{ExperimentReport, Manifest, Table};
pub use subspace::{BoundednessSubspace, PushDirection};
pub use types::{Aspect, Boundedness, CharSpan, ContextType, Number};
