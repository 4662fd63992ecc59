//! Out-of-distribution scoring with Markov logic networks over concept
//! predictions.
//!
//! Inputs are represented by their predicted concepts (a [`SemanticVector`]
//! over a [`Schema`]). Weighted constraints written in the constraint
//! language ([`lang`]) form an [`MlnModel`], whose negated weighted
//! satisfaction count is an outlier score. The score can be multiplied with
//! the survival probability of an existing detector's score ([`norm`],
//! [`fusion`]), and constraint sets can be learned greedily ([`search`]).

pub mod cli;
pub mod error;
pub mod fit;
pub mod fusion;
pub mod lang;
pub mod metrics;
pub mod mln;
pub mod norm;
pub mod schema;
pub mod search;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use schema::{load_dataset, load_schema, semantic_space_size, Dataset, Schema, SemanticVector};
pub use fit::{fit_weights, FitConfig, FitReport};
pub use mln::{enumerate_space, MlnModel, ScoreExplanation};
pub use fusion::FusedScorer;
pub use metrics::EvalResult;
pub use norm::{fit_distribution, Family, ScoreDistribution};
