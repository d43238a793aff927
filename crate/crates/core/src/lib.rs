//! Joint training of a classifier and an attribute-based interpreter, with
//! local and global interpretations, attribute visualization and evaluation
//! metrics.

pub mod data;
pub mod error;
pub mod interpretation;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod training;
pub mod visualization;

pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use interpretation::{GlobalRelevanceMatrix, InterpretationSet, LocalRelevance};
pub use losses::{LossBreakdown, LossWeights, StageMask};
pub use models::{BundleSpec, ModelBundle, Prediction};
pub use training::{EvalReport, Mode, TrainConfig, TrainReport};
pub use visualization::{AmpiParams, AmpiResult, MasResult};
