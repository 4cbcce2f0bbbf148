//! Hierarchical matrix completion with graph side information.
//!
//! Users fall into `c` clusters of `g` groups. Each group shares one rating
//! vector, and the vectors of a cluster span an `r`-dimensional code. A graph
//! over users and a sparse noisy sample of the ratings are observed. The
//! crate samples such instances, scores candidates by log-likelihood,
//! estimates the ratings exactly or with a staged heuristic, and computes the
//! sample-complexity threshold `p*` with its regime.

pub mod adversarial;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod ffield;
pub mod likelihood;
pub mod mds;
pub mod model;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod rng;
pub mod threshold;

pub use error::{Error, Result};
pub use estimators::{estimate, Estimate, EstimatorConfig, EstimatorKind};
pub use experiments::{sweep, SweepRow, TrialConfig};
pub use ffield::{FieldElem, PrimeField, Symbol, SymbolVector};
pub use likelihood::{neg_log_likelihood, PairClassCounts, Score};
pub use mds::MdsCode;
pub use model::{
    DeltaPair, Graph, GroundTruth, GroundTruthMode, Instance, ModelParams, Observation, Partition, RatingMatrix,
    RatingVectorSet,
};
pub use threshold::{p_star, quality_metrics, QualityMetrics, Regime, ThresholdResult};
