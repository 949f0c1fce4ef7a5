//! Parameter estimation, finite-size key rates and cluster post-selection for
//! Gaussian-modulated continuous-variable QKD over fading channels.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod clustering;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod io;
pub mod par;
pub mod quadrature;
pub mod rng;
pub mod security;
pub mod special;

pub use channel::{simulate_package, simulate_run, Package, ProtocolParams, Run};
pub use clustering::{optimize, total_key_rate, ClusterLayout, ClusterPlan, ClusterReport, Interval};
pub use distributions::{Moments, TransmittanceDistribution};
pub use error::{Error, Result};
pub use estimation::{aggregate, worst_case, worst_case_rectangular, AggregateStats, NoiseFloor, PackageEstimate, WorstCaseChannel};
pub use par::Exec;
pub use security::{key_rate, EffectiveChannel, KeyRateReport};
