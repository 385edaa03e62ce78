//! Statistical matching of two datasets that share a block of common
//! variables X, where Y is observed only in dataset A and Z only in B.
//!
//! Models (Gaussian, skew-normal and mixtures of either) are fitted under
//! the restriction Σ_YZ = Σ_YX Σ_XX⁻¹ Σ_XZ, which makes the joint law
//! identifiable, and the missing blocks are then imputed from the fitted
//! conditionals. Nearest-neighbour hot-deck imputation and exact samplers of
//! its large-sample limit are provided for comparison.

pub mod assign;
pub mod data;
pub(crate) mod density;
pub mod em;
pub mod error;
pub mod gaussian;
pub mod impute;
pub mod linalg;
pub mod mixtures;
pub mod model;
pub(crate) mod mstep;
pub mod nn;
pub mod simulation;
pub mod skew_normal;
pub mod special;
pub mod stats;
pub mod summary;
pub mod truncnorm;

pub use data::{BlockDims, BlockSpec, CellTag, ImputedDataset, Side, StackedDataset, Table};
pub use em::{EMConfig, FitReport, InitStrategy};
pub use error::{FusionError, Result};
pub use gaussian::{fit_gaussian, EtaParams, GaussianParams, RegressionBlock, XBlock};
pub use impute::{impute_parametric, DrawMode, ImputationRequest};
pub use mixtures::{fit_gmm_matching, fit_snmix_matching, MixtureComponents, MixtureParams};
pub use model::{observed_loglik, Family, Model};
pub use nn::{impute_nn, NNConfig, Search};
pub use skew_normal::{fit_skew_normal, fit_sn_em, ConditionalSkewNormal, SkewNormalParams};
pub use truncnorm::TruncatedNormalSpec;

/// Guide chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/gaussian.md")]
    mod gaussian {}
    #[doc = include_str!("../../../book/src/skew_normal.md")]
    mod skew_normal {}
    #[doc = include_str!("../../../book/src/mixtures.md")]
    mod mixtures {}
    #[doc = include_str!("../../../book/src/imputation.md")]
    mod imputation {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
