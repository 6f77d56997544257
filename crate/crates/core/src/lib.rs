//! Transience classification for discrete-time Markov chains on countable
//! state spaces.
//!
//! Chains are handled through finite truncations whose boundary kills mass
//! (see [`kernel`]). On top of that substrate the crate computes first-return
//! distributions ([`firstreturn`]), minimal nonnegative solutions of hitting
//! equations ([`minsolve`]), drift certificates ([`drift`]), the explicit
//! criteria for skip-free chains ([`skipfree`]) and for the random walk on the
//! half line ([`rwhl`]), and assembles them into a report ([`classify`]).

pub mod classify;
pub mod drift;
pub mod error;
pub mod firstreturn;
pub mod kernel;
pub mod minsolve;
pub mod rwhl;
pub mod serde_ext;
pub mod skipfree;

pub use classify::{classify, BlockVerdict, ClassifyOptions, CriterionBlock, TransienceReport};
pub use drift::DriftCertificate;
pub use error::{CriterionError, KernelError, SolveError};
pub use kernel::{
    augment_with_cemetery, n_step, validate, ChainSpec, IncrementDistribution, SkipFreeSpec, StateSet, TruncatedKernel,
};
