//! Matrix-free estimation of neural tangent kernel statistics.
//!
//! The NTK of a model evaluation is the operator `v -> jvp(vjp(v))` on the
//! flattened state space. This crate never materializes it: models expose
//! exact forward- and reverse-mode Jacobian products, operators wrap them
//! behind a matvec interface, and randomized estimators compute the trace,
//! Frobenius norm, kernel alignment and effective rank from a small number
//! of probes. Dense n-pass oracles are included for validation at small
//! sizes.
//!
//! Reproducibility: every random draw flows from a seeded SplitMix64 stream
//! (see [`rng`]), so estimates are bit-identical across runs and platforms.

pub mod autodiff;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod models;
pub mod operator;
pub mod rng;

pub use autodiff::{DenseJacobian, JacobianContext, JacobianOps};
pub use error::{Error, Result};
pub use estimators::{
    alignment, effective_rank, frobenius_norm_sq, hutchinson_trace, hutchinson_trace_full_basis,
    hutchpp_trace, one_sided_trace, product_trace, product_trace_exhaustive, AdMode,
    EstimateRecord, EstimatorConfig, EstimatorKind, MetricMethod,
};
pub use linalg::{
    draw_probes, project_complement, thin_qr, DenseMatrix, ProbeDistribution, ProbeSpec,
};
pub use models::{
    init_params, param_count, Activation, GruConfig, MlpConfig, ModelConfig, ParamVector,
    StateTensor,
};
pub use operator::{
    dense_ntk, exact_alignment, exact_effective_rank, exact_frobenius_sq, exact_trace,
    CrossNtkOperator, DenseOperator, LinearOperator, NtkOperator, ProductOperator, DENSE_CAP,
};
