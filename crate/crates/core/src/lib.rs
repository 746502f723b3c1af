//! Stratified non-negative tensor factorization.
//!
//! Each stratum `i` holds a non-negative tensor `A(i)` whose first mode indexes
//! samples and whose remaining modes are shared by every stratum. The model is
//!
//! ```text
//! A(i) ≈ 1 ⊗ V(i) + Σ_l w(i)_l ⊗ H_l
//! ```
//!
//! where `V(i)` is a low-rank CP tensor private to the stratum, `H_l` are
//! rank-one topics shared across strata, and `w(i)_l` weights topic `l` per
//! sample. Factors are fitted by multiplicative updates that keep every entry
//! non-negative; topic factors can carry a total-variation penalty.

pub mod cli;
pub mod error;
pub mod io;
pub mod model;
pub mod solver;
pub mod synth;
pub mod tensor;
pub mod tv;
pub mod updates;

pub use error::{Error, Result};
pub use model::{
    init_model, objective, param_count, reconstruct, strata_tensor, FitConfig, ModelState,
    StrataRanks, StratifiedDataset,
};
pub use solver::{fit, fit_with, relative_loss, FitResult, LossTrace};
pub use tensor::DenseTensor;
