//! Inference privacy for trained models.
//!
//! A model `C` is made private at inference time by adding calibrated noise
//! either to its input or to its output. The guarantee is parameterized by a
//! [`PrivacyBudget`] `{(ε, δ), α}`: any two inputs within `ℓp` distance `α`
//! produce output distributions that are `(ε, δ)`-indistinguishable.
//!
//! ```
//! use infpriv::{Mechanism, Norm, PrivacyBudget};
//! use infpriv::mechanisms::calibrate_gauss_output;
//!
//! let budget = PrivacyBudget::new(1.0, 1e-5, 0.1, Norm::L2)?;
//! let spec = calibrate_gauss_output(&budget, 1.0, 10)?;
//! assert!((spec.scale - 0.48448052626053895).abs() < 1e-12);
//! assert_eq!(spec.provenance.mechanism, Mechanism::GaussOutput);
//! # Ok::<(), infpriv::Error>(())
//! ```
//!
//! Modules:
//!
//! * [`budget`]: budgets, distances, composition and chaining.
//! * [`lipschitz`]: certified Lipschitz bounds of layered models.
//! * [`mechanisms`]: the three calibrated noise mechanisms.
//! * [`audit`]: analytic and Monte Carlo checks of a calibration.
//! * [`train`], [`data`]: a small MLP trainer, synthetic data, and noisy
//!   fine-tuning.
//! * [`sweep`]: utility–privacy sweeps.

pub mod audit;
pub mod budget;
pub mod data;
pub mod error;
pub mod lipschitz;
pub mod matrix;
pub mod mechanisms;
pub mod model;
pub mod rng;
pub mod sweep;
pub mod train;

pub use audit::{AuditReport, Verdict};
pub use budget::{distance, Norm, PrivacyBudget};
pub use error::{Error, Result};
pub use lipschitz::{model_lipschitz, LipschitzBound};
pub use matrix::Matrix;
pub use mechanisms::{Mechanism, NoiseSpec, Placement};
pub use model::{Activation, Layer, LayeredModel};
pub use rng::RandomSource;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/budgets.md")]
    mod budgets {}
    #[doc = include_str!("../../../book/src/lipschitz.md")]
    mod lipschitz {}
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    mod mechanisms {}
    #[doc = include_str!("../../../book/src/auditing.md")]
    mod auditing {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
