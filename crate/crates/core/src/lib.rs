//! Small-mass (Smoluchowski–Kramers) limit of Langevin dynamics with
//! state-dependent friction.
//!
//! The crate simulates the rescaled fast–slow system
//!
//! ```text
//! dX = (1/ε) Y dt
//! dY = -(1/ε²) M(X) Y dt + (1/ε) F(X) dt + (1/ε) dW
//! ```
//!
//! together with its ε → 0 limit `dX = [S(X) + M⁻¹F](X) dt + M⁻¹(X) dW`,
//! lifts both to level-2 rough paths and measures their distance in the
//! α-Hölder rough-path metric.
//!
//! Modules, bottom-up:
//! - [`models`]: problem instances and assumption probes.
//! - [`linalg`]: Lyapunov solver, noise-induced drift, area correction.
//! - [`sde`]: noise bundles and time steppers.
//! - [`roughpath`]: grid lifts, Chen reconstruction, Hölder norms.
//! - [`averaging`]: averaged observables and the explicit Poisson corrector.
//! - [`harness`]: Monte Carlo drivers, reports and the CLI.

pub mod averaging;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod roughpath;
pub mod sde;

pub use error::{Error, Result};
