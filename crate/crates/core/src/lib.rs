//! Eigenvalues of the mixed local/nonlocal p-Laplacian
//! `-Δ_p u - 2∫|u(y)-u(x)|^{p-2}(u(y)-u(x)) J(x-y) dy = λ|u|^{p-2}u` on
//! bounded grid domains with `u = 0` outside Ω.

pub mod cli;
pub mod dense;
pub mod eigen1;
pub mod eigen2;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernel;
pub mod lemmas;
pub mod precond;
pub mod rearrange;
pub mod rng;

pub use energy::EnergyContext;
pub use error::{Error, Result};
pub use grid::{build_domain, Domain, DomainSpec, Field, Grid};
pub use kernel::{Kernel, KernelSpec};
pub use rng::SplitMix64;
