//! Numerical toolkit for oscillatory integrals `I(λ) = ∫ e^{iλΦ(ξ)} b(ξ) dξ`
//! and the explicit-constant stationary phase estimate
//! `|I(λ)| ≤ C a₀^{-(1+d)} (1 + M_{d+2}^{d/2+d²}) N_{d+1} λ^{-d/2}`.

pub mod audit;
pub mod bump;
pub mod cli;
pub mod config;
pub mod cover;
pub mod deriv;
pub mod domain;
pub mod error;
pub mod expr;
pub mod families;
pub mod ibp;
pub mod jet;
pub mod lab;
pub mod quadrature;
pub mod table;

pub use deriv::{Amplitude, DerivativeTensor, PhaseModel, SymbolKind, SymbolModel};
pub use domain::BoxDomain;
pub use error::{Error, Result};
