//! Static output-feedback H-infinity policy optimization for discrete-time
//! linear systems.
//!
//! The cost `J(K) = ||T_zw(K)||_inf` is evaluated by [`hinf::hinf_norm`],
//! differentiated through its active frequencies in [`subgrad`], minimized by
//! the subgradient method in [`optimizer`], probed empirically in
//! [`landscape`], and certified through bounded-real machinery in
//! [`certify`].

pub mod certify;
pub mod error;
pub mod freq;
pub mod hinf;
pub mod landscape;
pub mod linalg;
pub mod optimizer;
pub mod par;
pub mod plant;
pub mod subgrad;

pub use error::{Error, Result};
pub use plant::{builtin_example, ExampleName, Gain, Plant};
