//! Dual debiasing of linear layers.
//!
//! Erases a bias concept from a layer's input/output mapping while keeping a
//! correlated feature concept, using least-squares concept erasure in a
//! whitened space. The crate contains the numerical core ([`numerics`],
//! [`stats`], [`erasure`]), measurement tools ([`evalkit`]), synthetic
//! oracles and a small trainable language model ([`synthlab`]), and the
//! binary matrix format ([`format`]).

pub mod erasure;
pub mod error;
pub mod evalkit;
pub mod format;
pub mod numerics;
pub mod rng;
pub mod stats;
pub mod synthlab;

pub use error::{Error, Result};
pub use numerics::{Matrix, RankTolerance};
