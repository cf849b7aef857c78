//! Numerical toolkit for revenue-optimal multi-item selling mechanisms with an
//! additive buyer.
//!
//! The pipeline discretizes the transformed measure `μ` of a type density,
//! maximizes `∫ u dμ` over convex, monotone, 1-Lipschitz utilities on a grid,
//! turns LP multipliers into optimal-transport certificates, and checks the
//! stochastic-dominance conditions that certify menus and exclusion-set
//! mechanisms as optimal.

pub mod catalog;
pub mod curve;
pub mod distributions;
pub mod dominance;
pub mod duality;
pub mod error;
pub mod flow;
pub mod instance;
pub mod lattice;
pub mod lp;
pub mod measure;
pub mod mechanisms;
pub mod quadrature;
pub mod region;

pub use error::{Error, Result};
