//! Forward and inverse acoustic sounding of a cylindrical waveguide.

pub mod config;
pub mod container;
pub mod error;
pub mod fields;
pub mod forward;
pub mod greens;
pub mod grids;
pub mod inverse;
pub mod metrics;
pub mod models;
pub mod special;
pub mod testsupport;
pub mod transforms;

pub use error::{CoreError, Result};
