// SPDX-License-Identifier: Apache-2.0 OR MIT

//! Half-line Orr-Sommerfeld machinery for Prandtl-type shear flows.

pub mod airy_kernel;
pub mod boundary_modes;
pub mod cli_runner;
pub mod error;
pub mod evolve_oracle;
pub mod halfline_grid;
pub mod os_core;
pub mod profiles;
pub mod quad;
pub mod ray_airy_iteration;
pub mod resolvent_map;
pub mod semigroup_engine;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
