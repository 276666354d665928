//! Flow past an elastically mounted rigid body: discretization, steady and
//! spectral analysis, periodic-orbit continuation, and time integration.

pub mod discretization;
pub mod error;
pub mod fem;
pub mod hopf;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod modes;
pub mod operators;
pub mod space;
pub mod spectral;
pub mod steady;
pub mod study;
pub mod surrogates;
pub mod system;
pub mod timestep;

pub use error::{Error, Result};
