//! Signal-propagation analytics, recurrent cells with exact gradients, and
//! teacher-student experiment harnesses for linear recurrent networks.

pub mod analytic;
pub mod error;
pub mod experiments;
pub mod hessian;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod rng;
pub mod stochastic;

pub use error::{Error, Result};
pub use rng::RngStream;
