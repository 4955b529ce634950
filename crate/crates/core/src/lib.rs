pub mod corrector;
pub mod error;
pub mod linalg;
pub mod lq;
pub mod mpc;
pub mod ocp;
pub mod polyhedral;
pub mod qp;
pub mod sensitivity;
pub mod uav;

pub use error::{Error, Result};
