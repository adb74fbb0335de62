//! Online class-incremental learning with a selective state-space model,
//! momentum-tracked class prototypes and prototype-confusion feedback.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod feedback;
pub mod model;
pub mod numerics;
pub mod prototypes;
pub mod rng;
pub mod stream;

pub use error::{Error, Result};
