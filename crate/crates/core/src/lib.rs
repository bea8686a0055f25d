pub mod air_explore;
pub mod autodiff;
pub mod error;
pub mod identity_classifier;
pub mod env;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod trainer;
pub mod value_decomposition;

pub use error::{Error, Result};
