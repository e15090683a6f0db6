//! Counterfactual explanations for tree ensembles.

pub mod cffile;
pub mod dataio;
pub mod distance;
pub mod ensemble;
pub mod evalstats;
pub mod error;
pub mod focus;
pub mod ftweak;
pub mod par;
pub mod softmodel;

pub use error::{Error, ErrorClass, Result};
