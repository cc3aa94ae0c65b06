pub mod adapt_free;
pub mod adapt_light;
pub mod cli;
pub mod error;
pub mod feature_store;
pub mod eval;
pub mod linalg;
pub mod mixup;
pub mod optim;
pub mod ot;
pub mod proto;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
