pub mod data;
pub mod dispatch;
pub mod error;
pub mod lp;
pub mod loss;
pub mod mplp;
pub mod train;

pub use error::{Error, Result};
