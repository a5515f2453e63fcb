pub mod cli;
pub mod error;
pub mod event;
pub mod dataset;
pub mod framing;
pub mod model;
pub mod simulator;
pub mod train_eval;

pub use error::{Error, FormatError, Result};
pub use event::{Event, EventStream, Geometry, Polarity};
