pub mod compound;
pub mod density;
pub mod error;
pub mod lfdr;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod simulate;
pub mod testing;
pub mod verify;

pub use error::{Error, Result};
