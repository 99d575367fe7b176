pub mod analysis;
pub mod cli;
pub mod error;
pub mod flows;
pub mod linalg;
pub mod lindblad;
pub mod liouville;
pub mod ode;
pub mod oracle;
pub mod plot;
pub mod series;
pub mod spin;

pub use error::{Error, Result};
