pub mod channel;
pub mod config;
pub mod engine;
pub mod error;
pub mod extrapolate;
pub mod fock;
pub mod gkp;
pub mod io;
pub mod pipeline;
pub mod runner;
pub mod two_qubit;
pub mod wigner;

pub use error::{Error, Result};
