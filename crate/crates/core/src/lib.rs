pub mod adaptive;
pub mod config;
pub mod control;
pub mod environments;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod stability;
pub mod trajectory;

pub use error::{Error, Result};
pub use mdp::{derive_stream, step, ActionId, GenerativeModel, State, Stream, StreamKey};
