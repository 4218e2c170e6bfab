pub mod config;
pub mod pipeline;
pub mod server;
pub mod wire;

pub use config::{load_config, NetlistConfig};
pub use pipeline::Pipeline;
pub use server::{serve, start, RunningServer, ServeError};
