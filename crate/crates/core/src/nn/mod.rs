//! Parameters, layers and checkpoint I/O.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod params;

pub use checkpoint::{config_hash8, Checkpoint};
pub use layers::{LoraConfig, Linear};
pub use params::{Init, ParamBuilder, ParamStore};
