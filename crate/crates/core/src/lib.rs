//! Partition-based distributed Kalman filtering for interconnected linear
//! systems, with small-gain design certificates and plug-and-play
//! reconfiguration.

pub mod design;
pub mod error;
pub mod filter;
pub mod io;
pub mod network;
pub mod pnp;
pub mod riccati;
pub mod sim;

pub use error::{DkfError, Result};
pub use network::{build_network, NetworkModel, SubsystemId, SubsystemModel};
pub use riccati::Mat;
