//! Energy model and discrete-event simulator for battery-powered LoRaWAN
//! Class A sensor nodes.

pub mod adr;
pub mod energy;
pub mod error;
pub mod mac;
pub mod phy;
pub mod sim;
pub mod strategy;

pub use error::{Error, Result};
