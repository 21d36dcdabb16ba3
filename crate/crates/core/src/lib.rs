//! Early-exit CNN classifiers for WiFi RSSI fingerprint localization.
//!
//! `tensornn` is a small CPU inference/training engine, `fingerprint`
//! turns RSSI scans into images, `exitnet` adds early-exit branches,
//! `calibrate` picks an exit configuration and `bench` measures it.

pub mod bench;
pub mod calibrate;
pub mod error;
pub mod exitnet;
pub mod fingerprint;
pub mod tensornn;

pub use error::{Error, Result};
