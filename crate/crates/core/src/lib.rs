//! Bluetooth Low Energy environment auditing.
//!
//! Advertisements enter through [`sources`] (pcap files, timed replay, a
//! scripted simulator, or remote scanner agents), are dissected by
//! [`dissector`], attributed to devices across MAC rotation by
//! [`identity`], placed on a proximity plane by [`proximity`] and
//! optionally enumerated and fingerprinted through [`gatt`]. [`service`]
//! exposes the live state over HTTP and WebSocket; [`cli`] wires it all
//! together.

pub mod cli;
pub mod dissector;
pub mod gatt;
pub mod hub;
pub mod identity;
pub mod proximity;
pub mod service;
pub mod sources;
