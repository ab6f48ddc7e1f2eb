//! Bit-accurate simulator of an underwater inductive-coupling link that
//! carries DPSK on a 1.67 MHz power carrier between a surface master and
//! polled underwater acquisition nodes.
//!
//! - [`frame`]: wire frame with sum and XOR check bytes
//! - [`modem`]: sampled DPSK modulator and differential detector
//! - [`channel`]: coupling-gain channel, noise, band-pass front end
//! - [`power`]: controller modes, unit gating, charge accounting
//! - [`nodes`]: master and slave protocol state machines
//! - [`sim`]: discrete-event harness and reports
//! - [`validation`]: the end-to-end acceptance checks

pub mod channel;
pub mod frame;
pub mod modem;
pub mod nodes;
pub mod power;
pub mod rng;
pub mod sim;
pub mod validation;
pub mod waveform;

pub use frame::{
    address_matches, compute_checks, decode_frame, encode_frame, Address, CodecError,
    CodecErrorKind, Frame,
};
pub use modem::ModemConfig;
pub use sim::{run_scenario, Report, Scenario};
pub use waveform::Waveform;
