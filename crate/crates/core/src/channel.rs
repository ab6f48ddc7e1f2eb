//! Inductive-coupling channel and receive front end.
//!
//! The channel is linear: a flat coupling gain looked up from the measured
//! turns table, optional exponential cable loss, a whole-sample propagation
//! delay, additive interference tones and white Gaussian noise. The front end
//! is a single band-pass biquad with gain.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modem::{add_gaussian_noise, DEFAULT_CARRIER_HZ};
use crate::waveform::Waveform;

/// Transmit amplitude the turns table was measured at.
pub const TABLE_TX_AMPLITUDE_V: f64 = 12.0;

/// (turns, received amplitude in volts) at 12 V transmit.
pub const TURNS_TABLE: [(u32, f64); 7] = [
    (2, 0.264),
    (3, 0.284),
    (4, 0.392),
    (5, 0.308),
    (6, 0.296),
    (7, 0.296),
    (8, 0.260),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("no coupling measurement for {0} turns (table covers 2-8)")]
    OutOfTable(u32),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(f64, f64),
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub freq_hz: f64,
    pub amplitude_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Coil turns on each coupling ring, 2 to 8.
    pub turns: u32,
    pub cable_length_m: f64,
    /// Amplitude loss coefficient in nepers per meter.
    pub attenuation_per_m: f64,
    pub noise_sigma_v: f64,
    pub interference: Vec<Tone>,
    pub propagation_speed_mps: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            turns: 4,
            cable_length_m: 700.0,
            attenuation_per_m: 0.0,
            noise_sigma_v: 0.0,
            interference: Vec::new(),
            propagation_speed_mps: 2.0e8,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        coupling_gain(self.turns)?;
        let nonneg = [
            ("cable_length_m", self.cable_length_m),
            ("attenuation_per_m", self.attenuation_per_m),
            ("noise_sigma_v", self.noise_sigma_v),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ChannelError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if !(self.propagation_speed_mps.is_finite() && self.propagation_speed_mps > 0.0) {
            return Err(ChannelError::InvalidConfig(
                "propagation_speed_mps must be positive".into(),
            ));
        }
        for t in &self.interference {
            if !(t.freq_hz >= 0.0
                && t.amplitude_v >= 0.0
                && t.freq_hz.is_finite()
                && t.amplitude_v.is_finite())
            {
                return Err(ChannelError::InvalidConfig(
                    "interference tones need non-negative frequency and amplitude".into(),
                ));
            }
        }
        Ok(())
    }

    /// Overall amplitude ratio: coupling gain times cable loss.
    pub fn amplitude_gain(&self) -> Result<f64, ChannelError> {
        Ok(coupling_gain(self.turns)? * (-self.attenuation_per_m * self.cable_length_m).exp())
    }

    pub fn delay_s(&self) -> f64 {
        self.cable_length_m / self.propagation_speed_mps
    }

    pub fn delay_samples(&self, sample_rate_hz: f64) -> usize {
        (self.delay_s() * sample_rate_hz).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndConfig {
    pub center_hz: f64,
    pub passband_gain: f64,
    pub quality_factor: f64,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            center_hz: DEFAULT_CARRIER_HZ,
            passband_gain: 3.0,
            quality_factor: 1.0,
        }
    }
}

impl FrontEndConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, v) in [
            ("center_hz", self.center_hz),
            ("passband_gain", self.passband_gain),
            ("quality_factor", self.quality_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ChannelError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Received-to-transmitted amplitude ratio for a tabulated number of turns.
pub fn coupling_gain(turns: u32) -> Result<f64, ChannelError> {
    TURNS_TABLE
        .iter()
        .find(|(t, _)| *t == turns)
        .map(|(_, rx)| rx / TABLE_TX_AMPLITUDE_V)
        .ok_or(ChannelError::OutOfTable(turns))
}

/// Applies gain and cable loss only; no delay, noise or interference.
pub fn couple(wave: &Waveform, cfg: &ChannelConfig) -> Result<Waveform, ChannelError> {
    Ok(wave.scaled(cfg.amplitude_gain()?))
}

/// Adds each tone, phase-referenced to absolute sample index `start_index`.
pub fn add_interference(
    samples: &mut [f64],
    tones: &[Tone],
    sample_rate_hz: f64,
    start_index: u64,
) {
    for tone in tones {
        let w = 2.0 * PI * tone.freq_hz / sample_rate_hz;
        for (i, s) in samples.iter_mut().enumerate() {
            *s += tone.amplitude_v * (w * (start_index + i as u64) as f64).sin();
        }
    }
}

/// Full channel: coupling, delay (leading zeros), interference, seeded noise.
/// The output is longer than the input by the delay.
pub fn propagate(
    wave: &Waveform,
    cfg: &ChannelConfig,
    seed: u64,
) -> Result<Waveform, ChannelError> {
    cfg.validate()?;
    if wave.is_empty() {
        return Ok(wave.clone());
    }
    let gain = cfg.amplitude_gain()?;
    let delay = cfg.delay_samples(wave.sample_rate_hz());
    let mut out = vec![0.0; delay + wave.len()];
    for (o, s) in out[delay..].iter_mut().zip(wave.samples()) {
        *o = s * gain;
    }
    add_interference(&mut out, &cfg.interference, wave.sample_rate_hz(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_gaussian_noise(&mut out, cfg.noise_sigma_v, &mut rng);
    Ok(Waveform::from_parts(out, wave.sample_rate_hz()))
}

/// Direct-form-I second-order section, coefficients normalized by a0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Band-pass `G·(ω0/Q)s / (s² + (ω0/Q)s + ω0²)` discretized by the
    /// bilinear transform prewarped at the center frequency.
    pub fn band_pass(center_hz: f64, q: f64, gain: f64, sample_rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate_hz;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Biquad {
            b: [gain * alpha / a0, 0.0, -gain * alpha / a0],
            a: [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0],
        }
    }

    /// Filters from zero initial state.
    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = self.b[0] * x + self.b[1] * x1 + self.b[2] * x2
                    - self.a[0] * y1
                    - self.a[1] * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                y
            })
            .collect()
    }
}

/// Receive front end: band-pass filter plus amplification.
pub fn condition(wave: &Waveform, fe: &FrontEndConfig) -> Result<Waveform, ChannelError> {
    fe.validate()?;
    if wave.sample_rate_hz() <= 2.0 * fe.center_hz {
        return Err(ChannelError::InvalidConfig(format!(
            "sample rate {} Hz must exceed twice the {} Hz center",
            wave.sample_rate_hz(),
            fe.center_hz
        )));
    }
    let bq = Biquad::band_pass(
        fe.center_hz,
        fe.quality_factor,
        fe.passband_gain,
        wave.sample_rate_hz(),
    );
    Ok(Waveform::from_parts(
        bq.process(wave.samples()),
        wave.sample_rate_hz(),
    ))
}

/// Sample-wise sum; shorter inputs are zero-padded to the longest.
pub fn superpose(waves: &[Waveform]) -> Result<Waveform, ChannelError> {
    let Some(first) = waves.first() else {
        return Err(ChannelError::InvalidConfig("nothing to superpose".into()));
    };
    let rate = first.sample_rate_hz();
    if let Some(w) = waves.iter().find(|w| w.sample_rate_hz() != rate) {
        return Err(ChannelError::SampleRateMismatch(rate, w.sample_rate_hz()));
    }
    let len = waves.iter().map(Waveform::len).max().unwrap_or(0);
    let mut out = vec![0.0; len];
    for w in waves {
        for (o, s) in out.iter_mut().zip(w.samples()) {
            *o += s;
        }
    }
    Ok(Waveform::from_parts(out, rate))
}
