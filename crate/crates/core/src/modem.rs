//! Binary DPSK on a sampled carrier.
//!
//! Each symbol spans an integer number of carrier cycles, so every symbol
//! starts at carrier phase zero and a bit `1` is a plain sign flip of the
//! previous symbol. The modulator prepends one reference symbol.
//!
//! The detector correlates each symbol against the in-phase and quadrature
//! carrier (removing the carrier) and decides on the delay-and-multiply
//! product `I[k]·I[k-1] + Q[k]·Q[k-1]`: negative means the phase flipped.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_seed;
use crate::waveform::Waveform;

pub const DEFAULT_CARRIER_HZ: f64 = 1.67e6;
pub const DEFAULT_SAMPLES_PER_CYCLE: u32 = 16;
pub const DEFAULT_AMPLITUDE_V: f64 = 12.0;

/// Nominal rates the link is operated at.
pub const SUPPORTED_RATES: [u32; 3] = [4800, 9600, 115_200];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModemError {
    #[error("waveform has {got} samples, need {needed}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid modem config: {0}")]
    InvalidConfig(String),
}

/// Sample rate is carried as an integer number of samples per carrier cycle,
/// which keeps whole cycles on sample boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemConfig {
    pub carrier_hz: f64,
    pub samples_per_cycle: u32,
    pub bit_rate_bps: u32,
    pub amplitude_v: f64,
}

impl Default for ModemConfig {
    fn default() -> Self {
        ModemConfig {
            carrier_hz: DEFAULT_CARRIER_HZ,
            samples_per_cycle: DEFAULT_SAMPLES_PER_CYCLE,
            bit_rate_bps: 115_200,
            amplitude_v: DEFAULT_AMPLITUDE_V,
        }
    }
}

impl ModemConfig {
    pub fn with_rate(bit_rate_bps: u32) -> Self {
        ModemConfig {
            bit_rate_bps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModemError> {
        let bad = |m: &str| Err(ModemError::InvalidConfig(m.to_string()));
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return bad("carrier_hz must be positive");
        }
        if self.samples_per_cycle < 3 {
            return bad("samples_per_cycle must be at least 3");
        }
        if self.bit_rate_bps == 0 {
            return bad("bit_rate_bps must be positive");
        }
        if !(self.amplitude_v.is_finite() && self.amplitude_v > 0.0) {
            return bad("amplitude_v must be positive");
        }
        Ok(())
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.carrier_hz * self.samples_per_cycle as f64
    }

    pub fn cycles_per_bit(&self) -> u32 {
        ((self.carrier_hz / self.bit_rate_bps as f64).round() as u32).max(1)
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.cycles_per_bit() as usize * self.samples_per_cycle as usize
    }

    /// On-channel rate after rounding to whole carrier cycles per bit.
    pub fn effective_bit_rate(&self) -> f64 {
        self.carrier_hz / self.cycles_per_bit() as f64
    }

    pub fn symbol_duration_s(&self) -> f64 {
        self.cycles_per_bit() as f64 / self.carrier_hz
    }

    /// Airtime of `n_bits` data bits plus the reference symbol.
    pub fn airtime_s(&self, n_bits: usize) -> f64 {
        (n_bits + 1) as f64 * self.symbol_duration_s()
    }

    pub fn waveform_len(&self, n_bits: usize) -> usize {
        (n_bits + 1) * self.samples_per_symbol()
    }
}

/// LSB-first expansion, matching UART bit order.
pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes
        .iter()
        .flat_map(|&b| (0..8).map(move |i| (b >> i) & 1))
        .collect()
}

/// Inverse of [`bytes_to_bits`]; a trailing partial byte is zero-filled.
pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| {
            c.iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i))
        })
        .collect()
}

/// Phase per symbol: a leading 0 reference, then a π step for every 1 bit.
pub fn diff_encode(bits: &[u8]) -> Vec<f64> {
    let mut phases = Vec::with_capacity(bits.len() + 1);
    let mut flipped = false;
    phases.push(0.0);
    for &b in bits {
        if b != 0 {
            flipped = !flipped;
        }
        phases.push(if flipped { PI } else { 0.0 });
    }
    phases
}

fn carrier_cycle(samples_per_cycle: u32) -> (Vec<f64>, Vec<f64>) {
    (0..samples_per_cycle)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / samples_per_cycle as f64;
            (theta.cos(), theta.sin())
        })
        .unzip()
}

pub fn modulate(bits: &[u8], cfg: &ModemConfig) -> Waveform {
    let (cos_table, _) = carrier_cycle(cfg.samples_per_cycle);
    let cycles = cfg.cycles_per_bit() as usize;
    let mut samples = Vec::with_capacity(cfg.waveform_len(bits.len()));
    for phase in diff_encode(bits) {
        // binary phases only: sin(phase) is 0, so cos(θ + phase) = cos θ · cos phase
        let polarity = cfg.amplitude_v * phase.cos();
        for _ in 0..cycles {
            samples.extend(cos_table.iter().map(|c| polarity * c));
        }
    }
    Waveform::from_parts(samples, cfg.sample_rate_hz())
}

/// Carrier-correlated (I, Q) pair for each symbol starting at sample 0.
fn symbol_projections(samples: &[f64], cfg: &ModemConfig, n_symbols: usize) -> Vec<(f64, f64)> {
    let (cos_table, sin_table) = carrier_cycle(cfg.samples_per_cycle);
    let spc = cfg.samples_per_cycle as usize;
    samples
        .chunks_exact(cfg.samples_per_symbol())
        .take(n_symbols)
        .map(|sym| {
            sym.chunks_exact(spc).fold((0.0, 0.0), |(i, q), cycle| {
                let ci: f64 = cycle.iter().zip(&cos_table).map(|(s, c)| s * c).sum();
                let cq: f64 = cycle.iter().zip(&sin_table).map(|(s, c)| s * c).sum();
                (i + ci, q + cq)
            })
        })
        .collect()
}

/// Delay-and-multiply statistic for each of the `n_bits` data symbols.
pub fn symbol_statistics(
    wave: &Waveform,
    cfg: &ModemConfig,
    n_bits: usize,
) -> Result<Vec<f64>, ModemError> {
    let needed = cfg.waveform_len(n_bits);
    if wave.len() < needed {
        return Err(ModemError::InsufficientSamples {
            needed,
            got: wave.len(),
        });
    }
    let proj = symbol_projections(wave.samples(), cfg, n_bits + 1);
    Ok(proj
        .windows(2)
        .map(|w| w[1].0 * w[0].0 + w[1].1 * w[0].1)
        .collect())
}

/// Recovers `n_bits` bits from a waveform whose first sample is the start of
/// the reference symbol.
pub fn demodulate(
    wave: &Waveform,
    cfg: &ModemConfig,
    n_bits: usize,
) -> Result<Vec<u8>, ModemError> {
    Ok(symbol_statistics(wave, cfg, n_bits)?
        .into_iter()
        .map(|s| u8::from(s < 0.0))
        .collect())
}

/// Bit error probability of differentially detected binary DPSK in AWGN.
pub fn theoretical_dpsk_ber(ebn0_linear: f64) -> f64 {
    0.5 * (-ebn0_linear).exp()
}

/// Per-sample noise standard deviation that realizes `ebn0_linear` for a
/// carrier of `amplitude_v` and `cfg`'s samples per bit.
pub fn noise_sigma_for(ebn0_linear: f64, amplitude_v: f64, cfg: &ModemConfig) -> f64 {
    let n = cfg.samples_per_symbol() as f64;
    amplitude_v * (n / (4.0 * ebn0_linear)).sqrt()
}

pub fn ebn0_to_noise_sigma(ebn0_linear: f64, cfg: &ModemConfig) -> f64 {
    noise_sigma_for(ebn0_linear, cfg.amplitude_v, cfg)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn add_gaussian_noise(samples: &mut [f64], sigma: f64, rng: &mut impl Rng) {
    if sigma == 0.0 {
        return;
    }
    for s in samples {
        let n: f64 = rng.sample(StandardNormal);
        *s += sigma * n;
    }
}

/// One Eb/N0 point of a Monte Carlo sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub ebn0_db: f64,
    pub bits: u64,
    pub errors: u64,
    pub measured_ber: f64,
    pub theoretical_ber: f64,
}

const BER_CHUNK_BITS: usize = 4096;

/// Monte Carlo BER over an AWGN channel with no coupling loss.
///
/// Bits are processed in fixed chunks; chunk `c` of point `p` draws from a
/// generator seeded by `(seed, p, c)`, so results do not depend on thread
/// scheduling.
pub fn measure_ber(cfg: &ModemConfig, ebn0_db: &[f64], n_bits: usize, seed: u64) -> Vec<BerPoint> {
    let n_chunks = n_bits.div_ceil(BER_CHUNK_BITS);
    ebn0_db
        .iter()
        .enumerate()
        .map(|(p, &db)| {
            let ebn0 = db_to_linear(db);
            let sigma = ebn0_to_noise_sigma(ebn0, cfg);
            let errors: u64 = (0..n_chunks)
                .into_par_iter()
                .map(|c| {
                    let len = BER_CHUNK_BITS.min(n_bits - c * BER_CHUNK_BITS);
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, &[p as u64, c as u64]));
                    let bits: Vec<u8> = (0..len).map(|_| rng.random_range(0..=1u8)).collect();
                    let mut wave = modulate(&bits, cfg);
                    add_gaussian_noise(wave.samples_mut(), sigma, &mut rng);
                    let out = demodulate(&wave, cfg, len).expect("waveform sized by modulate");
                    bits.iter().zip(&out).filter(|(a, b)| a != b).count() as u64
                })
                .sum();
            BerPoint {
                ebn0_db: db,
                bits: n_bits as u64,
                errors,
                measured_ber: if n_bits > 0 {
                    errors as f64 / n_bits as f64
                } else {
                    0.0
                },
                theoretical_ber: theoretical_dpsk_ber(ebn0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModemConfig {
        ModemConfig::with_rate(115_200)
    }

    #[test]
    fn lsb_first_bits() {
        assert_eq!(bytes_to_bits(&[0x01]), vec![1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes_to_bits(&[0x00]), vec![0; 8]);
        assert_eq!(
            bytes_to_bits(&[0x12, 0x34]),
            vec![0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 1, 1, 0, 0]
        );
        assert_eq!(
            bits_to_bytes(&bytes_to_bits(&[0x12, 0x34, 0xFF])),
            vec![0x12, 0x34, 0xFF]
        );
    }

    #[test]
    fn diff_encode_examples() {
        assert_eq!(diff_encode(&[]), vec![0.0]);
        assert_eq!(diff_encode(&[1, 1]), vec![0.0, PI, 0.0]);
        assert_eq!(diff_encode(&[0, 1, 0]), vec![0.0, 0.0, PI, PI]);
    }

    #[test]
    fn rate_rounding() {
        let c = ModemConfig::with_rate(115_200);
        assert_eq!(c.cycles_per_bit(), 14);
        assert_eq!(c.samples_per_symbol(), 224);
        assert!((c.effective_bit_rate() - 1.67e6 / 14.0).abs() < 1e-9);
        for rate in SUPPORTED_RATES {
            let c = ModemConfig::with_rate(rate);
            let rel = (c.effective_bit_rate() - rate as f64).abs() / rate as f64;
            assert!(rel < 0.04, "{rate}: {rel}");
        }
        // a rate above the carrier still gets one cycle per bit
        assert_eq!(ModemConfig::with_rate(5_000_000).cycles_per_bit(), 1);
    }

    #[test]
    fn reference_symbol_only() {
        let w = modulate(&[], &small_cfg());
        assert_eq!(w.len(), 224);
        assert_eq!(w.samples()[0], 12.0);
        for (i, s) in w.samples().iter().enumerate() {
            let expect = 12.0 * (2.0 * PI * (i % 16) as f64 / 16.0).cos();
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn one_bit_negates_second_symbol() {
        let w = modulate(&[1], &small_cfg());
        let (a, b) = w.samples().split_at(224);
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*y, -*x);
        }
    }

    #[test]
    fn peak_bounded_by_amplitude() {
        let bits = bytes_to_bits(&[0xA5, 0x3C]);
        let w = modulate(&bits, &small_cfg());
        assert!(w.peak_abs() <= 12.0);
        assert_eq!(w.samples()[0], 12.0);
        assert!((w.duration_s() - 17.0 * 14.0 / 1.67e6).abs() < 1e-15);
    }

    #[test]
    fn zeros_give_positive_statistics() {
        let cfg = small_cfg();
        let w = modulate(&[0; 32], &cfg);
        let stats = symbol_statistics(&w, &cfg, 32).unwrap();
        assert!(stats.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn short_waveform_is_an_error() {
        let cfg = small_cfg();
        let w = modulate(&[1, 0], &cfg);
        assert_eq!(
            demodulate(&w, &cfg, 3),
            Err(ModemError::InsufficientSamples {
                needed: 4 * 224,
                got: 3 * 224
            })
        );
    }

    #[test]
    fn ber_closed_form() {
        assert_eq!(theoretical_dpsk_ber(0.0), 0.5);
        assert!((theoretical_dpsk_ber(5.0119) - 3.33e-3).abs() < 1e-5);
        assert!((theoretical_dpsk_ber(10.0) - 2.27e-5).abs() < 1e-7);
    }

    #[test]
    fn sigma_calibration() {
        // n = 100 samples per bit: 10 cycles of 10 samples
        let cfg = ModemConfig {
            carrier_hz: 1.0e6,
            samples_per_cycle: 10,
            bit_rate_bps: 100_000,
            amplitude_v: 1.0,
        };
        assert_eq!(cfg.samples_per_symbol(), 100);
        assert!((ebn0_to_noise_sigma(25.0, &cfg) - 1.0).abs() < 1e-12);
        assert!((ebn0_to_noise_sigma(100.0, &cfg) - 0.5).abs() < 1e-12);
        assert!(ebn0_to_noise_sigma(10.0, &cfg) > ebn0_to_noise_sigma(11.0, &cfg));
    }

    #[test]
    fn config_validation() {
        assert!(ModemConfig::default().validate().is_ok());
        let bad = ModemConfig {
            samples_per_cycle: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModemConfig {
            bit_rate_bps: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ber_sweep_is_deterministic() {
        let cfg = small_cfg();
        let a = measure_ber(&cfg, &[4.0], 10_000, 9);
        let b = measure_ber(&cfg, &[4.0], 10_000, 9);
        assert_eq!(a, b);
        assert!(a[0].errors > 0);
    }
}
