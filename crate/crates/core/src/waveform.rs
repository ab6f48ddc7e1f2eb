use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(f64, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled real signal in volts.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self, WaveformError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(WaveformError::InvalidSampleRate(sample_rate_hz));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(WaveformError::NonFiniteSample(i));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    /// Caller guarantees a valid rate and finite samples.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate_hz: f64) -> Self {
        debug_assert!(sample_rate_hz > 0.0);
        Waveform {
            samples,
            sample_rate_hz,
        }
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self, WaveformError> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, k: f64) -> Waveform {
        Waveform::from_parts(
            self.samples.iter().map(|s| s * k).collect(),
            self.sample_rate_hz,
        )
    }

    pub fn negated(&self) -> Waveform {
        self.scaled(-1.0)
    }

    /// Copy of `[start, start + len)`, zero-filled past the end.
    pub fn window(&self, start: usize, len: usize) -> Waveform {
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        Waveform::from_parts(out, self.sample_rate_hz)
    }

    /// Two-column CSV `time_s,volts` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), WaveformError> {
        writeln!(w, "time_s,volts")?;
        let dt = 1.0 / self.sample_rate_hz;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(w, "{:e},{}", i as f64 * dt, s)?;
        }
        Ok(())
    }
}
