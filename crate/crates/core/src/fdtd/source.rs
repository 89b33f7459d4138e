use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::layout::Component;
use crate::error::{invalid, Result};

/// Time profile of a soft current source. Frequencies are in `a / lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Waveform {
    /// `exp(-(t - t0)^2 / (2 w^2)) sin(2 pi f (t - t0))` with
    /// `w = 1 / (fractional_bandwidth f)`, `t0 = 5 w`, cut at `10 w`.
    Gaussian { frequency: f64, fractional_bandwidth: f64 },
    /// `sin(2 pi f t)` with a raised-cosine turn-on over `ramp_periods`.
    ContinuousWave { frequency: f64, ramp_periods: f64 },
}

impl Waveform {
    pub fn gaussian(frequency: f64, fractional_bandwidth: f64) -> Self {
        Waveform::Gaussian {
            frequency,
            fractional_bandwidth,
        }
    }

    pub fn frequency(&self) -> f64 {
        match *self {
            Waveform::Gaussian { frequency, .. } | Waveform::ContinuousWave { frequency, .. } => frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Waveform::Gaussian {
                frequency,
                fractional_bandwidth,
            } => {
                if !(frequency > 0.0 && fractional_bandwidth > 0.0) {
                    return Err(invalid("Gaussian source needs positive frequency and bandwidth"));
                }
            }
            Waveform::ContinuousWave { frequency, ramp_periods } => {
                if !(frequency > 0.0 && ramp_periods >= 0.0) {
                    return Err(invalid("CW source needs positive frequency and non-negative ramp"));
                }
            }
        }
        Ok(())
    }

    /// Pulse width `w`; `None` for CW.
    pub fn width(&self) -> Option<f64> {
        match *self {
            Waveform::Gaussian {
                frequency,
                fractional_bandwidth,
            } => Some(1.0 / (fractional_bandwidth * frequency)),
            Waveform::ContinuousWave { .. } => None,
        }
    }

    /// Time after which the source is identically zero.
    pub fn end_time(&self) -> Option<f64> {
        self.width().map(|w| 10.0 * w)
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match *self {
            Waveform::Gaussian { frequency, .. } => {
                let w = self.width().unwrap();
                if t >= 10.0 * w {
                    return 0.0;
                }
                let s = t - 5.0 * w;
                (-s * s / (2.0 * w * w)).exp() * (2.0 * PI * frequency * s).sin()
            }
            Waveform::ContinuousWave { frequency, ramp_periods } => {
                let ramp_time = ramp_periods / frequency;
                let envelope = if t < ramp_time {
                    0.5 * (1.0 - (PI * t / ramp_time).cos())
                } else {
                    1.0
                };
                envelope * (2.0 * PI * frequency * t).sin()
            }
        }
    }
}

/// A soft (additive) electric current source at one Yee node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Node indices of `component` (see [`super::YeeFields`] for the layout).
    pub position: [usize; 3],
    pub component: Component,
    pub waveform: Waveform,
    pub amplitude: f64,
    #[serde(default)]
    pub start_step: usize,
    /// Last active step (exclusive); defaults to the pulse end or never.
    #[serde(default)]
    pub stop_step: Option<usize>,
}

impl SourceSpec {
    pub fn new(component: Component, position: [usize; 3], waveform: Waveform) -> Self {
        SourceSpec {
            position,
            component,
            waveform,
            amplitude: 1.0,
            start_step: 0,
            stop_step: None,
        }
    }

    /// First step at which the source no longer injects anything.
    pub fn last_step(&self, dt: f64) -> Option<usize> {
        let natural = self.waveform.end_time().map(|t| self.start_step + (t / dt).ceil() as usize + 1);
        match (self.stop_step, natural) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Current injected during the E update from step `n` to `n + 1`.
    pub(crate) fn current(&self, n: usize, dt: f64) -> f64 {
        if n < self.start_step || self.stop_step.is_some_and(|s| n >= s) {
            return 0.0;
        }
        let t = (n - self.start_step) as f64 * dt + 0.5 * dt;
        self.amplitude * self.waveform.value(t)
    }
}
