use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Sinusoid,
    /// Linear frequency sweep from `frequency` to `frequency_end`.
    Chirp,
    /// Constant `amplitude` from `t = 0`.
    Step,
    Zero,
}

/// Open-loop excitation, zero outside `[0, duration]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSignal {
    pub kind: SignalKind,
    pub amplitude: Vec<f64>,
    /// Hz.
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub frequency_end: Option<f64>,
    /// rad.
    #[serde(default)]
    pub phase: f64,
    pub duration: f64,
}

impl InputSignal {
    pub fn sinusoid(amplitude: Vec<f64>, frequency: f64, phase: f64, duration: f64) -> Self {
        Self {
            kind: SignalKind::Sinusoid,
            amplitude,
            frequency,
            frequency_end: None,
            phase,
            duration,
        }
    }

    pub fn zero(channels: usize, duration: f64) -> Self {
        Self {
            kind: SignalKind::Zero,
            amplitude: vec![0.0; channels],
            frequency: 0.0,
            frequency_end: None,
            phase: 0.0,
            duration,
        }
    }

    pub fn channels(&self) -> usize {
        self.amplitude.len()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.amplitude.iter().all(|a| a.is_finite())
            && self.frequency.is_finite()
            && self.phase.is_finite()
            && self.duration.is_finite()
            && self.frequency_end.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::Invalid("input signal parameters must be finite".into()));
        }
        if self.frequency < 0.0 || self.frequency_end.is_some_and(|f| f < 0.0) {
            return Err(Error::Invalid("input signal frequency must be >= 0".into()));
        }
        if self.duration < 0.0 {
            return Err(Error::Invalid("input signal duration must be >= 0".into()));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        if !(0.0..=self.duration).contains(&t) {
            return vec![0.0; self.channels()];
        }
        let shape = match self.kind {
            SignalKind::Zero => 0.0,
            SignalKind::Step => 1.0,
            SignalKind::Sinusoid => (TAU * self.frequency * t + self.phase).sin(),
            SignalKind::Chirp => {
                let f1 = self.frequency_end.unwrap_or(2.0 * self.frequency);
                let rate = if self.duration > 0.0 {
                    (f1 - self.frequency) / self.duration
                } else {
                    0.0
                };
                (TAU * (self.frequency * t + 0.5 * rate * t * t) + self.phase).sin()
            }
        };
        self.amplitude.iter().map(|a| a * shape).collect()
    }
}
