//! Difference signal between solar forecast and measurement, its split into
//! slow and fast parts, and storage sizing for the fast part.
//!
//! ```
//! use gridpq::signal::{split, FilterWeights};
//!
//! let d = vec![2.0; 50];
//! let parts = split(&d, &FilterWeights::sigmoid());
//! // A constant signal is all "slow": nothing is left for storage.
//! assert!(parts.d_h.iter().all(|x| *x == 0.0));
//! ```

use thiserror::Error;

pub const TAPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("series are not aligned: {forecast} forecast samples vs {measured} measured")]
    Alignment { forecast: usize, measured: usize },
    #[error("invalid filter weights: {0}")]
    Weights(String),
    #[error("sampling interval must be positive, got {0} h")]
    Interval(f64),
}

/// `d(t) = forecast(t+1) − measured(t)`.
///
/// The last sample has no next forecast; the last forecast is carried
/// forward, so a constant forecast offset stays constant to the end.
pub fn difference_signal(forecast: &[f64], measured: &[f64]) -> Result<Vec<f64>, SignalError> {
    if forecast.len() != measured.len() {
        return Err(SignalError::Alignment { forecast: forecast.len(), measured: measured.len() });
    }
    let n = measured.len();
    Ok((0..n).map(|t| forecast[(t + 1).min(n - 1)] - measured[t]).collect())
}

/// Causal moving-average weights, `w[0]` applied to `d(t−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights {
    w: Vec<f64>,
}

impl FilterWeights {
    /// Twenty decreasing sigmoid taps `1 − 1/(1 + e^{−12k−0.5})`, scaled to
    /// unit sum.
    ///
    /// The raw taps are about `e^{−12k}`, so after scaling the first tap
    /// carries nearly all the weight (`w₁ ≈ 1 − 6·10⁻⁶`): the slow part is
    /// essentially the previous sample and the fast part its first
    /// difference.
    pub fn sigmoid() -> Self {
        // 1 − 1/(1+e^{−x}) written as 1/(1+e^{x}) keeps the tiny tails exact.
        let raw: Vec<f64> = (1..=TAPS).map(|k| 1.0 / (1.0 + (12.0 * k as f64 + 0.5).exp())).collect();
        Self::normalized(raw).expect("sigmoid taps are valid")
    }

    /// Positive, non-increasing taps, scaled to unit sum.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, SignalError> {
        if raw.is_empty() {
            return Err(SignalError::Weights("no taps".into()));
        }
        if raw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(SignalError::Weights("taps must be positive and finite".into()));
        }
        if raw.windows(2).any(|p| p[1] > p[0]) {
            return Err(SignalError::Weights("taps must be non-increasing".into()));
        }
        let s: f64 = raw.iter().sum();
        Ok(FilterWeights { w: raw.iter().map(|w| w / s).collect() })
    }

    pub fn taps(&self) -> &[f64] {
        &self.w
    }

    /// `|H(f)|` at `f` cycles per sample.
    pub fn magnitude_response(&self, f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, w) in self.w.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * f * (k + 1) as f64;
            re += w * phase.cos();
            im += w * phase.sin();
        }
        re.hypot(im)
    }

    /// White-noise variance gain `Σ w²`.
    pub fn noise_gain(&self) -> f64 {
        self.w.iter().map(|w| w * w).sum()
    }
}

impl Default for FilterWeights {
    fn default() -> Self {
        Self::sigmoid()
    }
}

/// `d_l(t) = Σ_k w_k d(t−k)`.
///
/// While fewer than all taps have history, the available taps are rescaled
/// to unit sum; the very first sample has no history and passes through.
pub fn lowpass(d: &[f64], weights: &FilterWeights) -> Vec<f64> {
    let w = weights.taps();
    (0..d.len())
        .map(|t| {
            let avail = t.min(w.len());
            if avail == 0 {
                return d[0];
            }
            let acc: f64 = (1..=avail).map(|k| w[k - 1] * d[t - k]).sum();
            if avail == w.len() {
                acc
            } else {
                acc / w[..avail].iter().sum::<f64>()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSignal {
    pub d: Vec<f64>,
    pub d_l: Vec<f64>,
    pub d_h: Vec<f64>,
}

/// `d = d_l + d_h` with `d_l` the moving average and `d_h` the remainder.
pub fn split(d: &[f64], weights: &FilterWeights) -> DifferenceSignal {
    let d_l = lowpass(d, weights);
    let d_h = d.iter().zip(&d_l).map(|(a, b)| a - b).collect();
    DifferenceSignal { d: d.to_vec(), d_l, d_h }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub signed_kwh: f64,
    pub absolute_kwh: f64,
}

/// `Σ s(t)·Δt`, signed and absolute; `dt_hours` is the sampling interval.
pub fn signal_energy(signal: &[f64], dt_hours: f64) -> Result<Energy, SignalError> {
    check_interval(dt_hours)?;
    Ok(Energy {
        signed_kwh: signal.iter().sum::<f64>() * dt_hours,
        absolute_kwh: signal.iter().map(|s| s.abs()).sum::<f64>() * dt_hours,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssSizing {
    /// Peak-to-peak swing of the stored energy, kWh.
    pub capacity_kwh: f64,
    /// Largest change between consecutive samples, kW.
    pub max_ramp_kw: f64,
    /// `Σ |s|·Δt`, kWh.
    pub signal_energy_kwh: f64,
}

/// Storage needed to follow `signal` exactly: the spread between the
/// highest and lowest running energy balance, starting from zero.
pub fn ess_capacity_for_signal(signal: &[f64], dt_hours: f64) -> Result<EssSizing, SignalError> {
    check_interval(dt_hours)?;
    let (mut e, mut lo, mut hi) = (0.0f64, 0.0f64, 0.0f64);
    for s in signal {
        e += s * dt_hours;
        lo = lo.min(e);
        hi = hi.max(e);
    }
    let max_ramp_kw = signal.windows(2).map(|p| (p[1] - p[0]).abs()).fold(0.0, f64::max);
    Ok(EssSizing {
        capacity_kwh: hi - lo,
        max_ramp_kw,
        signal_energy_kwh: signal_energy(signal, dt_hours)?.absolute_kwh,
    })
}

fn check_interval(dt_hours: f64) -> Result<(), SignalError> {
    if dt_hours > 0.0 && dt_hours.is_finite() {
        Ok(())
    } else {
        Err(SignalError::Interval(dt_hours))
    }
}
