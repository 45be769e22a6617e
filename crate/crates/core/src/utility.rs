//! Station utilities `U(v)` of the routed volume `v`.

use alloc::format;

use crate::error::{Error, Result};

/// Concave, increasing, continuously differentiable utility of a station's
/// routed volume. `derivative` must be positive and strictly decreasing on
/// `v >= 0`; [`check_concavity`] probes this for custom implementations.
pub trait Utility {
    fn value(&self, volume: f64) -> f64;

    fn derivative(&self, volume: f64) -> f64;

    /// `-U''(v)`; the default is a forward difference of `derivative`.
    fn curvature(&self, volume: f64) -> f64 {
        let step = 1e-6 * (1.0 + volume);
        (self.derivative(volume) - self.derivative(volume + step)) / step
    }

    /// Water level `w` in `[lo, hi]` solving
    /// `derivative(intercept + slope * w) = rho * w - a_max`.
    ///
    /// The caller guarantees the left side minus the right side is positive at
    /// `lo` and nonpositive at `hi`. The default bisects.
    fn level_on_segment(&self, slope: f64, intercept: f64, rho: f64, a_max: f64, lo: f64, hi: f64) -> f64 {
        crate::bucket::bisect_decreasing(|w| self.derivative(intercept + slope * w) - rho * w + a_max, lo, hi)
    }
}

/// `U(v) = weight * ln(1 + v / soft_limit)`: proportional fairness with the
/// marginal utility halved once the volume reaches `soft_limit`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilitySpec {
    WeightedLog { weight: f64, soft_limit: f64 },
}

impl UtilitySpec {
    pub fn weighted_log(weight: f64, soft_limit: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!(
                "log utility weight {weight} must be positive (a nonpositive weight is not concave increasing)"
            )));
        }
        if !(soft_limit > 0.0 && soft_limit.is_finite()) {
            return Err(Error::Config(format!("log utility soft limit {soft_limit} must be positive")));
        }
        Ok(UtilitySpec::WeightedLog { weight, soft_limit })
    }

    pub fn weight(&self) -> f64 {
        match *self {
            UtilitySpec::WeightedLog { weight, .. } => weight,
        }
    }

    pub fn soft_limit(&self) -> f64 {
        match *self {
            UtilitySpec::WeightedLog { soft_limit, .. } => soft_limit,
        }
    }
}

impl Utility for UtilitySpec {
    fn value(&self, volume: f64) -> f64 {
        match *self {
            UtilitySpec::WeightedLog { weight, soft_limit } => weight * libm::log1p(volume / soft_limit),
        }
    }

    fn derivative(&self, volume: f64) -> f64 {
        match *self {
            UtilitySpec::WeightedLog { weight, soft_limit } => weight / (soft_limit + volume),
        }
    }

    fn curvature(&self, volume: f64) -> f64 {
        match *self {
            UtilitySpec::WeightedLog { weight, soft_limit } => weight / ((soft_limit + volume) * (soft_limit + volume)),
        }
    }

    fn level_on_segment(&self, slope: f64, intercept: f64, rho: f64, a_max: f64, lo: f64, hi: f64) -> f64 {
        let UtilitySpec::WeightedLog { weight, soft_limit } = *self;
        // weight / (d + slope w) = rho w - a_max  with  d = soft_limit + intercept.
        let d = soft_limit + intercept;
        let w = if slope == 0.0 {
            (weight / d + a_max) / rho
        } else {
            // Larger root of  rho*slope w^2 + (rho d - a_max slope) w - (a_max d + weight) = 0.
            let qa = rho * slope;
            let qb = rho * d - a_max * slope;
            let qc = -(a_max * d + weight);
            let disc = libm::sqrt(qb * qb - 4.0 * qa * qc);
            if qb > 0.0 {
                -2.0 * qc / (qb + disc)
            } else {
                (disc - qb) / (2.0 * qa)
            }
        };
        if w.is_finite() && w >= lo && w <= hi {
            w
        } else {
            crate::bucket::bisect_decreasing(|w| self.derivative(intercept + slope * w) - rho * w + a_max, lo, hi)
        }
    }
}

/// Probe that `derivative` is positive and strictly decreasing on `[0, up_to]`.
pub fn check_concavity<U: Utility + ?Sized>(utility: &U, up_to: f64) -> Result<()> {
    const PROBES: usize = 64;
    let mut prev = utility.derivative(0.0);
    if !(prev > 0.0 && prev.is_finite()) {
        return Err(Error::Config(format!("utility derivative at 0 is {prev}, must be positive")));
    }
    for k in 1..=PROBES {
        let v = up_to * k as f64 / PROBES as f64;
        let d = utility.derivative(v);
        if !(d > 0.0 && d < prev) {
            return Err(Error::Config(format!(
                "utility derivative is not positive and strictly decreasing near volume {v}"
            )));
        }
        prev = d;
    }
    Ok(())
}
