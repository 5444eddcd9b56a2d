use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ValidationError};
use crate::model::State;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct EstimatorConfig<T> {
    /// Standard deviation of the position measurement noise, m.
    pub noise_std: T,
    /// Number of finite-difference velocities in the median.
    pub window: usize,
    /// Velocity components above this magnitude are rejected, m/s.
    pub outlier_threshold: T,
}

impl<T: Real> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self { noise_std: T::zero(), window: 3, outlier_threshold: T::lit(10.0) }
    }
}

impl<T: Real> EstimatorConfig<T> {
    /// Motion-capture-like measurement noise.
    pub fn mocap() -> Self {
        Self { noise_std: T::lit(0.0003), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(self.noise_std >= T::zero() && self.noise_std.is_finite(), "estimator.noise_std", "must be non-negative")?;
        ensure(self.window >= 1, "estimator.window", "must be at least 1")?;
        ensure(self.outlier_threshold > T::zero(), "estimator.outlier_threshold", "must be positive")
    }

    pub fn cast<S: Real>(&self) -> EstimatorConfig<S> {
        EstimatorConfig {
            noise_std: S::lit(self.noise_std.as_f64()),
            window: self.window,
            outlier_threshold: S::lit(self.outlier_threshold.as_f64()),
        }
    }
}

fn median<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * T::lit(0.5)
    }
}

/// Median of the last `window` finite-difference velocities of `samples`
/// (oldest first, spaced `dt`). Components whose magnitude exceeds the
/// threshold keep the value from `previous`. Fewer than three samples give
/// zero velocity.
pub fn estimate_velocity<T: Real>(samples: &[[T; 3]], dt: T, previous: [T; 3], config: &EstimatorConfig<T>) -> [T; 3] {
    if samples.len() < 3 {
        return [T::zero(); 3];
    }
    let diffs = (samples.len() - 1).min(config.window);
    let tail = &samples[samples.len() - diffs - 1..];
    std::array::from_fn(|k| {
        let mut d: Vec<T> = tail.windows(2).map(|w| (w[1][k] - w[0][k]) / dt).collect();
        let m = median(&mut d);
        if m.abs() > config.outlier_threshold || !m.is_finite() {
            previous[k]
        } else {
            m
        }
    })
}

/// Streaming position-to-velocity estimator fed at a fixed sample period.
#[derive(Debug, Clone)]
pub struct Estimator<T> {
    config: EstimatorConfig<T>,
    dt: T,
    samples: VecDeque<[T; 3]>,
    velocity: [T; 3],
}

impl<T: Real> Estimator<T> {
    pub fn new(config: EstimatorConfig<T>, dt: T) -> Self {
        Self { config, dt, samples: VecDeque::with_capacity(config.window + 1), velocity: [T::zero(); 3] }
    }

    pub fn push(&mut self, p: [T; 3]) {
        if self.samples.len() == self.config.window + 1 {
            self.samples.pop_front();
        }
        self.samples.push_back(p);
        let samples: Vec<[T; 3]> = self.samples.iter().copied().collect();
        self.velocity = estimate_velocity(&samples, self.dt, self.velocity, &self.config);
    }

    pub fn position(&self) -> [T; 3] {
        self.samples.back().copied().unwrap_or([T::zero(); 3])
    }

    pub fn velocity(&self) -> [T; 3] {
        self.velocity
    }

    /// Position and velocity from the filter, attitude passed through.
    pub fn estimate(&self, phi: T, theta: T) -> State<T> {
        State { p: self.position(), v: self.velocity, phi, theta }
    }
}
