use serde::{Deserialize, Serialize};

use super::Waypoint;
use crate::error::{ensure, ValidationError};
use crate::scalar::Real;

/// A scripted vehicle that ignores everyone else. It flies straight lines
/// between waypoints and holds the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct NonCooperativeAgent<T> {
    pub id: usize,
    pub script: Vec<Waypoint<T>>,
    #[serde(default = "default_radius")]
    pub radius: T,
}

fn default_radius<T: Real>() -> T {
    T::lit(0.4)
}

impl<T: Real> NonCooperativeAgent<T> {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let field = format!("non_cooperative[{}].script", self.id);
        ensure(!self.script.is_empty(), &field, "needs at least one waypoint")?;
        ensure(
            self.script.windows(2).all(|w| w[1].t > w[0].t),
            &field,
            "waypoint times must be strictly increasing",
        )?;
        ensure(
            self.script.iter().all(|w| w.t.is_finite() && w.p.iter().all(|x| x.is_finite())),
            &field,
            "waypoints must be finite",
        )?;
        ensure(self.radius >= T::zero(), format!("non_cooperative[{}].radius", self.id).as_str(), "must be non-negative")
    }

    /// True position and velocity at time `t`.
    pub fn state_at(&self, t: T) -> ([T; 3], [T; 3]) {
        let first = &self.script[0];
        if t <= first.t {
            return (first.p, [T::zero(); 3]);
        }
        for w in self.script.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if t < b.t {
                let span = b.t - a.t;
                let s = (t - a.t) / span;
                let p = std::array::from_fn(|k| a.p[k] + s * (b.p[k] - a.p[k]));
                let v = std::array::from_fn(|k| (b.p[k] - a.p[k]) / span);
                return (p, v);
            }
        }
        (self.script[self.script.len() - 1].p, [T::zero(); 3])
    }

    /// Largest segment speed of the script, m/s.
    pub fn max_speed(&self) -> T {
        self.script
            .windows(2)
            .map(|w| {
                let d: T = (0..3).map(|k| (w[1].p[k] - w[0].p[k]).powi(2)).sum();
                d.sqrt() / (w[1].t - w[0].t)
            })
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent() -> NonCooperativeAgent<f64> {
        NonCooperativeAgent {
            id: 100,
            script: vec![
                Waypoint { t: 1.0, p: [0.0, 0.0, 1.0] },
                Waypoint { t: 3.0, p: [2.0, 0.0, 1.0] },
                Waypoint { t: 4.0, p: [2.0, 0.5, 1.0] },
            ],
            radius: 0.4,
        }
    }

    #[test]
    fn interpolates_script() {
        let a = agent();
        assert_eq!(a.state_at(0.0), ([0.0, 0.0, 1.0], [0.0; 3]));
        let (p, v) = a.state_at(2.0);
        assert_eq!(p, [1.0, 0.0, 1.0]);
        assert_eq!(v, [1.0, 0.0, 0.0]);
        let (p, v) = a.state_at(3.5);
        assert_eq!(p, [2.0, 0.25, 1.0]);
        assert_eq!(v, [0.0, 0.5, 0.0]);
        assert_eq!(a.state_at(9.0), ([2.0, 0.5, 1.0], [0.0; 3]));
        assert_eq!(a.max_speed(), 1.0);
    }

    #[test]
    fn rejects_unordered_script() {
        let mut a = agent();
        a.script[2].t = 3.0;
        let err = a.validate().unwrap_err();
        assert_eq!(err.field, "non_cooperative[100].script");
    }
}
