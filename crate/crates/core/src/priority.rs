//! Obstacle prioritization: score every other agent's predicted track against
//! the ego track and keep the `n_obs` most dangerous ones as constraints.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ObstacleSet, ObstacleTrack};
use crate::error::{ensure, ValidationError};
use crate::model::{rollout, Input, ModelParams, State};
use crate::scalar::Real;

/// One agent's broadcast: its measured state and latest NMPC input plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedTrajectory<T> {
    pub agent_id: usize,
    pub measured_state: State<T>,
    pub input_seq: Vec<Input<T>>,
    pub radius: T,
    /// Tick at which the plan was produced.
    pub stamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PriorityError {
    #[error("trajectory of agent {agent_id} stamped {stamp} is stale at tick {now}")]
    StaleTrajectory { agent_id: usize, stamp: u64, now: u64 },
    #[error("trajectory of agent {agent_id} has {got} inputs, expected {expected}")]
    WrongLength { agent_id: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct PriorityParams<T> {
    /// Safety margin added to the obstacle radius, m.
    pub d_s: T,
    /// Decay exponent over the horizon.
    pub a: T,
    /// Weight added for an overlap at the current step.
    pub big_m: T,
    pub n_obs: usize,
    pub horizon: usize,
}

impl<T: Real> Default for PriorityParams<T> {
    fn default() -> Self {
        Self { d_s: T::lit(0.2), a: T::lit(0.7), big_m: T::lit(1e6), n_obs: 3, horizon: 40 }
    }
}

impl<T: Real> PriorityParams<T> {
    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(self.d_s > T::zero() && self.d_s.is_finite(), "priority.d_s", "must be positive")?;
        ensure(self.a > T::zero() && self.a.is_finite(), "priority.a", "must be positive")?;
        ensure(self.big_m > T::zero() && self.big_m.is_finite(), "priority.big_m", "must be positive")?;
        ensure(self.n_obs >= 1, "priority.n_obs", "must be at least 1")?;
        ensure(self.horizon >= 1, "priority.horizon", "must be at least 1")
    }

    pub fn cast<S: Real>(&self) -> PriorityParams<S> {
        PriorityParams {
            d_s: S::lit(self.d_s.as_f64()),
            a: S::lit(self.a.as_f64()),
            big_m: S::lit(self.big_m.as_f64()),
            n_obs: self.n_obs,
            horizon: self.horizon,
        }
    }
}

/// Predicted positions and velocities of one obstacle for steps `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrack<T> {
    pub agent_id: usize,
    pub positions: Vec<[T; 3]>,
    pub velocities: Vec<[T; 3]>,
    pub radius: T,
}

impl<T: Real> PredictedTrack<T> {
    pub fn from_states(agent_id: usize, states: &[State<T>], radius: T) -> Self {
        Self {
            agent_id,
            positions: states.iter().map(|s| s.p).collect(),
            velocities: states.iter().map(|s| s.v).collect(),
            radius,
        }
    }

    /// Straight-line extrapolation `p + j dt v`.
    pub fn constant_velocity(agent_id: usize, p: [T; 3], v: [T; 3], radius: T, horizon: usize, dt: T) -> Self {
        Self {
            agent_id,
            positions: constant_velocity_predict(p, v, horizon, dt),
            velocities: vec![v; horizon + 1],
            radius,
        }
    }

    pub fn to_obstacle(&self) -> ObstacleTrack<T> {
        ObstacleTrack { source: Some(self.agent_id), centers: self.positions.clone(), radius: self.radius, active: true }
    }
}

/// `positions[j] = p + j dt v` for `j = 0..=horizon`.
pub fn constant_velocity_predict<T: Real>(p: [T; 3], v: [T; 3], horizon: usize, dt: T) -> Vec<[T; 3]> {
    (0..=horizon)
        .map(|j| {
            let t = T::from_usize(j).unwrap() * dt;
            [p[0] + t * v[0], p[1] + t * v[1], p[2] + t * v[2]]
        })
        .collect()
}

/// Rolls the sender's plan forward from its current measured state.
///
/// Plans produced more than one tick before `now` are rejected so the caller
/// can fall back to a constant-velocity prediction.
pub fn predict_track<T: Real>(
    shared: &SharedTrajectory<T>,
    params: &ModelParams<T>,
    now: u64,
) -> Result<PredictedTrack<T>, PriorityError> {
    if shared.stamp > now || now - shared.stamp > 1 {
        return Err(PriorityError::StaleTrajectory { agent_id: shared.agent_id, stamp: shared.stamp, now });
    }
    if shared.input_seq.len() != params.horizon {
        return Err(PriorityError::WrongLength {
            agent_id: shared.agent_id,
            got: shared.input_seq.len(),
            expected: params.horizon,
        });
    }
    let states = rollout(&shared.measured_state, &shared.input_seq, params);
    Ok(PredictedTrack::from_states(shared.agent_id, &states, shared.radius))
}

fn dist<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn norm3<T: Real>(a: &[T; 3]) -> T {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Danger score of each track relative to the ego positions.
pub fn priority_weights<T: Real>(ego: &[[T; 3]], others: &[PredictedTrack<T>], params: &PriorityParams<T>) -> Vec<T> {
    let n = T::from_usize(params.horizon).unwrap();
    others
        .iter()
        .map(|track| {
            let reach = track.radius + params.d_s;
            let steps = ego.len().min(track.positions.len()).min(params.horizon + 1);
            let mut w = T::zero();
            for j in 0..steps {
                let d = dist(&ego[j], &track.positions[j]);
                if d <= track.radius && j == 0 {
                    w = w + params.big_m;
                } else if d <= reach {
                    let closeness = T::one() - d / reach;
                    let alpha = closeness * closeness * norm3(&track.velocities[j]);
                    let beta = n / T::from_usize(j + 1).unwrap().powf(params.a);
                    w = w + alpha * beta;
                }
            }
            w
        })
        .collect()
}

/// Indices of the `k` highest weights, descending, ties by ascending agent id.
pub fn ranking<T: Real>(weights: &[T], tracks: &[PredictedTrack<T>], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(Ordering::Equal)
            .then(tracks[a].agent_id.cmp(&tracks[b].agent_id))
    });
    idx.truncate(k);
    idx
}

/// Keeps the `n_obs` highest-weighted tracks, padding with inactive slots.
pub fn select_obstacles<T: Real>(
    weights: &[T],
    tracks: &[PredictedTrack<T>],
    params: &PriorityParams<T>,
) -> ObstacleSet<T> {
    assert_eq!(weights.len(), tracks.len(), "one weight per track");
    let mut set: Vec<ObstacleTrack<T>> =
        ranking(weights, tracks, params.n_obs).into_iter().map(|i| tracks[i].to_obstacle()).collect();
    while set.len() < params.n_obs {
        set.push(ObstacleTrack::inactive(params.horizon));
    }
    ObstacleSet { tracks: set }
}
