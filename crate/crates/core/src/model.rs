//! Quadrotor prediction model.
//!
//! Eight states `[p, v, phi, theta]` driven by mass-normalized thrust and
//! roll/pitch references. Roll and pitch follow first-order responses that
//! stand in for the closed inner attitude loop; yaw is held at zero.
//!
//! The thrust direction is the third column of `R_y(theta) * R_x(phi)`:
//! `[sin(theta) cos(phi), -sin(phi), cos(theta) cos(phi)]`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, ValidationError};
use crate::scalar::Real;

pub const NX: usize = 8;
pub const NU: usize = 3;

/// Row-major `dx'/dx`.
pub type StateJacobian<T> = [[T; NX]; NX];
/// Row-major `dx'/du`.
pub type InputJacobian<T> = [[T; NU]; NX];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State<T> {
    /// Position, m.
    pub p: [T; 3],
    /// Velocity, m/s.
    pub v: [T; 3],
    /// Roll, rad.
    pub phi: T,
    /// Pitch, rad.
    pub theta: T,
}

impl<T: Real> State<T> {
    pub fn at_rest(p: [T; 3]) -> Self {
        Self { p, v: [T::zero(); 3], phi: T::zero(), theta: T::zero() }
    }

    pub fn to_array(&self) -> [T; NX] {
        let [px, py, pz] = self.p;
        let [vx, vy, vz] = self.v;
        [px, py, pz, vx, vy, vz, self.phi, self.theta]
    }

    pub fn from_array(a: [T; NX]) -> Self {
        Self { p: [a[0], a[1], a[2]], v: [a[3], a[4], a[5]], phi: a[6], theta: a[7] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    pub fn cast<S: Real>(&self) -> State<S> {
        State::from_array(self.to_array().map(|x| S::lit(x.as_f64())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Input<T> {
    /// Mass-normalized thrust, m/s^2.
    pub thrust: T,
    pub phi_ref: T,
    pub theta_ref: T,
}

impl<T: Real> Input<T> {
    pub fn new(thrust: T, phi_ref: T, theta_ref: T) -> Self {
        Self { thrust, phi_ref, theta_ref }
    }

    /// Thrust equal to gravity, level attitude.
    pub fn hover(params: &ModelParams<T>) -> Self {
        Self::new(params.gravity, T::zero(), T::zero())
    }

    pub fn to_array(&self) -> [T; NU] {
        [self.thrust, self.phi_ref, self.theta_ref]
    }

    pub fn from_array(a: [T; NU]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn from_slice(a: &[T]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn cast<S: Real>(&self) -> Input<S> {
        Input::from_array(self.to_array().map(|x| S::lit(x.as_f64())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams<T> {
    /// Linear drag `(A_x, A_y, A_z)`, 1/s.
    pub drag: [T; 3],
    /// `(K_phi, K_theta)`.
    pub attitude_gain: [T; 2],
    /// `(tau_phi, tau_theta)`, s.
    pub attitude_tau: [T; 2],
    pub gravity: T,
    /// Prediction sampling time, s.
    pub dt: T,
    pub horizon: usize,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        Self {
            drag: [T::lit(0.1), T::lit(0.1), T::lit(0.2)],
            attitude_gain: [T::one(), T::one()],
            attitude_tau: [T::lit(0.5), T::lit(0.5)],
            gravity: T::lit(9.81),
            dt: T::lit(0.05),
            horizon: 40,
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(
            self.attitude_tau.iter().all(|&t| t > T::zero()),
            "model.attitude_tau",
            "time constants must be positive",
        )?;
        ensure(self.dt > T::zero(), "model.dt", "must be positive")?;
        ensure(self.horizon >= 1, "model.horizon", "must be at least 1")?;
        ensure(self.gravity > T::zero(), "model.gravity", "must be positive")?;
        ensure(
            self.drag.iter().chain(&self.attitude_gain).all(|x| x.is_finite()),
            "model.drag",
            "coefficients must be finite",
        )
    }

    pub fn cast<S: Real>(&self) -> ModelParams<S> {
        let c = |x: T| S::lit(x.as_f64());
        ModelParams {
            drag: self.drag.map(c),
            attitude_gain: self.attitude_gain.map(c),
            attitude_tau: self.attitude_tau.map(c),
            gravity: c(self.gravity),
            dt: c(self.dt),
            horizon: self.horizon,
        }
    }
}

/// Unit thrust direction for roll `phi` and pitch `theta` at zero yaw.
#[inline]
pub fn thrust_direction<T: Real>(phi: T, theta: T) -> [T; 3] {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    [st * cp, -sp, ct * cp]
}

/// Time derivative of the state.
pub fn continuous_dynamics<T: Real>(x: &State<T>, u: &Input<T>, params: &ModelParams<T>) -> [T; NX] {
    let dir = thrust_direction(x.phi, x.theta);
    let mut dx = [T::zero(); NX];
    for i in 0..3 {
        dx[i] = x.v[i];
        dx[3 + i] = u.thrust * dir[i] - params.drag[i] * x.v[i];
    }
    dx[5] = dx[5] - params.gravity;
    dx[6] = (params.attitude_gain[0] * u.phi_ref - x.phi) / params.attitude_tau[0];
    dx[7] = (params.attitude_gain[1] * u.theta_ref - x.theta) / params.attitude_tau[1];
    dx
}

/// One forward-Euler step of length `params.dt`.
pub fn discrete_step<T: Real>(x: &State<T>, u: &Input<T>, params: &ModelParams<T>) -> State<T> {
    let dx = continuous_dynamics(x, u, params);
    let mut a = x.to_array();
    for (ai, di) in a.iter_mut().zip(dx) {
        *ai = *ai + params.dt * di;
    }
    State::from_array(a)
}

/// States `x0, x1, ..., x_len(inputs)` obtained by chaining [`discrete_step`].
pub fn rollout<T: Real>(x0: &State<T>, inputs: &[Input<T>], params: &ModelParams<T>) -> Vec<State<T>> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    rollout_into(x0, inputs, params, &mut out);
    out
}

/// Allocation-free variant of [`rollout`]; `out` is cleared first.
pub fn rollout_into<T: Real>(
    x0: &State<T>,
    inputs: &[Input<T>],
    params: &ModelParams<T>,
    out: &mut Vec<State<T>>,
) {
    out.clear();
    out.push(*x0);
    for u in inputs {
        let next = discrete_step(out.last().expect("non-empty"), u, params);
        out.push(next);
    }
}

/// Analytic Jacobians of [`discrete_step`] with respect to state and input.
pub fn step_jacobians<T: Real>(
    x: &State<T>,
    u: &Input<T>,
    params: &ModelParams<T>,
) -> (StateJacobian<T>, InputJacobian<T>) {
    let dt = params.dt;
    let mut jx = [[T::zero(); NX]; NX];
    let mut ju = [[T::zero(); NU]; NX];
    for (i, row) in jx.iter_mut().enumerate() {
        row[i] = T::one();
    }

    let (sp, cp) = x.phi.sin_cos();
    let (st, ct) = x.theta.sin_cos();
    let dir = [st * cp, -sp, ct * cp];
    let d_dphi = [-st * sp, -cp, -ct * sp];
    let d_dtheta = [ct * cp, T::zero(), -st * cp];

    for i in 0..3 {
        jx[i][3 + i] = dt;
        jx[3 + i][3 + i] = T::one() - dt * params.drag[i];
        jx[3 + i][6] = dt * u.thrust * d_dphi[i];
        jx[3 + i][7] = dt * u.thrust * d_dtheta[i];
        ju[3 + i][0] = dt * dir[i];
    }
    jx[6][6] = T::one() - dt / params.attitude_tau[0];
    jx[7][7] = T::one() - dt / params.attitude_tau[1];
    ju[6][1] = dt * params.attitude_gain[0] / params.attitude_tau[0];
    ju[7][2] = dt * params.attitude_gain[1] / params.attitude_tau[1];
    (jx, ju)
}
