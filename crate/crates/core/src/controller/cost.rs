//! Tracking cost, its adjoint gradient, obstacle constraints and the
//! multiplier-driven position weights.
//!
//! Decision vectors are flat: `u = [T_0, phi_ref_0, theta_ref_0, T_1, ...]`.

use super::{ObstacleSet, Setpoint, Weights};
use crate::model::{rollout_into, step_jacobians, Input, ModelParams, State, NU, NX};
use crate::scalar::Real;

fn weighted_sq<T: Real, const K: usize>(a: [T; K], b: [T; K], w: &[T; K]) -> T {
    (0..K).map(|i| w[i] * (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// `|x_ref - x|^2_Qx + |u_ref - u|^2_Qu + |u - u_prev|^2_Qdu` with diagonal weights.
pub fn stage_cost<T: Real>(x: &State<T>, u: &Input<T>, u_prev: &Input<T>, setpoint: &Setpoint<T>, weights: &Weights<T>) -> T {
    weighted_sq(x.to_array(), setpoint.x_ref.to_array(), &weights.q_x)
        + weighted_sq(u.to_array(), setpoint.u_ref.to_array(), &weights.q_u)
        + weighted_sq(u.to_array(), u_prev.to_array(), &weights.q_du)
}

pub fn terminal_cost<T: Real>(x: &State<T>, setpoint: &Setpoint<T>, weights: &Weights<T>) -> T {
    weighted_sq(x.to_array(), setpoint.x_ref.to_array(), &weights.q_t)
}

pub fn flatten<T: Real>(inputs: &[Input<T>]) -> Vec<T> {
    inputs.iter().flat_map(|u| u.to_array()).collect()
}

pub fn unflatten<T: Real>(u: &[T]) -> Vec<Input<T>> {
    u.chunks_exact(NU).map(Input::from_slice).collect()
}

/// Rolls `u` out from `x_hat` into `states` (length `N + 1`).
pub(crate) fn rollout_flat<T: Real>(x_hat: &State<T>, u: &[T], params: &ModelParams<T>, states: &mut Vec<State<T>>) {
    states.clear();
    states.push(*x_hat);
    for uj in u.chunks_exact(NU) {
        let next = crate::model::discrete_step(states.last().expect("non-empty"), &Input::from_slice(uj), params);
        states.push(next);
    }
}

/// Cost of a rolled-out plan; `states` must come from [`rollout_flat`] on `u`.
pub(crate) fn cost_of_rollout<T: Real>(
    states: &[State<T>],
    u: &[T],
    u_prev: &Input<T>,
    setpoint: &Setpoint<T>,
    weights: &Weights<T>,
) -> T {
    let mut prev = *u_prev;
    let mut total = T::zero();
    for (x, uj) in states.iter().zip(u.chunks_exact(NU)) {
        let cur = Input::from_slice(uj);
        total = total + stage_cost(x, &cur, &prev, setpoint, weights);
        prev = cur;
    }
    total + terminal_cost(states.last().expect("non-empty"), setpoint, weights)
}

/// Total horizon cost of the input plan `u_seq` applied from `x_hat`.
/// The input-change term of the first stage is measured against `u_prev`.
pub fn total_cost<T: Real>(
    u_seq: &[Input<T>],
    x_hat: &State<T>,
    u_prev: &Input<T>,
    setpoint: &Setpoint<T>,
    weights: &Weights<T>,
    params: &ModelParams<T>,
) -> T {
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    rollout_into(x_hat, u_seq, params, &mut states);
    cost_of_rollout(&states, &flatten(u_seq), u_prev, setpoint, weights)
}

/// Constraint values `r^2 - |p_j - o_j|^2` for `j = 1..=N`, obstacle-major.
pub(crate) fn constraints_of_rollout<T: Real>(states: &[State<T>], obstacles: &ObstacleSet<T>, out: &mut [T]) {
    let n = states.len() - 1;
    for (i, track) in obstacles.tracks.iter().enumerate() {
        let r2 = track.radius * track.radius;
        for j in 1..=n {
            let p = states[j].p;
            let o = track.centers[j];
            let d2: T = (0..3).map(|k| (p[k] - o[k]) * (p[k] - o[k])).sum();
            out[i * n + j - 1] = r2 - d2;
        }
    }
}

/// Obstacle constraint map `F(u)`; entries `<= 0` are safe.
pub fn constraint_map<T: Real>(
    u_seq: &[Input<T>],
    x_hat: &State<T>,
    obstacles: &ObstacleSet<T>,
    params: &ModelParams<T>,
) -> Vec<T> {
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    rollout_into(x_hat, u_seq, params, &mut states);
    let mut out = vec![T::zero(); u_seq.len() * obstacles.tracks.len()];
    constraints_of_rollout(&states, obstacles, &mut out);
    out
}

/// Backward adjoint pass.
///
/// Writes `grad J(u) + J_F(u)^T w` into `grad`, where `w` holds one weight per
/// constraint entry (pass `None` for the cost gradient alone).
#[allow(clippy::too_many_arguments)]
pub(crate) fn adjoint_gradient<T: Real>(
    states: &[State<T>],
    u: &[T],
    u_prev: &Input<T>,
    setpoint: &Setpoint<T>,
    weights: &Weights<T>,
    params: &ModelParams<T>,
    constraint_weights: Option<(&ObstacleSet<T>, &[T])>,
    grad: &mut [T],
) {
    let n = states.len() - 1;
    let two = T::lit(2.0);
    let x_ref = setpoint.x_ref.to_array();
    let u_ref = setpoint.u_ref.to_array();

    let seed = |j: usize, lam: &mut [T; NX]| {
        if let Some((obs, w)) = constraint_weights {
            let p = states[j].p;
            for (i, track) in obs.tracks.iter().enumerate() {
                let wl = w[i * n + j - 1];
                if wl != T::zero() {
                    for k in 0..3 {
                        lam[k] = lam[k] - two * wl * (p[k] - track.centers[j][k]);
                    }
                }
            }
        }
    };

    let xn = states[n].to_array();
    let mut lam = [T::zero(); NX];
    for k in 0..NX {
        lam[k] = two * weights.q_t[k] * (xn[k] - x_ref[k]);
    }
    seed(n, &mut lam);

    for j in (0..n).rev() {
        let x = states[j];
        let uj = Input::from_slice(&u[NU * j..NU * j + NU]);
        let (jx, ju) = step_jacobians(&x, &uj, params);
        let ua = uj.to_array();
        let before = if j == 0 { u_prev.to_array() } else { Input::from_slice(&u[NU * (j - 1)..NU * j]).to_array() };
        for c in 0..NU {
            let mut g = two * weights.q_u[c] * (ua[c] - u_ref[c]) + two * weights.q_du[c] * (ua[c] - before[c]);
            if j + 1 < n {
                g = g - two * weights.q_du[c] * (u[NU * (j + 1) + c] - ua[c]);
            }
            for (r, row) in ju.iter().enumerate() {
                g = g + row[c] * lam[r];
            }
            grad[NU * j + c] = g;
        }
        if j == 0 {
            break;
        }
        let xa = x.to_array();
        let mut next = [T::zero(); NX];
        for (c, nc) in next.iter_mut().enumerate() {
            let mut acc = two * weights.q_x[c] * (xa[c] - x_ref[c]);
            for (r, row) in jx.iter().enumerate() {
                acc = acc + row[c] * lam[r];
            }
            *nc = acc;
        }
        seed(j, &mut next);
        lam = next;
    }
}

/// Gradient of [`total_cost`] with respect to the flattened input plan.
pub fn cost_gradient<T: Real>(
    u_seq: &[Input<T>],
    x_hat: &State<T>,
    u_prev: &Input<T>,
    setpoint: &Setpoint<T>,
    weights: &Weights<T>,
    params: &ModelParams<T>,
) -> Vec<T> {
    let u = flatten(u_seq);
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    rollout_flat(x_hat, &u, params, &mut states);
    let mut grad = vec![T::zero(); u.len()];
    adjoint_gradient(&states, &u, u_prev, setpoint, weights, params, None, &mut grad);
    grad
}

/// Position weights scaled down as the multipliers grow:
/// `Q_p = Q_p,min + (Q_p,max - Q_p,min) / (sum_l W_l y_l + 1)` with
/// `W_l = b (1 - (l mod N) / N)`.
pub fn adapt_weights<T: Real>(y_star: &[T], weights: &Weights<T>, horizon: usize) -> [T; 3] {
    let n = T::lit(horizon as f64);
    let weighted: T = y_star
        .iter()
        .enumerate()
        .map(|(l, &y)| weights.b * (T::one() - T::lit((l % horizon) as f64) / n) * y)
        .sum();
    let denom = weighted + T::one();
    let mut q = [T::zero(); 3];
    for k in 0..3 {
        q[k] = weights.q_p_min[k] + (weights.q_p_max[k] - weights.q_p_min[k]) / denom;
    }
    q
}

#[cfg(test)]
mod tests {
    use super::super::ObstacleTrack;
    use super::*;
    use proptest::prelude::*;

    fn setup() -> (ModelParams<f64>, Weights<f64>, Setpoint<f64>) {
        let p = ModelParams::default();
        let sp = Setpoint::hover_at([0.0, 0.0, 1.0], &p);
        (p, Weights::default(), sp)
    }

    #[test]
    fn stage_cost_hand_values() {
        let (p, w, sp) = setup();
        let hover = Input::hover(&p);
        assert_eq!(stage_cost(&sp.x_ref, &hover, &hover, &sp, &w), 0.0);

        let w_min = Weights { q_x: [1.0, 1.0, 15.0, 6.0, 6.0, 6.0, 8.0, 8.0], ..w };
        let x = State::at_rest([0.0, 0.0, 2.0]);
        assert_eq!(stage_cost(&x, &hover, &hover, &sp, &w_min), 15.0);

        // Only the input-change term: 20 * 0.1^2, plus Q_u on the same offset.
        let u = Input::new(9.81, 0.1, 0.0);
        let total = stage_cost(&sp.x_ref, &u, &hover, &sp, &w);
        let change_term = total - 10.0 * 0.01;
        assert!((change_term - 0.2).abs() < 1e-12, "{change_term}");
    }

    #[test]
    fn total_cost_zero_at_hover_and_n1_decomposition() {
        let (p, w, sp) = setup();
        let hover = Input::hover(&p);
        assert_eq!(total_cost(&vec![hover; 40], &sp.x_ref, &hover, &sp, &w, &p), 0.0);

        let p1 = ModelParams { horizon: 1, ..p };
        let x = State { p: [0.3, -0.1, 1.2], v: [0.2, 0.0, -0.1], phi: 0.05, theta: -0.02 };
        let u = Input::new(10.0, 0.1, -0.2);
        let direct = stage_cost(&x, &u, &hover, &sp, &w) + terminal_cost(&crate::model::discrete_step(&x, &u, &p1), &sp, &w);
        assert!((total_cost(&[u], &x, &hover, &sp, &w, &p1) - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_hover() {
        let (p, w, sp) = setup();
        let hover = Input::hover(&p);
        let g = cost_gradient(&vec![hover; 40], &sp.x_ref, &hover, &sp, &w, &p);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_only_gradient_closed_form() {
        let (p, w, sp) = setup();
        let w0 = Weights { q_x: [0.0; 8], q_t: [0.0; 8], ..w };
        let u_prev = Input::new(9.0, 0.05, -0.05);
        let u = vec![Input::new(10.0, 0.1, 0.0), Input::new(8.0, -0.2, 0.1), Input::new(11.0, 0.0, 0.2)];
        let g = cost_gradient(&u, &sp.x_ref, &u_prev, &sp, &w0, &p);
        let ur = sp.u_ref.to_array();
        for j in 0..3 {
            let a = u[j].to_array();
            let before = if j == 0 { u_prev.to_array() } else { u[j - 1].to_array() };
            for c in 0..3 {
                let mut expected = 2.0 * w.q_u[c] * (a[c] - ur[c]) + 2.0 * w.q_du[c] * (a[c] - before[c]);
                if j < 2 {
                    expected -= 2.0 * w.q_du[c] * (u[j + 1].to_array()[c] - a[c]);
                }
                assert!((g[3 * j + c] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constraint_map_examples() {
        let p = ModelParams::<f64> { horizon: 4, ..ModelParams::default() };
        let x = State::at_rest([0.0, 0.0, 1.0]);
        let hover = vec![Input::hover(&p); 4];
        let on_top = ObstacleSet { tracks: vec![ObstacleTrack::fixed(Some(1), [0.0, 0.0, 1.0], 0.4, 4)] };
        let f = constraint_map(&hover, &x, &on_top, &p);
        assert_eq!(f.len(), 4);
        assert!(f.iter().all(|&v| (v - 0.16).abs() < 1e-12));

        let far = ObstacleSet { tracks: vec![ObstacleTrack::fixed(Some(1), [5.0, 0.0, 1.0], 0.4, 4), ObstacleTrack::inactive(4)] };
        let f = constraint_map(&hover, &x, &far, &p);
        assert_eq!(f.len(), 8);
        assert!(f[..4].iter().all(|&v| v < 0.0));
        assert!(f[4..].iter().all(|&v| v < -1e5));
    }

    #[test]
    fn adaptive_weight_examples() {
        let w = Weights::<f64>::default();
        assert_eq!(adapt_weights(&vec![0.0; 120], &w, 40), [6.0, 6.0, 45.0]);
        let mut y = vec![0.0; 120];
        y[0] = 100.0;
        let q = adapt_weights(&y, &w, 40);
        for (a, b) in q.iter().zip([3.5, 3.5, 30.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let q = adapt_weights(&vec![1e12; 120], &w, 40);
        for (a, b) in q.iter().zip([1.0, 1.0, 15.0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    /// Independent re-summation: explicit loop over stages with manual Euler steps.
    fn oracle_cost(u: &[Input<f64>], x0: &State<f64>, u_prev: &Input<f64>, sp: &Setpoint<f64>, w: &Weights<f64>, p: &ModelParams<f64>) -> f64 {
        let mut x = *x0;
        let mut total = 0.0;
        for j in 0..u.len() {
            let prev = if j == 0 { *u_prev } else { u[j - 1] };
            let xa = x.to_array();
            let ra = sp.x_ref.to_array();
            for k in 0..8 {
                total += w.q_x[k] * (ra[k] - xa[k]).powi(2);
            }
            for k in 0..3 {
                total += w.q_u[k] * (sp.u_ref.to_array()[k] - u[j].to_array()[k]).powi(2);
                total += w.q_du[k] * (u[j].to_array()[k] - prev.to_array()[k]).powi(2);
            }
            let d = crate::model::continuous_dynamics(&x, &u[j], p);
            x = State::from_array(std::array::from_fn(|k| xa[k] + p.dt * d[k]));
        }
        let xa = x.to_array();
        for k in 0..8 {
            total += w.q_t[k] * (sp.x_ref.to_array()[k] - xa[k]).powi(2);
        }
        total
    }

    fn plan(len: usize) -> impl Strategy<Value = Vec<Input<f64>>> {
        prop::collection::vec(
            (5.0..12.5f64, -0.25..0.25f64, -0.25..0.25f64).prop_map(|(a, b, c)| Input::new(a, b, c)),
            len,
        )
    }

    fn state() -> impl Strategy<Value = State<f64>> {
        (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(-1.0..1.0f64), -0.2..0.2f64, -0.2..0.2f64)
            .prop_map(|(p, v, phi, theta)| State { p, v, phi, theta })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn total_cost_matches_resummation(u in plan(3), x0 in state(), len in 1usize..=3) {
            let (p, w, sp) = setup();
            let p = ModelParams { horizon: len, ..p };
            let u = &u[..len];
            let prev = Input::new(9.5, 0.01, -0.02);
            let a = total_cost(u, &x0, &prev, &sp, &w, &p);
            let b = oracle_cost(u, &x0, &prev, &sp, &w, &p);
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }

        #[test]
        fn adaptive_weights_bounded_and_monotone(
            y in prop::collection::vec(0.0..1e3f64, 12),
            bump in 0usize..12,
            extra in 0.0..1e3f64,
        ) {
            let w = Weights::<f64>::default();
            let q = adapt_weights(&y, &w, 4);
            for k in 0..3 {
                prop_assert!(q[k] >= w.q_p_min[k] && q[k] <= w.q_p_max[k]);
            }
            let mut y2 = y.clone();
            y2[bump] += extra;
            let q2 = adapt_weights(&y2, &w, 4);
            for k in 0..3 {
                prop_assert!(q2[k] <= q[k]);
            }
        }
    }
}
