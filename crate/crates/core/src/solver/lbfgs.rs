use crate::scalar::{dot, norm_sq, Real};

/// Limited-memory inverse-Hessian approximation applied by the two-loop recursion.
///
/// Pairs `(s, y)` are rejected unless `s'y > sy_epsilon * |s|^2` and the C-BFGS
/// condition `s'y / |s|^2 >= cbfgs_epsilon * |g|` hold.
#[derive(Debug, Clone)]
pub struct Lbfgs<T> {
    s: Vec<Vec<T>>,
    y: Vec<Vec<T>>,
    rho: Vec<T>,
    alpha: Vec<T>,
    /// Index of the newest pair.
    head: usize,
    len: usize,
    h0: T,
    sy_epsilon: T,
    cbfgs_epsilon: T,
}

impl<T: Real> Lbfgs<T> {
    pub fn new(n: usize, memory: usize) -> Self {
        assert!(memory > 0, "L-BFGS memory must be positive");
        Self {
            s: vec![vec![T::zero(); n]; memory],
            y: vec![vec![T::zero(); n]; memory],
            rho: vec![T::zero(); memory],
            alpha: vec![T::zero(); memory],
            head: 0,
            len: 0,
            h0: T::one(),
            sy_epsilon: T::lit(1e-10),
            cbfgs_epsilon: T::lit(1e-8),
        }
    }

    pub fn dim(&self) -> usize {
        self.s[0].len()
    }

    pub fn memory(&self) -> usize {
        self.s.len()
    }

    pub fn active(&self) -> usize {
        self.len
    }

    pub fn reset(&mut self) {
        self.len = 0;
        self.h0 = T::one();
    }

    /// Stores the pair `s = x_new - x_old`, `y = g_new - g_old`.
    /// `g_norm` is the norm of the current residual, used by the C-BFGS test.
    /// Returns whether the pair was accepted.
    // Negated comparisons also reject NaN curvature.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn update(&mut self, s: &[T], y: &[T], g_norm: T) -> bool {
        let sy = dot(s, y);
        let ss = norm_sq(s);
        if !(ss > T::zero()) || !(sy > self.sy_epsilon * ss) || sy / ss < self.cbfgs_epsilon * g_norm {
            return false;
        }
        let yy = norm_sq(y);
        let slot = if self.len == 0 { 0 } else { (self.head + 1) % self.memory() };
        self.s[slot].copy_from_slice(s);
        self.y[slot].copy_from_slice(y);
        self.rho[slot] = T::one() / sy;
        self.head = slot;
        self.len = (self.len + 1).min(self.memory());
        self.h0 = sy / yy;
        true
    }

    /// Overwrites `g` with `H g`.
    pub fn apply(&mut self, g: &mut [T]) {
        let m = self.memory();
        let mut idx = self.head;
        for _ in 0..self.len {
            let a = self.rho[idx] * dot(&self.s[idx], g);
            self.alpha[idx] = a;
            for (gi, &yi) in g.iter_mut().zip(&self.y[idx]) {
                *gi = *gi - a * yi;
            }
            idx = (idx + m - 1) % m;
        }
        for gi in g.iter_mut() {
            *gi = *gi * self.h0;
        }
        // Oldest to newest.
        let mut idx = (self.head + m + 1 - self.len) % m;
        for _ in 0..self.len {
            let b = self.rho[idx] * dot(&self.y[idx], g);
            let coef = self.alpha[idx] - b;
            for (gi, &si) in g.iter_mut().zip(&self.s[idx]) {
                *gi = *gi + coef * si;
            }
            idx = (idx + 1) % m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_memory_is_identity() {
        let mut l = Lbfgs::<f64>::new(3, 5);
        let mut g = [1.0, -2.0, 3.0];
        l.apply(&mut g);
        assert_eq!(g, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn rejects_negative_curvature() {
        let mut l = Lbfgs::<f64>::new(2, 3);
        assert!(!l.update(&[1.0, 0.0], &[-1.0, 0.0], 1.0));
        assert_eq!(l.active(), 0);
    }

    #[test]
    fn secant_equation_holds_for_newest_pair() {
        let mut l = Lbfgs::<f64>::new(3, 4);
        let pairs = [
            ([1.0, 0.0, 0.0], [2.0, 0.1, 0.0]),
            ([0.0, 1.0, 0.5], [0.1, 3.0, 1.0]),
            ([0.3, -0.2, 1.0], [0.5, -0.4, 4.0]),
        ];
        for (s, y) in &pairs {
            assert!(l.update(s, y, 1.0));
        }
        let (s, y) = pairs[2];
        let mut hy = y;
        l.apply(&mut hy);
        for i in 0..3 {
            assert!((hy[i] - s[i]).abs() < 1e-12, "{hy:?} vs {s:?}");
        }
    }

    #[test]
    fn quadratic_inverse_recovered_after_n_steps() {
        // Diagonal Hessian diag(1, 4); exact pairs along the axes reproduce the inverse.
        let mut l = Lbfgs::<f64>::new(2, 5);
        assert!(l.update(&[1.0, 0.0], &[1.0, 0.0], 1.0));
        assert!(l.update(&[0.0, 1.0], &[0.0, 4.0], 1.0));
        let mut g = [2.0, 8.0];
        l.apply(&mut g);
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] - 2.0).abs() < 1e-12, "{g:?}");
    }

    #[test]
    fn ring_buffer_wraps() {
        let mut l = Lbfgs::<f64>::new(1, 2);
        for k in 1..=5 {
            assert!(l.update(&[1.0], &[k as f64], 1.0));
        }
        assert_eq!(l.active(), 2);
        let mut g = [5.0];
        l.apply(&mut g);
        assert!((g[0] - 1.0).abs() < 1e-12);
    }
}
