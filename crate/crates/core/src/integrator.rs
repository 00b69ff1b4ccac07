//! Dormand-Prince 5(4) explicit Runge-Kutta stepper on fixed-size states.
//!
//! Two entry points are used by the rest of the crate: [`dp45_step`], a single fixed step
//! returning the fifth-order solution and the embedded error estimate (used for event
//! location by bisection on the step fraction), and [`Dopri5::step`], one accepted adaptive
//! step with an upper bound on the step size.

use crate::scalar::{lit, Real};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One fixed Dormand-Prince step; returns `(y5, y5 - y4)`.
pub fn dp45_step<T: Real, const N: usize, F>(f: &F, t: T, y: &[T; N], h: T) -> ([T; N], [T; N])
where
    F: Fn(T, &[T; N]) -> [T; N],
{
    let mut k = [[T::zero(); N]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a: T = lit(A[s][j]);
            if a != T::zero() {
                for i in 0..N {
                    ys[i] = ys[i] + h * a * kj[i];
                }
            }
        }
        k[s] = f(t + h * lit(C[s]), &ys);
    }
    let mut y5 = *y;
    let mut err = [T::zero(); N];
    for s in 0..7 {
        let b5: T = lit(B5[s]);
        let db: T = lit(B5[s] - B4[s]);
        for i in 0..N {
            y5[i] = y5[i] + h * b5 * k[s][i];
            err[i] = err[i] + h * db * k[s][i];
        }
    }
    (y5, err)
}

/// Adaptive Dormand-Prince integrator state (the step-size controller).
#[derive(Clone, Debug)]
pub struct Dopri5<T> {
    pub rtol: T,
    pub atol: T,
    /// Suggested size of the next step.
    pub h: T,
    pub h_min: T,
    /// Number of rejected steps so far.
    pub rejected: usize,
}

/// Outcome of an adaptive step.
#[derive(Clone, Copy, Debug)]
pub struct Accepted<T, const N: usize> {
    pub t: T,
    pub y: [T; N],
    pub h: T,
}

impl<T: Real> Dopri5<T> {
    pub fn new(rtol: T, atol: T, h0: T) -> Self {
        Self { rtol, atol, h: h0, h_min: lit(1e-14), rejected: 0 }
    }

    /// Takes one accepted step of size at most `h_max` (which may be negative for backward
    /// integration; the sign of `h_max` sets the direction).
    pub fn step<const N: usize, F>(&mut self, f: &F, t: T, y: &[T; N], h_max: T) -> Option<Accepted<T, N>>
    where
        F: Fn(T, &[T; N]) -> [T; N],
    {
        let dir = h_max.signum();
        let cap = h_max.abs();
        let mut h = self.h.abs().min(cap);
        loop {
            if h < self.h_min {
                return None;
            }
            let (y5, err) = dp45_step(f, t, y, dir * h);
            let mut e = T::zero();
            for i in 0..N {
                let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
                let r = err[i] / sc;
                e = e + r * r;
            }
            e = (e / lit(N as f64)).sqrt();
            if !e.is_finite() {
                self.rejected += 1;
                h = h * lit(0.1);
                continue;
            }
            let fac = if e == T::zero() {
                lit(5.0)
            } else {
                (lit::<T>(0.9) * e.powf(lit(-0.2))).min(lit(5.0)).max(lit(0.2))
            };
            if e <= T::one() {
                let taken = dir * h;
                self.h = (h * fac).max(self.h_min);
                return Some(Accepted { t: t + taken, y: y5, h: taken });
            }
            self.rejected += 1;
            h = h * fac.min(lit(0.9));
        }
    }

    /// Integrates from `t0` to `t1` exactly, returning the final state.
    pub fn integrate<const N: usize, F>(&mut self, f: &F, t0: T, y0: &[T; N], t1: T, h_max: T) -> Option<[T; N]>
    where
        F: Fn(T, &[T; N]) -> [T; N],
    {
        let mut t = t0;
        let mut y = *y0;
        let dir = (t1 - t0).signum();
        let tiny: T = lit(1e-14);
        while (t1 - t) * dir > tiny * (T::one() + t1.abs()) {
            let remaining = (t1 - t).abs();
            let cap = h_max.abs().min(remaining);
            let acc = self.step(f, t, &y, dir * cap)?;
            t = if (acc.h.abs() - remaining).abs() <= tiny * (T::one() + t1.abs()) { t1 } else { acc.t };
            y = acc.y;
        }
        Some(y)
    }
}
