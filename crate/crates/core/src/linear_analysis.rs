//! Linearization of the flow equation along a flowline.
//!
//! For a flowline `u` the linearized operator is `D psi = psi' + A(s) psi` with
//! `A(s) = Hess f(u(s))`; its formal adjoint is `D* sigma = -sigma' + A(s)^T sigma`, so the
//! cokernel is spanned by solutions of `sigma' = A sigma` decaying at both ends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::flowline::{Flowline, TailData};
use crate::integrator::Dopri5;
use crate::morse_system::{CriticalPoint, GradientField, M2, V2};

/// Principal-angle threshold separating "intersecting" from "transverse" subspaces.
pub const ANGLE_TOL: f64 = 1e-6;
/// Principal angles below this (and above [`ANGLE_TOL`]) trigger a warning.
pub const ANGLE_WARN: f64 = 1e-3;

/// `ind(source) - ind(target)`.
pub fn fredholm_index(u: &Flowline) -> i64 {
    u.source_cp.index as i64 - u.target_cp.index as i64
}

/// The linearized operator along a flowline.
pub struct LinearizedPath<'a, F> {
    pub base: &'a Flowline,
    field: &'a F,
}

impl<'a, F: GradientField> LinearizedPath<'a, F> {
    pub fn new(field: &'a F, base: &'a Flowline) -> Self {
        Self { base, field }
    }

    /// `A(s) = Hess f(u(s))`; constant critical Hessians on the chart tails.
    pub fn a(&self, s: f64) -> M2 {
        if s <= self.base.exit_time {
            return self.base.source_cp.hessian();
        }
        if s >= self.base.entry_time {
            return self.base.target_cp.hessian();
        }
        self.field.jacobian(&self.base.eval(s))
    }

    /// The base flowline's uniform grid on `[-L, L]`.
    pub fn grid(&self) -> Vec<f64> {
        self.base.samples().into_iter().map(|(s, _)| s).collect()
    }

    /// Fundamental solution of `psi' + A psi = 0` from `s` to `t`.
    pub fn resolvent(&self, s: f64, t: f64) -> M2 {
        if s == t {
            return M2::identity();
        }
        let rhs = |tau: f64, y: &[f64; 4]| {
            let a = self.a(tau);
            let m = -a * M2::new(y[0], y[2], y[1], y[3]);
            [m[(0, 0)], m[(1, 0)], m[(0, 1)], m[(1, 1)]]
        };
        let y = Dopri5::new(1e-12, 1e-14, 0.01)
            .integrate(&rhs, s, &[1.0, 0.0, 0.0, 1.0], t, 0.05)
            .expect("linear resolvent integration");
        M2::new(y[0], y[2], y[1], y[3])
    }

    /// Solves `y' = sign * A y` from `s` to `t`.
    fn propagate(&self, v: V2, s: f64, t: f64, sign: f64) -> V2 {
        let rhs = |tau: f64, y: &[f64; 2]| {
            let w = self.a(tau) * V2::new(y[0], y[1]) * sign;
            [w.x, w.y]
        };
        let y = Dopri5::new(1e-12, 1e-14, 0.01)
            .integrate(&rhs, s, &[v.x, v.y], t, 0.05)
            .expect("linear propagation");
        V2::new(y[0], y[1])
    }

    /// `max_s |Psi(0, s) u'(0) - u'(s)| / |u'(0)|` over the given points.
    pub fn kernel_residual(&self, points: &[f64]) -> f64 {
        let v0 = self.base.velocity(0.0);
        points
            .iter()
            .map(|&s| (self.propagate(v0, 0.0, s, -1.0) - self.base.velocity(s)).norm() / v0.norm())
            .fold(0.0, f64::max)
    }

    /// Kernel and cokernel dimensions from the intersection of the propagated unstable
    /// subspace of the source with the stable subspace of the target at `s = 0`.
    pub fn kernel_cokernel_dims(&self) -> KernelCokernel {
        let b = self.base;
        let unstable: Vec<V2> = b
            .source_cp
            .unstable_modes()
            .into_iter()
            .map(|m| self.propagate(b.source_cp.eigenvectors[m], b.exit_time, 0.0, -1.0))
            .collect();
        let stable: Vec<V2> = b
            .target_cp
            .stable_modes()
            .into_iter()
            .map(|m| self.propagate(b.target_cp.eigenvectors[m], b.entry_time, 0.0, -1.0))
            .collect();
        let qu = orthonormal(&unstable);
        let qs = orthonormal(&stable);
        let mut angles: Vec<f64> = Vec::new();
        if !qu.is_empty() {
            let mut m = nalgebra::DMatrix::<f64>::zeros(2, qu.len());
            for (j, q) in qu.iter().enumerate() {
                let r = qs.iter().fold(*q, |acc, e| acc - e * e.dot(q));
                m[(0, j)] = r.x;
                m[(1, j)] = r.y;
            }
            angles = m.singular_values().iter().copied().collect();
            angles.truncate(qu.len());
        }
        let ker = angles.iter().filter(|&&a| a < ANGLE_TOL).count();
        let warnings = angles
            .iter()
            .filter(|&&a| a >= ANGLE_TOL && a < ANGLE_WARN)
            .map(|a| format!("near-degenerate transversality: principal angle {a:.3e}"))
            .collect();
        let min_angle = angles.iter().copied().filter(|&a| a >= ANGLE_TOL).fold(f64::INFINITY, f64::min);
        let index = fredholm_index(b);
        KernelCokernel {
            ker,
            coker: (ker as i64 - index) as usize,
            reduced_ker: ker.saturating_sub(1),
            min_angle,
            warnings,
        }
    }

    /// The normalized cokernel generator with `sigma(0)` along `+theta`.
    pub fn cokernel_element(&self) -> Result<CokernelElement> {
        let kc = self.kernel_cokernel_dims();
        if kc.coker != 1 {
            return Err(ObgError::Precondition(format!("cokernel dimension {} (expected 1)", kc.coker)));
        }
        let b = self.base;
        let w = b.velocity(0.0);
        let mut v0 = V2::new(-w.y, w.x).normalize();
        if v0.x < 0.0 {
            v0 = -v0;
        }
        let k0 = b.node_s.iter().position(|&s| s.abs() < 1e-12).ok_or_else(|| {
            ObgError::SegmentTooShort { exit: b.exit_time }
        })?;
        let n = b.node_s.len();
        let mut sigma = vec![V2::zeros(); n];
        sigma[k0] = v0;
        let mut stepper = Dopri5::new(1e-12, 1e-14, 0.01);
        let rhs = |tau: f64, y: &[f64; 2]| {
            let w = self.a(tau) * V2::new(y[0], y[1]);
            [w.x, w.y]
        };
        for k in k0..n - 1 {
            let y = stepper
                .integrate(&rhs, b.node_s[k], &[sigma[k].x, sigma[k].y], b.node_s[k + 1], 0.05)
                .ok_or(ObgError::NonconvergentOrbit { time: b.node_s[k], partial: Vec::new() })?;
            sigma[k + 1] = V2::new(y[0], y[1]);
        }
        let mut stepper = Dopri5::new(1e-12, 1e-14, 0.01);
        for k in (1..=k0).rev() {
            let y = stepper
                .integrate(&rhs, b.node_s[k], &[sigma[k].x, sigma[k].y], b.node_s[k - 1], 0.05)
                .ok_or(ObgError::NonconvergentOrbit { time: b.node_s[k], partial: Vec::new() })?;
            sigma[k - 1] = V2::new(y[0], y[1]);
        }

        // Tails: only the mode decaying away from the segment may be present.
        let src_tail = decaying_tail(&b.source_cp, sigma[0], b.exit_time, true)?;
        let tgt_tail = decaying_tail(&b.target_cp, sigma[n - 1], b.entry_time, false)?;

        // L2 norm: corrected trapezoid on the nodes plus exact exponential tails.
        let g = |k: usize| sigma[k].norm_squared();
        let dg = |k: usize| 2.0 * sigma[k].dot(&(self.a(b.node_s[k]) * sigma[k]));
        let mut norm2 = 0.0;
        for k in 0..n - 1 {
            let h = b.node_s[k + 1] - b.node_s[k];
            norm2 += 0.5 * h * (g(k) + g(k + 1)) + h * h * (dg(k) - dg(k + 1)) / 12.0;
        }
        norm2 += g(0) / (2.0 * src_tail.rate.abs()) + g(n - 1) / (2.0 * tgt_tail.rate.abs());
        let scale = 1.0 / norm2.sqrt();
        for s in sigma.iter_mut() {
            *s *= scale;
        }
        let scale_tail = |t: TailData| TailData { coefficient: t.coefficient * scale, ..t };
        let slopes = sigma.iter().zip(&b.node_s).map(|(s, &t)| self.a(t) * s).collect();
        Ok(CokernelElement {
            node_s: b.node_s.clone(),
            sigma,
            slopes,
            v0: v0 * scale,
            tails: [scale_tail(src_tail), scale_tail(tgt_tail)],
            l2_norm: 1.0,
            source_cp: b.source_cp.clone(),
            target_cp: b.target_cp.clone(),
            exit_time: b.exit_time,
            entry_time: b.entry_time,
            window: b.window,
            ds: b.ds,
        })
    }

    /// `max |<sigma, D psi>| / |psi|` over random smooth bumps `psi`.
    pub fn adjoint_pairing_check(&self, sigma: &CokernelElement, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..trials {
            let c = rng.gen_range(self.base.exit_time - 2.0..3.0);
            let w = rng.gen_range(0.3..2.0);
            let v0 = V2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let v1 = V2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let bump = Bump { centre: c, width: w, v0, v1 };
            let (pair, norm) = self.pair_with(sigma, |s| bump.eval(s));
            worst = worst.max(pair.abs() / norm);
        }
        worst
    }

    /// `(<sigma, D psi>, |psi|)` for a compactly supported section given with its derivative.
    pub fn pair_with(&self, sigma: &CokernelElement, psi: impl Fn(f64) -> (V2, V2)) -> (f64, f64) {
        let h = self.base.ds / 4.0;
        let lo = -self.base.window;
        let m = (2.0 * self.base.window / h).round() as usize;
        let (mut pair, mut norm2) = (0.0, 0.0);
        for j in 0..=m {
            let s = lo + j as f64 * h;
            let (p, dp) = psi(s);
            if p == V2::zeros() && dp == V2::zeros() {
                continue;
            }
            let d = dp + self.a(s) * p;
            pair += h * sigma.eval(s).dot(&d);
            norm2 += h * p.norm_squared();
        }
        (pair, norm2.sqrt())
    }
}

struct Bump {
    centre: f64,
    width: f64,
    v0: V2,
    v1: V2,
}

impl Bump {
    /// `exp(-1/(1-x^2)) (v0 + v1 x)` with `x = (s - centre)/width`, and its `s`-derivative.
    fn eval(&self, s: f64) -> (V2, V2) {
        let x = (s - self.centre) / self.width;
        if x.abs() >= 1.0 {
            return (V2::zeros(), V2::zeros());
        }
        let q = 1.0 - x * x;
        let e = (-1.0 / q).exp();
        let de = e * (-2.0 * x / (q * q));
        let p = (self.v0 + self.v1 * x) * e;
        let dp = ((self.v0 + self.v1 * x) * de + self.v1 * e) / self.width;
        (p, dp)
    }
}

fn orthonormal(vs: &[V2]) -> Vec<V2> {
    let mut out: Vec<V2> = Vec::new();
    for v in vs {
        let r = out.iter().fold(*v, |acc, e| acc - e * e.dot(&acc));
        if r.norm() > 1e-12 * v.norm().max(1e-300) {
            out.push(r.normalize());
        }
    }
    out
}

/// Splits `sigma` at a chart boundary into eigen-components and checks that only modes
/// decaying away from the segment are present.
fn decaying_tail(cp: &CriticalPoint, sigma: V2, s_ref: f64, source_end: bool) -> Result<TailData> {
    let c = cp.coords(&sigma);
    // sigma(s) = e^{lambda (s - s_ref)} c_j along mode j.  Decay as s -> -inf needs
    // lambda > 0 (source end); decay as s -> +inf needs lambda < 0 (target end).
    let decays = |l: f64| if source_end { l > 0.0 } else { l < 0.0 };
    let (mut good, mut bad): (Option<usize>, f64) = (None, 0.0);
    for j in 0..2 {
        if decays(cp.eigenvalues[j]) {
            if good.is_none() || c[j].abs() > c[good.unwrap()].abs() {
                good = Some(j);
            }
        } else {
            bad = bad.max(c[j].abs());
        }
    }
    let end = if source_end { "source" } else { "target" };
    let j = good.ok_or(ObgError::NotCokernel { fraction: 1.0, end })?;
    let fraction = bad / sigma.norm();
    if fraction > 1e-6 {
        return Err(ObgError::NotCokernel { fraction, end });
    }
    let lambda = cp.eigenvalues[j];
    let mut coefficient = V2::zeros();
    coefficient[j] = c[j] * (-lambda * s_ref).exp();
    Ok(TailData { rate: lambda, mode: j, coefficient, fit_residual: fraction })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelCokernel {
    pub ker: usize,
    pub coker: usize,
    /// Kernel dimension modulo the translation direction `u'`.
    pub reduced_ker: usize,
    /// Smallest principal angle counted as transverse.
    pub min_angle: f64,
    pub warnings: Vec<String>,
}

/// A cokernel generator `sigma` (solution of `sigma' = A sigma`), stored on the base
/// flowline's nodes with exact exponential tails beyond them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CokernelElement {
    pub node_s: Vec<f64>,
    pub sigma: Vec<V2>,
    pub slopes: Vec<V2>,
    pub v0: V2,
    /// `b_-` (source end, `sigma ~ e^{rate s} b_-` as `s -> -inf`) and `b_+`.
    pub tails: [TailData; 2],
    pub l2_norm: f64,
    pub source_cp: CriticalPoint,
    pub target_cp: CriticalPoint,
    pub exit_time: f64,
    pub entry_time: f64,
    pub window: f64,
    pub ds: f64,
}

impl CokernelElement {
    pub fn eval(&self, s: f64) -> V2 {
        if s <= self.exit_time {
            let t = &self.tails[0];
            return self.source_cp.displacement(&t.coefficient) * (t.rate * s).exp();
        }
        if s >= self.entry_time {
            let t = &self.tails[1];
            return self.target_cp.displacement(&t.coefficient) * (t.rate * s).exp();
        }
        let n = self.node_s.len();
        let k = self.node_s.partition_point(|&t| t <= s).saturating_sub(1).min(n - 2);
        let (s0, s1) = (self.node_s[k], self.node_s[k + 1]);
        let h = s1 - s0;
        let t = (s - s0) / h;
        let (t2, t3) = (t * t, t * t * t);
        self.sigma[k] * (2.0 * t3 - 3.0 * t2 + 1.0)
            + self.slopes[k] * (h * (t3 - 2.0 * t2 + t))
            + self.sigma[k + 1] * (-2.0 * t3 + 3.0 * t2)
            + self.slopes[k + 1] * (h * (t3 - t2))
    }

    /// `b_-` and `b_+` as ambient vectors.
    pub fn b_minus(&self) -> V2 {
        self.source_cp.displacement(&self.tails[0].coefficient)
    }

    pub fn b_plus(&self) -> V2 {
        self.target_cp.displacement(&self.tails[1].coefficient)
    }

    /// Samples on the uniform grid covering `[-L, L]`.
    pub fn samples(&self) -> Vec<(f64, V2)> {
        let n = (self.window / self.ds).round() as i64;
        (-n..=n).map(|j| (j as f64 * self.ds, self.eval(j as f64 * self.ds))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowline::{find_connections, FlowlineOptions};
    use crate::morse_system::MorseSystem;

    fn u0(s: &MorseSystem) -> Flowline {
        find_connections(s, 1, 2, &FlowlineOptions::default()).unwrap().remove(0)
    }

    #[test]
    fn resolvent_cocycle_and_tail_exponential() {
        let s = MorseSystem::default_torus();
        let u = u0(&s);
        let lp = LinearizedPath::new(&s, &u);
        let (a, b, c) = (-2.3, 0.4, 1.7);
        let lhs = lp.resolvent(b, c) * lp.resolvent(a, b);
        assert!((lhs - lp.resolvent(a, c)).norm() < 1e-8);
        let h = u.target_cp.hessian();
        let psi = lp.resolvent(2.0, 3.0);
        let expected = M2::new((-h[(0, 0)]).exp(), 0.0, 0.0, (-h[(1, 1)]).exp());
        assert!((psi - expected).norm() < 1e-9);
        assert!(lp.kernel_residual(&[-3.0, -1.0, 0.5, 2.0]) < 1e-6);
    }

    #[test]
    fn saddle_connection_has_one_cokernel_direction() {
        let s = MorseSystem::default_torus();
        let u = u0(&s);
        let lp = LinearizedPath::new(&s, &u);
        let kc = lp.kernel_cokernel_dims();
        assert_eq!((kc.ker, kc.coker), (1, 1));
        let sig = lp.cokernel_element().unwrap();
        assert!((sig.tails[0].rate - 1.0).abs() < 1e-12);
        assert!((sig.tails[1].rate + 1.0).abs() < 1e-12);
        for (_, v) in sig.samples() {
            assert!(v.y.abs() <= 1e-9 * v.norm().max(1e-300));
            assert!(v.x >= 0.0);
        }
        assert!(lp.adjoint_pairing_check(&sig, 20, 7) < 1e-6);
    }
}

#[cfg(test)]
mod pairing_tests {
    use super::*;
    use crate::flowline::{FlowlineOptions, FrontBack, LeftRight, TorusCatalog};
    use crate::morse_system::MorseSystem;

    #[test]
    fn transverse_dims_and_pairing_signs() {
        let s = MorseSystem::default_torus();
        let cat = TorusCatalog::build(&s, &FlowlineOptions::default()).unwrap();
        for f in cat.transverse() {
            let kc = LinearizedPath::new(&s, f).kernel_cokernel_dims();
            assert_eq!((kc.ker, kc.coker), (1, 0));
        }
        for side in [LeftRight::Left, LeftRight::Right] {
            let u0 = cat.zero(side);
            let sig = LinearizedPath::new(&s, u0).cokernel_element().unwrap();
            let (bm, bp) = (sig.b_minus(), sig.b_plus());
            assert!(bm.x > 0.0 && bp.x > 0.0);
            let am_f = cat.minus(FrontBack::Front).tails[1].vector(&cat.minus(FrontBack::Front).target_cp);
            let am_b = cat.minus(FrontBack::Back).tails[1].vector(&cat.minus(FrontBack::Back).target_cp);
            let ap_f = cat.plus(FrontBack::Front).tails[0].vector(&cat.plus(FrontBack::Front).source_cp);
            let ap_b = cat.plus(FrontBack::Back).tails[0].vector(&cat.plus(FrontBack::Back).source_cp);
            assert!(am_f.dot(&bm) < 0.0 && am_b.dot(&bm) > 0.0);
            assert!(ap_f.dot(&bp) < 0.0 && ap_b.dot(&bp) > 0.0);
        }
    }
}
