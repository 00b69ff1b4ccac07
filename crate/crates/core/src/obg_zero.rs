//! 0-gluing: gluing profile, cutoff family, pregluing, the linearized obstruction sections
//! `s00` (closed form) and `s0` (quadrature), slice zeros, the sign verdict and an
//! independent shooting oracle.
//!
//! Glued-frame conventions.  `u_-` is not translated and enters the `x_0` chart at `s = 1`.
//! `u_0` is translated by `shift_0 = 1 + R_- + R_0^- - e_0` so that it leaves the `x_0`
//! chart at `1 + R_- + R_0^-` and enters the `x_1` chart at
//! `M_0 = 1 + R_- + R_0^- + T_0` (`T_0 = 1 - e_0` its transit time).  `u_+` is translated by
//! `shift_+ = M_0 + R_0^+ + R_+ - e_+`.  With `T_0 = 2` and `e_+ = -1` these are the classical
//! translations `2 + R_- + R_0^-` and `4 + R_- + R_0 + R_+`, and `M_0 + R_0^+` is
//! `3 + R_- + R_0`.

use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::flowline::{Flowline, FlowlineOptions};
use crate::linear_analysis::{CokernelElement, LinearizedPath};
use crate::morse_system::{GradientField, V2};
use crate::orbit::{trace, StopRule, TraceOptions};
use crate::scalar::{lit, smoothstep, smoothstep_d1, Real};

/// Pairings below this magnitude make the sign criterion inapplicable.
pub const DEGENERATE_PAIRING: f64 = 1e-8;

/// Gluing parameters.  `R_pm = R_0^pm / A`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluingProfile<T = f64> {
    pub r0_minus: T,
    pub r0_plus: T,
    pub a: u32,
    pub h_minus: T,
    pub h_plus: T,
    pub h0_minus: T,
    pub h0_plus: T,
    pub gamma: T,
}

impl<T: Real> GluingProfile<T> {
    /// Default shape parameters (`A = 4`, `h = 0.6`, `gamma = 0.1`).
    pub fn new(r0_minus: T, r0_plus: T) -> Self {
        Self {
            r0_minus,
            r0_plus,
            a: 4,
            h_minus: lit(0.6),
            h_plus: lit(0.6),
            h0_minus: lit(0.6),
            h0_plus: lit(0.6),
            gamma: lit(0.1),
        }
    }

    pub fn with_r0(&self, r0_minus: T, r0_plus: T) -> Self {
        Self { r0_minus, r0_plus, ..*self }
    }

    pub fn r_minus(&self) -> T {
        self.r0_minus / lit(self.a as f64)
    }

    pub fn r_plus(&self) -> T {
        self.r0_plus / lit(self.a as f64)
    }

    pub fn r0(&self) -> T {
        self.r0_minus + self.r0_plus
    }

    /// `1 + 1/A`, the factor relating `R_- + R_0^-` to `R_0^-`.
    pub fn kappa(&self) -> T {
        T::one() + T::one() / lit(self.a as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let half: T = lit(0.5);
        for (name, h) in [
            ("h_minus", self.h_minus),
            ("h_plus", self.h_plus),
            ("h0_minus", self.h0_minus),
            ("h0_plus", self.h0_plus),
        ] {
            if !(h > half && h < T::one()) {
                return Err(ObgError::Config(format!("{name} must lie in (1/2, 1)")));
            }
        }
        if !(self.gamma > T::zero() && self.gamma < lit(0.25)) {
            return Err(ObgError::Config("gamma must lie in (0, 1/4)".into()));
        }
        if self.a < 2 {
            return Err(ObgError::Config("A must be at least 2".into()));
        }
        if !(self.r0_minus > T::zero() && self.r0_plus > T::zero()) {
            return Err(ObgError::Config("R_0^pm must be positive".into()));
        }
        Ok(())
    }
}

/// A closed interval; infinite ends are represented by infinities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T = f64> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> Interval<T> {
    pub fn contains(&self, s: T) -> bool {
        s >= self.lo && s <= self.hi
    }

    pub fn len(&self) -> T {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    pub fn intersects(&self, o: &Self) -> bool {
        self.lo <= o.hi && o.lo <= self.hi
    }
}

/// Supports of the cutoffs and of their derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSupports<T = f64> {
    pub beta_minus: Interval<T>,
    pub d_beta_minus: Interval<T>,
    pub beta_0: Interval<T>,
    pub d_beta_0_left: Interval<T>,
    pub d_beta_0_right: Interval<T>,
    pub beta_plus: Interval<T>,
    pub d_beta_plus: Interval<T>,
}

/// The three cutoffs `beta_-`, `beta_0`, `beta_+` for one profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffFamily<T = f64> {
    pub profile: GluingProfile<T>,
    /// Transit time `T_0` of the middle flowline between its two charts.
    pub transit: T,
    pub supports: CutoffSupports<T>,
}

impl<T: Real> CutoffFamily<T> {
    /// Builds the cutoffs; `transit = 2` gives the classical frame.
    pub fn new(profile: GluingProfile<T>, transit: T) -> Result<Self> {
        profile.validate()?;
        let p = &profile;
        let one = T::one();
        let g1 = one + p.gamma;
        let (rm, rp) = (p.r_minus(), p.r_plus());
        let left = one + rm;
        let m0 = left + p.r0_minus + transit;
        let right = m0 + p.r0_plus;
        let supports = CutoffSupports {
            beta_minus: Interval { lo: T::neg_infinity(), hi: left + p.h0_minus * g1 * p.r0_minus },
            d_beta_minus: Interval {
                lo: left + p.h0_minus * p.r0_minus,
                hi: left + p.h0_minus * g1 * p.r0_minus,
            },
            beta_0: Interval { lo: left - p.h_minus * g1 * rm, hi: right + p.h_plus * g1 * rp },
            d_beta_0_left: Interval { lo: left - p.h_minus * g1 * rm, hi: left - p.h_minus * rm },
            d_beta_0_right: Interval { lo: right + p.h_plus * rp, hi: right + p.h_plus * g1 * rp },
            beta_plus: Interval { lo: right - g1 * p.h0_plus * p.r0_plus, hi: T::infinity() },
            d_beta_plus: Interval { lo: right - g1 * p.h0_plus * p.r0_plus, hi: right - p.h0_plus * p.r0_plus },
        };
        let fam = Self { profile, transit, supports };
        let s = &fam.supports;
        let split = fam.split();
        if s.d_beta_0_left.lo <= one {
            return Err(ObgError::ProfileTooTight("supp beta_0' reaches the source segment of u_-".into()));
        }
        if s.d_beta_minus.hi >= split || s.d_beta_plus.lo <= split {
            return Err(ObgError::ProfileTooTight("cutoff transition crosses the middle of u_0".into()));
        }
        if s.d_beta_minus.intersects(&s.d_beta_0_left) || s.d_beta_plus.intersects(&s.d_beta_0_right) {
            return Err(ObgError::ProfileTooTight("overlapping cutoff transitions".into()));
        }
        if s.d_beta_minus.hi > left + p.r0_minus || s.d_beta_plus.lo < m0 {
            return Err(ObgError::ProfileTooTight("cutoff transition leaves the Morse chart".into()));
        }
        Ok(fam)
    }

    /// Point where `beta_0` switches from its rising to its falling branch.
    pub fn split(&self) -> T {
        let p = &self.profile;
        T::one() + p.r_minus() + p.r0_minus + self.transit / lit(2.0)
    }

    /// Entry time `M_0` of the translated `u_0` into the `x_1` chart.
    pub fn m0(&self) -> T {
        let p = &self.profile;
        T::one() + p.r_minus() + p.r0_minus + self.transit
    }

    fn arg_minus(&self, s: T) -> (T, T) {
        let p = &self.profile;
        let w = p.gamma * p.h0_minus * p.r0_minus;
        ((-s + self.supports.d_beta_minus.hi) / w, -T::one() / w)
    }

    fn arg_zero(&self, s: T) -> (T, T) {
        let p = &self.profile;
        if s < self.split() {
            let w = p.gamma * p.h_minus * p.r_minus();
            ((s - self.supports.d_beta_0_left.lo) / w, T::one() / w)
        } else {
            let w = p.gamma * p.h_plus * p.r_plus();
            ((-s + self.supports.d_beta_0_right.hi) / w, -T::one() / w)
        }
    }

    fn arg_plus(&self, s: T) -> (T, T) {
        let p = &self.profile;
        let w = p.gamma * p.h0_plus * p.r0_plus;
        ((s - self.supports.d_beta_plus.lo) / w, T::one() / w)
    }

    pub fn beta_minus(&self, s: T) -> T {
        smoothstep(self.arg_minus(s).0)
    }

    pub fn beta_0(&self, s: T) -> T {
        smoothstep(self.arg_zero(s).0)
    }

    pub fn beta_plus(&self, s: T) -> T {
        smoothstep(self.arg_plus(s).0)
    }

    pub fn d_beta_minus(&self, s: T) -> T {
        let (x, dx) = self.arg_minus(s);
        smoothstep_d1(x) * dx
    }

    pub fn d_beta_0(&self, s: T) -> T {
        let (x, dx) = self.arg_zero(s);
        smoothstep_d1(x) * dx
    }

    pub fn d_beta_plus(&self, s: T) -> T {
        let (x, dx) = self.arg_plus(s);
        smoothstep_d1(x) * dx
    }
}

/// Closed-form linearized section
/// `-p_- e^{-lam (R_- + R_0^- + o_-)} + p_+ e^{-|mu| (R_0^+ + R_+ + o_+)}`.
///
/// `pairings = (<b_-, a_->, <b_+, a_+>)`, `rates = (lam > 0, mu < 0)`; zero offsets give the
/// literal form, the pipeline passes the transit offsets `(T_0, T_+)`.
pub fn s00<T: Real>(profile: &GluingProfile<T>, pairings: (T, T), rates: (T, T), offsets: (T, T)) -> T {
    let (lam, mu) = (rates.0, rates.1.abs());
    -pairings.0 * (-lam * (profile.r_minus() + profile.r0_minus + offsets.0)).exp()
        + pairings.1 * (-mu * (profile.r0_plus + profile.r_plus() + offsets.1)).exp()
}

/// Derivative of [`s00`] along `(R_0^-, R_0^+) -> (R_0^- + t, R_0^+ - t)`.
///
/// With `tied = false` the `R_pm` are held fixed (the classical displayed form); with
/// `tied = true` they move with `R_0^pm / A`, adding the factor `1 + 1/A`.
pub fn s00_directional<T: Real>(
    profile: &GluingProfile<T>,
    pairings: (T, T),
    rates: (T, T),
    offsets: (T, T),
    tied: bool,
) -> T {
    let (lam, mu) = (rates.0, rates.1.abs());
    let k = if tied { profile.kappa() } else { T::one() };
    k * (lam * pairings.0 * (-lam * (profile.r_minus() + profile.r0_minus + offsets.0)).exp()
        + mu * pairings.1 * (-mu * (profile.r0_plus + profile.r_plus() + offsets.1)).exp())
}

/// Closed-form zero of [`s00`] on the slice `R_0^- + R_0^+ = r0` (when the pairings have the
/// same sign).
pub fn analytic_slice_zero<T: Real>(
    profile: &GluingProfile<T>,
    r0: T,
    pairings: (T, T),
    rates: (T, T),
    offsets: (T, T),
) -> Option<T> {
    let ratio = pairings.0 / pairings.1;
    if !(ratio > T::zero()) {
        return None;
    }
    let (lam, mu) = (rates.0, rates.1.abs());
    let k = profile.kappa();
    Some((mu * k * r0 + ratio.ln() - lam * offsets.0 + mu * offsets.1) / ((lam + mu) * k))
}

/// A located zero of a section restricted to a slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceZero {
    pub r0: f64,
    pub r0_minus: f64,
    /// Sign of the derivative along `(1, -1)` at the zero.
    pub derivative_sign: f64,
}

/// Finds the zero of `section(R_0^-)` on `(r, r0 - r)`: 64 sample scan, then bisection to
/// `1e-10`.  More than one sign change is reported as [`ObgError::NonUniqueZero`].
pub fn slice_zero(r0: f64, r: f64, section: impl Fn(f64) -> f64) -> Result<Option<SliceZero>> {
    let (lo, hi) = (r, r0 - r);
    if hi <= lo {
        return Err(ObgError::Config(format!("slice R_0 = {r0} too short for margin {r}")));
    }
    let n = 64;
    let xs: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| section(x)).collect();
    if vs.iter().any(|v| v.is_nan()) {
        return Err(ObgError::Config("section undefined on part of the slice".into()));
    }
    // Brackets between consecutive nonzero samples of opposite sign.
    let nz: Vec<usize> = (0..=n).filter(|&k| vs[k] != 0.0).collect();
    let brackets: Vec<(usize, usize)> = nz
        .windows(2)
        .filter(|w| vs[w[0]].signum() != vs[w[1]].signum())
        .map(|w| (w[0], w[1]))
        .collect();
    match brackets.len() {
        0 => Ok(None),
        1 => {
            let (i, j) = brackets[0];
            let (mut a, mut b) = (xs[i], xs[j]);
            let fa = vs[i];
            while b - a > 1e-10 {
                let m = 0.5 * (a + b);
                let fm = section(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                } else if fm.signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            Ok(Some(SliceZero { r0, r0_minus: 0.5 * (a + b), derivative_sign: (vs[j] - vs[i]).signum() }))
        }
        count => Err(ObgError::NonUniqueZero { count, r0 }),
    }
}

/// Checks that three flowlines form a broken flowline `x_- -> x_0 -> x_1 -> x_+`.
pub fn check_broken(u_minus: &Flowline, u_0: &Flowline, u_plus: &Flowline) -> Result<()> {
    if u_minus.target != u_0.source || u_0.target != u_plus.source {
        return Err(ObgError::NotBrokenFlowline(format!(
            "endpoints {}->{}, {}->{}, {}->{} do not chain",
            u_minus.source, u_minus.target, u_0.source, u_0.target, u_plus.source, u_plus.target
        )));
    }
    Ok(())
}

/// The preglued curve `u_#` and its defect.
#[derive(Clone, Debug)]
pub struct Pregluing {
    pub cutoffs: CutoffFamily<f64>,
    pub u_minus: Flowline,
    pub u_0: Flowline,
    pub u_plus: Flowline,
    pub shift_0: f64,
    pub shift_plus: f64,
    /// Lifts making the translated pieces continuous in `u_-`'s unwrapped frame.
    offset_0: V2,
    offset_plus: V2,
    /// Unwrapped positions of `x_0` and `x_1` in that frame.
    pub x0: V2,
    pub x1: V2,
    pub samples: Vec<(f64, V2)>,
}

impl Pregluing {
    pub fn new(u_minus: &Flowline, u_0: &Flowline, u_plus: &Flowline, profile: GluingProfile<f64>) -> Result<Self> {
        check_broken(u_minus, u_0, u_plus)?;
        let cutoffs = CutoffFamily::new(profile, u_0.transit())?;
        let shift_0 = 1.0 + profile.r_minus() + profile.r0_minus - u_0.exit_time;
        let shift_plus = cutoffs.m0() + profile.r0_plus + profile.r_plus() - u_plus.exit_time;
        let x0 = u_minus.target_lift;
        let offset_0 = x0 - u_0.source_lift;
        let x1 = u_0.target_lift + offset_0;
        let offset_plus = x1 - u_plus.source_lift;
        let mut p = Self {
            cutoffs,
            u_minus: u_minus.clone(),
            u_0: u_0.clone(),
            u_plus: u_plus.clone(),
            shift_0,
            shift_plus,
            offset_0,
            offset_plus,
            x0,
            x1,
            samples: Vec::new(),
        };
        let (lo, hi) = p.domain();
        let ds = u_0.ds;
        let n = ((hi - lo) / ds).ceil() as usize;
        p.samples = (0..=n).map(|k| lo + k as f64 * ds).map(|s| (s, p.eval(s).0)).collect();
        Ok(p)
    }

    /// Sampled domain `[-L, shift_+ + L]`.
    pub fn domain(&self) -> (f64, f64) {
        (-self.u_minus.window, self.shift_plus + self.u_plus.window)
    }

    /// Translated pieces and their velocities in the glued frame.
    pub fn pieces(&self, s: f64) -> [(V2, V2); 3] {
        let (a, da) = self.u_minus.eval_with_velocity(s);
        let (b, db) = self.u_0.eval_with_velocity(s - self.shift_0);
        let (c, dc) = self.u_plus.eval_with_velocity(s - self.shift_plus);
        [(a, da), (b + self.offset_0, db), (c + self.offset_plus, dc)]
    }

    /// Chart centre used for the chart addition at `s`.
    pub fn centre(&self, s: f64) -> V2 {
        if s < self.cutoffs.split() {
            self.x0
        } else {
            self.x1
        }
    }

    /// `u_#(s)` and `u_#'(s)`.
    pub fn eval(&self, s: f64) -> (V2, V2) {
        let c = &self.cutoffs;
        let betas = [c.beta_minus(s), c.beta_0(s), c.beta_plus(s)];
        let dbetas = [c.d_beta_minus(s), c.d_beta_0(s), c.d_beta_plus(s)];
        let x = self.centre(s);
        let mut p = x;
        let mut v = V2::zeros();
        for (k, (q, dq)) in self.pieces(s).into_iter().enumerate() {
            if betas[k] != 0.0 || dbetas[k] != 0.0 {
                p += (q - x) * betas[k];
                v += (q - x) * dbetas[k] + dq * betas[k];
            }
        }
        (p, v)
    }

    /// Flow defect `u_#' + grad f(u_#)`.
    pub fn defect<F: GradientField>(&self, field: &F, s: f64) -> V2 {
        let (p, v) = self.eval(s);
        v + field.field(&p)
    }

    /// Sup of the defect over an interval (sampled at spacing `h`).
    pub fn defect_sup<F: GradientField>(&self, field: &F, iv: Interval<f64>, h: f64) -> f64 {
        let n = ((iv.hi - iv.lo) / h).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| self.defect(field, iv.lo + (iv.hi - iv.lo) * k as f64 / n as f64).norm())
            .fold(0.0, f64::max)
    }

    /// The two overlap intervals where the defect lives.
    pub fn overlaps(&self) -> [Interval<f64>; 2] {
        let s = &self.cutoffs.supports;
        [
            Interval { lo: s.d_beta_0_left.lo, hi: s.d_beta_minus.hi },
            Interval { lo: s.d_beta_plus.lo, hi: s.d_beta_0_right.hi },
        ]
    }
}

/// Quadrature of the linearized section
/// `<beta_-' (u_- - x_0), sigma_0^tau> + <beta_+' (u_+^tau - x_1), sigma_0^tau>`.
pub fn s0(pre: &Pregluing, sigma: &CokernelElement) -> Result<f64> {
    let c = &pre.cutoffs;
    let sup = &c.supports;
    let check = |s: f64, w: f64, what: &str| {
        if s.abs() > w {
            Err(ObgError::WindowTooSmall(format!("{what} needed at s = {s:.3}, window {w}")))
        } else {
            Ok(())
        }
    };
    for s in [sup.d_beta_minus.lo, sup.d_beta_minus.hi, sup.d_beta_plus.lo, sup.d_beta_plus.hi] {
        check(s - pre.shift_0, sigma.window, "sigma_0")?;
    }
    check(sup.d_beta_minus.hi, pre.u_minus.window, "u_-")?;
    check(sup.d_beta_plus.lo - pre.shift_plus, pre.u_plus.window, "u_+")?;
    let term = |iv: Interval<f64>, piece: usize, centre: V2, d: &dyn Fn(f64) -> f64| {
        simpson(iv.lo, iv.hi, 2000, |s| {
            let q = pre.pieces(s)[piece].0;
            d(s) * (q - centre).dot(&sigma.eval(s - pre.shift_0))
        })
    };
    let t1 = term(sup.d_beta_minus, 0, pre.x0, &|s| c.d_beta_minus(s));
    let t2 = term(sup.d_beta_plus, 2, pre.x1, &|s| c.d_beta_plus(s));
    Ok(t1 + t2)
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        acc += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Asymptotic data of a broken flowline `(u_-, u_0, u_+)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Asymptotics {
    pub a_minus: V2,
    pub a_plus: V2,
    pub b_minus: V2,
    pub b_plus: V2,
    /// `(<a_-, b_->, <a_+, b_+>)`.
    pub pairings: (f64, f64),
    /// `(lam_0^+, lam_1^-)`: the cokernel tail rates.
    pub rates: (f64, f64),
    /// Transit offsets `(T_0, T_+)` of `u_0` and `u_+`.
    pub offsets: (f64, f64),
}

impl Asymptotics {
    pub fn new(u_minus: &Flowline, u_0: &Flowline, u_plus: &Flowline, sigma: &CokernelElement) -> Self {
        let a_minus = u_minus.tails[1].vector(&u_minus.target_cp);
        let a_plus = u_plus.tails[0].vector(&u_plus.source_cp);
        let (b_minus, b_plus) = (sigma.b_minus(), sigma.b_plus());
        Self {
            a_minus,
            a_plus,
            b_minus,
            b_plus,
            pairings: (a_minus.dot(&b_minus), a_plus.dot(&b_plus)),
            rates: (sigma.tails[0].rate, sigma.tails[1].rate),
            offsets: (u_0.transit(), u_plus.transit()),
        }
    }

    pub fn s00(&self, profile: &GluingProfile<f64>) -> f64 {
        s00(profile, self.pairings, self.rates, self.offsets)
    }
}

/// Result of an oracle search near a broken flowline.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OracleResult {
    pub found: bool,
    pub alpha: Option<f64>,
    /// Closest approaches to `x_0`, the middle of `u_0`, `x_1` and the middle of `u_+`, in
    /// order along the orbit, for the best hit.
    pub passage_distances: Vec<f64>,
    /// `(delta, max passage distance)` of every hit, by decreasing `delta`.
    pub hits: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GluingVerdict {
    pub triple: [String; 3],
    pub pairings: (f64, f64),
    pub gluable: bool,
    #[serde(rename = "slice_R0")]
    pub slice_r0: f64,
    /// Slice zero of the quadrature section `s0`.
    #[serde(rename = "zero_R0_minus")]
    pub zero_r0_minus: Option<f64>,
    /// Slice zero of the closed form `s00`.
    #[serde(rename = "zero_R0_minus_s00")]
    pub zero_r0_minus_s00: Option<f64>,
    /// Slice zero of the full obstruction section `s`, when it was computed.
    #[serde(rename = "zero_R0_minus_s", default, skip_serializing_if = "Option::is_none")]
    pub zero_r0_minus_s: Option<f64>,
    pub oracle: Option<OracleResult>,
}

/// `source->target:side` label of a flowline.
pub fn label(u: &Flowline) -> String {
    format!("{}->{}:{}", u.source, u.target, u.side_label.as_deref().unwrap_or("?"))
}

/// Sign verdict for a broken flowline, with the `s0` slice zero at `slice_r0` when gluable.
pub fn gluing_verdict<F: GradientField>(
    field: &F,
    u_minus: &Flowline,
    u_0: &Flowline,
    u_plus: &Flowline,
    template: &GluingProfile<f64>,
    slice_r0: f64,
) -> Result<GluingVerdict> {
    check_broken(u_minus, u_0, u_plus)?;
    let sigma = LinearizedPath::new(field, u_0).cokernel_element()?;
    let asy = Asymptotics::new(u_minus, u_0, u_plus, &sigma);
    let (pm, pp) = asy.pairings;
    for v in [pm, pp] {
        if v.abs() < DEGENERATE_PAIRING {
            return Err(ObgError::DegeneratePairing { value: v, pair: format!("{} / {} / {}", label(u_minus), label(u_0), label(u_plus)) });
        }
    }
    let gluable = pm.signum() == pp.signum();
    let (mut zero, mut zero00) = (None, None);
    if gluable {
        let margin = 2.0;
        let section = |r0m: f64| -> f64 {
            Pregluing::new(u_minus, u_0, u_plus, template.with_r0(r0m, slice_r0 - r0m))
                .and_then(|p| s0(&p, &sigma))
                .unwrap_or(f64::NAN)
        };
        zero = slice_zero(slice_r0, margin, section)?.map(|z| z.r0_minus);
        zero00 = slice_zero(slice_r0, margin, |r0m| asy.s00(&template.with_r0(r0m, slice_r0 - r0m)))?
            .map(|z| z.r0_minus);
    }
    Ok(GluingVerdict {
        triple: [label(u_minus), label(u_0), label(u_plus)],
        pairings: asy.pairings,
        gluable,
        slice_r0,
        zero_r0_minus: zero,
        zero_r0_minus_s00: zero00,
        zero_r0_minus_s: None,
        oracle: None,
    })
}

/// Searches the unstable circle of the maximum near the seed angle of `u_-` for index-2
/// orbits that pass within `tol` of `x_0`, the middle of `u_0`, `x_1` and the middle of
/// `u_+`, in that order.
///
/// Offsets `delta = 0.1 * 2^{-k/2}` on both sides of the seed angle are tried down to
/// `1e-14`.
pub fn shooting_oracle<F: GradientField>(
    field: &F,
    u_minus: &Flowline,
    u_0: &Flowline,
    u_plus: &Flowline,
    tol: f64,
    opts: &FlowlineOptions,
) -> Result<OracleResult> {
    check_broken(u_minus, u_0, u_plus)?;
    let sys = field.system();
    let alpha0 = match u_minus.seed {
        crate::flowline::Seed::Angle { alpha } => alpha,
        _ => return Err(ObgError::Precondition("u_- must start at an index-2 critical point".into())),
    };
    let mid = |u: &Flowline| sys.domain.reduce(&u.eval(0.5 * (u.exit_time + u.entry_time)));
    let targets = [
        sys.critical_points[u_0.source].location,
        mid(u_0),
        sys.critical_points[u_0.target].location,
        mid(u_plus),
    ];
    let topts = TraceOptions {
        h_max: opts.h_max,
        rtol: opts.rtol,
        atol: opts.atol,
        land_tol: opts.land_tol,
        stop: StopRule::PassThrough,
        ..TraceOptions::default()
    };
    let mut out = OracleResult::default();
    let mut best = f64::INFINITY;
    let mut k = 0;
    loop {
        let delta = 0.1 * 2f64.powf(-(k as f64) / 2.0);
        if delta < 1e-14 {
            break;
        }
        k += 1;
        for side in [1.0, -1.0] {
            let alpha = alpha0 + side * delta;
            let start = crate::flowline::seed_point(sys, u_minus.source, &crate::flowline::Seed::Angle { alpha });
            let tr = trace(field, start, Some(u_minus.source), &topts)?;
            if tr.landing.cp != u_plus.target {
                continue;
            }
            // Closest approach to each target, in order along the orbit.
            let mut pts: Vec<(f64, V2, f64)> = tr.nodes.iter().map(|(t, p)| (*t, *p, f64::INFINITY)).collect();
            for ps in &tr.passages {
                pts.push((0.5 * (ps.entry_time + ps.exit_time), sys.critical_points[ps.cp].location, ps.closest));
            }
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut t_prev = f64::NEG_INFINITY;
            let mut dists = Vec::new();
            for (j, target) in targets.iter().enumerate() {
                let mut bestd = (f64::INFINITY, f64::NEG_INFINITY);
                for &(t, p, closest) in &pts {
                    if t < t_prev {
                        continue;
                    }
                    let d = if closest.is_finite() && (j == 0 || j == 2) && sys.domain.distance(&p, target) < 1e-12 {
                        closest
                    } else {
                        sys.domain.distance(&p, target)
                    };
                    if d < bestd.0 {
                        bestd = (d, t);
                    }
                }
                dists.push(bestd.0);
                t_prev = bestd.1;
            }
            let worst = dists.iter().copied().fold(0.0, f64::max);
            if worst < tol {
                out.found = true;
                out.hits.push((delta, worst));
                if worst < best {
                    best = worst;
                    out.alpha = Some(alpha);
                    out.passage_distances = dists;
                }
            }
        }
    }
    Ok(out)
}
