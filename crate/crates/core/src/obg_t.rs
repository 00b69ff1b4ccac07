//! t-gluing: a localized perturbation `grad f + t V` along a non-transverse flowline, the
//! sign verdict and linearized zero relation, the multi-level back-substitution, and a
//! shooting oracle that follows the glued family as `t -> 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::flowline::{seed_point, Flowline, FlowlineOptions, Seed, TorusCatalog};
use crate::linear_analysis::{CokernelElement, LinearizedPath};
use crate::morse_system::{GradientField, MorseSystem, M2, V2};
use crate::obg_zero::{label, DEGENERATE_PAIRING};
use crate::orbit::{trace, StopRule, Trace, TraceOptions};
use crate::scalar::{smoothstep, smoothstep_d1, Real};

/// Width of the tube around transverse flowlines that the support must avoid.
pub const TUBE_WIDTH: f64 = 0.1;
/// Largest `|t|` accepted by the continuation oracle.
pub const T_ENVELOPE: f64 = 0.05;

/// `V(p) = amplitude * (1 - S(|p - centre| / radius)) * direction`, supported in a ball
/// around `u_0(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationField {
    /// Label of the non-transverse flowline the bump sits on.
    pub base: String,
    pub center: V2,
    pub radius: f64,
    pub amplitude: f64,
    /// Unit vector, oriented so that `<V, sigma_0>` has the sign of `amplitude`.
    pub direction: V2,
    /// `int <sigma_0(s), V(u_0(s))> ds`.
    pub pairing: f64,
}

impl PerturbationField {
    pub fn value(&self, sys: &MorseSystem, p: &V2) -> V2 {
        let d = sys.domain.delta(&self.center, p);
        self.direction * (self.amplitude * (1.0 - smoothstep(d.norm() / self.radius)))
    }

    pub fn jacobian(&self, sys: &MorseSystem, p: &V2) -> M2 {
        let d = sys.domain.delta(&self.center, p);
        let r = d.norm();
        if r >= self.radius || r == 0.0 {
            return M2::zeros();
        }
        let g = -self.amplitude * smoothstep_d1(r / self.radius) / (self.radius * r);
        self.direction * d.transpose() * g
    }
}

/// The perturbed field `grad f + t sum V_i`.
#[derive(Clone, Debug)]
pub struct PerturbedSystem<'a, F> {
    pub base: &'a F,
    pub fields: Vec<PerturbationField>,
    pub t: f64,
}

impl<'a, F: GradientField> PerturbedSystem<'a, F> {
    pub fn new(base: &'a F, fields: Vec<PerturbationField>, t: f64) -> Self {
        Self { base, fields, t }
    }
}

impl<F: GradientField> GradientField for PerturbedSystem<'_, F> {
    fn system(&self) -> &MorseSystem {
        self.base.system()
    }

    fn field(&self, p: &V2) -> V2 {
        let sys = self.base.system();
        self.fields.iter().fold(self.base.field(p), |acc, v| acc + v.value(sys, p) * self.t)
    }

    fn jacobian(&self, p: &V2) -> M2 {
        let sys = self.base.system();
        self.fields.iter().fold(self.base.jacobian(p), |acc, v| acc + v.jacobian(sys, p) * self.t)
    }

    fn kink_spheres(&self) -> Vec<(V2, f64)> {
        let mut k = self.base.kink_spheres();
        k.extend(self.fields.iter().map(|v| (v.center, v.radius)));
        k
    }
}

/// Builds the bump perturbation on `u_0` and checks that its support stays away from every
/// critical point's blend region and from a tube around each transverse flowline.
///
/// The direction is `+-sigma_0(0) / |sigma_0(0)|`, chosen so that `pairing` has the sign of
/// `amplitude`.
pub fn build_perturbation<F: GradientField>(
    field: &F,
    u_0: &Flowline,
    transverse: &[&Flowline],
    radius: f64,
    amplitude: f64,
) -> Result<PerturbationField> {
    if !(radius > 0.0) || amplitude == 0.0 {
        return Err(ObgError::Precondition(format!("radius {radius} and amplitude {amplitude} must be nonzero")));
    }
    let sys = field.system();
    let sigma = LinearizedPath::new(field, u_0).cokernel_element()?;
    let center = sys.domain.reduce(&u_0.eval(0.0));
    for cp in &sys.critical_points {
        let d = sys.domain.distance(&center, &cp.location);
        if d < radius + sys.mollify_radius {
            return Err(ObgError::Locality(format!(
                "ball of radius {radius} at distance {d:.4} from the critical point at ({:.4}, {:.4})",
                cp.location.x, cp.location.y
            )));
        }
    }
    for u in transverse {
        let d = u.nodes.iter().map(|p| sys.domain.distance(&center, p)).fold(f64::INFINITY, f64::min);
        if d < radius + TUBE_WIDTH {
            return Err(ObgError::Locality(format!("ball of radius {radius} at distance {d:.4} from {}", label(u))));
        }
    }
    let unit = sigma.eval(0.0).normalize();
    let mut v = PerturbationField { base: label(u_0), center, radius, amplitude: amplitude.abs(), direction: unit, pairing: 0.0 };
    let p = perturbation_pairing(sys, &v, u_0, &sigma);
    if p < 0.0 {
        v.direction = -unit;
    }
    v.amplitude = amplitude;
    v.pairing = amplitude.signum() * p.abs();
    Ok(v)
}

/// `int <sigma_0(s), V(u_0(s))> ds` by Simpson's rule over the part of `u_0` inside the ball.
pub fn perturbation_pairing(sys: &MorseSystem, v: &PerturbationField, u_0: &Flowline, sigma: &CokernelElement) -> f64 {
    let (lo, hi) = (u_0.exit_time.max(-u_0.window), u_0.entry_time.min(u_0.window));
    let n = 8000;
    let h = (hi - lo) / n as f64;
    let f = |s: f64| sigma.eval(s).dot(&v.value(sys, &u_0.eval(s)));
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        acc += f(lo + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Which two-component broken flowline is glued.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// `(u_-, u_0)`: transverse flowline into the source of `u_0`.
    MinusZero,
    /// `(u_0, u_+)`: transverse flowline out of the target of `u_0`.
    ZeroPlus,
}

/// Sign of `t` on which a glued family exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TSide {
    #[serde(rename = "t>0")]
    Positive,
    #[serde(rename = "t<0")]
    Negative,
}

impl TSide {
    pub fn sign(self) -> f64 {
        match self {
            TSide::Positive => 1.0,
            TSide::Negative => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            TSide::Positive => TSide::Negative,
            TSide::Negative => TSide::Positive,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "t>0" | "+" | "positive" => Ok(TSide::Positive),
            "t<0" | "-" | "negative" => Ok(TSide::Negative),
            _ => Err(ObgError::Config(format!("unknown side {s:?} (expected t>0 or t<0)"))),
        }
    }
}

/// Sign verdict of the t-gluing theorem for one pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TGluingVerdict {
    pub pair: [String; 2],
    pub kind: PairKind,
    /// `<a_-, b_->` (or `<a_+, b_+>` for the mirror pair).
    pub pairing_ab: f64,
    /// `<V, sigma_0>`.
    pub pairing_v: f64,
    /// Decay rate of `sigma_0` at the shared critical point.
    pub rate: f64,
    pub a: u32,
    pub side: TSide,
    pub continuation: Option<ContinuationResult>,
}

impl TGluingVerdict {
    /// The pairing in the relation `t <V, sigma> = p e^{-lam (1 + 1/A) R_0}`: `<a_-, b_->`, or
    /// `-<a_+, b_+>` for the mirror pair.
    pub fn effective_pairing(&self) -> f64 {
        match self.kind {
            PairKind::MinusZero => self.pairing_ab,
            PairKind::ZeroPlus => -self.pairing_ab,
        }
    }

    /// `R_0(t)` from the linearized relation.
    pub fn predicted_r0(&self, t: f64) -> Option<f64> {
        linearized_t_zero(t, self.effective_pairing(), self.pairing_v, self.rate, self.a as f64)
    }

    /// `-lam (1 + 1/A)`: slope of `log|t|` against `R_0`.
    pub fn expected_slope(&self) -> f64 {
        -self.rate * (1.0 + 1.0 / self.a as f64)
    }
}

/// Verdict for `(transverse, u_0)` or `(u_0, transverse)` with the perturbation `v` on `u_0`.
pub fn t_verdict<F: GradientField>(
    field: &F,
    kind: PairKind,
    transverse: &Flowline,
    u_0: &Flowline,
    v: &PerturbationField,
    a: u32,
) -> Result<TGluingVerdict> {
    let sigma = LinearizedPath::new(field, u_0).cokernel_element()?;
    let (pairing_ab, rate, pair) = match kind {
        PairKind::MinusZero => {
            if transverse.target != u_0.source {
                return Err(ObgError::NotBrokenFlowline(format!("{} does not end at the source of {}", label(transverse), label(u_0))));
            }
            let a_m = transverse.tails[1].vector(&transverse.target_cp);
            (a_m.dot(&sigma.b_minus()), sigma.tails[0].rate.abs(), [label(transverse), label(u_0)])
        }
        PairKind::ZeroPlus => {
            if transverse.source != u_0.target {
                return Err(ObgError::NotBrokenFlowline(format!("{} does not start at the target of {}", label(transverse), label(u_0))));
            }
            let a_p = transverse.tails[0].vector(&transverse.source_cp);
            (a_p.dot(&sigma.b_plus()), sigma.tails[1].rate.abs(), [label(u_0), label(transverse)])
        }
    };
    for value in [pairing_ab, v.pairing] {
        if value.abs() < DEGENERATE_PAIRING {
            return Err(ObgError::DegeneratePairing { value, pair: pair.join(" / ") });
        }
    }
    let mut out = TGluingVerdict { pair, kind, pairing_ab, pairing_v: v.pairing, rate, a, side: TSide::Positive, continuation: None };
    if out.effective_pairing() * v.pairing < 0.0 {
        out.side = TSide::Negative;
    }
    Ok(out)
}

/// Solves `t = p e^{-lam (1 + 1/A) R_0} / q` for `R_0`; `None` when `t` is on the wrong side.
pub fn linearized_t_zero<T: Real>(t: T, pairing_ab: T, pairing_v: T, lam: T, a: T) -> Option<T> {
    let x = t * pairing_v / pairing_ab;
    if !(x > T::zero()) {
        return None;
    }
    Some(-x.ln() / (lam * (T::one() + T::one() / a)))
}

/// `-p e^{-lam (1 + 1/A) R_0} + t q`.
pub fn s00_t<T: Real>(r0: T, t: T, pairing_ab: T, pairing_v: T, lam: T, a: T) -> T {
    -pairing_ab * (-lam * (T::one() + T::one() / a) * r0).exp() + t * pairing_v
}

/// One level `j` of a chain `u_-, u_0^1, ..., u_0^m`:
/// `-e^{-k lam_in R_j} p_in + e^{-k lam_out R_{j+1}} p_out + t q = 0` with `k = 1 + 1/A`
/// (the `p_out` term is absent on the last level).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel<T = f64> {
    /// `<a_{j-1}^+, b_{j-1}^->`.
    pub incoming: T,
    /// `lam_{j-1}^+ > 0`.
    pub incoming_rate: T,
    /// `<a_j^-, b_j^+>`.
    pub outgoing: T,
    /// `|lam_j^-|`.
    pub outgoing_rate: T,
    /// `<V, sigma_0^j>`.
    pub v_pairing: T,
}

/// Result of the back-substitution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultilevelOutcome<T = f64> {
    /// `(R_1, ..., R_m)`.
    Solved(Vec<T>),
    /// The 1-based level whose exponential equation has no admissible solution.
    Unsolvable { level: usize, reason: String },
}

/// Back-substitution: the last level gives `R_m` from `t`, each earlier level gives `R_j` from
/// `R_{j+1}`; every `R_j` must exceed `r_min`.
pub fn multilevel_solve<T: Real>(levels: &[ChainLevel<T>], t: T, a: T, r_min: T) -> Result<MultilevelOutcome<T>> {
    if levels.is_empty() {
        return Err(ObgError::Precondition("a chain needs at least one level".into()));
    }
    let m = levels.len();
    for (j, l) in levels.iter().enumerate() {
        let mut ps = vec![l.incoming, l.v_pairing];
        if j + 1 < m {
            ps.push(l.outgoing);
        }
        if ps.iter().any(|p| !(p.abs() > T::zero())) {
            return Err(ObgError::Precondition(format!("zero pairing at level {}", j + 1)));
        }
    }
    let k = T::one() + T::one() / a;
    let mut r = vec![T::zero(); m];
    let mut next: Option<T> = None;
    for j in (0..m).rev() {
        let l = &levels[j];
        let carried = next.map_or(T::zero(), |rn| l.outgoing * (-k * l.outgoing_rate * rn).exp());
        let x = (carried + t * l.v_pairing) / l.incoming;
        if !(x > T::zero()) {
            return Ok(MultilevelOutcome::Unsolvable { level: j + 1, reason: "exponential equation has a nonpositive right-hand side".into() });
        }
        let rj = -x.ln() / (k * l.incoming_rate);
        if !(rj > r_min) {
            return Ok(MultilevelOutcome::Unsolvable {
                level: j + 1,
                reason: format!("R = {:?} does not exceed {:?}", rj, r_min),
            });
        }
        r[j] = rj;
        next = Some(rj);
    }
    Ok(MultilevelOutcome::Solved(r))
}

/// Residuals of the chain equations at `(R_1, ..., R_m)`.
pub fn multilevel_residuals<T: Real>(levels: &[ChainLevel<T>], r: &[T], t: T, a: T) -> Vec<T> {
    let k = T::one() + T::one() / a;
    let m = levels.len();
    (0..m)
        .map(|j| {
            let l = &levels[j];
            let mut v = -l.incoming * (-k * l.incoming_rate * r[j]).exp() + t * l.v_pairing;
            if j + 1 < m {
                v = v + l.outgoing * (-k * l.outgoing_rate * r[j + 1]).exp();
            }
            v
        })
        .collect()
}

/// One `t` sample of the continuation oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSample {
    pub t: f64,
    pub found: bool,
    /// Time spent in the chart of the shared critical point.
    pub dwell: Option<f64>,
    /// `dwell * A / (A + 1)`.
    #[serde(rename = "R0_measured")]
    pub r0_measured: Option<f64>,
    #[serde(rename = "R0_predicted")]
    pub r0_predicted: Option<f64>,
    /// `|unstable coordinate|` at the shared chart's successor for the returned orbit.
    pub residual: Option<f64>,
    pub bisection_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub samples: Vec<ContinuationSample>,
    /// Least-squares slope of `log|t|` against the measured `R_0` over found samples.
    pub slope: Option<f64>,
    pub expected_slope: f64,
}

impl ContinuationResult {
    /// `|slope / expected - 1|`.
    pub fn slope_error(&self) -> Option<f64> {
        self.slope.map(|s| (s / self.expected_slope - 1.0).abs())
    }

    pub fn found_count(&self) -> usize {
        self.samples.iter().filter(|s| s.found).count()
    }
}

fn oracle_trace_options(opts: &FlowlineOptions) -> TraceOptions {
    TraceOptions {
        h_max: opts.h_max,
        rtol: opts.rtol,
        atol: opts.atol,
        land_tol: opts.land_tol,
        stop: StopRule::PassThrough,
        record_nodes: false,
        ..TraceOptions::default()
    }
}

/// Where an orbit goes after passing the shared chart.
struct Passage {
    /// Unstable coordinate on entering the successor chart (0 when it lands there).
    unstable: f64,
    dwell: f64,
}

fn unstable_at(sys: &MorseSystem, cp: usize, coords: &V2) -> f64 {
    match sys.critical_points[cp].unstable_modes().as_slice() {
        [j] => coords[*j],
        _ => 0.0,
    }
}

/// For an orbit that enters `shared` leaving along the branch `branch`, the unstable
/// coordinate at `next` and the dwell in `shared`.
fn follow(sys: &MorseSystem, tr: &Trace, shared: usize, branch: f64, next: usize) -> Option<Passage> {
    let i = tr.passages.iter().position(|p| p.cp == shared)?;
    let p = &tr.passages[i];
    if unstable_at(sys, shared, &p.entry_coords).signum() != branch.signum() {
        return None;
    }
    match tr.passages.get(i + 1) {
        Some(q) if q.cp == next => Some(Passage { unstable: unstable_at(sys, next, &q.entry_coords), dwell: p.dwell() }),
        Some(_) => None,
        None if tr.landing.cp == next => Some(Passage { unstable: tr.landing.unstable, dwell: p.dwell() }),
        None => None,
    }
}

fn ray_sign(u: &Flowline) -> Result<f64> {
    match u.seed {
        Seed::Ray { sign } => Ok(sign.signum()),
        _ => Err(ObgError::Precondition(format!("{} must start at an index-1 critical point", label(u)))),
    }
}

/// Follows the glued family in `t`: for `(u_-, u_0)` it bisects the seed angle of `u_-` (on
/// the side whose orbits leave `x_0` along `u_0`) for an orbit landing on the target of
/// `u_0`; for `(u_0, u_+)` it checks on which side the unstable ray of `u_0`'s source leaves
/// the shared saddle.  The dwell in the shared chart gives `R_0(t)`.
#[allow(clippy::too_many_arguments)]
pub fn continuation_oracle<F: GradientField>(
    field: &F,
    perturbation: &[PerturbationField],
    verdict: &TGluingVerdict,
    transverse: &Flowline,
    u_0: &Flowline,
    t_samples: &[f64],
    opts: &FlowlineOptions,
) -> Result<ContinuationResult> {
    if t_samples.is_empty() {
        return Err(ObgError::Precondition("no t samples".into()));
    }
    let sign = t_samples[0].signum();
    for &t in t_samples {
        if t == 0.0 {
            return Err(ObgError::Precondition("t = 0 is the broken configuration itself; sample t != 0".into()));
        }
        if t.signum() != sign || t.abs() > T_ENVELOPE {
            return Err(ObgError::Precondition(format!("t samples must lie on one side with |t| <= {T_ENVELOPE}")));
        }
    }
    let samples = t_samples
        .par_iter()
        .map(|&t| {
            let pert = PerturbedSystem::new(field, perturbation.to_vec(), t);
            let mut s = match verdict.kind {
                PairKind::MinusZero => shoot_minus(&pert, transverse, u_0, opts)?,
                PairKind::ZeroPlus => shoot_plus(&pert, u_0, transverse, opts)?,
            };
            s.t = t;
            s.r0_measured = s.dwell.map(|d| d * verdict.a as f64 / (verdict.a as f64 + 1.0));
            s.r0_predicted = verdict.predicted_r0(t);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let pts: Vec<(f64, f64)> =
        samples.iter().filter_map(|s| s.r0_measured.filter(|_| s.found).map(|r| (r, s.t.abs().ln()))).collect();
    let slope = (pts.len() >= 2).then(|| fit_slope(&pts));
    Ok(ContinuationResult { samples, slope, expected_slope: verdict.expected_slope() })
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn empty_sample() -> ContinuationSample {
    ContinuationSample { t: 0.0, found: false, dwell: None, r0_measured: None, r0_predicted: None, residual: None, bisection_steps: 0 }
}

fn shoot_minus<F: GradientField>(field: &F, u_minus: &Flowline, u_0: &Flowline, opts: &FlowlineOptions) -> Result<ContinuationSample> {
    let sys = field.system();
    let alpha0 = match u_minus.seed {
        Seed::Angle { alpha } => alpha,
        _ => return Err(ObgError::Precondition(format!("{} must start at an index-2 critical point", label(u_minus)))),
    };
    let branch = ray_sign(u_0)?;
    let topts = oracle_trace_options(opts);
    let probe = |alpha: f64| -> Result<Option<Passage>> {
        let start = seed_point(sys, u_minus.source, &Seed::Angle { alpha });
        let tr = trace(field, start, Some(u_minus.source), &topts)?;
        Ok(follow(sys, &tr, u_0.source, branch, u_0.target))
    };
    let mut side = None;
    'sides: for k in 3..12 {
        let delta = 10f64.powi(-k);
        for s in [1.0, -1.0] {
            if probe(alpha0 + s * delta)?.is_some() {
                side = Some(s);
                break 'sides;
            }
        }
    }
    let mut out = empty_sample();
    let Some(side) = side else { return Ok(out) };
    let mut prev: Option<(f64, Passage)> = None;
    let mut k = 0;
    loop {
        let delta = 0.1 * 2f64.powf(-(k as f64) / 2.0);
        if delta < 1e-14 {
            return Ok(out);
        }
        k += 1;
        let Some(p) = probe(alpha0 + side * delta)? else {
            prev = None;
            continue;
        };
        if p.unstable == 0.0 {
            out.found = true;
            out.dwell = Some(p.dwell);
            out.residual = Some(0.0);
            return Ok(out);
        }
        if let Some((d_prev, q)) = prev.take() {
            if q.unstable.signum() != p.unstable.signum() {
                let (mut hi, mut lo) = (d_prev, delta);
                let (mut s_hi, mut best) = (q.unstable.signum(), if q.unstable.abs() < p.unstable.abs() { q } else { p });
                for step in 0..opts.bisection_depth {
                    let mid = 0.5 * (hi + lo);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    out.bisection_steps = step + 1;
                    let Some(m) = probe(alpha0 + side * mid)? else { break };
                    if m.unstable.signum() == s_hi {
                        hi = mid;
                        s_hi = m.unstable.signum();
                    } else {
                        lo = mid;
                    }
                    let done = m.unstable.abs() <= opts.land_tol;
                    if m.unstable.abs() < best.unstable.abs() {
                        best = m;
                    }
                    if done {
                        break;
                    }
                }
                out.found = true;
                out.dwell = Some(best.dwell);
                out.residual = Some(best.unstable.abs());
                return Ok(out);
            }
        }
        prev = Some((delta, p));
    }
}

fn shoot_plus<F: GradientField>(field: &F, u_0: &Flowline, u_plus: &Flowline, opts: &FlowlineOptions) -> Result<ContinuationSample> {
    let sys = field.system();
    let start = seed_point(sys, u_0.source, &Seed::Ray { sign: ray_sign(u_0)? });
    let tr = trace(field, start, Some(u_0.source), &oracle_trace_options(opts))?;
    let mut out = empty_sample();
    let Some(i) = tr.passages.iter().position(|p| p.cp == u_0.target) else { return Ok(out) };
    if i != 0 {
        return Ok(out);
    }
    let p = &tr.passages[0];
    let u = unstable_at(sys, u_0.target, &p.entry_coords);
    let lands = tr.passages.len() == 1 && tr.landing.cp == u_plus.target;
    if u.signum() == ray_sign(u_plus)? && lands {
        out.found = true;
        out.dwell = Some(p.dwell());
        out.residual = Some(u.abs());
    }
    Ok(out)
}

/// `t` values `-+ t_max * 2^{-k/2}`, `k = 0..count`, on the given side.
pub fn t_ladder(side: TSide, t_max: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| side.sign() * t_max * 2f64.powf(-(k as f64) / 2.0)).collect()
}

/// One broken pair in a figure panel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelEntry {
    pub verdict: TGluingVerdict,
    /// Glued family for `t < 0` according to the verdict.
    pub glues_for_negative_t: bool,
    /// Oracle answer at the probe `t < 0`.
    pub oracle_found: Option<bool>,
}

/// A choice of the signs of `<V^l, sigma^l>` and `<V^r, sigma^r>` with the verdicts of all
/// eight `(u_-, u_0)` and `(u_0, u_+)` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Panel {
    pub signs: (i8, i8),
    pub entries: Vec<PanelEntry>,
}

impl Panel {
    pub fn oracle_agrees(&self) -> bool {
        self.entries.iter().all(|e| e.oracle_found.map_or(true, |f| f == e.glues_for_negative_t))
    }
}

/// The perturbations on `u_0^l` and `u_0^r` with the given amplitude signs.
pub fn torus_perturbations<F: GradientField>(
    field: &F,
    cat: &TorusCatalog,
    radius: f64,
    amplitudes: (f64, f64),
) -> Result<[PerturbationField; 2]> {
    let tr = cat.transverse();
    Ok([
        build_perturbation(field, &cat.u_zero[0], &tr, radius, amplitudes.0)?,
        build_perturbation(field, &cat.u_zero[1], &tr, radius, amplitudes.1)?,
    ])
}

/// Verdicts for every `(u_-, u_0)` and `(u_0, u_+)` pair of the torus under `perts`
/// (indexed like `cat.u_zero`).
pub fn torus_verdicts<F: GradientField>(
    field: &F,
    cat: &TorusCatalog,
    perts: &[PerturbationField; 2],
    a: u32,
) -> Result<Vec<(TGluingVerdict, usize, usize)>> {
    let mut out = Vec::new();
    for (z, u_0) in cat.u_zero.iter().enumerate() {
        for (m, u_m) in cat.u_minus.iter().enumerate() {
            out.push((t_verdict(field, PairKind::MinusZero, u_m, u_0, &perts[z], a)?, m, z));
        }
        for (p, u_p) in cat.u_plus.iter().enumerate() {
            out.push((t_verdict(field, PairKind::ZeroPlus, u_p, u_0, &perts[z], a)?, p, z));
        }
    }
    Ok(out)
}

/// The four sign panels `(+,+), (+,-), (-,+), (-,-)` of `(<V^l, sigma^l>, <V^r, sigma^r>)`;
/// with `probe_t = Some(t)` (`t < 0`) every entry is checked by the continuation oracle.
pub fn four_panels<F: GradientField>(
    field: &F,
    cat: &TorusCatalog,
    radius: f64,
    amplitude: f64,
    a: u32,
    probe_t: Option<f64>,
    opts: &FlowlineOptions,
) -> Result<Vec<Panel>> {
    let mut panels = Vec::new();
    for signs in [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)] {
        let amps = (amplitude.abs() * signs.0 as f64, amplitude.abs() * signs.1 as f64);
        let perts = torus_perturbations(field, cat, radius, amps)?;
        let mut entries = Vec::new();
        for (verdict, other, z) in torus_verdicts(field, cat, &perts, a)? {
            let oracle_found = match probe_t {
                Some(t) => {
                    let transverse = match verdict.kind {
                        PairKind::MinusZero => &cat.u_minus[other],
                        PairKind::ZeroPlus => &cat.u_plus[other],
                    };
                    let r = continuation_oracle(field, &perts, &verdict, transverse, &cat.u_zero[z], &[t], opts)?;
                    Some(r.samples[0].found)
                }
                None => None,
            };
            let glues_for_negative_t = verdict.side == TSide::Negative;
            entries.push(PanelEntry { verdict, glues_for_negative_t, oracle_found });
        }
        panels.push(Panel { signs, entries });
    }
    Ok(panels)
}

/// Displacement of a flowline's landing (chart coordinates and landing time) when its seed
/// is re-traced in the perturbed field; infinite if it lands elsewhere.
pub fn endpoint_drift<F: GradientField, G: GradientField>(
    field: &F,
    perturbed: &G,
    u: &Flowline,
    opts: &FlowlineOptions,
) -> Result<f64> {
    let sys = field.system();
    let topts = oracle_trace_options(opts);
    let start = seed_point(sys, u.source, &u.seed);
    let a = trace(field, start, Some(u.source), &topts)?;
    let b = trace(perturbed, start, Some(u.source), &topts)?;
    if a.landing.cp != b.landing.cp {
        return Ok(f64::INFINITY);
    }
    Ok((a.landing.coords - b.landing.coords).norm().max((a.landing.time - b.landing.time).abs()))
}
