//! Heteroclinic flowlines: shooting from unstable manifolds, standardization, tail fits.
//!
//! A [`Flowline`] is parametrized so that it enters the target chart at `s = 1`; it leaves
//! the source chart at `s = exit_time` (about `-3.15` on the default torus).  Between the two
//! charts it is stored on the nodes `j * ds` (plus the exit point) with velocities, and
//! evaluated by quintic Hermite interpolation (values, velocities and accelerations); beyond them it is the closed-form linear chart
//! flow.  Coordinates are unwrapped: `source_lift` and `target_lift` are the positions of the
//! end critical points in the same unwrapped frame as the samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::integrator::Dopri5;
use crate::morse_system::{CriticalPoint, GradientField, MorseSystem, V2};
use crate::orbit::{chart_flow, trace, Landing, StopRule, Trace, TraceOptions};

/// How an orbit leaves its source critical point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seed {
    /// Index-1 source: the point `x + sign * r * v_u` on the chart sphere.
    Ray { sign: f64 },
    /// Index-2 source: the point `x + r (cos a v_0 + sin a v_1)` on the chart sphere.
    Angle { alpha: f64 },
}

#[derive(Clone, Debug)]
pub struct FlowlineOptions {
    pub ds: f64,
    pub window: f64,
    pub h_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub land_tol: f64,
    pub circle_samples: usize,
    pub bisection_depth: usize,
}

impl Default for FlowlineOptions {
    fn default() -> Self {
        Self {
            ds: 0.01,
            window: 25.0,
            h_max: 0.02,
            rtol: 1e-10,
            atol: 1e-12,
            land_tol: 1e-12,
            circle_samples: 720,
            bisection_depth: 60,
        }
    }
}

impl FlowlineOptions {
    fn trace_options(&self, stop: StopRule) -> TraceOptions {
        TraceOptions {
            h_max: self.h_max,
            rtol: self.rtol,
            atol: self.atol,
            land_tol: self.land_tol,
            stop,
            ..TraceOptions::default()
        }
    }
}

/// Exponential tail at one end of a flowline or cokernel element.
///
/// For flowlines `u(s) - x ~ e^{-rate s} * coefficient`; for cokernel elements
/// `sigma(s) ~ e^{rate s} * coefficient`.  `rate` is the governing Hessian eigenvalue and
/// `coefficient` is expressed in the critical point's eigenframe (only the slot of the
/// dominant mode is nonzero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailData {
    pub rate: f64,
    pub mode: usize,
    pub coefficient: V2,
    pub fit_residual: f64,
}

impl TailData {
    /// The coefficient as an ambient tangent vector.
    pub fn vector(&self, cp: &CriticalPoint) -> V2 {
        cp.displacement(&self.coefficient)
    }
}

/// Which end of a flowline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum End {
    Source,
    Target,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Flowline {
    pub source: usize,
    pub target: usize,
    pub source_cp: CriticalPoint,
    pub target_cp: CriticalPoint,
    pub seed: Seed,
    pub source_lift: V2,
    pub target_lift: V2,
    /// Standardized time at which the orbit leaves the source chart.
    pub exit_time: f64,
    /// Standardized time at which the orbit enters the target chart (always 1).
    pub entry_time: f64,
    /// Eigen-coordinates relative to the source at `exit_time`.
    pub source_coords: V2,
    /// Eigen-coordinates relative to the target at `entry_time`, unstable part removed.
    pub target_coords: V2,
    pub ds: f64,
    pub window: f64,
    pub node_s: Vec<f64>,
    pub nodes: Vec<V2>,
    pub velocities: Vec<V2>,
    pub accelerations: Vec<V2>,
    /// Tails at the source and target ends.
    pub tails: [TailData; 2],
    pub side_label: Option<String>,
}

/// Quintic Hermite interpolation from values, first and second derivatives at both ends;
/// returns the value and first derivative at `s`.
#[allow(clippy::too_many_arguments)]
fn hermite5(s0: f64, p0: &V2, v0: &V2, a0: &V2, s1: f64, p1: &V2, v1: &V2, a1: &V2, s: f64) -> (V2, V2) {
    let h = s1 - s0;
    let t = (s - s0) / h;
    let (t2, t3) = (t * t, t * t * t);
    let (t4, t5) = (t3 * t, t3 * t2);
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let d0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d3 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
    let d4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d5 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4;
    let p = p0 * h0 + v0 * (h * h1) + a0 * (h * h * h2) + a1 * (h * h * h3) + v1 * (h * h4) + p1 * h5;
    let v = (p0 * d0 + p1 * d5) / h + v0 * d1 + v1 * d4 + (a0 * d2 + a1 * d3) * h;
    (p, v)
}

/// Seed point on the source chart sphere.
pub fn seed_point(sys: &MorseSystem, source: usize, seed: &Seed) -> V2 {
    let cp = &sys.critical_points[source];
    let r = sys.chart_radius();
    match *seed {
        Seed::Ray { sign } => {
            let j = cp.unstable_modes()[0];
            cp.location + cp.eigenvectors[j] * (sign.signum() * r)
        }
        Seed::Angle { alpha } => {
            cp.location + (cp.eigenvectors[0] * alpha.cos() + cp.eigenvectors[1] * alpha.sin()) * r
        }
    }
}

/// Unit directions spanning (index 1) or sampling (index 2) the unstable manifold.
pub fn unstable_manifold_directions(cp: &CriticalPoint, count: usize) -> Result<Vec<V2>> {
    match cp.index {
        0 => Err(ObgError::NoUnstableDirections),
        1 => {
            let v = cp.eigenvectors[cp.unstable_modes()[0]];
            Ok(vec![v, -v])
        }
        _ => Ok((0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                cp.eigenvectors[0] * a.cos() + cp.eigenvectors[1] * a.sin()
            })
            .collect()),
    }
}

/// Direction of integration for [`integrate_flowline`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

struct Reversed<'a, F>(&'a F);

impl<F: GradientField> GradientField for Reversed<'_, F> {
    fn system(&self) -> &MorseSystem {
        self.0.system()
    }
    fn field(&self, p: &V2) -> V2 {
        -self.0.field(p)
    }
    fn jacobian(&self, p: &V2) -> crate::morse_system::M2 {
        -self.0.jacobian(p)
    }
}

/// Integrates the flow from `start` until a chart entry (per `opts.stop`) or the time limit.
///
/// Backward integration stops at the first chart entered (the linear pass-through formulas
/// are written for the forward flow).
pub fn integrate_flowline<F: GradientField>(
    field: &F,
    start: V2,
    direction: Direction,
    opts: &TraceOptions,
) -> Result<Trace> {
    match direction {
        Direction::Forward => {
            let start_chart = field.system().chart_of(&start).map(|(i, _)| i);
            trace(field, start, start_chart, opts)
        }
        Direction::Backward => {
            let opts = TraceOptions { stop: StopRule::FirstChart, ..opts.clone() };
            trace(&Reversed(field), start, None, &opts)
        }
    }
}

impl Flowline {
    /// Shoots from `seed` and builds the standardized flowline `source -> target`.
    pub fn from_seed<F: GradientField>(
        field: &F,
        source: usize,
        target: usize,
        seed: Seed,
        opts: &FlowlineOptions,
    ) -> Result<Self> {
        let sys = field.system();
        let src = sys.critical_points[source].clone();
        let tgt = sys.critical_points[target].clone();
        let start = seed_point(sys, source, &seed);
        let first = trace(field, start, Some(source), &opts.trace_options(StopRule::Charts(vec![target])))?;
        if first.landing.cp != target {
            return Err(ObgError::Precondition(format!(
                "seed {seed:?} reaches critical point {} instead of {target}",
                first.landing.cp
            )));
        }
        let exit_time = 1.0 - first.landing.time;
        if exit_time < -opts.window {
            return Err(ObgError::SegmentTooShort { exit: exit_time });
        }
        let d = sys.domain.delta(&src.location, &start);
        let source_lift = start - d;
        let source_coords = src.coords(&d);

        // Second pass: integrate again, stepping exactly onto the grid nodes.
        let ds = opts.ds;
        let mut node_s = vec![exit_time];
        let mut j = (exit_time / ds).floor() as i64 + 1;
        if j as f64 * ds - exit_time < 1e-6 * ds {
            j += 1;
        }
        let j_end = (1.0 / ds).round() as i64;
        while j <= j_end {
            node_s.push(j as f64 * ds);
            j += 1;
        }
        *node_s.last_mut().unwrap() = 1.0;
        let rhs = |_s: f64, y: &[f64; 2]| {
            let v = field.field(&V2::new(y[0], y[1]));
            [-v.x, -v.y]
        };
        let mut stepper = Dopri5::new(opts.rtol, opts.atol, ds.min(opts.h_max));
        let (node_s, nodes) = integrate_nodes(field, &rhs, &mut stepper, &node_s, start, opts.h_max)?;
        let end = *nodes.last().unwrap();
        let dt = sys.domain.delta(&tgt.location, &end);
        let target_lift = end - dt;
        let mut target_coords = tgt.coords(&dt);
        for m in tgt.unstable_modes() {
            target_coords[m] = 0.0;
        }
        let velocities: Vec<V2> = nodes.iter().map(|p| -field.field(p)).collect();
        let accelerations = nodes.iter().zip(&velocities).map(|(p, v)| -(field.jacobian(p) * v)).collect();

        let mut fl = Flowline {
            source,
            target,
            source_cp: src,
            target_cp: tgt,
            seed,
            source_lift,
            target_lift,
            exit_time,
            entry_time: 1.0,
            source_coords,
            target_coords,
            ds,
            window: opts.window,
            node_s,
            nodes,
            velocities,
            accelerations,
            tails: [placeholder_tail(), placeholder_tail()],
            side_label: None,
        };
        fl.tails = [fl.fit_tail(field, End::Source)?, fl.fit_tail(field, End::Target)?];
        fl.side_label = Some(fl.compute_side_label(sys));
        Ok(fl)
    }

    /// Rebuilds the flowline from its seed with a new window and grid spacing.
    pub fn standardize<F: GradientField>(&self, field: &F, opts: &FlowlineOptions) -> Result<Self> {
        Self::from_seed(field, self.source, self.target, self.seed, opts)
    }

    /// Point on the flowline at standardized time `s`.
    pub fn eval(&self, s: f64) -> V2 {
        self.eval_with_velocity(s).0
    }

    /// Velocity `u'(s)`.
    pub fn velocity(&self, s: f64) -> V2 {
        self.eval_with_velocity(s).1
    }

    pub fn eval_with_velocity(&self, s: f64) -> (V2, V2) {
        if s <= self.exit_time {
            let cp = &self.source_cp;
            let c = chart_flow(cp, &self.source_coords, s - self.exit_time);
            let v = V2::new(-cp.eigenvalues[0] * c.x, -cp.eigenvalues[1] * c.y);
            return (self.source_lift + cp.displacement(&c), cp.displacement(&v));
        }
        if s >= self.entry_time {
            let cp = &self.target_cp;
            let c = chart_flow(cp, &self.target_coords, s - self.entry_time);
            let v = V2::new(-cp.eigenvalues[0] * c.x, -cp.eigenvalues[1] * c.y);
            return (self.target_lift + cp.displacement(&c), cp.displacement(&v));
        }
        let k = self.interval(s);
        hermite5(
            self.node_s[k],
            &self.nodes[k],
            &self.velocities[k],
            &self.accelerations[k],
            self.node_s[k + 1],
            &self.nodes[k + 1],
            &self.velocities[k + 1],
            &self.accelerations[k + 1],
            s,
        )
    }

    fn interval(&self, s: f64) -> usize {
        let n = self.node_s.len();
        self.node_s.partition_point(|&t| t <= s).saturating_sub(1).min(n - 2)
    }

    /// Samples on the uniform grid `j * ds` covering `[-L, L]`.
    pub fn samples(&self) -> Vec<(f64, V2)> {
        let n = (self.window / self.ds).round() as i64;
        (-n..=n)
            .map(|j| {
                let s = j as f64 * self.ds;
                (s, self.eval(s))
            })
            .collect()
    }

    /// Time spent outside both charts.
    pub fn transit(&self) -> f64 {
        self.entry_time - self.exit_time
    }

    /// Displacement from the critical point at the given end, in its eigenframe.
    pub fn chart_coords(&self, end: End, s: f64) -> V2 {
        match end {
            End::Source => self.source_cp.coords(&(self.eval(s) - self.source_lift)),
            End::Target => self.target_cp.coords(&(self.eval(s) - self.target_lift)),
        }
    }

    /// Fits the dominant exponential tail from three chart times integrated numerically
    /// inside the chart (independent of the closed-form continuation).
    pub fn fit_tail<F: GradientField>(&self, field: &F, end: End) -> Result<TailData> {
        let (cp, lift, s_ref, p_ref, sign) = match end {
            End::Source => (&self.source_cp, self.source_lift, self.exit_time, self.nodes[0], -1.0),
            End::Target => (&self.target_cp, self.target_lift, self.entry_time, *self.nodes.last().unwrap(), 1.0),
        };
        let modes = match end {
            End::Source => cp.unstable_modes(),
            End::Target => cp.stable_modes(),
        };
        let mode = *modes
            .iter()
            .min_by(|&&a, &&b| cp.eigenvalues[a].abs().partial_cmp(&cp.eigenvalues[b].abs()).unwrap())
            .ok_or_else(|| ObgError::Precondition("no decaying mode at this end".into()))?;
        let lambda = cp.eigenvalues[mode];
        let rhs = |_s: f64, y: &[f64; 2]| {
            let v = field.field(&V2::new(y[0], y[1]));
            [-sign * v.x, -sign * v.y]
        };
        let mut stepper = Dopri5::new(1e-12, 1e-15, 0.01);
        let mut y = [p_ref.x, p_ref.y];
        let mut samples = Vec::new();
        let mut elapsed = 0.0;
        for tau in [0.5, 1.0, 1.5] {
            y = stepper
                .integrate(&rhs, elapsed, &y, tau, 0.05)
                .ok_or(ObgError::NonconvergentOrbit { time: tau, partial: Vec::new() })?;
            elapsed = tau;
            let c = cp.coords(&(V2::new(y[0], y[1]) - lift));
            samples.push((s_ref + sign * tau, c[mode]));
        }
        let (s1, c1) = samples[0];
        let (s2, c2) = samples[1];
        let (s3, c3) = samples[2];
        if c1 == 0.0 || c2 == 0.0 || c3 == 0.0 || c1.signum() != c2.signum() {
            return Err(ObgError::TailNotLinear { residual: f64::INFINITY });
        }
        let rate_fit = -(c2 / c1).ln() / (s2 - s1);
        let a = c1 * (lambda * s1).exp();
        let predicted = a * (-lambda * s3).exp();
        let residual = ((predicted - c3) / c3).abs().max((rate_fit - lambda).abs());
        if residual > 1e-6 {
            return Err(ObgError::TailNotLinear { residual });
        }
        let mut coefficient = V2::zeros();
        coefficient[mode] = a;
        Ok(TailData { rate: lambda, mode, coefficient, fit_residual: residual })
    }

    fn compute_side_label(&self, sys: &MorseSystem) -> String {
        let mid = sys.domain.reduce(&self.eval(0.5 * (self.exit_time + self.entry_time)));
        if mid.x.sin().abs() < 1e-6 {
            if mid.y.cos() > 0.0 { "right" } else { "left" }.to_string()
        } else if mid.x > 0.0 && mid.x < std::f64::consts::PI {
            "front".to_string()
        } else {
            "back".to_string()
        }
    }

    /// Reflection `theta -> -theta` of every sample (the torus symmetry), for comparisons.
    pub fn reflected_samples(&self) -> Vec<(f64, V2)> {
        self.samples().into_iter().map(|(s, p)| (s, V2::new(-p.x, p.y))).collect()
    }
}

/// Integrates onto the given nodes, adding a node wherever the orbit crosses a kink sphere
/// of the field.  Crossings are located by bisection on a single Dormand-Prince step and the
/// integration restarts from them, so no adaptive step straddles a kink.
fn integrate_nodes<F: GradientField>(
    field: &F,
    rhs: &impl Fn(f64, &[f64; 2]) -> [f64; 2],
    stepper: &mut Dopri5<f64>,
    node_s: &[f64],
    start: V2,
    h_max: f64,
) -> Result<(Vec<f64>, Vec<V2>)> {
    let spheres = field.kink_spheres();
    let dom = &field.system().domain;
    let g = |p: &V2, (c, r): &(V2, f64)| dom.distance(p, c) - r;
    let mut out_s = vec![node_s[0]];
    let mut out_p = vec![start];
    for w in node_s.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let p0 = *out_p.last().unwrap();
        let y0 = [p0.x, p0.y];
        let run = |stepper: &mut Dopri5<f64>, t0: f64, y: &[f64; 2], t1: f64| {
            stepper
                .integrate(rhs, t0, y, t1, h_max)
                .map(|y| V2::new(y[0], y[1]))
                .ok_or(ObgError::NonconvergentOrbit { time: t0, partial: Vec::new() })
        };
        let p1 = run(stepper, s0, &y0, s1)?;
        let at = |h: f64| {
            let y = crate::integrator::dp45_step(rhs, s0, &y0, h).0;
            V2::new(y[0], y[1])
        };
        let mut cuts: Vec<f64> = Vec::new();
        for sph in &spheres {
            let (ga, gb) = (g(&p0, sph), g(&p1, sph));
            if ga.abs() < 1e-12 || gb.abs() < 1e-12 || ga.signum() == gb.signum() {
                continue;
            }
            let (mut lo, mut hi) = (0.0, s1 - s0);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if m <= lo || m >= hi {
                    break;
                }
                if g(&at(m), sph).signum() == ga.signum() {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            let h = 0.5 * (lo + hi);
            if h > 1e-9 && h < s1 - s0 - 1e-9 {
                cuts.push(h);
            }
        }
        if cuts.is_empty() {
            out_s.push(s1);
            out_p.push(p1);
            continue;
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let first = cuts[0];
        out_s.push(s0 + first);
        out_p.push(at(first));
        for &h in &cuts[1..] {
            let prev = *out_p.last().unwrap();
            let q = run(stepper, *out_s.last().unwrap(), &[prev.x, prev.y], s0 + h)?;
            out_s.push(s0 + h);
            out_p.push(q);
        }
        let prev = *out_p.last().unwrap();
        let q = run(stepper, *out_s.last().unwrap(), &[prev.x, prev.y], s1)?;
        out_s.push(s1);
        out_p.push(q);
    }
    Ok((out_s, out_p))
}

fn placeholder_tail() -> TailData {
    TailData { rate: 0.0, mode: 0, coefficient: V2::zeros(), fit_residual: 0.0 }
}

/// One chart visit in an itinerary: the chart and the sign of the unstable coordinate on
/// entry (0 for a landing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub cp: usize,
    pub unstable: f64,
}

impl Visit {
    fn key(&self, land_tol: f64) -> (usize, i8) {
        let s = if self.unstable.abs() < land_tol {
            0
        } else if self.unstable > 0.0 {
            1
        } else {
            -1
        };
        (self.cp, s)
    }
}

/// The ordered list of charts an orbit visits, ending with its landing chart.
pub fn itinerary_of(tr: &Trace) -> Vec<Visit> {
    let mut v: Vec<Visit> = tr
        .passages
        .iter()
        .map(|p| Visit { cp: p.cp, unstable: unstable_of(p.entry_coords, &p.cp, tr) })
        .collect();
    let Landing { cp, unstable, .. } = tr.landing;
    v.push(Visit { cp, unstable });
    v
}

fn unstable_of(c: V2, _cp: &usize, _tr: &Trace) -> f64 {
    // Saddle charts have the unstable mode first (ascending eigenvalues).
    c.x
}

fn same_itinerary(a: &[Visit], b: &[Visit], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.key(tol) == y.key(tol))
}

/// A change of itinerary along the unstable circle of an index-2 critical point that is a
/// sign flip of the unstable coordinate at one chart: a connection to that critical point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Transition {
    pub cp: usize,
    /// Charts passed before reaching `cp`.
    pub prefix: Vec<usize>,
    pub alpha: f64,
    pub bracket: (f64, f64),
    /// `|unstable coordinate|` at the representative angle.
    pub residual: f64,
}

/// Itinerary of the orbit leaving `source` (index 2) at angle `alpha`.
pub fn circle_itinerary<F: GradientField>(
    field: &F,
    source: usize,
    alpha: f64,
    opts: &FlowlineOptions,
) -> Result<Vec<Visit>> {
    let start = seed_point(field.system(), source, &Seed::Angle { alpha });
    let mut topts = opts.trace_options(StopRule::PassThrough);
    topts.record_nodes = false;
    let tr = trace(field, start, Some(source), &topts)?;
    Ok(itinerary_of(&tr))
}

/// Scans the unstable circle of `source` and refines every itinerary change by bisection.
pub fn scan_transitions<F: GradientField>(
    field: &F,
    source: usize,
    opts: &FlowlineOptions,
) -> Result<(Vec<Transition>, Vec<(f64, Vec<Visit>)>)> {
    let n = opts.circle_samples;
    let two_pi = 2.0 * std::f64::consts::PI;
    let coarse: Vec<(f64, Vec<Visit>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let a = two_pi * k as f64 / n as f64;
            circle_itinerary(field, source, a, opts).map(|it| (a, it))
        })
        .collect::<Result<Vec<_>>>()?;
    let tol = opts.land_tol;
    let pairs: Vec<usize> = (0..n)
        .filter(|&k| !same_itinerary(&coarse[k].1, &coarse[(k + 1) % n].1, tol))
        .collect();
    let found: Vec<Vec<Transition>> = pairs
        .into_par_iter()
        .map(|k| {
            let (a, ia) = &coarse[k];
            let b = if k + 1 == n { two_pi } else { coarse[k + 1].0 };
            let ib = &coarse[(k + 1) % n].1;
            refine(field, source, *a, ia.clone(), b, ib.clone(), opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Transition> = Vec::new();
    for t in found.into_iter().flatten() {
        let dup = out.iter_mut().find(|o| {
            o.cp == t.cp && o.prefix == t.prefix && (o.alpha - t.alpha).abs() < 1e-9
        });
        match dup {
            Some(o) => {
                if t.residual < o.residual {
                    *o = t;
                }
            }
            None => out.push(t),
        }
    }
    Ok((out, coarse))
}

fn refine<F: GradientField>(
    field: &F,
    source: usize,
    a: f64,
    ia: Vec<Visit>,
    b: f64,
    ib: Vec<Visit>,
    opts: &FlowlineOptions,
) -> Result<Vec<Transition>> {
    let tol = opts.land_tol;
    let mut out = Vec::new();
    let mut stack = vec![(a, ia, b, ib, 0usize)];
    while let Some((a, ia, b, ib, depth)) = stack.pop() {
        let mid = 0.5 * (a + b);
        if depth >= opts.bisection_depth || mid <= a || mid >= b {
            if let Some(t) = classify(a, &ia, b, &ib, tol) {
                out.push(t);
            }
            continue;
        }
        let im = circle_itinerary(field, source, mid, opts)?;
        if !same_itinerary(&ia, &im, tol) {
            stack.push((a, ia.clone(), mid, im.clone(), depth + 1));
        }
        if !same_itinerary(&im, &ib, tol) {
            stack.push((mid, im, b, ib, depth + 1));
        }
    }
    Ok(out)
}

fn classify(a: f64, ia: &[Visit], b: f64, ib: &[Visit], tol: f64) -> Option<Transition> {
    let i = (0..ia.len().min(ib.len())).find(|&i| ia[i].key(tol) != ib[i].key(tol))?;
    let (va, vb) = (&ia[i], &ib[i]);
    let (sa, sb) = (va.key(tol).1, vb.key(tol).1);
    if va.cp != vb.cp || sa == sb || sa * sb > 0 {
        return None;
    }
    let (alpha, residual) = if va.unstable.abs() <= vb.unstable.abs() {
        (a, va.unstable.abs())
    } else {
        (b, vb.unstable.abs())
    };
    Some(Transition {
        cp: va.cp,
        prefix: ia[..i].iter().map(|v| v.cp).collect(),
        alpha,
        bracket: (a, b),
        residual,
    })
}

/// All isolated connections `source -> target` (index difference 1 for an index-2 source,
/// or the unstable rays of an index-1 source).
pub fn find_connections<F: GradientField>(
    field: &F,
    source: usize,
    target: usize,
    opts: &FlowlineOptions,
) -> Result<Vec<Flowline>> {
    let sys = field.system();
    let (src, tgt) = (&sys.critical_points[source], &sys.critical_points[target]);
    if src.index == 0 {
        return Err(ObgError::Precondition("a minimum has no outgoing flowlines".into()));
    }
    if src.value <= tgt.value {
        return Err(ObgError::Precondition(format!(
            "source value {} must exceed target value {}",
            src.value, tgt.value
        )));
    }
    let mut out = Vec::new();
    if src.index == 1 {
        for sign in [1.0, -1.0] {
            let start = seed_point(sys, source, &Seed::Ray { sign });
            let tr = trace(field, start, Some(source), &opts.trace_options(StopRule::PassThrough))?;
            if tr.landing.cp == target {
                out.push(Flowline::from_seed(field, source, target, Seed::Ray { sign }, opts)?);
            }
        }
        return Ok(out);
    }
    let (transitions, _) = scan_transitions(field, source, opts)?;
    for t in transitions.into_iter().filter(|t| t.cp == target) {
        out.push(Flowline::from_seed(field, source, target, Seed::Angle { alpha: t.alpha }, opts)?);
    }
    Ok(out)
}

/// A one-parameter family of connections between critical points of index difference 2.
#[derive(Clone, Debug)]
pub struct ConnectionFamily {
    /// Angle interval (coarse samples) on the source's unstable circle.
    pub interval: (f64, f64),
    pub representatives: Vec<Flowline>,
}

/// Families `source -> target` with index difference 2, as angle intervals whose orbits land
/// directly in the target chart.
pub fn connection_families<F: GradientField>(
    field: &F,
    source: usize,
    target: usize,
    opts: &FlowlineOptions,
) -> Result<Vec<ConnectionFamily>> {
    let (_, coarse) = scan_transitions(field, source, opts)?;
    let n = coarse.len();
    let direct: Vec<bool> = coarse.iter().map(|(_, it)| it.len() == 1 && it[0].cp == target).collect();
    let Some(start) = (0..n).find(|&k| !direct[k]) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        let idx = (start + k) % n;
        if !direct[idx] {
            k += 1;
            continue;
        }
        let first = idx;
        let mut len = 0;
        while k < n && direct[(start + k) % n] {
            len += 1;
            k += 1;
        }
        let step = 2.0 * std::f64::consts::PI / n as f64;
        let a0 = coarse[first].0;
        let a1 = a0 + step * (len - 1) as f64;
        let mut reps = Vec::new();
        for a in [a0, 0.5 * (a0 + a1), a1] {
            reps.push(Flowline::from_seed(field, source, target, Seed::Angle { alpha: a }, opts)?);
        }
        out.push(ConnectionFamily { interval: (a0, a1), representatives: reps });
    }
    Ok(out)
}

/// Front/back side of a transverse torus connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontBack {
    Front,
    Back,
}

/// Left/right saddle-saddle connection on the symmetry locus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeftRight {
    Left,
    Right,
}

impl FrontBack {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "front" | "f" => Ok(FrontBack::Front),
            "back" | "b" => Ok(FrontBack::Back),
            _ => Err(ObgError::Config(format!("expected front|back, got '{s}'"))),
        }
    }
    pub fn label(self) -> &'static str {
        match self {
            FrontBack::Front => "front",
            FrontBack::Back => "back",
        }
    }
}

impl LeftRight {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" | "l" => Ok(LeftRight::Left),
            "right" | "r" => Ok(LeftRight::Right),
            _ => Err(ObgError::Config(format!("expected left|right, got '{s}'"))),
        }
    }
    pub fn label(self) -> &'static str {
        match self {
            LeftRight::Left => "left",
            LeftRight::Right => "right",
        }
    }
}

/// The six flowlines of the torus example: `u_-^{f,b}`, `u_0^{l,r}`, `u_+^{f,b}`.
#[derive(Clone, Debug)]
pub struct TorusCatalog {
    pub max: usize,
    pub x0: usize,
    pub x1: usize,
    pub min: usize,
    pub u_minus: [Flowline; 2],
    pub u_zero: [Flowline; 2],
    pub u_plus: [Flowline; 2],
}

impl TorusCatalog {
    pub fn build<F: GradientField>(field: &F, opts: &FlowlineOptions) -> Result<Self> {
        let sys = field.system();
        let max = *sys.by_index(2).first().ok_or_else(|| ObgError::Precondition("no maximum".into()))?;
        let saddles = sys.by_index(1);
        if saddles.len() != 2 {
            return Err(ObgError::Precondition(format!("expected 2 saddles, found {}", saddles.len())));
        }
        let (x0, x1) = (saddles[0], saddles[1]);
        let min = *sys.by_index(0).first().ok_or_else(|| ObgError::Precondition("no minimum".into()))?;
        let pick = |v: Vec<Flowline>, a: &str, b: &str, what: &str| -> Result<[Flowline; 2]> {
            let fa = v.iter().find(|f| f.side_label.as_deref() == Some(a)).cloned();
            let fb = v.iter().find(|f| f.side_label.as_deref() == Some(b)).cloned();
            match (fa, fb, v.len()) {
                (Some(fa), Some(fb), 2) => Ok([fa, fb]),
                _ => Err(ObgError::Precondition(format!(
                    "expected {a}/{b} pair for {what}, found {} connections",
                    v.len()
                ))),
            }
        };
        let u_minus = pick(find_connections(field, max, x0, opts)?, "front", "back", "max -> x0")?;
        let u_zero = pick(find_connections(field, x0, x1, opts)?, "left", "right", "x0 -> x1")?;
        let u_plus = pick(find_connections(field, x1, min, opts)?, "front", "back", "x1 -> min")?;
        Ok(Self { max, x0, x1, min, u_minus, u_zero, u_plus })
    }

    pub fn minus(&self, side: FrontBack) -> &Flowline {
        &self.u_minus[side as usize]
    }

    pub fn zero(&self, side: LeftRight) -> &Flowline {
        &self.u_zero[side as usize]
    }

    pub fn plus(&self, side: FrontBack) -> &Flowline {
        &self.u_plus[side as usize]
    }

    /// All connections between critical points of consecutive index.
    pub fn transverse(&self) -> Vec<&Flowline> {
        self.u_minus.iter().chain(self.u_plus.iter()).collect()
    }

    pub fn all(&self) -> Vec<&Flowline> {
        self.u_minus.iter().chain(self.u_zero.iter()).chain(self.u_plus.iter()).collect()
    }
}


#[cfg(test)]
mod catalog_tests {
    use super::*;

    #[test]
    fn torus_catalog_has_six_flowlines() {
        let s = MorseSystem::default_torus();
        let cat = TorusCatalog::build(&s, &FlowlineOptions::default()).unwrap();
        for f in cat.all() {
            eprintln!(
                "{}->{} {:?} exit {:.6} tails {:?} {:?}",
                f.source, f.target, f.side_label, f.exit_time, f.tails[0], f.tails[1]
            );
            assert!(f.tails.iter().all(|t| t.fit_residual < 1e-6));
            assert!(f.exit_time > -f.window);
        }
        // Front and back are mirror images under theta -> -theta.
        let (f, b) = (cat.minus(FrontBack::Front), cat.minus(FrontBack::Back));
        assert!((f.exit_time - b.exit_time).abs() < 1e-6);
        for s_ in [-2.0, 0.0, 0.7] {
            let (pf, pb) = (f.eval(s_), b.eval(s_));
            let d = s.domain.delta(&V2::new(-pb.x, pb.y), &pf);
            assert!(d.norm() < 1e-6, "mirror mismatch {d:?} at {s_}");
        }
    }
}
