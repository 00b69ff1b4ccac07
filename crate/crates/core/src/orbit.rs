//! Orbit tracing for the negative gradient flow.
//!
//! Outside the Morse charts the flow is integrated with the adaptive Dormand-Prince stepper.
//! Chart entries are located by bisection on the fraction of the last step; inside a chart
//! the orbit is continued with the closed-form linear flow `d(s) = sum_j c_j e^{-lambda_j s} v_j`,
//! either landing (stable chart, or vanishing unstable coordinate) or passing through to the
//! analytic exit point.  Coordinates are kept unwrapped (no reduction modulo the periods) so
//! that orbits are continuous curves in the plane.

use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::integrator::{dp45_step, Dopri5};
use crate::morse_system::{CriticalPoint, GradientField, V2};

/// Eigenframe coordinates after flowing for time `s` with the linear chart flow.
pub fn chart_flow(cp: &CriticalPoint, c: &V2, s: f64) -> V2 {
    V2::new(c.x * (-cp.eigenvalues[0] * s).exp(), c.y * (-cp.eigenvalues[1] * s).exp())
}

fn radius_excess(cp: &CriticalPoint, c: &V2, s: f64, r: f64) -> f64 {
    chart_flow(cp, c, s).norm_squared() - r * r
}

fn radius_slope(cp: &CriticalPoint, c: &V2, s: f64) -> f64 {
    (0..2)
        .map(|j| {
            let l = cp.eigenvalues[j];
            -2.0 * l * c[j] * c[j] * (-2.0 * l * s).exp()
        })
        .sum()
}

/// Closed-form passage through a chart from eigen-coordinates `c` with `|c| <= r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartTransit {
    /// Time of closest approach to the critical point (0 if the orbit moves outward at once).
    pub closest_time: f64,
    pub closest: f64,
    /// Time at which `|d| = r` again.
    pub exit_time: f64,
}

/// Solves for the exit of the linear flow from the ball of radius `r`; `None` when every
/// component along an unstable mode vanishes (the orbit converges to the critical point).
pub fn chart_transit(cp: &CriticalPoint, c: &V2, r: f64) -> Option<ChartTransit> {
    let escapes = (0..2).any(|j| cp.eigenvalues[j] < 0.0 && c[j] != 0.0);
    if !escapes {
        return None;
    }
    // The squared radius is a positive combination of exponentials, hence convex in s.
    let mut closest_time = 0.0;
    if radius_slope(cp, c, 0.0) < 0.0 {
        let mut hi = 1.0;
        while radius_slope(cp, c, hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return None;
            }
        }
        closest_time = bisect(|s| radius_slope(cp, c, s), 0.0, hi);
    }
    let closest = chart_flow(cp, c, closest_time).norm();
    let lo = closest_time;
    let mut hi = lo + 1.0;
    while radius_excess(cp, c, hi, r) <= 0.0 {
        hi = lo + 2.0 * (hi - lo);
        if hi > 1e6 {
            return None;
        }
    }
    let exit_time = if radius_excess(cp, c, lo, r) >= 0.0 {
        lo
    } else {
        bisect(|s| radius_excess(cp, c, s, r), lo, hi)
    };
    Some(ChartTransit { closest_time, closest, exit_time })
}

/// Bisection for an increasing function with `g(lo) < 0 <= g(hi)`.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// When a trace ends on chart entry.
#[derive(Clone, Debug, PartialEq)]
pub enum StopRule {
    /// Stop at the first chart entered (other than the starting one).
    FirstChart,
    /// Stop on entering any of the listed charts; pass through the others.
    Charts(Vec<usize>),
    /// Pass through every chart with an unstable direction unless the unstable coordinate is
    /// below the landing tolerance.
    PassThrough,
}

#[derive(Clone, Debug)]
pub struct TraceOptions {
    pub h_max: f64,
    pub rtol: f64,
    pub atol: f64,
    pub t_max: f64,
    /// Unstable coordinates below this magnitude count as landing on the critical point.
    pub land_tol: f64,
    pub stop: StopRule,
    pub record_nodes: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            h_max: 0.02,
            rtol: 1e-10,
            atol: 1e-12,
            t_max: 400.0,
            land_tol: 1e-12,
            stop: StopRule::PassThrough,
            record_nodes: true,
        }
    }
}

/// A pass through a chart handled analytically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPassage {
    pub cp: usize,
    pub entry_time: f64,
    pub exit_time: f64,
    pub entry_coords: V2,
    pub closest: f64,
    /// Unwrapped position of the critical point for this passage.
    pub lift: V2,
}

impl ChartPassage {
    pub fn dwell(&self) -> f64 {
        self.exit_time - self.entry_time
    }
}

/// The chart in which a trace ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landing {
    pub cp: usize,
    pub time: f64,
    pub point: V2,
    pub coords: V2,
    pub lift: V2,
    /// Signed coordinate along the (single) unstable mode; 0 for minima and for maxima.
    pub unstable: f64,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub nodes: Vec<(f64, V2)>,
    pub passages: Vec<ChartPassage>,
    pub landing: Landing,
}

fn unstable_coordinate(cp: &CriticalPoint, c: &V2) -> f64 {
    match cp.unstable_modes().as_slice() {
        [j] => c[*j],
        _ => 0.0,
    }
}

/// Traces the negative gradient flow from `start` (unwrapped coordinates).
///
/// If `start_chart` is given and `start` lies strictly inside it, the orbit first leaves
/// that chart analytically; the starting chart is ignored until the orbit has moved out of it.
pub fn trace<F: GradientField>(
    field: &F,
    start: V2,
    start_chart: Option<usize>,
    opts: &TraceOptions,
) -> Result<Trace> {
    let sys = field.system();
    let r = sys.chart_radius();
    let cps = &sys.critical_points;
    let mut armed = vec![true; cps.len()];
    let mut nodes = Vec::new();
    let mut passages = Vec::new();
    let mut t = 0.0;
    let mut p = start;

    if let Some(i) = start_chart {
        armed[i] = false;
        let d = sys.domain.delta(&cps[i].location, &p);
        if d.norm() < r * (1.0 - 1e-12) {
            let lift = p - d;
            let c = cps[i].coords(&d);
            let tr = chart_transit(&cps[i], &c, r).ok_or_else(|| {
                ObgError::Precondition("start point does not leave its chart".into())
            })?;
            if opts.record_nodes {
                nodes.push((t, p));
            }
            t = tr.exit_time;
            p = lift + cps[i].displacement(&chart_flow(&cps[i], &c, tr.exit_time));
        }
    }
    if opts.record_nodes {
        nodes.push((t, p));
    }

    let rhs = |_s: f64, y: &[f64; 2]| {
        let v = field.field(&V2::new(y[0], y[1]));
        [-v.x, -v.y]
    };
    let mut stepper = Dopri5::new(opts.rtol, opts.atol, opts.h_max.min(0.01));

    loop {
        if t > opts.t_max {
            return Err(ObgError::NonconvergentOrbit {
                time: t,
                partial: nodes.iter().map(|(_, q)| [q.x, q.y]).collect(),
            });
        }
        let y0 = [p.x, p.y];
        let acc = stepper
            .step(&rhs, t, &y0, opts.h_max)
            .ok_or_else(|| ObgError::NonconvergentOrbit { time: t, partial: Vec::new() })?;
        let p1 = V2::new(acc.y[0], acc.y[1]);

        let mut entered = None;
        for (i, cp) in cps.iter().enumerate() {
            let dist = sys.domain.delta(&cp.location, &p1).norm();
            if !armed[i] {
                if dist >= r * (1.0 + 1e-6) {
                    armed[i] = true;
                }
                continue;
            }
            if dist < r {
                entered = Some(i);
                break;
            }
        }

        let Some(i) = entered else {
            t = acc.t;
            p = p1;
            if opts.record_nodes {
                nodes.push((t, p));
            }
            continue;
        };

        // Locate the entry on the step by bisection on the step fraction.
        let cp = &cps[i];
        let dist_at = |frac: f64| -> (f64, V2) {
            let (y, _) = dp45_step(&rhs, t, &y0, acc.h * frac);
            let q = V2::new(y[0], y[1]);
            (sys.domain.delta(&cp.location, &q).norm() - r, q)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if dist_at(mid).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (_, q) = dist_at(hi);
        let t_entry = t + acc.h * hi;
        if opts.record_nodes {
            nodes.push((t_entry, q));
        }
        let d = sys.domain.delta(&cp.location, &q);
        let lift = q - d;
        let c = cp.coords(&d);
        let unstable = unstable_coordinate(cp, &c);
        let stop_here = match &opts.stop {
            StopRule::FirstChart => true,
            StopRule::Charts(list) => list.contains(&i),
            StopRule::PassThrough => false,
        };
        let transit = if stop_here || cp.index == 0 || (cp.index == 1 && unstable.abs() < opts.land_tol) {
            None
        } else {
            chart_transit(cp, &c, r)
        };
        let Some(tr) = transit else {
            return Ok(Trace {
                nodes,
                passages,
                landing: Landing { cp: i, time: t_entry, point: q, coords: c, lift, unstable },
            });
        };
        let exit_time = t_entry + tr.exit_time;
        passages.push(ChartPassage {
            cp: i,
            entry_time: t_entry,
            exit_time,
            entry_coords: c,
            closest: tr.closest,
            lift,
        });
        t = exit_time;
        p = lift + cp.displacement(&chart_flow(cp, &c, tr.exit_time));
        armed[i] = false;
        if opts.record_nodes {
            nodes.push((t, p));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morse_system::MorseSystem;

    #[test]
    fn transit_of_a_saddle() {
        let s = MorseSystem::default_torus();
        let x0 = &s.critical_points[1];
        let r = s.chart_radius();
        // Enter along the stable (theta) axis with a small unstable offset.
        let c = V2::new(1e-3, (r * r - 1e-6).sqrt());
        let tr = chart_transit(x0, &c, r).unwrap();
        let exit = chart_flow(x0, &c, tr.exit_time);
        assert!((exit.norm() - r).abs() < 1e-12);
        assert!(tr.closest < r && tr.closest_time > 0.0 && tr.exit_time > tr.closest_time);
        // Dwell time is ln(r/c_u) for unit eigenvalues to leading order.
        assert!((tr.exit_time - (r / 1e-3f64).ln()).abs() < 1e-3);
        assert!(chart_transit(x0, &V2::new(0.0, r), r).is_none());
    }

    #[test]
    fn saddle_ray_reaches_next_saddle_on_the_locus() {
        let s = MorseSystem::default_torus();
        let x0 = &s.critical_points[1];
        let start = x0.location - x0.eigenvectors[0] * s.chart_radius();
        let opts = TraceOptions { stop: StopRule::FirstChart, ..Default::default() };
        let tr = trace(&s, start, Some(1), &opts).unwrap();
        assert_eq!(tr.landing.cp, 2);
        for (_, q) in &tr.nodes {
            assert!((q.x - std::f64::consts::PI).abs() < 1e-8);
        }
        let f: Vec<f64> = tr.nodes.iter().map(|(_, q)| s.evaluate(q).0).collect();
        assert!(f.windows(2).all(|w| w[1] < w[0]));
    }
}
