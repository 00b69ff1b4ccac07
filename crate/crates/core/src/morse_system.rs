//! Morse systems on a flat periodic 2-D domain.
//!
//! The builtin family is the height function of the upright torus pulled back to the flat
//! chart `[0, 2pi)^2`, `f(theta, phi) = (R + r cos theta) sin phi`.  After the critical points
//! are located, `f` is replaced inside a ball of radius `delta_m` around each of them by its
//! quadratic Taylor model, blended over the annulus `[delta_m - w, delta_m]` with the order-2
//! smoothstep.  Inside the inner ball (the Morse chart) the negative gradient flow is therefore
//! exactly linear, `u' = -H (u - x)`.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{ObgError, Result};
use crate::scalar::{smoothstep, smoothstep_d1, smoothstep_d2};

pub type V2 = Vector2<f64>;
pub type M2 = Matrix2<f64>;

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;
const MERGE_RADIUS: f64 = 1e-8;
const DET_MIN: f64 = 1e-8;
const EIGEN_MIN: f64 = 1e-6;

/// The flat periodic rectangle `[0, P1) x [0, P2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub periods: [f64; 2],
    pub name: String,
}

impl DomainSpec {
    pub fn new(periods: [f64; 2], name: impl Into<String>) -> Result<Self> {
        if !(periods[0] > 0.0 && periods[1] > 0.0) || !periods.iter().all(|p| p.is_finite()) {
            return Err(ObgError::Config(format!("periods must be positive, got {periods:?}")));
        }
        Ok(Self { periods, name: name.into() })
    }

    /// Reduces a point into the fundamental domain.
    pub fn reduce(&self, p: &V2) -> V2 {
        V2::new(p.x.rem_euclid(self.periods[0]), p.y.rem_euclid(self.periods[1]))
    }

    /// Minimal-image displacement `to - from`.
    pub fn delta(&self, from: &V2, to: &V2) -> V2 {
        let wrap = |d: f64, per: f64| d - per * (d / per).round();
        V2::new(wrap(to.x - from.x, self.periods[0]), wrap(to.y - from.y, self.periods[1]))
    }

    pub fn distance(&self, a: &V2, b: &V2) -> f64 {
        self.delta(a, b).norm()
    }
}

/// Serializable system description; field names follow the published config format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub family: String,
    pub params: BTreeMap<String, f64>,
    #[serde(default = "default_mollify_radius")]
    pub mollify_radius: f64,
    #[serde(default = "default_blend_width")]
    pub blend_width: f64,
}

fn default_mollify_radius() -> f64 {
    0.35
}

fn default_blend_width() -> f64 {
    0.1
}

impl Default for SystemConfig {
    fn default() -> Self {
        let mut params = BTreeMap::new();
        params.insert("R".to_string(), 2.0);
        params.insert("r".to_string(), 1.0);
        Self {
            family: "flat_torus_height".to_string(),
            params,
            mollify_radius: default_mollify_radius(),
            blend_width: default_blend_width(),
        }
    }
}

/// Builtin families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `(R + r cos theta) sin phi` on `(2pi, 2pi)`.
    FlatTorusHeight,
    /// Same base function; the bump perturbation is attached by `obg_t`.
    FlatTorusPerturbed,
}

impl Family {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "flat_torus_height" => Ok(Family::FlatTorusHeight),
            "flat_torus_perturbed" => Ok(Family::FlatTorusPerturbed),
            other => Err(ObgError::Config(format!("unknown family '{other}'"))),
        }
    }
}

/// A nondegenerate critical point with its Hessian eigenframe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: V2,
    pub value: f64,
    pub index: usize,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: [f64; 2],
    /// Orthonormal eigenvectors matching `eigenvalues`; the largest-magnitude component of
    /// each is positive.
    pub eigenvectors: [V2; 2],
    pub chart_radius: f64,
}

impl CriticalPoint {
    pub fn hessian(&self) -> M2 {
        let [l0, l1] = self.eigenvalues;
        let [v0, v1] = self.eigenvectors;
        v0 * v0.transpose() * l0 + v1 * v1.transpose() * l1
    }

    /// Eigenframe coordinates of a displacement from the critical point.
    pub fn coords(&self, d: &V2) -> V2 {
        V2::new(self.eigenvectors[0].dot(d), self.eigenvectors[1].dot(d))
    }

    /// Displacement with the given eigenframe coordinates.
    pub fn displacement(&self, c: &V2) -> V2 {
        self.eigenvectors[0] * c.x + self.eigenvectors[1] * c.y
    }

    /// Modes with negative eigenvalue (unstable for the negative gradient flow).
    pub fn unstable_modes(&self) -> Vec<usize> {
        (0..2).filter(|&j| self.eigenvalues[j] < 0.0).collect()
    }

    /// Modes with positive eigenvalue.
    pub fn stable_modes(&self) -> Vec<usize> {
        (0..2).filter(|&j| self.eigenvalues[j] > 0.0).collect()
    }
}

/// A gradient-like vector field `X` whose negative flow `u' = -X(u)` is traced by the crate.
pub trait GradientField: Sync {
    fn system(&self) -> &MorseSystem;
    fn field(&self, p: &V2) -> V2;
    fn jacobian(&self, p: &V2) -> M2;

    /// Spheres `(centre, radius)` across which the field is only finitely smooth (blend
    /// boundaries).  Interpolating representations put nodes on their crossings.
    fn kink_spheres(&self) -> Vec<(V2, f64)> {
        let sys = self.system();
        if !sys.mollified {
            return Vec::new();
        }
        let inner = sys.chart_radius();
        sys.critical_points
            .iter()
            .flat_map(|cp| [(cp.location, inner), (cp.location, sys.mollify_radius)])
            .collect()
    }
}

/// A Morse function on the flat torus, optionally mollified near its critical points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MorseSystem {
    pub domain: DomainSpec,
    pub family: Family,
    pub big_r: f64,
    pub small_r: f64,
    pub mollify_radius: f64,
    pub blend_width: f64,
    pub critical_points: Vec<CriticalPoint>,
    pub mollified: bool,
}

impl MorseSystem {
    /// Builds a builtin family, locates and classifies its critical points and mollifies it.
    pub fn build_builtin(
        family: &str,
        params: &BTreeMap<String, f64>,
        mollify_radius: f64,
        blend_width: f64,
    ) -> Result<Self> {
        let family = Family::parse(family)?;
        let get = |k: &str| {
            params
                .get(k)
                .copied()
                .ok_or_else(|| ObgError::Config(format!("missing parameter '{k}'")))
        };
        let big_r = get("R")?;
        let small_r = get("r")?;
        if !(small_r > 0.0 && big_r.is_finite() && small_r.is_finite()) {
            return Err(ObgError::Config(format!("need R > r > 0, got R = {big_r}, r = {small_r}")));
        }
        if small_r >= big_r {
            return Err(ObgError::Config(format!(
                "degenerate critical structure: r = {small_r} >= R = {big_r}"
            )));
        }
        if !(mollify_radius > 0.0 && blend_width > 0.0 && blend_width < mollify_radius) {
            return Err(ObgError::Config(format!(
                "need 0 < blend_width < mollify_radius, got {blend_width} and {mollify_radius}"
            )));
        }
        let domain = DomainSpec::new([2.0 * std::f64::consts::PI; 2], "flat_torus")?;
        let mut system = MorseSystem {
            domain,
            family,
            big_r,
            small_r,
            mollify_radius,
            blend_width,
            critical_points: Vec::new(),
            mollified: false,
        };
        system.critical_points = system.find_critical_points(64)?;
        system.mollify()
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        Self::build_builtin(&cfg.family, &cfg.params, cfg.mollify_radius, cfg.blend_width)
    }

    /// The default upright torus, `R = 2`, `r = 1`.
    pub fn default_torus() -> Self {
        Self::from_config(&SystemConfig::default()).expect("default torus is valid")
    }

    pub fn config(&self) -> SystemConfig {
        let mut params = BTreeMap::new();
        params.insert("R".to_string(), self.big_r);
        params.insert("r".to_string(), self.small_r);
        let family = match self.family {
            Family::FlatTorusHeight => "flat_torus_height",
            Family::FlatTorusPerturbed => "flat_torus_perturbed",
        };
        SystemConfig {
            family: family.to_string(),
            params,
            mollify_radius: self.mollify_radius,
            blend_width: self.blend_width,
        }
    }

    /// Radius of the Morse charts, `delta_m - w`.
    pub fn chart_radius(&self) -> f64 {
        self.mollify_radius - self.blend_width
    }

    /// Unmollified `(f, grad f, Hess f)` of the analytic family.
    pub fn evaluate_raw(&self, p: &V2) -> (f64, V2, M2) {
        let (r_big, r) = (self.big_r, self.small_r);
        let (st, ct) = p.x.sin_cos();
        let (sp, cp) = p.y.sin_cos();
        let rho = r_big + r * ct;
        let f = rho * sp;
        let g = V2::new(-r * st * sp, rho * cp);
        let h = M2::new(-r * ct * sp, -r * st * cp, -r * st * cp, -rho * sp);
        (f, g, h)
    }

    /// The critical point whose mollification ball contains `p`, with the displacement.
    pub fn nearest_critical(&self, p: &V2) -> Option<(usize, V2)> {
        if !self.mollified {
            return None;
        }
        self.critical_points.iter().enumerate().find_map(|(i, cp)| {
            let d = self.domain.delta(&cp.location, p);
            (d.norm() < self.mollify_radius).then_some((i, d))
        })
    }

    /// The chart (inner ball) containing `p`, if any.
    pub fn chart_of(&self, p: &V2) -> Option<(usize, V2)> {
        self.nearest_critical(p).filter(|(_, d)| d.norm() <= self.chart_radius())
    }

    /// Mollified `(f, grad f, Hess f)`; accepts points outside the fundamental domain.
    pub fn evaluate(&self, p: &V2) -> (f64, V2, M2) {
        let Some((i, d)) = self.nearest_critical(p) else {
            return self.evaluate_raw(p);
        };
        let cp = &self.critical_points[i];
        let hq = cp.hessian();
        let gq = hq * d;
        let q = cp.value + 0.5 * d.dot(&gq);
        let rho = d.norm();
        let inner = self.chart_radius();
        if rho <= inner {
            return (q, gq, hq);
        }
        let (f, gf, hf) = self.evaluate_raw(p);
        let w = self.blend_width;
        let t = (rho - inner) / w;
        let chi = 1.0 - smoothstep(t);
        let chi1 = -smoothstep_d1(t) / w;
        let chi2 = -smoothstep_d2(t) / (w * w);
        let n = d / rho;
        let grad_chi = n * chi1;
        let nn = n * n.transpose();
        let hess_chi = nn * chi2 + (M2::identity() - nn) * (chi1 / rho);
        let dq = q - f;
        let dg = gq - gf;
        let value = f + chi * dq;
        let grad = gf + dg * chi + grad_chi * dq;
        let hess = hf
            + (hq - hf) * chi
            + grad_chi * dg.transpose()
            + dg * grad_chi.transpose()
            + hess_chi * dq;
        (value, grad, hess)
    }

    /// Newton search for zeros of the gradient from a `grid_n x grid_n` seed grid.
    pub fn find_critical_points(&self, grid_n: usize) -> Result<Vec<CriticalPoint>> {
        if grid_n < 32 {
            return Err(ObgError::Precondition(format!("grid_n must be >= 32, got {grid_n}")));
        }
        let [p0, p1] = self.domain.periods;
        let mut found: Vec<V2> = Vec::new();
        for i in 0..grid_n {
            for j in 0..grid_n {
                let seed = V2::new(
                    (i as f64 + 0.5) * p0 / grid_n as f64,
                    (j as f64 + 0.5) * p1 / grid_n as f64,
                );
                let Some(x) = self.newton(seed) else { continue };
                let x = self.domain.reduce(&x);
                if !found.iter().any(|y| self.domain.distance(y, &x) < MERGE_RADIUS) {
                    found.push(x);
                }
            }
        }
        let mut cps = found
            .into_iter()
            .map(|x| self.classify(&x))
            .collect::<Result<Vec<_>>>()?;
        cps.sort_by(|a, b| {
            b.value
                .partial_cmp(&a.value)
                .unwrap()
                .then(a.location.x.partial_cmp(&b.location.x).unwrap())
                .then(a.location.y.partial_cmp(&b.location.y).unwrap())
        });
        Ok(cps)
    }

    fn newton(&self, mut x: V2) -> Option<V2> {
        for _ in 0..NEWTON_MAX_ITERS {
            let (_, g, h) = self.evaluate(&x);
            let step = h.try_inverse()? * g;
            x -= step;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
            if step.norm() < NEWTON_TOL {
                let (_, g, _) = self.evaluate(&x);
                return (g.norm() < 1e-9).then_some(x);
            }
        }
        None
    }

    fn classify(&self, x: &V2) -> Result<CriticalPoint> {
        let (value, _, h) = self.evaluate(x);
        let det = h.determinant();
        if det.abs() < DET_MIN {
            return Err(ObgError::NonMorse { theta: x.x, phi: x.y, det });
        }
        let (eigenvalues, eigenvectors) = sorted_eigen(&h);
        if eigenvalues.iter().any(|l| l.abs() < EIGEN_MIN) {
            return Err(ObgError::NonMorse { theta: x.x, phi: x.y, det });
        }
        let index = eigenvalues.iter().filter(|&&l| l < 0.0).count();
        Ok(CriticalPoint {
            location: *x,
            value,
            index,
            eigenvalues,
            eigenvectors,
            chart_radius: self.chart_radius(),
        })
    }

    /// Switches on the quadratic normal form near the recorded critical points and verifies
    /// that no spurious critical point appears.
    pub fn mollify(mut self) -> Result<Self> {
        if self.critical_points.is_empty() {
            return Err(ObgError::Precondition("critical points not located".into()));
        }
        let cps = &self.critical_points;
        let mut min_sep = f64::INFINITY;
        for i in 0..cps.len() {
            for j in i + 1..cps.len() {
                min_sep = min_sep.min(self.domain.distance(&cps[i].location, &cps[j].location));
            }
        }
        if self.mollify_radius > 0.5 * min_sep {
            return Err(ObgError::Config(format!(
                "mollify_radius {} exceeds half the minimal critical-point separation {:.6}",
                self.mollify_radius,
                0.5 * min_sep
            )));
        }
        self.mollified = true;
        for cp in &self.critical_points {
            let lmin = cp.eigenvalues.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
            let bound = 1e-3 * lmin * self.chart_radius();
            for k in 0..=8 {
                let rho = self.chart_radius() + self.blend_width * k as f64 / 8.0;
                for a in 0..256 {
                    let ang = 2.0 * std::f64::consts::PI * a as f64 / 256.0;
                    let p = cp.location + V2::new(ang.cos(), ang.sin()) * rho;
                    let (_, g, _) = self.evaluate(&p);
                    if g.norm() < bound {
                        return Err(ObgError::MollifyZero { theta: p.x, phi: p.y, norm: g.norm() });
                    }
                }
            }
        }
        let n = 128;
        let [p0, p1] = self.domain.periods;
        for i in 0..n {
            for j in 0..n {
                let p = V2::new(i as f64 * p0 / n as f64, j as f64 * p1 / n as f64);
                if self.nearest_critical(&p).is_some() {
                    continue;
                }
                let (_, g, _) = self.evaluate(&p);
                if g.norm() < 1e-4 {
                    return Err(ObgError::MollifyZero { theta: p.x, phi: p.y, norm: g.norm() });
                }
            }
        }
        Ok(self)
    }

    /// Index of the first critical point with the given Morse index (points are sorted by
    /// descending value).
    pub fn by_index(&self, index: usize) -> Vec<usize> {
        (0..self.critical_points.len())
            .filter(|&i| self.critical_points[i].index == index)
            .collect()
    }
}

impl GradientField for MorseSystem {
    fn system(&self) -> &MorseSystem {
        self
    }

    fn field(&self, p: &V2) -> V2 {
        self.evaluate(p).1
    }

    fn jacobian(&self, p: &V2) -> M2 {
        self.evaluate(p).2
    }
}

/// Symmetric 2x2 eigendecomposition, ascending, with the sign rule "largest component > 0".
pub fn sorted_eigen(h: &M2) -> ([f64; 2], [V2; 2]) {
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut pairs: Vec<(f64, V2)> = (0..2)
        .map(|j| {
            let mut v: V2 = eig.eigenvectors.column(j).into();
            v /= v.norm();
            let k = if v.x.abs() >= v.y.abs() { 0 } else { 1 };
            if v[k] < 0.0 {
                v = -v;
            }
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    ([pairs[0].0, pairs[1].0], [pairs[0].1, pairs[1].1])
}
