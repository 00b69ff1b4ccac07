//! Discrete contraction-mapping solves for `psi_-`, `psi_0`, `psi_+` and the nonlinear
//! obstruction section `s`.
//!
//! All sections live on one uniform grid in the glued frame of [`Pregluing`], so the
//! translated sections `psi^tau` are plain arrays and translation is free.  Each linearized
//! operator `D = d/ds + A(s)` is discretized by the box scheme
//! `(psi_{k+1} - psi_k)/h + A_{k+1/2} (psi_k + psi_{k+1})/2 = (g_k + g_{k+1})/2`, closed by
//! boundary rows that remove the growing modes at the window ends and by one phase row
//! fixing the translation direction.  When the operator has a cokernel (the middle
//! flowline) one box row is traded for the phase row and the discrete cokernel is the left
//! null vector of the full operator.

use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::error::{ObgError, Result};
use crate::flowline::Flowline;
use crate::linear_analysis::{CokernelElement, LinearizedPath};
use crate::morse_system::{GradientField, M2, V2};
use crate::obg_zero::{s0 as linearized_s0, slice_zero, s00_directional, Asymptotics, GluingProfile, Interval, Pregluing, SliceZero};

/// Solver parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationOptions {
    /// Grid spacing of the coarsest grid.
    pub ds: f64,
    /// Extra window beyond `R_0 + R_- + R_+` on each side.
    pub extra_window: f64,
    /// Radius of the contraction ball (`W^{1,2}` norm).
    pub eps: f64,
    /// Fixed-point iterations stop once a step is below this (`W^{1,2}` norm).
    pub step_tol: f64,
    pub max_iter: usize,
    /// A step ratio at or above this for `stall_steps` consecutive steps is non-contraction.
    pub stall_ratio: f64,
    pub stall_steps: usize,
    /// Largest tolerated `<psi_0, kernel>` after projection.
    pub drift_tol: f64,
}

impl Default for DeformationOptions {
    fn default() -> Self {
        Self {
            ds: 0.02,
            extra_window: 10.0,
            eps: 1e-2,
            step_tol: 1e-12,
            max_iter: 200,
            stall_ratio: 0.9,
            stall_steps: 5,
            drift_tol: 1e-8,
        }
    }
}

/// A uniform grid `s_k = (first + k) ds`, `k = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub first: i64,
    pub ds: f64,
    pub n: usize,
}

impl Grid {
    /// Smallest grid of spacing `ds / refine` whose nodes include multiples of `ds`
    /// covering `[lo, hi]`; refinements of one base spacing are nested.
    pub fn covering(lo: f64, hi: f64, ds: f64, refine: usize) -> Self {
        let i0 = (lo / ds).floor() as i64;
        let i1 = (hi / ds).ceil() as i64;
        let m = refine.max(1) as i64;
        Self { first: i0 * m, ds: ds / m as f64, n: ((i1 - i0) * m + 1) as usize }
    }

    pub fn s(&self, k: usize) -> f64 {
        (self.first + k as i64) as f64 * self.ds
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.s(k)).collect()
    }

    pub fn window(&self) -> (f64, f64) {
        (self.s(0), self.s(self.n - 1))
    }

    /// Trapezoid weight of node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.n {
            0.5 * self.ds
        } else {
            self.ds
        }
    }

    /// Trapezoid inner product `<a, b>_h`.
    pub fn dot(&self, a: &[V2], b: &[V2]) -> f64 {
        (0..self.n).map(|k| self.weight(k) * a[k].dot(&b[k])).sum()
    }

    pub fn l2(&self, a: &[V2]) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Indices of the nodes inside `iv`.
    pub fn range(&self, iv: Interval<f64>) -> std::ops::Range<usize> {
        let lo = ((iv.lo / self.ds).ceil() as i64 - self.first).clamp(0, self.n as i64) as usize;
        let hi = ((iv.hi / self.ds).floor() as i64 - self.first + 1).clamp(0, self.n as i64) as usize;
        lo..hi.max(lo)
    }

    /// Discrete `W^{1,2}` norm over the nodes in `range`: trapezoid of `|psi|^2 + |psi'|^2`
    /// with central differences (one-sided at the ends of the range).
    pub fn sobolev(&self, v: &[V2], range: std::ops::Range<usize>) -> f64 {
        let (a, b) = (range.start, range.end);
        if b <= a + 1 {
            return 0.0;
        }
        let h = self.ds;
        let mut acc = 0.0;
        for k in a..b {
            let d = if k == a {
                (v[k + 1] - v[k]) / h
            } else if k + 1 == b {
                (v[k] - v[k - 1]) / h
            } else {
                (v[k + 1] - v[k - 1]) / (2.0 * h)
            };
            let w = if k == a || k + 1 == b { 0.5 * h } else { h };
            acc += w * (v[k].norm_squared() + d.norm_squared());
        }
        acc.sqrt()
    }
}

/// A vector field along one of the glued pieces, sampled on the glued grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionGrid {
    pub grid: Grid,
    /// Translation of the base flowline into the glued frame.
    pub shift: f64,
    pub values: Vec<V2>,
    /// Discrete `W^{1,2}` norm over the whole window.
    pub norm: f64,
}

impl SectionGrid {
    pub fn new(grid: Grid, shift: f64, values: Vec<V2>) -> Self {
        let norm = grid.sobolev(&values, 0..grid.n);
        Self { grid, shift, values, norm }
    }

    pub fn zeros(grid: Grid, shift: f64) -> Self {
        Self::new(grid, shift, vec![V2::zeros(); grid.n])
    }

    pub fn window(&self) -> (f64, f64) {
        self.grid.window()
    }

    /// `W^{1,2}` norm restricted to `iv`.
    pub fn norm_on(&self, iv: Interval<f64>) -> f64 {
        self.grid.sobolev(&self.values, self.grid.range(iv))
    }

    /// `max(|psi(-W)|, |psi(W)|) / ||psi||` (zero for the zero section).
    pub fn boundary_taper(&self) -> f64 {
        if self.norm == 0.0 {
            return 0.0;
        }
        self.values[0].norm().max(self.values[self.grid.n - 1].norm()) / self.norm
    }

    pub fn samples(&self) -> Vec<(f64, V2)> {
        (0..self.grid.n).map(|k| (self.grid.s(k), self.values[k])).collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Row {
    Boundary { node: usize, dir: V2 },
    Box(usize),
    Phase,
}

/// The box discretization of `D = d/ds + A(s)` along one translated flowline, with its
/// kernel, (optional) cokernel and a right inverse onto the kernel complement.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub shift: f64,
    a_mid: Vec<M2>,
    rows: Vec<Row>,
    phase_dir: V2,
    lu: BandLu<f64>,
    /// Unit (`L^2_h`) kernel vector.
    pub kernel: Vec<V2>,
    /// Unit (`L^2_h`) discrete cokernel vector, present when `D` is not surjective.
    pub cokernel: Option<Vec<V2>>,
    /// The cokernel as a functional on box right-hand sides, scaled so that it equals
    /// `<sigma, g>_h` on the averages of a node forcing `g`.
    ell: Vec<V2>,
    /// `||D k||_h` of the kernel vector (all box rows, including a dropped one).
    pub kernel_residual: f64,
    /// `||D^T c||` of the cokernel functional relative to its size.
    pub cokernel_residual: f64,
}

impl DiscreteOperator {
    /// Builds the operator along `base` translated by `shift`.  `sigma`, when given, picks
    /// the box row traded for the phase row (its largest component at the phase node).
    pub fn new<F: GradientField>(
        field: &F,
        base: &Flowline,
        shift: f64,
        grid: Grid,
        sigma: Option<&CokernelElement>,
    ) -> Result<Self> {
        let n = grid.n;
        if n < 8 {
            return Err(ObgError::Config("grid too small for the discrete operator".into()));
        }
        let a_mid = cell_averages(field, base, shift, &grid);
        let phase_node = (((shift / grid.ds).round() as i64 - grid.first).clamp(1, n as i64 - 3)) as usize;
        let phase_dir = base.velocity(grid.s(phase_node) - shift);
        if phase_dir.norm() == 0.0 {
            return Err(ObgError::Precondition("flowline velocity vanishes at the phase node".into()));
        }
        let src = &base.source_cp;
        let tgt = &base.target_cp;
        let left: Vec<V2> = src.stable_modes().into_iter().map(|j| src.eigenvectors[j]).collect();
        let right: Vec<V2> = tgt.unstable_modes().into_iter().map(|j| tgt.eigenvectors[j]).collect();
        let n_rows = left.len() + right.len() + 2 * (n - 1);
        let dropped = match n_rows {
            r if r + 1 == 2 * n => None,
            r if r == 2 * n => {
                let j = sigma
                    .map(|sg| {
                        let v = sg.eval(grid.s(phase_node) + 0.5 * grid.ds - shift);
                        usize::from(v.y.abs() > v.x.abs())
                    })
                    .unwrap_or(0);
                Some(2 * phase_node + j)
            }
            _ => {
                return Err(ObgError::Precondition(format!(
                    "boundary rows ({} + {}) do not match a Fredholm index of 0 or 1",
                    left.len(),
                    right.len()
                )))
            }
        };
        let mut rows: Vec<Row> = left.iter().map(|&dir| Row::Boundary { node: 0, dir }).collect();
        for k in 0..n - 1 {
            if k == phase_node {
                rows.push(Row::Phase);
            }
            for j in 0..2 {
                if Some(2 * k + j) != dropped {
                    rows.push(Row::Box(2 * k + j));
                }
            }
        }
        rows.extend(right.iter().map(|&dir| Row::Boundary { node: n - 1, dir }));
        debug_assert_eq!(rows.len(), 2 * n);

        let entries: Vec<Vec<(usize, f64)>> =
            rows.iter().map(|r| row_entries(*r, grid.ds, &a_mid, phase_node, phase_dir)).collect();
        let (mut kl, mut ku) = (0usize, 0usize);
        for (i, row) in entries.iter().enumerate() {
            for &(j, _) in row {
                kl = kl.max(i.saturating_sub(j));
                ku = ku.max(j.saturating_sub(i));
            }
        }
        let mut m = BandMatrix::new(2 * n, kl, ku);
        for (i, row) in entries.iter().enumerate() {
            for &(j, v) in row {
                m.add(i, j, v);
            }
        }
        let mut op = Self {
            grid,
            shift,
            a_mid,
            rows,
            phase_dir,
            lu: m.lu()?,
            kernel: Vec::new(),
            cokernel: None,
            ell: Vec::new(),
            kernel_residual: 0.0,
            cokernel_residual: 0.0,
        };

        let mut rhs = vec![0.0; 2 * n];
        rhs[op.phase_row()] = 1.0;
        op.lu.solve(&mut rhs);
        let mut k = to_v2(&rhs);
        let norm = grid.l2(&k);
        k.iter_mut().for_each(|v| *v /= norm);
        op.kernel_residual = grid_l2_mid(&grid, &op.box_residual(&k, None));
        op.kernel = k;

        if let Some(d) = dropped {
            let mut rhs = vec![0.0; 2 * n];
            for (j, v) in row_entries(Row::Box(d), grid.ds, &op.a_mid, phase_node, op.phase_dir) {
                rhs[j] = -v;
            }
            op.lu.solve_transpose(&mut rhs);
            // Functional on box right-hand sides: row weights, with 1 on the dropped row.
            let mut ell = vec![0.0; 2 * (n - 1)];
            ell[d] = 1.0;
            let mut y_phase = 0.0;
            for (i, r) in op.rows.iter().enumerate() {
                match r {
                    Row::Box(b) => ell[*b] = rhs[i],
                    Row::Phase => y_phase = rhs[i],
                    Row::Boundary { .. } => {}
                }
            }
            let ell_norm = ell.iter().map(|v| v * v).sum::<f64>().sqrt();
            op.cokernel_residual = y_phase.abs() * op.phase_dir.norm() / ell_norm;
            let mut c = vec![V2::zeros(); n];
            for k in 0..n - 1 {
                for j in 0..2 {
                    c[k][j] += 0.5 * ell[2 * k + j];
                    c[k + 1][j] += 0.5 * ell[2 * k + j];
                }
            }
            for (k, v) in c.iter_mut().enumerate() {
                *v /= grid.weight(k);
            }
            let norm = grid.l2(&c);
            c.iter_mut().for_each(|v| *v /= norm);
            op.cokernel = Some(c);
            op.ell = to_v2(&ell).into_iter().map(|v| v / norm).collect();
        }
        Ok(op)
    }

    fn phase_row(&self) -> usize {
        self.rows.iter().position(|r| matches!(r, Row::Phase)).expect("phase row present")
    }

    /// Box residuals `D psi - M g` at the midpoints (`g = None` means zero forcing).
    pub fn box_residual(&self, psi: &[V2], g: Option<&[V2]>) -> Vec<V2> {
        let h = self.grid.ds;
        (0..self.grid.n - 1)
            .map(|k| {
                let mut r = (psi[k + 1] - psi[k]) / h + self.a_mid[k] * (psi[k] + psi[k + 1]) * 0.5;
                if let Some(g) = g {
                    r -= (g[k] + g[k + 1]) * 0.5;
                }
                r
            })
            .collect()
    }

    /// `L^2_h` norm of `D psi - g` (midpoint residuals).
    pub fn residual_norm(&self, psi: &[V2], g: &[V2]) -> f64 {
        grid_l2_mid(&self.grid, &self.box_residual(psi, Some(g)))
    }

    /// Solves the box system for midpoint right-hand sides `b`; the result is projected to
    /// the `L^2_h` complement of the kernel.  When a row was dropped its equation holds only
    /// if `b` lies in the discrete image.
    pub fn solve_box(&self, b: &[V2]) -> Vec<V2> {
        let mut rhs = vec![0.0; 2 * self.grid.n];
        for (i, r) in self.rows.iter().enumerate() {
            if let Row::Box(bi) = r {
                rhs[i] = b[bi / 2][bi % 2];
            }
        }
        self.lu.solve(&mut rhs);
        let mut x = to_v2(&rhs);
        self.project_kernel(&mut x);
        x
    }

    /// The minimum-norm right inverse applied to node forcing `g`.
    pub fn solve(&self, g: &[V2]) -> Vec<V2> {
        self.solve_box(&average(g))
    }

    /// The cokernel functional on box right-hand sides (zero without a cokernel).
    pub fn cokernel_pairing(&self, b: &[V2]) -> f64 {
        self.ell.iter().zip(b).map(|(l, v)| l.dot(v)).sum()
    }

    /// `b - <sigma, b> M sigma`: the box right-hand side with its cokernel part removed.
    pub fn project_rhs(&self, b: &[V2]) -> Vec<V2> {
        match &self.cokernel {
            Some(c) => {
                let a = self.cokernel_pairing(b);
                average(c).into_iter().zip(b).map(|(m, v)| v - m * a).collect()
            }
            None => b.to_vec(),
        }
    }

    /// Removes the kernel component (in `L^2_h`).
    pub fn project_kernel(&self, x: &mut [V2]) {
        let c = self.grid.dot(x, &self.kernel);
        for (v, k) in x.iter_mut().zip(&self.kernel) {
            *v -= k * c;
        }
    }

    /// `Pi g = <sigma, g>_h sigma` (zero without a cokernel).
    pub fn project_cokernel(&self, g: &[V2]) -> Vec<V2> {
        match &self.cokernel {
            Some(c) => {
                let a = self.grid.dot(c, g);
                c.iter().map(|v| v * a).collect()
            }
            None => vec![V2::zeros(); g.len()],
        }
    }

    /// Flips the cokernel vector so that it pairs positively with `reference`; returns the
    /// `L^2_h` distance between the two unit vectors.
    pub fn align_cokernel(&mut self, reference: &[V2]) -> f64 {
        let grid = self.grid;
        let Some(c) = self.cokernel.as_mut() else { return 0.0 };
        let rn = grid.l2(reference);
        if grid.dot(c, reference) < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
            self.ell.iter_mut().for_each(|v| *v = -*v);
        }
        let diff: Vec<V2> = c.iter().zip(reference).map(|(a, b)| a - b / rn).collect();
        grid.l2(&diff)
    }
}

fn row_entries(r: Row, h: f64, a_mid: &[M2], phase_node: usize, phase_dir: V2) -> Vec<(usize, f64)> {
    match r {
        Row::Boundary { node, dir } => vec![(2 * node, dir.x), (2 * node + 1, dir.y)],
        Row::Phase => vec![(2 * phase_node, phase_dir.x), (2 * phase_node + 1, phase_dir.y)],
        Row::Box(b) => {
            let (k, j) = (b / 2, b % 2);
            let a = &a_mid[k];
            let mut e = Vec::with_capacity(4);
            for c in 0..2 {
                let id = if c == j { 1.0 / h } else { 0.0 };
                e.push((2 * k + c, -id + 0.5 * a[(j, c)]));
                e.push((2 * (k + 1) + c, id + 0.5 * a[(j, c)]));
            }
            e
        }
    }
}

/// Glued-frame times in `grid` where `base` (translated by `shift`) crosses a sphere on
/// which the field is only finitely smooth.
pub fn kink_crossings<F: GradientField>(field: &F, base: &Flowline, shift: f64, grid: &Grid) -> Vec<f64> {
    let dom = &field.system().domain;
    let spheres = field.kink_spheres();
    let pos: Vec<V2> = (0..grid.n).map(|k| base.eval(grid.s(k) - shift)).collect();
    let mut out = Vec::new();
    for (c, rho) in spheres {
        let gap = |p: &V2| dom.distance(p, &c) - rho;
        for k in 0..grid.n - 1 {
            let (g0, g1) = (gap(&pos[k]), gap(&pos[k + 1]));
            if g0 == 0.0 {
                out.push(grid.s(k));
                continue;
            }
            if g0.signum() == g1.signum() || g1 == 0.0 {
                continue;
            }
            let (mut a, mut b) = (grid.s(k), grid.s(k + 1));
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if gap(&base.eval(m - shift)).signum() == g0.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Cell averages of `A(s)` along the translated base: two-point Gauss on each piece of a
/// cell between kink crossings, so a kink of `A` costs only a third-order local error.
fn cell_averages<F: GradientField>(field: &F, base: &Flowline, shift: f64, grid: &Grid) -> Vec<M2> {
    let lin = LinearizedPath::new(field, base);
    let kinks = kink_crossings(field, base, shift, grid);
    let g = 0.5 / 3f64.sqrt();
    let h = grid.ds;
    (0..grid.n - 1)
        .map(|k| {
            let (a, b) = (grid.s(k), grid.s(k + 1));
            let lo = kinks.partition_point(|&t| t <= a);
            let hi = kinks.partition_point(|&t| t < b);
            let mut cuts = vec![a];
            cuts.extend(kinks[lo..hi].iter().copied().filter(|&t| t > a && t < b));
            cuts.push(b);
            let mut acc = M2::zeros();
            for w in cuts.windows(2) {
                let (c, d) = (w[0], w[1]);
                let (m, r) = (0.5 * (c + d), d - c);
                acc += (lin.a(m - g * r - shift) + lin.a(m + g * r - shift)) * (0.5 * r);
            }
            acc / h
        })
        .collect()
}

/// Cell averages `(g_k + g_{k+1}) / 2` of a node vector.
pub fn average(g: &[V2]) -> Vec<V2> {
    g.windows(2).map(|w| (w[0] + w[1]) * 0.5).collect()
}

/// Exact-to-quadrature cell averages of `f` (zero outside `support`): three-point Gauss on
/// each cell piece inside the support, so a cutoff's finitely smooth support ends cost no
/// grid-dependent error.
fn cell_average(grid: &Grid, support: Interval<f64>, f: impl Fn(f64) -> V2) -> Vec<V2> {
    const X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    (0..grid.n - 1)
        .map(|k| {
            let (a, b) = (grid.s(k).max(support.lo), grid.s(k + 1).min(support.hi));
            if b <= a {
                return V2::zeros();
            }
            let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
            let acc: V2 = X.iter().zip(W).map(|(x, w)| f(m + x * r) * (w * r)).sum();
            acc / grid.ds
        })
        .collect()
}

fn to_v2(x: &[f64]) -> Vec<V2> {
    x.chunks(2).map(|c| V2::new(c[0], c[1])).collect()
}

fn grid_l2_mid(grid: &Grid, r: &[V2]) -> f64 {
    (r.iter().map(|v| v.norm_squared()).sum::<f64>() * grid.ds).sqrt()
}

/// Convergence record of one fixed-point iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub iterations: usize,
    /// Largest ratio of successive steps (ratios taken from a step above the noise floor).
    pub contraction: f64,
    pub last_step: f64,
}

/// Iterates `x <- map(x)` from `start` until the `W^{1,2}` step drops below the tolerance.
pub fn fixed_point(
    label: &str,
    grid: &Grid,
    start: Vec<V2>,
    opts: &DeformationOptions,
    mut map: impl FnMut(&[V2]) -> Result<Vec<V2>>,
) -> Result<(Vec<V2>, IterStats)> {
    let mut x = start;
    let mut stats = IterStats::default();
    let mut prev_step = f64::NAN;
    let mut stalled = 0;
    let noise = 100.0 * opts.step_tol;
    for it in 1..=opts.max_iter {
        let next = map(&x)?;
        let diff: Vec<V2> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let step = grid.sobolev(&diff, 0..grid.n);
        if !step.is_finite() {
            return Err(ObgError::NonContractive(format!("{label}: iterate is not finite")));
        }
        x = next;
        stats.iterations = it;
        stats.last_step = step;
        if grid.sobolev(&x, 0..grid.n) >= opts.eps {
            return Err(ObgError::NonContractive(format!("{label}: iterate left the eps = {} ball", opts.eps)));
        }
        if prev_step.is_finite() && prev_step > noise {
            let ratio = step / prev_step;
            stats.contraction = stats.contraction.max(ratio);
            stalled = if ratio >= opts.stall_ratio { stalled + 1 } else { 0 };
            if stalled >= opts.stall_steps {
                return Err(ObgError::NonContractive(format!(
                    "{label}: step ratio {ratio:.3} for {stalled} consecutive steps"
                )));
            }
        }
        if step < opts.step_tol {
            return Ok((x, stats));
        }
        prev_step = step;
    }
    Err(ObgError::NonContractive(format!("{label}: no convergence in {} iterations", opts.max_iter)))
}

/// Which transverse end piece a solve refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Minus,
    Plus,
}

/// Per-profile diagnostics (the JSON record of one obstruction-section evaluation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(rename = "R0_minus")]
    pub r0_minus: f64,
    #[serde(rename = "R0_plus")]
    pub r0_plus: f64,
    pub s: f64,
    pub s0: f64,
    pub s00: f64,
    pub norm_psi_minus: f64,
    pub norm_psi_0: f64,
    pub norm_psi_plus: f64,
    pub iters_outer: usize,
    pub iters_inner: usize,
    /// `s - s0 = <sigma_0, R(psi_0)>`.
    pub remainder: f64,
    /// `||D_0 psi_0 + (1 - Pi) F_0(psi_0)||` at the fixed point.
    pub residual: f64,
    /// Largest successive-step ratios of the inner and outer iterations.
    pub contraction_inner: f64,
    pub contraction_outer: f64,
    /// `L^2_h` distance between the discrete and the continuous unit cokernel vectors.
    pub sigma_perturbation: f64,
    pub eps: f64,
    pub ds: f64,
}

/// Converged solution of the coupled system for one profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Deformation {
    pub psi_minus: SectionGrid,
    pub psi_0: SectionGrid,
    pub psi_plus: SectionGrid,
    /// `F_0(psi_0)` on the grid.
    pub f0: Vec<V2>,
    /// The cokernel functional applied to the box right-hand side of `F_0(psi_0)`.
    pub s: f64,
    pub residual: f64,
    pub outer: IterStats,
    pub iters_inner: usize,
    pub contraction_inner: f64,
}

/// Fitted constants of the norm estimates and the interior decay rate of `psi_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    /// `||psi_-|| R_- / (||psi_0|| + ||u_0 - x_0||)` over `supp beta_0' cap supp beta_-`.
    pub c_minus: f64,
    pub c_plus: f64,
    /// `||psi_0|| / sum_pm (R_0^pm)^{-1} (||u_pm - x|| + ||psi_pm||)` over `supp beta_pm'`.
    pub c_zero: f64,
    /// Fitted exponential rate of `|psi_0|` left of `supp beta_-'`.
    pub left_decay_rate: f64,
}

/// The discretized coupled system for one profile.
pub struct GluedSystem<'a, F> {
    field: &'a F,
    pub profile: GluingProfile<f64>,
    pub grid: Grid,
    pub pregluing: Pregluing,
    /// Operators along `u_-`, `u_0^tau`, `u_+^tau`.
    pub ops: [DiscreteOperator; 3],
    base: [Vec<V2>; 3],
    base_field: [Vec<V2>; 3],
    base_jac: [Vec<M2>; 3],
    /// Chart displacements `u_- - x_0`, `u_0^tau - x_{0|1}`, `u_+^tau - x_1`.
    pub displacement: [Vec<V2>; 3],
    db_minus: Vec<f64>,
    db_plus: Vec<f64>,
    db0_left: Vec<f64>,
    db0_right: Vec<f64>,
    /// Cell averages of the known forcings `beta_0'(u_0^tau - x)` (left and right branch) and
    /// `beta_-'(u_- - x_0) + beta_+'(u_+^tau - x_1)`.
    known: [Vec<V2>; 3],
    pub sigma_perturbation: f64,
    opts: DeformationOptions,
}

impl<'a, F: GradientField> GluedSystem<'a, F> {
    /// Discretizes the glued problem on a grid of spacing `opts.ds / refine`.
    pub fn new(
        field: &'a F,
        pieces: [&Flowline; 3],
        sigma: &CokernelElement,
        profile: GluingProfile<f64>,
        opts: DeformationOptions,
        refine: usize,
    ) -> Result<Self> {
        let [um, u0, up] = pieces;
        let pre = Pregluing::new(um, u0, up, profile)?;
        let w = profile.r0() + profile.r_minus() + profile.r_plus() + opts.extra_window;
        let grid = Grid::covering(-w, pre.shift_plus + w, opts.ds, refine);
        let mut ops = [
            DiscreteOperator::new(field, um, 0.0, grid, None)?,
            DiscreteOperator::new(field, u0, pre.shift_0, grid, Some(sigma))?,
            DiscreteOperator::new(field, up, pre.shift_plus, grid, None)?,
        ];
        let sigma_ref: Vec<V2> = (0..grid.n).map(|k| sigma.eval(grid.s(k) - pre.shift_0)).collect();
        let sigma_perturbation = ops[1].align_cokernel(&sigma_ref);
        if ops[1].cokernel.is_none() {
            return Err(ObgError::Precondition("middle operator has no cokernel".into()));
        }

        let mut base: [Vec<V2>; 3] = Default::default();
        let mut displacement: [Vec<V2>; 3] = Default::default();
        for k in 0..grid.n {
            let s = grid.s(k);
            let p = pre.pieces(s);
            for i in 0..3 {
                base[i].push(p[i].0);
            }
            displacement[0].push(p[0].0 - pre.x0);
            displacement[1].push(p[1].0 - pre.centre(s));
            displacement[2].push(p[2].0 - pre.x1);
        }
        let base_field = base.clone().map(|b| b.iter().map(|p| field.field(p)).collect());
        let base_jac = base.clone().map(|b| b.iter().map(|p| field.jacobian(p)).collect());
        let c = &pre.cutoffs;
        let split = c.split();
        let nodes = grid.nodes();
        let db_minus = nodes.iter().map(|&s| c.d_beta_minus(s)).collect();
        let db_plus = nodes.iter().map(|&s| c.d_beta_plus(s)).collect();
        let db0_left = nodes.iter().map(|&s| if s < split { c.d_beta_0(s) } else { 0.0 }).collect();
        let db0_right = nodes.iter().map(|&s| if s >= split { c.d_beta_0(s) } else { 0.0 }).collect();
        let sup = &c.supports;
        let piece = |i: usize, s: f64, x: V2| pre.pieces(s)[i].0 - x;
        let outer_m = cell_average(&grid, sup.d_beta_minus, |s| piece(0, s, pre.x0) * c.d_beta_minus(s));
        let outer_p = cell_average(&grid, sup.d_beta_plus, |s| piece(2, s, pre.x1) * c.d_beta_plus(s));
        let known = [
            cell_average(&grid, sup.d_beta_0_left, |s| piece(1, s, pre.x0) * c.d_beta_0(s)),
            outer_m.iter().zip(&outer_p).map(|(a, b)| a + b).collect(),
            cell_average(&grid, sup.d_beta_0_right, |s| piece(1, s, pre.x1) * c.d_beta_0(s)),
        ];
        Ok(Self {
            field,
            profile,
            grid,
            pregluing: pre,
            ops,
            base,
            base_field,
            base_jac,
            displacement,
            db_minus,
            db_plus,
            db0_left,
            db0_right,
            known,
            sigma_perturbation,
            opts,
        })
    }

    /// The discrete cokernel vector `sigma` of `D_0`.
    pub fn sigma(&self) -> &[V2] {
        self.ops[1].cokernel.as_deref().expect("checked at construction")
    }

    /// `Q_i(psi) = X(u_i + psi) - X(u_i) - dX(u_i) psi` on the grid.
    pub fn quadratic(&self, piece: usize, psi: &[V2]) -> Vec<V2> {
        (0..self.grid.n)
            .map(|k| {
                if psi[k] == V2::zeros() {
                    return V2::zeros();
                }
                self.field.field(&(self.base[piece][k] + psi[k])) - self.base_field[piece][k] - self.base_jac[piece][k] * psi[k]
            })
            .collect()
    }

    fn shift(&self, piece: usize) -> f64 {
        [0.0, self.pregluing.shift_0, self.pregluing.shift_plus][piece]
    }

    /// Solves `Theta_pm = 0` for fixed `psi_0`: the fixed point of
    /// `psi -> -D_pm^{-1} (Q_pm(psi) + beta_0' (u_0^tau - x + psi_0^tau))`.
    pub fn solve_theta_pm(&self, side: Side, psi0: &SectionGrid) -> Result<(SectionGrid, IterStats)> {
        if psi0.norm >= self.opts.eps {
            return Err(ObgError::Precondition(format!("||psi_0|| = {:.3e} is outside the eps ball", psi0.norm)));
        }
        let (piece, db0) = match side {
            Side::Minus => (0, &self.db0_left),
            Side::Plus => (2, &self.db0_right),
        };
        let coupled: Vec<V2> = (0..self.grid.n).map(|k| psi0.values[k] * db0[k]).collect();
        let fixed: Vec<V2> = average(&coupled).iter().zip(&self.known[piece]).map(|(a, b)| a + b).collect();
        let label = match side {
            Side::Minus => "psi_-",
            Side::Plus => "psi_+",
        };
        let (x, stats) = fixed_point(label, &self.grid, vec![V2::zeros(); self.grid.n], &self.opts, |psi| {
            let q = average(&self.quadratic(piece, psi));
            let b: Vec<V2> = fixed.iter().zip(&q).map(|(a, b)| a + b).collect();
            Ok(self.ops[piece].solve_box(&b).into_iter().map(|v| -v).collect())
        })?;
        Ok((SectionGrid::new(self.grid, self.shift(piece), x), stats))
    }

    /// `F_0(psi_0) = beta_-'(u_- - x_0 + psi_-) + beta_+'(u_+^tau - x_1 + psi_+^tau) + Q_0(psi_0)`.
    pub fn f0(&self, psi_minus: &[V2], psi0: &[V2], psi_plus: &[V2]) -> Vec<V2> {
        let q = self.quadratic(1, psi0);
        (0..self.grid.n)
            .map(|k| {
                (self.displacement[0][k] + psi_minus[k]) * self.db_minus[k]
                    + (self.displacement[2][k] + psi_plus[k]) * self.db_plus[k]
                    + q[k]
            })
            .collect()
    }

    /// Box right-hand side of `F_0(psi_0)`: exact cell averages of the flowline terms plus
    /// averaged node values of the `psi` terms.
    pub fn f0_rhs(&self, psi_minus: &[V2], psi0: &[V2], psi_plus: &[V2]) -> Vec<V2> {
        let q = self.quadratic(1, psi0);
        let nodes: Vec<V2> = (0..self.grid.n)
            .map(|k| psi_minus[k] * self.db_minus[k] + psi_plus[k] * self.db_plus[k] + q[k])
            .collect();
        average(&nodes).iter().zip(&self.known[1]).map(|(a, b)| a + b).collect()
    }

    /// Solves `D_0 psi_0 + (1 - Pi) F_0(psi_0) = 0` with `psi_pm(psi_0)` re-solved at every
    /// outer step.
    pub fn solve_theta0_image(&self) -> Result<Deformation> {
        let grid = self.grid;
        let op0 = &self.ops[1];
        let mut inner = 0usize;
        let mut contraction_inner: f64 = 0.0;
        let mut solve_pm = |psi0: &[V2]| -> Result<(SectionGrid, SectionGrid)> {
            let p0 = SectionGrid::new(grid, self.shift(1), psi0.to_vec());
            let (m, sm) = self.solve_theta_pm(Side::Minus, &p0)?;
            let (p, sp) = self.solve_theta_pm(Side::Plus, &p0)?;
            inner += sm.iterations + sp.iterations;
            contraction_inner = contraction_inner.max(sm.contraction).max(sp.contraction);
            Ok((m, p))
        };
        let (psi0, outer) = fixed_point("psi_0", &grid, vec![V2::zeros(); grid.n], &self.opts, |psi0| {
            let (m, p) = solve_pm(psi0)?;
            let b = op0.project_rhs(&self.f0_rhs(&m.values, psi0, &p.values));
            let next: Vec<V2> = op0.solve_box(&b).into_iter().map(|v| -v).collect();
            let drift = grid.dot(&next, &op0.kernel).abs();
            if drift > self.opts.drift_tol {
                return Err(ObgError::PiDrift { value: drift });
            }
            Ok(next)
        })?;
        let (m, p) = solve_pm(&psi0)?;
        let f = self.f0(&m.values, &psi0, &p.values);
        let b = self.f0_rhs(&m.values, &psi0, &p.values);
        let s = op0.cokernel_pairing(&b);
        let r: Vec<V2> =
            op0.box_residual(&psi0, None).iter().zip(op0.project_rhs(&b)).map(|(a, c)| a + c).collect();
        let residual = grid_l2_mid(&grid, &r);
        Ok(Deformation {
            psi_minus: m,
            psi_0: SectionGrid::new(grid, self.shift(1), psi0),
            psi_plus: p,
            f0: f,
            s,
            residual,
            outer,
            iters_inner: inner,
            contraction_inner,
        })
    }

    /// `<sigma, beta_-'(u_- - x_0) + beta_+'(u_+^tau - x_1)>`: the discrete linearized section.
    pub fn discrete_s0(&self) -> f64 {
        self.ops[1].cokernel_pairing(&self.known[1])
    }

    /// Fitted constants of the norm estimates for a converged deformation.
    pub fn norm_constants(&self, d: &Deformation) -> NormConstants {
        let sup = &self.pregluing.cutoffs.supports;
        let p = &self.profile;
        let disp = |i: usize, iv: Interval<f64>| self.grid.sobolev(&self.displacement[i], self.grid.range(iv));
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let c_minus = ratio(
            d.psi_minus.norm * p.r_minus(),
            d.psi_0.norm_on(sup.d_beta_0_left) + disp(1, sup.d_beta_0_left),
        );
        let c_plus = ratio(
            d.psi_plus.norm * p.r_plus(),
            d.psi_0.norm_on(sup.d_beta_0_right) + disp(1, sup.d_beta_0_right),
        );
        let c_zero = ratio(
            d.psi_0.norm,
            (disp(0, sup.d_beta_minus) + d.psi_minus.norm_on(sup.d_beta_minus)) / p.r0_minus
                + (disp(2, sup.d_beta_plus) + d.psi_plus.norm_on(sup.d_beta_plus)) / p.r0_plus,
        );
        // Log-linear fit of |psi_0| strictly between the two left cutoff regions.
        let fit = Interval { lo: sup.d_beta_0_left.hi + 0.5, hi: sup.d_beta_minus.lo - 0.5 };
        let pts: Vec<(f64, f64)> = self
            .grid
            .range(fit)
            .filter(|&k| d.psi_0.values[k].norm() > 0.0)
            .map(|k| (self.grid.s(k), d.psi_0.values[k].norm().ln()))
            .collect();
        NormConstants { c_minus, c_plus, c_zero, left_decay_rate: slope(&pts) }
    }

    /// Box residual of the sampled base velocities `u_i'` relative to their `L^2_h` norms.
    pub fn kernel_consistency(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let v: Vec<V2> = (0..self.grid.n).map(|k| self.pregluing.pieces(self.grid.s(k))[i].1).collect();
            *o = grid_l2_mid(&self.grid, &self.ops[i].box_residual(&v, None)) / self.grid.l2(&v);
        }
        out
    }
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// One evaluation of the obstruction section.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObstructionSection {
    pub s: f64,
    pub s0: f64,
    pub s00: f64,
    /// The two terms of `s00` (the `u_-` and `u_+` contributions).
    pub s00_terms: (f64, f64),
    pub diagnostics: Diagnostics,
}

/// Central differences along `(1, -1)` in `(R_0^-, R_0^+)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Probe {
    pub delta: f64,
    pub ds: f64,
    pub ds0: f64,
    pub ds00: f64,
    /// Closed-form derivative of `s00` (with `R_pm = R_0^pm / A` tied).
    pub ds00_closed: f64,
    pub sign_agrees: bool,
    /// `|d(s - s0)| / |d s00|`.
    pub relative_deviation: f64,
}

/// Grid-refinement check of `s` with spacings `ds`, `ds/2`, `ds/4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Richardson {
    pub values: [f64; 3],
    /// `(s_h - s_{h/2}) / (s_{h/2} - s_{h/4})`; 4 for a second-order scheme.
    pub ratio: f64,
}

/// Obstruction-section solver for one broken flowline `(u_-, u_0, u_+)`.
pub struct ObstructionSolver<'a, F> {
    field: &'a F,
    pub pieces: [&'a Flowline; 3],
    pub sigma: CokernelElement,
    pub asymptotics: Asymptotics,
    pub opts: DeformationOptions,
}

impl<'a, F: GradientField> ObstructionSolver<'a, F> {
    pub fn new(
        field: &'a F,
        u_minus: &'a Flowline,
        u_0: &'a Flowline,
        u_plus: &'a Flowline,
        opts: DeformationOptions,
    ) -> Result<Self> {
        let sigma = LinearizedPath::new(field, u_0).cokernel_element()?;
        let asymptotics = Asymptotics::new(u_minus, u_0, u_plus, &sigma);
        Ok(Self { field, pieces: [u_minus, u_0, u_plus], sigma, asymptotics, opts })
    }

    /// The discretized system on the grid refined `refine` times.
    pub fn system(&self, profile: &GluingProfile<f64>, refine: usize) -> Result<GluedSystem<'a, F>> {
        GluedSystem::new(self.field, self.pieces, &self.sigma, *profile, self.opts, refine)
    }

    /// `s` on the grid refined `refine` times.
    pub fn section_value(&self, profile: &GluingProfile<f64>, refine: usize) -> Result<f64> {
        Ok(self.system(profile, refine)?.solve_theta0_image()?.s)
    }

    /// `(s, s0, s00)` with diagnostics.
    pub fn obstruction_section(&self, profile: &GluingProfile<f64>) -> Result<ObstructionSection> {
        let sys = self.system(profile, 1)?;
        let d = sys.solve_theta0_image()?;
        let (s0, s00_terms) = self.linearized(&sys.pregluing, profile)?;
        let s00 = s00_terms.0 + s00_terms.1;
        let diagnostics = Diagnostics {
            r0_minus: profile.r0_minus,
            r0_plus: profile.r0_plus,
            s: d.s,
            s0,
            s00,
            norm_psi_minus: d.psi_minus.norm,
            norm_psi_0: d.psi_0.norm,
            norm_psi_plus: d.psi_plus.norm,
            iters_outer: d.outer.iterations,
            iters_inner: d.iters_inner,
            remainder: d.s - s0,
            residual: d.residual,
            contraction_inner: d.contraction_inner,
            contraction_outer: d.outer.contraction,
            sigma_perturbation: sys.sigma_perturbation,
            eps: self.opts.eps,
            ds: sys.grid.ds,
        };
        Ok(ObstructionSection { s: d.s, s0, s00, s00_terms, diagnostics })
    }

    fn linearized(&self, pre: &Pregluing, profile: &GluingProfile<f64>) -> Result<(f64, (f64, f64))> {
        let s0 = linearized_s0(pre, &self.sigma)?;
        let a = &self.asymptotics;
        let (lam, mu) = (a.rates.0, a.rates.1.abs());
        let t1 = -a.pairings.0 * (-lam * (profile.r_minus() + profile.r0_minus + a.offsets.0)).exp();
        let t2 = a.pairings.1 * (-mu * (profile.r0_plus + profile.r_plus() + a.offsets.1)).exp();
        Ok((s0, (t1, t2)))
    }

    /// Central differences of `(s, s0, s00)` along `(1, -1)` with step `delta`.
    pub fn c1_probe(&self, profile: &GluingProfile<f64>, delta: f64) -> Result<C1Probe> {
        let fwd = self.obstruction_section(&profile.with_r0(profile.r0_minus + delta, profile.r0_plus - delta))?;
        let bwd = self.obstruction_section(&profile.with_r0(profile.r0_minus - delta, profile.r0_plus + delta))?;
        let d = |a: f64, b: f64| (a - b) / (2.0 * delta);
        let (ds, ds0, ds00) = (d(fwd.s, bwd.s), d(fwd.s0, bwd.s0), d(fwd.s00, bwd.s00));
        let a = &self.asymptotics;
        let ds00_closed = s00_directional(profile, a.pairings, a.rates, a.offsets, true);
        Ok(C1Probe {
            delta,
            ds,
            ds0,
            ds00,
            ds00_closed,
            sign_agrees: ds.signum() == ds00.signum(),
            relative_deviation: (ds - ds0).abs() / ds00.abs(),
        })
    }

    /// `s` with spacings `ds`, `ds/2`, `ds/4` and the Richardson ratio.
    pub fn richardson(&self, profile: &GluingProfile<f64>) -> Result<Richardson> {
        let v = [self.section_value(profile, 1)?, self.section_value(profile, 2)?, self.section_value(profile, 4)?];
        Ok(Richardson { values: v, ratio: (v[0] - v[1]) / (v[1] - v[2]) })
    }

    /// Zero of `s` on the slice `R_0^- + R_0^+ = r0`, scanning `R_0^- in (margin, r0 - margin)`.
    pub fn slice_zero(&self, profile: &GluingProfile<f64>, r0: f64, margin: f64) -> Result<Option<SliceZero>> {
        let err = std::cell::RefCell::new(None);
        let z = slice_zero(r0, margin, |x| match self.section_value(&profile.with_r0(x, r0 - x), 1) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        });
        match err.into_inner() {
            Some(e) => Err(e),
            None => z,
        }
    }

    /// Values of `s` on `samples` evenly spaced points of the slice.
    pub fn slice_values(&self, profile: &GluingProfile<f64>, r0: f64, margin: f64, samples: usize) -> Result<Vec<(f64, f64)>> {
        (0..samples)
            .map(|k| {
                let x = margin + (r0 - 2.0 * margin) * k as f64 / (samples - 1).max(1) as f64;
                Ok((x, self.section_value(&profile.with_r0(x, r0 - x), 1)?))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_nest_and_weights_integrate() {
        let g1 = Grid::covering(-1.03, 2.01, 0.02, 1);
        let g4 = Grid::covering(-1.03, 2.01, 0.02, 4);
        assert!((g1.window().0 - g4.window().0).abs() < 1e-12 && (g1.window().1 - g4.window().1).abs() < 1e-12);
        assert_eq!(g4.n - 1, 4 * (g1.n - 1));
        let total: f64 = (0..g4.n).map(|k| g4.weight(k)).sum();
        assert!((total - (g4.window().1 - g4.window().0)).abs() < 1e-12);
        let r = g1.range(Interval { lo: 0.0, hi: 1.0 });
        assert!((g1.s(r.start)).abs() < 1e-12 && (g1.s(r.end - 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sobolev_norm_of_a_gaussian() {
        let g = Grid::covering(-12.0, 12.0, 0.01, 1);
        let v: Vec<V2> = g.nodes().iter().map(|&s| V2::new((-s * s / 2.0).exp(), 0.0)).collect();
        // int e^{-s^2} + s^2 e^{-s^2} = sqrt(pi) * 3/2
        let exact = (1.5 * std::f64::consts::PI.sqrt()).sqrt();
        assert!((g.sobolev(&v, 0..g.n) - exact).abs() < 1e-4);
    }

    #[test]
    fn fixed_point_detects_contraction_and_expansion() {
        let g = Grid::covering(0.0, 1.0, 0.1, 1);
        let opts = DeformationOptions::default();
        let target = vec![V2::new(1e-3, -2e-3); g.n];
        let (x, st) = fixed_point("half", &g, vec![V2::zeros(); g.n], &opts, |x| {
            Ok(x.iter().zip(&target).map(|(a, t)| a * 0.5 + t * 0.5).collect())
        })
        .unwrap();
        assert!((x[3] - target[3]).norm() < 1e-12);
        assert!((st.contraction - 0.5).abs() < 1e-6);
        let grow = fixed_point("grow", &g, vec![V2::new(1e-6, 0.0); g.n], &opts, |x| {
            Ok(x.iter().map(|a| a * 1.5 + V2::new(1e-9, 0.0)).collect())
        });
        assert!(matches!(grow, Err(ObgError::NonContractive(_))));
        let slow = fixed_point("slow", &g, vec![V2::new(1e-3, 0.0); g.n], &opts, |x| Ok(x.iter().map(|a| a * 0.95).collect()));
        assert!(matches!(slow, Err(ObgError::NonContractive(_))));
    }
}
