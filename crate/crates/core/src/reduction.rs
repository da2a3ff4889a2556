//! Auxiliary equation, reduced functional Φ_ε(p, ρ), small-ρ fit and scans.

use crate::fit::{linear_least_squares, loglog_slope};
use crate::geodesics::{Cutoff, CutoffFamily, IntegratorOptions};
use crate::metric::{curvature_pack, AmbientMetric};
use crate::spectral::{SphereGrid, SphericalFunction};
use crate::surface::{surface_geometry, ImmersedSphere, SurfaceGeometry};
use crate::willmore::{energy_of, euler_lagrange_with, graph_gradient, ElForm, WillmoreError};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error(transparent)]
    Willmore(#[from] WillmoreError),
    #[error("auxiliary iteration is not contracting (ratio {0:.3})")]
    NoContraction(f64),
    #[error("auxiliary iteration hit the step limit (last change {0:e})")]
    StepLimit(f64),
    #[error("first iterate too large (sup|w| ≈ {0:.3})")]
    TooLarge(f64),
    #[error("fit is ill-conditioned: {0}")]
    FitIllConditioned(String),
}

impl From<crate::surface::SurfaceError> for ReductionError {
    fn from(e: crate::surface::SurfaceError) -> Self {
        ReductionError::Willmore(e.into())
    }
}

impl From<crate::geodesics::GeodesicError> for ReductionError {
    fn from(e: crate::geodesics::GeodesicError) -> Self {
        ReductionError::Willmore(e.into())
    }
}

impl From<crate::metric::MetricError> for ReductionError {
    fn from(e: crate::metric::MetricError) -> Self {
        ReductionError::Willmore(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Harmonic degree of w.
    pub l_max: usize,
    /// Stop when the sup of the coefficient update falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub cutoff: Cutoff,
    pub el_form: ElForm,
    #[serde(skip)]
    pub integrator: IntegratorOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            l_max: 24,
            tol: 1e-10,
            max_iter: 50,
            cutoff: Cutoff::default(),
            el_form: ElForm::Complete,
            integrator: IntegratorOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuxiliarySolution {
    pub p: Vector3<f64>,
    pub rho: f64,
    pub epsilon: f64,
    pub w: SphericalFunction,
    /// ‖P ∇_w I‖ in coefficient L².
    pub residual: f64,
    pub iterations: usize,
    /// Last observed ratio of successive update sizes.
    pub contraction: f64,
    /// Φ_ε(p, ρ) = I_ε(Σ(w)).
    pub phi: f64,
    pub surface: ImmersedSphere,
    pub geometry: SurfaceGeometry,
    /// Euler–Lagrange node values on the final surface.
    pub el: Vec<f64>,
}

impl AuxiliarySolution {
    /// L²(dΣ) norm of the full Euler–Lagrange field, kernel part included.
    pub fn el_norm(&self) -> f64 {
        let sq: Vec<f64> = self.el.iter().map(|v| v * v).collect();
        (self.geometry.integrate(&sq) / self.geometry.area()).sqrt()
    }
}

/// Solve P ∇_w I_ε(Σ(w)) = 0 by w ← w − 2K[P ∇_w I], K the inverse of Δ(Δ+2) off the kernel.
pub fn solve_auxiliary(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    p: &Vector3<f64>,
    rho: f64,
    opts: &SolverOptions,
    w0: Option<&SphericalFunction>,
) -> Result<AuxiliarySolution, ReductionError> {
    let fam = CutoffFamily::new(metric, p, rho, &opts.cutoff, grid, &opts.integrator)?;
    solve_on_family(metric, grid, &fam, opts, w0)
}

pub fn solve_on_family(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    fam: &CutoffFamily,
    opts: &SolverOptions,
    w0: Option<&SphericalFunction>,
) -> Result<AuxiliarySolution, ReductionError> {
    let mut w = w0.map(|w| w.with_l_max(opts.l_max).project_perp()).unwrap_or_else(|| SphericalFunction::zeros(opts.l_max));
    let mut prev_change = f64::INFINITY;
    let mut slow = 0;
    let mut ratio = 0.0;
    for it in 1..=opts.max_iter {
        let surf = fam.surface(grid, &w);
        let geom = surface_geometry(metric, &surf)?;
        let el = euler_lagrange_with(metric, grid, &geom, &surf, opts.el_form)?;
        let grad = grid.analyze(&graph_gradient(metric, grid, &surf, &geom, &el), opts.l_max).project_perp();
        let step = grad.invert_on_perp().scale(2.0);
        let change = step.sup_coeff();
        if it == 1 {
            let sup = grid.synthesize(&step).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if sup > 0.3 {
                return Err(ReductionError::TooLarge(sup));
            }
        }
        if change < opts.tol {
            let phi = energy_of(&geom, grid).i;
            return Ok(AuxiliarySolution {
                p: fam.p,
                rho: fam.rho,
                epsilon: metric.epsilon,
                w,
                residual: grad.l2_norm(),
                iterations: it,
                contraction: ratio,
                phi,
                surface: surf,
                geometry: geom,
                el,
            });
        }
        if prev_change.is_finite() {
            ratio = change / prev_change;
            slow = if ratio > 0.9 { slow + 1 } else { 0 };
            if slow >= 5 {
                return Err(ReductionError::NoContraction(ratio));
            }
        }
        prev_change = change;
        w = w.add_scaled(&step, -1.0);
    }
    Err(ReductionError::StepLimit(prev_change))
}

/// Φ_ε(p, ρ).
pub fn reduced_functional(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    p: &Vector3<f64>,
    rho: f64,
    opts: &SolverOptions,
) -> Result<f64, ReductionError> {
    Ok(solve_auxiliary(metric, grid, p, rho, opts, None)?.phi)
}

/// ρ²[−Ric_p(Θ,Θ)/12 + R(p)/36] in the g_ε(p)-orthonormal frame E at the grid nodes.
pub fn w_expansion(metric: &AmbientMetric, grid: &SphereGrid, p: &Vector3<f64>, rho: f64) -> Result<Vec<f64>, ReductionError> {
    let pack = curvature_pack(metric, p, false)?;
    let e = crate::geodesics::unit_frame(metric, p);
    let ric = e.transpose() * pack.ricci * e;
    Ok((0..grid.n_nodes())
        .map(|k| {
            let t = grid.direction(k);
            rho * rho * (-(t.transpose() * ric * t)[0] / 12.0 + pack.scalar / 36.0)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallRhoFit {
    pub c4: f64,
    pub c5: f64,
    /// ‖S_p‖² of g_ε.
    pub s_norm2: f64,
    pub predicted: f64,
    /// Relative error of c₄, or absolute when ‖S_p‖² < 10⁻¹⁴.
    pub rel_err: f64,
    pub absolute: bool,
    pub rhos: Vec<f64>,
    pub phis: Vec<f64>,
    /// Log-log slope of |Φ − c₄ρ⁴|.
    pub residual_slope: f64,
}

/// Log-spaced radii from `lo` to `hi`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1).max(1) as f64)).collect()
}

/// Fit Φ ≈ c₄ρ⁴ + c₅ρ⁵ and compare c₄ with (π/5)‖S_p‖².
pub fn small_rho_fit(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    p: &Vector3<f64>,
    rhos: &[f64],
    opts: &SolverOptions,
) -> Result<SmallRhoFit, ReductionError> {
    if rhos.len() < 3 || rhos.iter().any(|&r| r > opts.cutoff.r1) {
        return Err(ReductionError::FitIllConditioned("need ≥ 3 radii, all ≤ R1".into()));
    }
    let phis: Vec<f64> = rhos
        .par_iter()
        .map(|&r| reduced_functional(metric, grid, p, r, opts))
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<f64>> = rhos.iter().map(|r| vec![r.powi(4), r.powi(5)]).collect();
    let c = linear_least_squares(&rows, &phis).map_err(ReductionError::FitIllConditioned)?;
    let s_norm2 = curvature_pack(metric, p, false)?.s_norm2();
    let predicted = PI / 5.0 * s_norm2;
    let absolute = s_norm2 < 1e-14;
    let rel_err = if absolute { (c[0] - predicted).abs() } else { (c[0] - predicted).abs() / predicted };
    let resid: Vec<f64> = rhos.iter().zip(&phis).map(|(r, f)| (f - c[0] * r.powi(4)).abs().max(1e-300)).collect();
    Ok(SmallRhoFit {
        c4: c[0],
        c5: c[1],
        s_norm2,
        predicted,
        rel_err,
        absolute,
        rhos: rhos.to_vec(),
        phis,
        residual_slope: loglog_slope(rhos, &resid).0,
    })
}

/// Axis-aligned box of centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    #[serde(rename = "box")]
    pub bounds: ScanBox,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Nodes per centre axis.
    pub n_p: usize,
    pub n_rho: usize,
    /// Golden-section stopping width in (p, ρ).
    pub refine_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanCell {
    pub p: [f64; 3],
    pub rho: f64,
    pub phi: f64,
    pub converged: bool,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocatedMax {
    pub p: [f64; 3],
    pub rho: f64,
    pub phi: f64,
    /// Second differences along each of the four coordinates at the refined point.
    pub hessian_diag: [f64; 4],
    pub negative_definite_diag: bool,
    /// L²(dΣ)-mean norm of the full Euler–Lagrange field at the refined point.
    pub el_norm: f64,
    pub interior: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub epsilon: f64,
    pub spec: ScanSpec,
    pub cells: Vec<ScanCell>,
    pub boundary_sup: f64,
    pub maxima: Vec<LocatedMax>,
    pub failed_cells: usize,
}

impl ScanResult {
    /// Rows `px,py,pz,rho,phi,converged,residual`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("px,py,pz,rho,phi,converged,residual\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{},{:e}\n",
                c.p[0], c.p[1], c.p[2], c.rho, c.phi, c.converged, c.residual
            ));
        }
        s
    }

    pub fn interior_maxima(&self) -> impl Iterator<Item = &LocatedMax> {
        self.maxima.iter().filter(|m| m.interior && m.phi > self.boundary_sup)
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Φ on a (p, ρ) grid, local maxima refined by coordinate-wise golden section.
pub fn scan_and_locate(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    spec: &ScanSpec,
    opts: &SolverOptions,
) -> Result<ScanResult, ReductionError> {
    let xs: Vec<Vec<f64>> = (0..3).map(|a| axis(spec.bounds.lo[a], spec.bounds.hi[a], spec.n_p)).collect();
    let rs = axis(spec.rho_min, spec.rho_max, spec.n_rho);
    let n = spec.n_p;
    let mut coords = Vec::with_capacity(n * n * n * spec.n_rho);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for (l, _) in rs.iter().enumerate() {
                    coords.push([i, j, k, l]);
                }
            }
        }
    }
    let cells: Vec<ScanCell> = coords
        .par_iter()
        .map(|c| {
            let p = Vector3::new(xs[0][c[0]], xs[1][c[1]], xs[2][c[2]]);
            let rho = rs[c[3]];
            match solve_auxiliary(metric, grid, &p, rho, opts, None) {
                Ok(s) => ScanCell { p: p.into(), rho, phi: s.phi, converged: true, residual: s.residual },
                Err(e) => {
                    log::warn!("scan cell at p = {p:?}, ρ = {rho} failed: {e}");
                    ScanCell { p: p.into(), rho, phi: f64::NAN, converged: false, residual: f64::NAN }
                }
            }
        })
        .collect();
    let failed_cells = cells.iter().filter(|c| !c.converged).count();
    let on_boundary = |c: &[usize; 4]| {
        c[..3].iter().any(|&i| n > 1 && (i == 0 || i == n - 1)) || c[3] == 0 || c[3] == spec.n_rho - 1
    };
    let boundary_sup = coords
        .iter()
        .zip(&cells)
        .filter(|(c, cell)| on_boundary(c) && cell.converged)
        .map(|(_, cell)| cell.phi)
        .fold(f64::NEG_INFINITY, f64::max);
    let idx = |c: &[usize; 4]| ((c[0] * n + c[1]) * n + c[2]) * spec.n_rho + c[3];
    let mut candidates = vec![];
    for (c, cell) in coords.iter().zip(&cells) {
        if !cell.converged || on_boundary(c) {
            continue;
        }
        let mut is_max = true;
        for d in 0..4 {
            for s in [-1i64, 1] {
                let mut nb = *c;
                nb[d] = (nb[d] as i64 + s) as usize;
                let v = cells[idx(&nb)].phi;
                if v.is_nan() || v > cell.phi {
                    is_max = false;
                }
            }
        }
        if is_max {
            candidates.push(*c);
        }
    }
    let steps = [
        (spec.bounds.hi[0] - spec.bounds.lo[0]) / (n.max(2) - 1) as f64,
        (spec.bounds.hi[1] - spec.bounds.lo[1]) / (n.max(2) - 1) as f64,
        (spec.bounds.hi[2] - spec.bounds.lo[2]) / (n.max(2) - 1) as f64,
        (spec.rho_max - spec.rho_min) / (spec.n_rho.max(2) - 1) as f64,
    ];
    let mut maxima = vec![];
    for c in candidates {
        let start = [xs[0][c[0]], xs[1][c[1]], xs[2][c[2]], rs[c[3]]];
        let m = refine(metric, grid, opts, start, steps, spec)?;
        maxima.push(m);
    }
    maxima.sort_by(|a, b| b.phi.total_cmp(&a.phi));
    if let Some(best) = maxima.first().map(|m| m.phi) {
        maxima.retain(|m| m.phi >= best - 1e-9 || m.phi > boundary_sup);
    }
    Ok(ScanResult { epsilon: metric.epsilon, spec: *spec, cells, boundary_sup, maxima, failed_cells })
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

fn golden_max(f: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// Newton steps on a finite-difference quadratic model, restricted to clearly
/// negative curvature directions (the maximum can sit on a flat orbit).
fn newton_polish(phi_at: &impl Fn(&[f64; 4]) -> f64, x: &mut [f64; 4], steps: &[f64; 4], tol: f64) {
    for _ in 0..6 {
        let f0 = phi_at(x);
        let h: Vec<f64> = steps.iter().map(|s| (0.01 * s).max(1e-3)).collect();
        let at = |d: &[(usize, f64)]| {
            let mut y = *x;
            for &(k, s) in d {
                y[k] += s * h[k];
            }
            phi_at(&y)
        };
        let mut g = nalgebra::Vector4::zeros();
        let mut hm = nalgebra::Matrix4::zeros();
        for i in 0..4 {
            let (fp, fm) = (at(&[(i, 1.0)]), at(&[(i, -1.0)]));
            g[i] = (fp - fm) / (2.0 * h[i]);
            hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
            for j in 0..i {
                let v = (at(&[(i, 1.0), (j, 1.0)]) - at(&[(i, 1.0), (j, -1.0)]) - at(&[(i, -1.0), (j, 1.0)])
                    + at(&[(i, -1.0), (j, -1.0)]))
                    / (4.0 * h[i] * h[j]);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        if !(g.iter().chain(hm.iter()).all(|v| v.is_finite())) {
            return;
        }
        let eig = hm.symmetric_eigen();
        let big = eig.eigenvalues.amax();
        let mut step = nalgebra::Vector4::zeros();
        for k in 0..4 {
            let lam = eig.eigenvalues[k];
            if lam < -1e-3 * big {
                let v = eig.eigenvectors.column(k);
                step -= v * (v.dot(&g) / lam);
            }
        }
        for d in 0..4 {
            step[d] = step[d].clamp(-0.5 * steps[d], 0.5 * steps[d]);
        }
        let mut t = 1.0;
        let moved = loop {
            let mut y = *x;
            for d in 0..4 {
                y[d] += t * step[d];
            }
            if phi_at(&y) >= f0 {
                *x = y;
                break t * step.amax();
            }
            t *= 0.5;
            if t < 1e-3 {
                break 0.0;
            }
        };
        if moved < 0.1 * tol {
            return;
        }
    }
}

fn refine(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    opts: &SolverOptions,
    start: [f64; 4],
    steps: [f64; 4],
    spec: &ScanSpec,
) -> Result<LocatedMax, ReductionError> {
    let phi_at = |x: &[f64; 4]| -> f64 {
        reduced_functional(metric, grid, &Vector3::new(x[0], x[1], x[2]), x[3], opts).unwrap_or(f64::NEG_INFINITY)
    };
    let mut x = start;
    let mut width = steps;
    for _sweep in 0..4 {
        let before = x;
        for d in 0..4 {
            if width[d] <= 0.0 {
                continue;
            }
            let (a, b) = (x[d] - width[d], x[d] + width[d]);
            let mut f = |t: f64| {
                let mut y = x;
                y[d] = t;
                phi_at(&y)
            };
            x[d] = golden_max(&mut f, a, b, spec.refine_tol);
        }
        let moved = (0..4).map(|d| (x[d] - before[d]).abs()).fold(0.0, f64::max);
        if moved < spec.refine_tol {
            break;
        }
        width = width.map(|w| (w * 0.5).max(4.0 * spec.refine_tol));
    }
    newton_polish(&phi_at, &mut x, &steps, spec.refine_tol);
    let sol = solve_auxiliary(metric, grid, &Vector3::new(x[0], x[1], x[2]), x[3], opts, None)?;
    let mut hess = [0.0; 4];
    for d in 0..4 {
        let h = (0.05 * steps[d]).max(1e-3);
        let mut lo = x;
        let mut hi = x;
        lo[d] -= h;
        hi[d] += h;
        hess[d] = (phi_at(&hi) - 2.0 * sol.phi + phi_at(&lo)) / (h * h);
    }
    let inside = (0..3).all(|a| x[a] > spec.bounds.lo[a] && x[a] < spec.bounds.hi[a]) && x[3] > spec.rho_min && x[3] < spec.rho_max;
    Ok(LocatedMax {
        p: [x[0], x[1], x[2]],
        rho: x[3],
        phi: sol.phi,
        hessian_diag: hess,
        negative_definite_diag: hess.iter().all(|h| *h < 0.0),
        el_norm: sol.el_norm(),
        interior: inside,
    })
}
