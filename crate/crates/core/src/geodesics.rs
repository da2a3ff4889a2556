//! Geodesics of g_ε, geodesic spheres as radial graphs, and the cut-off
//! family Σ^ε_{p,ρ}(w).
//!
//! Geodesic spheres are shot with g_ε(p)-unit initial velocities `EΘ`, where
//! `E = g_ε(p)^{-1/2}`, and recorded as radial graphs in the frame `E`:
//! the sphere point on frame ray Θ̃ is `p + ρ(1 − v(Θ̃)) EΘ̃`.

use crate::metric::{AmbientMetric, MetricError};
use crate::spectral::{FieldJets, SphereGrid, SphericalFunction};
use crate::surface::{ImmersedSphere, SurfaceKind};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesicError {
    #[error("adaptive step fell below the floor at t = {t} (h = {h})")]
    StepFloor { t: f64, h: f64 },
    #[error("geodesic sphere is not star-shaped about p (node {node})")]
    NotStarShaped { node: usize },
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Adaptive RK4 settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Local error bound per unit length.
    pub tol: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { tol: 1e-10, min_step: 1e-8, max_step: 0.25 }
    }
}

/// A sampled geodesic with optional tangent sensitivities ∂y/∂θ^i.
#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub p: Vector3<f64>,
    pub v0: Vector3<f64>,
    pub t: Vec<f64>,
    pub y: Vec<Vector3<f64>>,
    pub ydot: Vec<Vector3<f64>>,
    pub sensitivity: Option<Vec<[Vector3<f64>; 2]>>,
}

impl GeodesicSolution {
    pub fn endpoint(&self) -> Vector3<f64> {
        *self.y.last().expect("non-empty trajectory")
    }

    /// Largest relative drift of g(ẏ, ẏ) along the samples.
    pub fn speed_drift(&self, metric: &AmbientMetric) -> f64 {
        let s0 = speed2(metric, &self.y[0], &self.ydot[0]);
        self.y
            .iter()
            .zip(&self.ydot)
            .map(|(y, v)| ((speed2(metric, y, v) - s0) / s0).abs())
            .fold(0.0, f64::max)
    }
}

fn speed2(metric: &AmbientMetric, y: &Vector3<f64>, v: &Vector3<f64>) -> f64 {
    (v.transpose() * metric.g(y) * v)[0]
}

fn contract(g: &[[[f64; 3]; 3]; 3], a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let mut out = Vector3::zeros();
    for n in 0..3 {
        let mut s = 0.0;
        for m in 0..3 {
            for l in 0..3 {
                s += g[n][m][l] * a[m] * b[l];
            }
        }
        out[n] = s;
    }
    out
}

const NS: usize = 18;
type State = [f64; NS];

fn vec_at(s: &State, k: usize) -> Vector3<f64> {
    Vector3::new(s[3 * k], s[3 * k + 1], s[3 * k + 2])
}

fn put(s: &mut State, k: usize, v: &Vector3<f64>) {
    s[3 * k] = v.x;
    s[3 * k + 1] = v.y;
    s[3 * k + 2] = v.z;
}

/// Right-hand side: blocks are y, ẏ, J₁, J̇₁, J₂, J̇₂.
fn rhs(metric: &AmbientMetric, s: &State, with_sens: bool) -> State {
    let mut out = [0.0; NS];
    let y = vec_at(s, 0);
    let v = vec_at(s, 1);
    put(&mut out, 0, &v);
    if !with_sens {
        let gam = metric.christoffel(&y);
        put(&mut out, 1, &-contract(&gam, &v, &v));
        return out;
    }
    let (gam, dgam) = metric.christoffel_with_derivative(&y);
    put(&mut out, 1, &-contract(&gam, &v, &v));
    for k in 0..2 {
        let j = vec_at(s, 2 + 2 * k);
        let jd = vec_at(s, 3 + 2 * k);
        let mut acc = -2.0 * contract(&gam, &jd, &v);
        for e in 0..3 {
            if j[e] != 0.0 {
                acc -= contract(&dgam[e], &v, &v) * j[e];
            }
        }
        put(&mut out, 2 + 2 * k, &jd);
        put(&mut out, 3 + 2 * k, &acc);
    }
    out
}

fn axpy(a: &State, h: f64, b: &State) -> State {
    let mut o = *a;
    for i in 0..NS {
        o[i] += h * b[i];
    }
    o
}

fn rk4_step(metric: &AmbientMetric, s: &State, h: f64, sens: bool) -> State {
    let k1 = rhs(metric, s, sens);
    let k2 = rhs(metric, &axpy(s, 0.5 * h, &k1), sens);
    let k3 = rhs(metric, &axpy(s, 0.5 * h, &k2), sens);
    let k4 = rhs(metric, &axpy(s, h, &k3), sens);
    let mut o = *s;
    for i in 0..NS {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Integrate the geodesic equation from `p` with initial velocity `v0` to
/// `t_end`, optionally carrying sensitivities for two initial-velocity
/// variations `dv0`.
pub fn integrate(
    metric: &AmbientMetric,
    p: &Vector3<f64>,
    v0: &Vector3<f64>,
    t_end: f64,
    opts: &IntegratorOptions,
    dv0: Option<[Vector3<f64>; 2]>,
) -> Result<GeodesicSolution, GeodesicError> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(GeodesicError::InvalidRadius(t_end));
    }
    let sens = dv0.is_some();
    let n_active = if sens { NS } else { 6 };
    let mut s = [0.0; NS];
    put(&mut s, 0, p);
    put(&mut s, 1, v0);
    if let Some(d) = dv0 {
        put(&mut s, 3, &d[0]);
        put(&mut s, 5, &d[1]);
    }
    let mut sol = GeodesicSolution {
        p: *p,
        v0: *v0,
        t: vec![0.0],
        y: vec![*p],
        ydot: vec![*v0],
        sensitivity: if sens { Some(vec![[Vector3::zeros(); 2]]) } else { None },
    };
    let mut t = 0.0;
    let mut h = opts.max_step.min(t_end).min(0.1);
    while t < t_end {
        let last = t + 1.05 * h >= t_end;
        let step = if last { t_end - t } else { h };
        let big = rk4_step(metric, &s, step, sens);
        let half = rk4_step(metric, &s, 0.5 * step, sens);
        let small = rk4_step(metric, &half, 0.5 * step, sens);
        let err = (0..n_active).map(|i| (small[i] - big[i]).abs()).fold(0.0, f64::max) / 15.0;
        let bound = opts.tol * step;
        if err <= bound || step <= opts.min_step {
            if err > bound && !last {
                return Err(GeodesicError::StepFloor { t, h: step });
            }
            for i in 0..n_active {
                s[i] = small[i] + (small[i] - big[i]) / 15.0;
            }
            t = if last { t_end } else { t + step };
            sol.t.push(t);
            sol.y.push(vec_at(&s, 0));
            sol.ydot.push(vec_at(&s, 1));
            if let Some(v) = sol.sensitivity.as_mut() {
                v.push([vec_at(&s, 2), vec_at(&s, 4)]);
            }
            let grow = if err == 0.0 { 4.0 } else { (0.9 * (bound / err).powf(0.25)).min(4.0) };
            h = (step * grow).min(opts.max_step);
        } else {
            let shrink = (0.9 * (bound / err).powf(0.25)).max(0.1);
            h = step * shrink;
            if h < opts.min_step {
                h = opts.min_step;
            }
        }
    }
    Ok(sol)
}

/// Endpoint of the geodesic from `p` with initial velocity `v0` at time `rho`.
///
/// With `v0` euclidean-unit this is Exp_p(ρΘ) in the paper's ε⁰ identification;
/// pass `E Θ` for g_ε-unit directions.
pub fn exp_map(
    metric: &AmbientMetric,
    p: &Vector3<f64>,
    v0: &Vector3<f64>,
    rho: f64,
    opts: &IntegratorOptions,
) -> Result<Vector3<f64>, GeodesicError> {
    if metric.is_flat() {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(GeodesicError::InvalidRadius(rho));
        }
        return Ok(p + v0 * rho);
    }
    Ok(integrate(metric, p, v0, rho, opts, None)?.endpoint())
}

/// g^{-1/2} at `p`: maps euclidean-unit vectors to g-unit vectors.
pub fn unit_frame(metric: &AmbientMetric, p: &Vector3<f64>) -> Matrix3<f64> {
    let g = metric.g(p);
    let eig = g.symmetric_eigen();
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let e = eig.eigenvectors * d * eig.eigenvectors.transpose();
    (e + e.transpose()) * 0.5
}

/// A geodesic sphere recorded as a radial graph `p + ρ(1 − v)EΘ̃`.
#[derive(Debug, Clone)]
pub struct GraphOverSphere {
    pub p: Vector3<f64>,
    pub rho: f64,
    pub frame: Matrix3<f64>,
    /// Node values of v.
    pub values: Vec<f64>,
    /// Harmonic expansion of v up to the grid's table degree.
    pub v: SphericalFunction,
    /// max over nodes of |endpoint − (p + ρ(1−v)EΘ̃)| / ρ, in frame coordinates.
    pub max_residual: f64,
}

impl GraphOverSphere {
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Shooting tolerance on the direction mismatch.
const SHOOT_TOL: f64 = 1e-12;

/// Sample the geodesic sphere of radius ρ about `p` along every grid ray.
///
/// Each node's shooting direction is found by the fixed-point update
/// Θ_s ← normalize(Θ_s + Θ̃ − ẑ), where ẑ is the endpoint direction in the
/// frame; it contracts at rate O(ερ).
pub fn geodesic_sphere_graph(
    metric: &AmbientMetric,
    p: &Vector3<f64>,
    rho: f64,
    grid: &SphereGrid,
    opts: &IntegratorOptions,
) -> Result<GraphOverSphere, GeodesicError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(GeodesicError::InvalidRadius(rho));
    }
    let frame = unit_frame(metric, p);
    let finv = frame.try_inverse().expect("frame invertible");
    let n = grid.n_nodes();
    let results: Vec<Result<(f64, f64), GeodesicError>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let target = grid.direction(k);
            if metric.is_flat() {
                return Ok((0.0, 0.0));
            }
            let mut dir = target;
            for _ in 0..40 {
                let y = exp_map(metric, p, &(frame * dir), rho, opts)?;
                let z = finv * (y - p);
                let r = z.norm();
                if r <= 0.0 {
                    return Err(GeodesicError::NotStarShaped { node: k });
                }
                let zh = z / r;
                let miss = (zh - target).norm();
                if miss < SHOOT_TOL {
                    return Ok((1.0 - r / rho, r * miss / rho));
                }
                dir = (dir + target - zh).normalize();
            }
            Err(GeodesicError::NotStarShaped { node: k })
        })
        .collect();
    let mut values = Vec::with_capacity(n);
    let mut max_residual = 0.0f64;
    for (k, r) in results.into_iter().enumerate() {
        let (v, res) = r?;
        if !(1.0 - v > 0.0) {
            return Err(GeodesicError::NotStarShaped { node: k });
        }
        values.push(v);
        max_residual = max_residual.max(res);
    }
    let v = grid.analyze(&values, grid.l_table);
    Ok(GraphOverSphere { p: *p, rho, frame, values, v, max_residual })
}

/// Cut-off radii for the blend between geodesic and standard spheres.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Cutoff {
    pub r1: f64,
    pub r2: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff { r1: 0.5, r2: 1.0 }
    }
}

impl Cutoff {
    /// Quintic smoothstep: 1 on [0, R1], 0 on [R2, ∞), C² in between.
    pub fn chi(&self, rho: f64) -> f64 {
        if rho <= self.r1 {
            1.0
        } else if rho >= self.r2 {
            0.0
        } else {
            let t = (rho - self.r1) / (self.r2 - self.r1);
            1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0)
        }
    }
}

/// The fixed part of Σ^ε_{p,ρ}: centre, radius, blended frame and χv.
#[derive(Debug, Clone)]
pub struct CutoffFamily {
    pub p: Vector3<f64>,
    pub rho: f64,
    pub chi: f64,
    /// E_χ = I + χ(E − I).
    pub frame: Matrix3<f64>,
    pub graph: Option<GraphOverSphere>,
    /// Jets of χv on the grid.
    base: FieldJets,
}

impl CutoffFamily {
    pub fn new(
        metric: &AmbientMetric,
        p: &Vector3<f64>,
        rho: f64,
        cutoff: &Cutoff,
        grid: &SphereGrid,
        opts: &IntegratorOptions,
    ) -> Result<Self, GeodesicError> {
        if !(cutoff.r1 > 0.0 && cutoff.r1 < cutoff.r2) {
            return Err(MetricError::InvalidParameter(format!("cut-off needs 0 < R1 < R2, got {cutoff:?}")).into());
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(GeodesicError::InvalidRadius(rho));
        }
        let chi = cutoff.chi(rho);
        if chi == 0.0 || metric.is_flat() {
            return Ok(CutoffFamily {
                p: *p,
                rho,
                chi,
                frame: Matrix3::identity(),
                graph: None,
                base: FieldJets::zeros(grid.n_nodes()),
            });
        }
        let graph = geodesic_sphere_graph(metric, p, rho, grid, opts)?;
        let base = if chi == 1.0 {
            // node values are used directly so ρ ≤ R1 reproduces the sampled sphere exactly
            let mut j = grid.synthesize_jets(&graph.v);
            j.f.clone_from(&graph.values);
            j
        } else {
            let mut j = grid.synthesize_jets(&graph.v.scale(chi));
            j.f = graph.values.iter().map(|v| chi * v).collect();
            j
        };
        let frame = Matrix3::identity() + (graph.frame - Matrix3::identity()) * chi;
        Ok(CutoffFamily { p: *p, rho, chi, frame, graph: Some(graph), base })
    }

    /// Σ(w): `p + ρ(1 − χv − w) E_χ Θ`.
    pub fn surface(&self, grid: &SphereGrid, w: &SphericalFunction) -> ImmersedSphere {
        let wj = grid.synthesize_jets(w);
        let r = self.base.combine(-1.0, &wj, -1.0);
        let mut r = r;
        for v in r.f.iter_mut() {
            *v += 1.0;
        }
        let kind = if self.graph.is_none() {
            SurfaceKind::StandardGraph
        } else if self.chi == 1.0 {
            SurfaceKind::GeodesicGraph
        } else {
            SurfaceKind::Blended
        };
        ImmersedSphere::radial_graph(grid, &self.p, self.rho, &self.frame, &r, kind, Some(w.clone()))
    }
}

/// Σ^ε_{p,ρ}(w) in one call.
#[allow(clippy::too_many_arguments)]
pub fn approximate_surface(
    metric: &AmbientMetric,
    p: &Vector3<f64>,
    rho: f64,
    r1: f64,
    r2: f64,
    w: &SphericalFunction,
    grid: &SphereGrid,
    opts: &IntegratorOptions,
) -> Result<ImmersedSphere, GeodesicError> {
    let fam = CutoffFamily::new(metric, p, rho, &Cutoff { r1, r2 }, grid, opts)?;
    Ok(fam.surface(grid, w))
}
