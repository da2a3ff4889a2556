//! I_ε and W, the Euler–Lagrange field, Möbius maps, ε-expansions and
//! re-graphing onto kernel-orthogonal form.

use crate::geodesics::GeodesicError;
use crate::metric::{curvature_pack, AmbientMetric, MetricError, MetricPerturbation};
use crate::spectral::{lm_index, SphereGrid, SphericalFunction};
use crate::surface::{surface_geometry, ImmersedSphere, SurfaceError, SurfaceGeometry, SurfaceKind};
use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WillmoreError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error("inversion centre lies {0:e} from the surface")]
    CenterTooClose(f64),
    #[error("epsilon fit is ill-conditioned: {0}")]
    FitIllConditioned(String),
    #[error("re-graphing Newton iteration did not converge (residual {0:e})")]
    NewtonDiverged(f64),
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyReport {
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub area: f64,
    pub n_theta: usize,
    pub l_max: usize,
    /// |ΔI| under N_θ → N_θ + 8, when computed.
    pub quad_error: Option<f64>,
}

/// I = ∫(H²/4 − D)dΣ and W = ∫H²/4 dΣ.
pub fn energy(metric: &AmbientMetric, grid: &SphereGrid, surf: &ImmersedSphere) -> Result<EnergyReport, WillmoreError> {
    let geom = surface_geometry(metric, surf)?;
    Ok(energy_of(&geom, grid))
}

pub fn energy_of(geom: &SurfaceGeometry, grid: &SphereGrid) -> EnergyReport {
    let i = geom.integrate(&geom.willmore_integrand());
    let h2: Vec<f64> = geom.nodes.iter().map(|n| 0.25 * n.mean * n.mean).collect();
    EnergyReport {
        i,
        w: geom.integrate(&h2),
        area: geom.area(),
        n_theta: grid.n_theta,
        l_max: grid.l_max,
        quad_error: None,
    }
}

/// Energy with the quadrature error estimated by rebuilding on a finer grid.
pub fn energy_with_error(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    build: impl Fn(&SphereGrid) -> Result<ImmersedSphere, WillmoreError>,
) -> Result<EnergyReport, WillmoreError> {
    let mut rep = energy(metric, grid, &build(grid)?)?;
    let fine = SphereGrid::new(grid.n_theta + 8, grid.l_max);
    let rf = energy(metric, &fine, &build(&fine)?)?;
    rep.quad_error = Some((rf.i - rep.i).abs());
    Ok(rep)
}

/// Willmore energy of the torus of revolution with radii (R, r), by
/// closed-form curvature on an n×n periodic grid.
pub fn torus_willmore(big_r: f64, r: f64, n: usize) -> f64 {
    let h = 2.0 * PI / n as f64;
    let mut s = 0.0;
    for j in 0..n {
        let c = (j as f64 * h).cos();
        let rho = big_r + r * c;
        let mean = (big_r + 2.0 * r * c) / (r * rho);
        s += 0.25 * mean * mean * r * rho;
    }
    s * h * h * n as f64
}

/// ½Δ_M H + H(H²/4 − D) + curvature terms, node-wise.
///
/// The curvature terms are Σ Å_ij R(N,f_i,N,f_j) + Σ A_ij Ric(f_i,f_j) − H Ric(N,N)
/// + Σ (∇_{f_i}R)(N,f_j,f_j,f_i) in an orthonormal tangent frame f. The field is the
/// L²(dΣ) gradient of I for displacements along the inward normal N.
pub fn euler_lagrange(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    geom: &SurfaceGeometry,
    surf: &ImmersedSphere,
) -> Result<Vec<f64>, WillmoreError> {
    euler_lagrange_with(metric, grid, geom, surf, ElForm::Complete)
}

/// Which curvature terms enter the Euler–Lagrange field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElForm {
    /// The gradient of I.
    #[default]
    Complete,
    /// Drops Σ A_ij Ric(f_i,f_j) − H Ric(N,N); kept only for comparison runs.
    WithoutTangentialRicci,
}

pub fn euler_lagrange_with(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    geom: &SurfaceGeometry,
    surf: &ImmersedSphere,
    form: ElForm,
) -> Result<Vec<f64>, WillmoreError> {
    let h = geom.mean_curvature();
    let hj = grid.synthesize_jets(&grid.analyze(&h, grid.l_table));
    let flat = metric.is_flat();
    let out: Vec<Result<f64, MetricError>> = (0..geom.nodes.len())
        .into_par_iter()
        .map(|k| {
            let n = &geom.nodes[k];
            let gi = n.ginv();
            let d1 = [hj.f_t[k], hj.f_p[k]];
            let d2 = [hj.f_tt[k], hj.f_tp[k], hj.f_pp[k]];
            let hess = |ij: usize| d2[ij] - n.conn[ij][0] * d1[0] - n.conn[ij][1] * d1[1];
            let lap = gi[0] * hess(0) + 2.0 * gi[1] * hess(1) + gi[2] * hess(2);
            let mut el = 0.5 * lap + n.mean * n.integrand();
            if flat {
                return Ok(el);
            }
            let pack = curvature_pack(metric, &surf.x[k], true)?;
            let nr = &n.normal;
            let f = &n.frame;
            let rr = |i: usize, j: usize| pack.riemann_apply(nr, &f[i], nr, &f[j]);
            let (r00, r01, r11) = (rr(0, 0), rr(0, 1), rr(1, 1));
            el += n.a[0] * r00 + 2.0 * n.a[1] * r01 + n.a[2] * r11 - 0.5 * n.mean * (r00 + r11);
            // divergence of the Codazzi one-form differentiates N and the frame as well as R
            if form == ElForm::Complete {
                let ric = |u: &Vector3<f64>, v: &Vector3<f64>| (u.transpose() * pack.ricci * v)[0];
                el += n.a[0] * ric(&f[0], &f[0]) + 2.0 * n.a[1] * ric(&f[0], &f[1]) + n.a[2] * ric(&f[1], &f[1])
                    - n.mean * ric(nr, nr);
            }
            let nab = pack.nabla_riemann.as_ref().expect("requested");
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let (fi, fj) = (&f[i], &f[j]);
                    for e in 0..3 {
                        for a in 0..3 {
                            let c0 = fi[e] * nr[a];
                            if c0 == 0.0 {
                                continue;
                            }
                            for b in 0..3 {
                                for c in 0..3 {
                                    let c1 = c0 * fj[b] * fj[c];
                                    for d in 0..3 {
                                        s += nab[e][a][b][c][d] * c1 * fi[d];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Ok(el + s)
        })
        .collect();
    out.into_iter().collect::<Result<Vec<_>, _>>().map_err(Into::into)
}

/// Euclidean Möbius maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MoebiusMap {
    Inversion { center: [f64; 3], radius: f64 },
    Similarity { scale: f64, shift: [f64; 3] },
}

/// Image surface with tangents by the Jacobian and second derivatives by the chain rule.
pub fn moebius_transform(surf: &ImmersedSphere, map: &MoebiusMap) -> Result<ImmersedSphere, WillmoreError> {
    let mut out = surf.clone();
    out.kind = SurfaceKind::MoebiusImage;
    out.graph = None;
    match *map {
        MoebiusMap::Similarity { scale, shift } => {
            let b = Vector3::from(shift);
            for k in 0..surf.n_nodes() {
                out.x[k] = surf.x[k] * scale + b;
                out.xi[k] = surf.xi[k].map(|v| v * scale);
                out.xij[k] = surf.xij[k].map(|v| v * scale);
            }
        }
        MoebiusMap::Inversion { center, radius } => {
            let c = Vector3::from(center);
            let dmin = surf.x.iter().map(|x| (x - c).norm()).fold(f64::INFINITY, f64::min);
            if dmin <= 1e-3 {
                return Err(WillmoreError::CenterTooClose(dmin));
            }
            let r2 = radius * radius;
            for k in 0..surf.n_nodes() {
                let y = surf.x[k] - c;
                let q = y.norm_squared();
                let jac = |v: &Vector3<f64>| (v * q - y * (2.0 * y.dot(v))) * (r2 / (q * q));
                let hess = |u: &Vector3<f64>, v: &Vector3<f64>| {
                    let (yu, yv, uv) = (y.dot(u), y.dot(v), u.dot(v));
                    (-(u * yv + v * yu + y * uv) * 2.0 * q + y * (8.0 * yu * yv)) * (r2 / (q * q * q))
                };
                let [a, b] = surf.xi[k];
                out.x[k] = c + y * (r2 / q);
                out.xi[k] = [jac(&a), jac(&b)];
                let [aa, ab, bb] = surf.xij[k];
                out.xij[k] = [jac(&aa) + hess(&a, &a), jac(&ab) + hess(&a, &b), jac(&bb) + hess(&b, &b)];
            }
        }
    }
    Ok(out)
}

/// Coefficients of I_ε ≈ I₀ + εG₁ + ε²G₂ from samples.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonFit {
    pub i0: f64,
    pub g1: f64,
    pub g2: f64,
    /// Largest absolute fit residual over the samples.
    pub residual: f64,
    pub samples: Vec<(f64, f64)>,
    /// Polynomial degree used.
    pub degree: usize,
}

/// Least-squares polynomial fit of I(ε) of degree min(n − 2, 6) in ε/ε_max.
///
/// Sampling both signs of ε separates the odd part, so G₁ is not polluted by
/// the cubic term.
pub fn epsilon_fit(samples: &[(f64, f64)]) -> Result<EpsilonFit, WillmoreError> {
    let n = samples.len();
    if n < 4 {
        return Err(WillmoreError::FitIllConditioned(format!("need at least 4 samples, got {n}")));
    }
    let emax = samples.iter().fold(0.0f64, |m, s| m.max(s.0.abs()));
    if emax == 0.0 {
        return Err(WillmoreError::FitIllConditioned("all samples at ε = 0".into()));
    }
    let deg = (n - 2).min(6);
    let a = DMatrix::from_fn(n, deg + 1, |i, j| (samples[i].0 / emax).powi(j as i32));
    let b = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(WillmoreError::FitIllConditioned(format!("singular values {smin:e}/{smax:e}")));
    }
    let c = svd.solve(&b, 0.0).map_err(|e| WillmoreError::FitIllConditioned(e.to_string()))?;
    let residual = (a * &c - b).amax();
    Ok(EpsilonFit {
        i0: c[0],
        g1: c[1] / emax,
        g2: c[2] / (emax * emax),
        residual,
        samples: samples.to_vec(),
        degree: deg,
    })
}

/// Evaluate I_{±ε} on a surface family and fit.
pub fn epsilon_sweep(
    pert: &MetricPerturbation,
    epsilons: &[f64],
    eval: impl Fn(&AmbientMetric) -> Result<f64, WillmoreError> + Sync,
) -> Result<EpsilonFit, WillmoreError> {
    let signed: Vec<f64> = epsilons.iter().flat_map(|&e| [e, -e]).collect();
    let values: Vec<Result<(f64, f64), WillmoreError>> = signed
        .par_iter()
        .map(|&e| Ok((e, eval(&AmbientMetric::new(pert.clone(), e)?)?)))
        .collect();
    epsilon_fit(&values.into_iter().collect::<Result<Vec<_>, _>>()?)
}

/// L²(dΣ₀) gradient of I with respect to the graph function w of a radial
/// graph `p + ρ r E Θ` with r = … − w: EL · (−ρ g(EΘ, N)) · dΣ/dΣ₀.
pub fn graph_gradient(
    metric: &AmbientMetric,
    grid: &SphereGrid,
    surf: &ImmersedSphere,
    geom: &SurfaceGeometry,
    el: &[f64],
) -> Vec<f64> {
    let gr = surf.graph.as_ref().expect("graph surface");
    let ratio = geom.area_ratio(grid);
    (0..el.len())
        .map(|k| {
            let d = gr.frame * grid.direction(k);
            let gm = metric.g(&surf.x[k]);
            let c = (d.transpose() * gm * geom.nodes[k].normal)[0];
            -el[k] * gr.rho * c * ratio[k]
        })
        .collect()
}

/// ρ³ ∂_ε EL on the standard sphere S_p^ρ at ε = 0 (central difference with step `h`),
/// returned with G₂ − ⟨g, K g⟩ given G₂.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedLimit {
    pub g2: f64,
    pub correction: f64,
    pub limit: f64,
}

pub fn reduced_limit(
    pert: &MetricPerturbation,
    grid: &SphereGrid,
    p: &Vector3<f64>,
    rho: f64,
    g2: f64,
    l_max: usize,
    h: f64,
) -> Result<ReducedLimit, WillmoreError> {
    let w0 = SphericalFunction::zeros(l_max);
    let surf = ImmersedSphere::standard_graph(grid, p, rho, &w0);
    let grad = |e: f64| -> Result<SphericalFunction, WillmoreError> {
        let m = AmbientMetric::new(pert.clone(), e)?;
        let geom = surface_geometry(&m, &surf)?;
        let el = euler_lagrange(&m, grid, &geom, &surf)?;
        Ok(grid.analyze(&graph_gradient(&m, grid, &surf, &geom, &el), l_max))
    };
    let g = grad(h)?.add_scaled(&grad(-h)?, -1.0).scale(0.5 / h).project_perp();
    let kg = g.invert_on_perp();
    let correction: f64 = g.coeffs.iter().zip(&kg.coeffs).map(|(a, b)| a * b).sum();
    Ok(ReducedLimit { g2, correction, limit: g2 - correction })
}

/// Re-graphed form `p̃ + ρ̃(1 − w̃)Θ` of a flat standard graph `p + ρ(1 − u)Θ`
/// with w̃ free of l ≤ 1 components.
#[derive(Debug, Clone)]
pub struct Regraphed {
    pub p: Vector3<f64>,
    pub rho: f64,
    pub w: SphericalFunction,
    pub iterations: usize,
    pub residual: f64,
}

fn angles_of(d: &Vector3<f64>) -> (f64, f64) {
    (d.z.clamp(-1.0, 1.0).acos(), d.y.atan2(d.x))
}

/// Node values of w̃ for centre q and radius s: each grid ray from q is
/// intersected with the input surface.
fn regraph_values(grid: &SphereGrid, p: &Vector3<f64>, rho: f64, u: &SphericalFunction, q: &Vector3<f64>, s: f64) -> Option<Vec<f64>> {
    let x_of = |d: &Vector3<f64>| {
        let (t, f) = angles_of(d);
        p + d * (rho * (1.0 - u.eval_at(t, f)))
    };
    (0..grid.n_nodes())
        .map(|k| {
            let target = grid.direction(k);
            let mut d = target;
            for _ in 0..100 {
                let y = x_of(&d) - q;
                let yh = y.normalize();
                if (yh - target).norm() < 1e-14 {
                    return Some(1.0 - y.norm() / s);
                }
                d = (d + target - yh).normalize();
            }
            None
        })
        .collect()
}

pub fn regraph_orthogonal(
    grid: &SphereGrid,
    p: &Vector3<f64>,
    rho: f64,
    u: &SphericalFunction,
) -> Result<Regraphed, WillmoreError> {
    let l_max = u.l_max;
    let idx = [lm_index(0, 0), lm_index(1, 1), lm_index(1, -1), lm_index(1, 0)];
    // w̃ ≈ 1 − (ρ(1 − u) − δ·Θ)/s: a centre shift δ enters through Θ/s, a radius change through 1/s
    let unit = grid.analyze(&vec![1.0; grid.n_nodes()], 1).coeffs[0];
    let axis: Vec<f64> = (0..3)
        .map(|a| grid.analyze(&grid.tabulate(|t| t[a]), 1).coeffs[idx[a + 1]])
        .collect();
    let mut q = *p;
    let mut s = rho;
    let mut last = f64::INFINITY;
    for it in 0..30 {
        let vals = regraph_values(grid, p, rho, u, &q, s).ok_or(WillmoreError::NewtonDiverged(last))?;
        let w = grid.analyze(&vals, l_max);
        let c: Vec<f64> = idx.iter().map(|&i| w.coeffs[i]).collect();
        last = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if last < 1e-12 {
            return Ok(Regraphed { p: q, rho: s, w: w.project_perp(), iterations: it, residual: last });
        }
        // zero the constant by rescaling and the l = 1 part by shifting the centre
        s *= 1.0 - c[0] / unit;
        for a in 0..3 {
            q[a] -= s * c[a + 1] / axis[a];
        }
    }
    Err(WillmoreError::NewtonDiverged(last))
}
