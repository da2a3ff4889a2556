//! Immersed spheres on a [`SphereGrid`] and their extrinsic geometry in g_ε.

use crate::metric::AmbientMetric;
use crate::spectral::{FieldJets, SphereGrid, SphericalFunction};
use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("degenerate immersion at node {node} (det g = {det:e})")]
    DegenerateImmersion { node: usize, det: f64 },
    #[error("inward orientation test failed at node {node}")]
    OrientationAmbiguous { node: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    StandardGraph,
    GeodesicGraph,
    Blended,
    MoebiusImage,
}

impl SurfaceKind {
    pub fn is_graph(self) -> bool {
        self != SurfaceKind::MoebiusImage
    }
}

/// Centre, radius, frame and graph function of a radial-graph surface.
#[derive(Debug, Clone)]
pub struct GraphRef {
    pub p: Vector3<f64>,
    pub rho: f64,
    pub frame: Matrix3<f64>,
    pub w: Option<SphericalFunction>,
}

/// Node data of an immersion S² → R³: X, ∂_iX, ∂_i∂_jX (ij = θθ, θφ, φφ).
#[derive(Debug, Clone)]
pub struct ImmersedSphere {
    pub kind: SurfaceKind,
    pub x: Vec<Vector3<f64>>,
    pub xi: Vec<[Vector3<f64>; 2]>,
    pub xij: Vec<[Vector3<f64>; 3]>,
    /// Quadrature weights for ∫ · dθ dφ.
    pub weights: Vec<f64>,
    pub graph: Option<GraphRef>,
}

fn param_weights(grid: &SphereGrid) -> Vec<f64> {
    (0..grid.n_nodes()).map(|k| grid.weight(k) / grid.sin_t[k / grid.n_phi]).collect()
}

impl ImmersedSphere {
    /// `p + ρ r(Θ) EΘ` for a radial function given by its grid jets.
    pub fn radial_graph(
        grid: &SphereGrid,
        p: &Vector3<f64>,
        rho: f64,
        frame: &Matrix3<f64>,
        r: &FieldJets,
        kind: SurfaceKind,
        w: Option<SphericalFunction>,
    ) -> Self {
        let n = grid.n_nodes();
        let mut x = Vec::with_capacity(n);
        let mut xi = Vec::with_capacity(n);
        let mut xij = Vec::with_capacity(n);
        for k in 0..n {
            let [d, dt, dp, dtt, dtp, dpp] = grid.direction_jets(k).map(|v| frame * v);
            let (f, ft, fp) = (r.f[k], r.f_t[k], r.f_p[k]);
            x.push(p + d * (rho * f));
            xi.push([(d * ft + dt * f) * rho, (d * fp + dp * f) * rho]);
            xij.push([
                (d * r.f_tt[k] + dt * (2.0 * ft) + dtt * f) * rho,
                (d * r.f_tp[k] + dt * fp + dp * ft + dtp * f) * rho,
                (d * r.f_pp[k] + dp * (2.0 * fp) + dpp * f) * rho,
            ]);
        }
        ImmersedSphere {
            kind,
            x,
            xi,
            xij,
            weights: param_weights(grid),
            graph: Some(GraphRef { p: *p, rho, frame: *frame, w }),
        }
    }

    /// Standard graph `p + ρ(1 − w)Θ`.
    pub fn standard_graph(grid: &SphereGrid, p: &Vector3<f64>, rho: f64, w: &SphericalFunction) -> Self {
        let mut r = grid.synthesize_jets(&w.scale(-1.0));
        r.f.iter_mut().for_each(|v| *v += 1.0);
        Self::radial_graph(grid, p, rho, &Matrix3::identity(), &r, SurfaceKind::StandardGraph, Some(w.clone()))
    }

    /// Ellipsoid `c + diag(a)Θ` (not a graph in the solver's sense, but star-shaped about c).
    pub fn ellipsoid(grid: &SphereGrid, c: &Vector3<f64>, axes: &Vector3<f64>) -> Self {
        let a = Matrix3::from_diagonal(axes);
        let mut r = FieldJets::zeros(grid.n_nodes());
        r.f.iter_mut().for_each(|v| *v = 1.0);
        Self::radial_graph(grid, c, 1.0, &a, &r, SurfaceKind::StandardGraph, None)
    }

    pub fn n_nodes(&self) -> usize {
        self.x.len()
    }

    /// Enclosed euclidean volume with sign set by the parametrization.
    pub fn signed_volume(&self) -> f64 {
        let c = self.x.iter().sum::<Vector3<f64>>() / self.x.len() as f64;
        (0..self.n_nodes())
            .map(|k| self.weights[k] * (self.x[k] - c).dot(&self.xi[k][0].cross(&self.xi[k][1])))
            .sum::<f64>()
            / 3.0
    }
}

/// Per-node extrinsic data.
#[derive(Debug, Clone, Copy)]
pub struct NodeGeometry {
    /// g̊ as (θθ, θφ, φφ).
    pub g: [f64; 3],
    pub h: [f64; 3],
    pub mean: f64,
    pub det: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Orthonormal tangent frame from the Cholesky factor of g̊.
    pub frame: [Vector3<f64>; 2],
    /// Shape operator in `frame` as (11, 12, 22).
    pub a: [f64; 3],
    pub umbilic: bool,
    /// √det g̊.
    pub area_density: f64,
    /// Tangential Christoffel symbols Γ̊^k_ij, indexed [ij][k].
    pub conn: [[f64; 2]; 3],
}

impl NodeGeometry {
    pub fn ginv(&self) -> [f64; 3] {
        let d = self.g[0] * self.g[2] - self.g[1] * self.g[1];
        [self.g[2] / d, -self.g[1] / d, self.g[0] / d]
    }

    /// (H²/4 − D) evaluated as ((A₁₁ − A₂₂)² + 4A₁₂²)/4.
    pub fn integrand(&self) -> f64 {
        let [a11, a12, a22] = self.a;
        0.25 * (a11 - a22).powi(2) + a12 * a12
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceGeometry {
    pub nodes: Vec<NodeGeometry>,
    /// dΣ quadrature weights (weights · √det g̊).
    pub d_sigma: Vec<f64>,
    pub kind: SurfaceKind,
}

impl SurfaceGeometry {
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.d_sigma).map(|(a, b)| a * b).sum()
    }

    pub fn area(&self) -> f64 {
        self.d_sigma.iter().sum()
    }

    pub fn mean_curvature(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.mean).collect()
    }

    /// Node values of H²/4 − D.
    pub fn willmore_integrand(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.integrand()).collect()
    }

    /// Node values of dΣ relative to the round dΣ₀ = sinθ dθ dφ.
    pub fn area_ratio(&self, grid: &SphereGrid) -> Vec<f64> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, n)| n.area_density / grid.sin_t[k / grid.n_phi])
            .collect()
    }
}

/// Node-wise H²/4 − D as a harmonic expansion up to `l_max`.
pub fn willmore_integrand(grid: &SphereGrid, geom: &SurfaceGeometry, l_max: usize) -> SphericalFunction {
    grid.analyze(&geom.willmore_integrand(), l_max)
}

fn sym2(m: &[f64; 3]) -> Matrix2<f64> {
    Matrix2::new(m[0], m[1], m[1], m[2])
}

fn node_geometry(
    metric: &AmbientMetric,
    x: &Vector3<f64>,
    xi: &[Vector3<f64>; 2],
    xij: &[Vector3<f64>; 3],
    sign: f64,
) -> Option<NodeGeometry> {
    let gm = metric.g(x);
    let gamma = metric.christoffel(x);
    let ip = |a: &Vector3<f64>, b: &Vector3<f64>| (a.transpose() * gm * b)[0];
    let g = [ip(&xi[0], &xi[0]), ip(&xi[0], &xi[1]), ip(&xi[1], &xi[1])];
    let detg = g[0] * g[2] - g[1] * g[1];
    let scale = g[0].max(g[2]);
    if !(detg > 1e-14 * scale * scale) {
        return None;
    }
    let raw = gm.try_inverse()? * xi[0].cross(&xi[1]);
    let normal = raw * (sign / ip(&raw, &raw).sqrt());
    let accel = |k: usize, i: usize, j: usize| {
        let mut v = xij[k];
        for n in 0..3 {
            for m in 0..3 {
                for l in 0..3 {
                    v[n] += gamma[n][m][l] * xi[i][m] * xi[j][l];
                }
            }
        }
        v
    };
    let acc = [accel(0, 0, 0), accel(1, 0, 1), accel(2, 1, 1)];
    let h = [ip(&acc[0], &normal), ip(&acc[1], &normal), ip(&acc[2], &normal)];
    let ginv = [g[2] / detg, -g[1] / detg, g[0] / detg];
    let mut conn = [[0.0; 2]; 3];
    for (ij, a) in acc.iter().enumerate() {
        let c0 = ip(a, &xi[0]);
        let c1 = ip(a, &xi[1]);
        conn[ij] = [ginv[0] * c0 + ginv[1] * c1, ginv[1] * c0 + ginv[2] * c1];
    }
    // Cholesky g̊ = LLᵀ; frame f = [X_θ X_φ] L⁻ᵀ, shape operator L⁻¹ h̊ L⁻ᵀ
    let l11 = g[0].sqrt();
    let l21 = g[1] / l11;
    let l22 = (g[2] - l21 * l21).sqrt();
    let linv = Matrix2::new(1.0 / l11, 0.0, -l21 / (l11 * l22), 1.0 / l22);
    let am = linv * sym2(&h) * linv.transpose();
    let a = [am[(0, 0)], 0.5 * (am[(0, 1)] + am[(1, 0)]), am[(1, 1)]];
    let f0 = xi[0] / l11;
    let f1 = xi[0] * (-l21 / (l11 * l22)) + xi[1] / l22;
    let mean = a[0] + a[2];
    let half_gap = (0.25 * (a[0] - a[2]).powi(2) + a[1] * a[1]).sqrt();
    let lambda1 = 0.5 * mean + half_gap;
    let lambda2 = 0.5 * mean - half_gap;
    let umbilic = 2.0 * half_gap < 1e-8 * mean.abs();
    let (e1, e2) = if umbilic {
        (f0, f1)
    } else {
        let t = 0.5 * (2.0 * a[1]).atan2(a[0] - a[2]);
        let (s, c) = t.sin_cos();
        (f0 * c + f1 * s, f1 * c - f0 * s)
    };
    Some(NodeGeometry {
        g,
        h,
        mean,
        det: a[0] * a[2] - a[1] * a[1],
        lambda1,
        lambda2,
        e1,
        e2,
        normal,
        frame: [f0, f1],
        a,
        umbilic,
        area_density: detg.sqrt(),
        conn,
    })
}

/// Fundamental forms, inward normal, principal data and dΣ at every node.
pub fn surface_geometry(metric: &AmbientMetric, surf: &ImmersedSphere) -> Result<SurfaceGeometry, SurfaceError> {
    // X_θ × X_φ points outward when the signed volume is positive
    let sign = if surf.signed_volume() >= 0.0 { -1.0 } else { 1.0 };
    let nodes: Vec<Result<NodeGeometry, SurfaceError>> = (0..surf.n_nodes())
        .into_par_iter()
        .map(|k| {
            let ng = node_geometry(metric, &surf.x[k], &surf.xi[k], &surf.xij[k], sign).ok_or_else(|| {
                let d = surf.xi[k][0].cross(&surf.xi[k][1]).norm_squared();
                SurfaceError::DegenerateImmersion { node: k, det: d }
            })?;
            if let Some(gr) = surf.graph.as_ref().filter(|_| surf.kind.is_graph()) {
                let to_centre = gr.p - surf.x[k];
                let gm = metric.g(&surf.x[k]);
                let c = (ng.normal.transpose() * gm * to_centre)[0];
                if !(c > 0.0) {
                    return Err(SurfaceError::OrientationAmbiguous { node: k });
                }
            }
            Ok(ng)
        })
        .collect();
    let nodes = nodes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let d_sigma = nodes.iter().zip(&surf.weights).map(|(n, w)| n.area_density * w).collect();
    Ok(SurfaceGeometry { nodes, d_sigma, kind: surf.kind })
}
