//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use willmore_lab::metric::{AmbientMetric, MetricPerturbation};

/// Sixth-order central first derivative (7-point stencil).
pub fn d7<T, F>(f: F, x: &Vector3<f64>, axis: usize, h: f64) -> T
where
    F: Fn(&Vector3<f64>) -> T,
    T: std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let at = |k: f64| {
        let mut y = *x;
        y[axis] += k * h;
        f(&y)
    };
    let c = [(-3.0, -1.0), (-2.0, 9.0), (-1.0, -45.0), (1.0, 45.0), (2.0, -9.0), (3.0, 1.0)];
    let mut acc = at(c[0].0) * (c[0].1 / (60.0 * h));
    for (k, w) in &c[1..] {
        acc = acc + at(*k) * (*w / (60.0 * h));
    }
    acc
}

pub fn metric_at(m: &AmbientMetric, x: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() + m.perturbation.eval(x) * m.epsilon
}

/// Γ^n_{ml} from finite differences of the metric values only.
pub fn fd_christoffel(m: &AmbientMetric, x: &Vector3<f64>, h: f64) -> [Matrix3<f64>; 3] {
    let g = metric_at(m, x);
    let gi = g.try_inverse().unwrap();
    let dg: Vec<Matrix3<f64>> = (0..3).map(|a| d7(|y| metric_at(m, y), x, a, h)).collect();
    let mut out = [Matrix3::zeros(); 3];
    for n in 0..3 {
        for i in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += 0.5 * gi[(n, k)] * (dg[i][(l, k)] + dg[l][(k, i)] - dg[k][(i, l)]);
                }
                out[n][(i, l)] = s;
            }
        }
    }
    out
}

/// Brute-force Ricci tensor: nested finite differences on a 7-point stencil.
/// Uses R^r_{bcd} = ∂_cΓ^r_{db} − ∂_dΓ^r_{cb} + Γ^r_{cl}Γ^l_{db} − Γ^r_{dl}Γ^l_{cb}
/// and Ric_{bd} = R^c_{bcd}.
pub fn fd_ricci(m: &AmbientMetric, x: &Vector3<f64>, h: f64) -> Matrix3<f64> {
    let gam = fd_christoffel(m, x, h);
    let dgam: Vec<[Matrix3<f64>; 3]> = (0..3)
        .map(|a| {
            let comp: Vec<Matrix3<f64>> =
                (0..3).map(|n| d7(|y| fd_christoffel(m, y, h)[n], x, a, h)).collect();
            [comp[0], comp[1], comp[2]]
        })
        .collect();
    let mut ric = Matrix3::zeros();
    for b in 0..3 {
        for d in 0..3 {
            let mut s = 0.0;
            for c in 0..3 {
                s += dgam[c][c][(d, b)] - dgam[d][c][(c, b)];
                for l in 0..3 {
                    s += gam[c][(c, l)] * gam[l][(d, b)] - gam[c][(d, l)] * gam[l][(c, b)];
                }
            }
            ric[(b, d)] = s;
        }
    }
    ric
}

/// ‖S‖² from the brute-force Ricci tensor.
pub fn fd_s_norm2(m: &AmbientMetric, x: &Vector3<f64>, h: f64) -> f64 {
    let ric = fd_ricci(m, x, h);
    let g = metric_at(m, x);
    let gi = g.try_inverse().unwrap();
    let r = (gi * ric).trace();
    let s = ric - g * (r / 3.0);
    let a = gi * s;
    (a * a).trace()
}

/// ‖S₁‖² for the linearised curvature, from second derivatives of h:
/// δRic_bd = ½(∂_c∂_b h_cd + ∂_c∂_d h_cb − ∂_b∂_d tr h − Δh_bd),
/// δR = ∂_a∂_b h_ab − Δ tr h.
pub fn linearized_s_norm2(p: &MetricPerturbation, x: &Vector3<f64>) -> f64 {
    let d2 = p.deriv2(x).unwrap();
    let mut ric = Matrix3::zeros();
    for b in 0..3 {
        for d in 0..3 {
            let mut s = 0.0;
            for c in 0..3 {
                s += d2[c][b][(c, d)] + d2[c][d][(c, b)] - d2[c][c][(b, d)];
            }
            s -= d2[b][d].trace();
            ric[(b, d)] = 0.5 * s;
        }
    }
    let mut r = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            r += d2[a][b][(a, b)];
        }
        r -= d2[a][a].trace();
    }
    let s = ric - Matrix3::identity() * (r / 3.0);
    s.iter().map(|v| v * v).sum()
}

/// Least-squares slope, intercept and R² of log(y) against log(x).
pub fn loglog(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// The default test bump: a = diag(1, 0, 0), σ = 1, centred at the origin.
pub fn default_bump() -> MetricPerturbation {
    MetricPerturbation::gaussian_bump(Vector3::zeros(), 1.0, Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)))
        .unwrap()
}

/// Fixed-step classical RK4 for the geodesic equation, Γ from metric finite differences.
pub fn fixed_rk4_geodesic(m: &AmbientMetric, p: &Vector3<f64>, v: &Vector3<f64>, t_end: f64, h: f64) -> Vector3<f64> {
    let acc = |y: &Vector3<f64>, v: &Vector3<f64>| {
        let g = fd_christoffel(m, y, 1e-3);
        -Vector3::new((v.transpose() * g[0] * v)[0], (v.transpose() * g[1] * v)[0], (v.transpose() * g[2] * v)[0])
    };
    let n = (t_end / h).round() as usize;
    let h = t_end / n as f64;
    let (mut y, mut u) = (*p, *v);
    for _ in 0..n {
        let (k1y, k1v) = (u, acc(&y, &u));
        let (k2y, k2v) = (u + k1v * (0.5 * h), acc(&(y + k1y * (0.5 * h)), &(u + k1v * (0.5 * h))));
        let (k3y, k3v) = (u + k2v * (0.5 * h), acc(&(y + k2y * (0.5 * h)), &(u + k2v * (0.5 * h))));
        let (k4y, k4v) = (u + k3v * h, acc(&(y + k3y * h), &(u + k3v * h)));
        y += (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (h / 6.0);
        u += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    }
    y
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}
