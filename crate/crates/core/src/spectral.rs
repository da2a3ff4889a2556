//! Gauss–Legendre product grid on S², real spherical-harmonic transforms and
//! the diagonal operators Δ, Δ(Δ+2), P and K.
//!
//! Grid values are stored ring-major: node `(i, j)` lives at `i * n_phi + j`,
//! with `i` indexing colatitude and `j` longitude.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

/// Product quadrature grid: Gauss–Legendre in cos θ, uniform in φ.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    /// Default harmonic degree for fields such as `w`.
    pub l_max: usize,
    pub theta: Vec<f64>,
    pub cos_t: Vec<f64>,
    pub sin_t: Vec<f64>,
    /// Gauss–Legendre weights in cos θ (sum to 2).
    pub gl_weights: Vec<f64>,
    pub phi: Vec<f64>,
    cos_mphi: Vec<f64>,
    sin_mphi: Vec<f64>,
    /// Highest degree stored in the Legendre tables (`n_theta - 1`).
    pub l_table: usize,
    // [ring][tri(l, m)] -> (P̄, dP̄/dθ, d²P̄/dθ²)
    plm: Vec<Vec<[f64; 3]>>,
}

/// Index of `(l, m)` with `m >= 0` in the triangular Legendre tables.
#[inline]
fn tri(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Index of the real harmonic `Y_lm`, `-l <= m <= l`, in a coefficient vector.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Number of coefficients for degree `<= l_max`.
#[inline]
pub fn n_coeffs(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Gauss–Legendre nodes and weights on [-1, 1], nodes in decreasing order
/// (so θ = acos(x) increases).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // returns (P_n(z), P_n'(z))
    let legendre = |z: f64| {
        let mut p0 = 1.0;
        let mut p1 = 0.0;
        for k in 0..n {
            let p2 = p1;
            p1 = p0;
            p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
        }
        (p0, n as f64 * (z * p0 - p1) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Second-order jet in θ: value and first two θ-derivatives.
#[derive(Clone, Copy, Debug)]
struct Jet(f64, f64, f64);

impl Jet {
    fn mul(self, o: Jet) -> Jet {
        Jet(
            self.0 * o.0,
            self.1 * o.0 + self.0 * o.1,
            self.2 * o.0 + 2.0 * self.1 * o.1 + self.0 * o.2,
        )
    }
    fn scale(self, s: f64) -> Jet {
        Jet(self.0 * s, self.1 * s, self.2 * s)
    }
    fn sub(self, o: Jet) -> Jet {
        Jet(self.0 - o.0, self.1 - o.1, self.2 - o.2)
    }
}

/// Orthonormal associated Legendre functions P̄_lm(cos θ) (no Condon–Shortley
/// phase) with θ-derivatives, for all `0 <= m <= l <= l_max`.
pub fn legendre_jets(theta: f64, l_max: usize) -> Vec<[f64; 3]> {
    let (s, c) = theta.sin_cos();
    let cj = Jet(c, -s, -c);
    let sj = Jet(s, c, -s);
    let mut out = vec![[0.0; 3]; tri(l_max, l_max) + 1];
    let mut pmm = Jet(0.5 / PI.sqrt(), 0.0, 0.0);
    for m in 0..=l_max {
        if m > 0 {
            let f = ((2 * m + 1) as f64 / (2 * m) as f64).sqrt();
            pmm = sj.mul(pmm).scale(f);
        }
        out[tri(m, m)] = [pmm.0, pmm.1, pmm.2];
        if m == l_max {
            break;
        }
        let mut p_lm2 = pmm;
        let mut p_lm1 = cj.mul(pmm).scale(((2 * m + 3) as f64).sqrt());
        out[tri(m + 1, m)] = [p_lm1.0, p_lm1.1, p_lm1.2];
        for l in (m + 2)..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
            let p = cj.mul(p_lm1).sub(p_lm2.scale(b)).scale(a);
            out[tri(l, m)] = [p.0, p.1, p.2];
            p_lm2 = p_lm1;
            p_lm1 = p;
        }
    }
    out
}

/// Values of a scalar field and its coordinate derivatives on the grid.
#[derive(Debug, Clone)]
pub struct FieldJets {
    pub f: Vec<f64>,
    pub f_t: Vec<f64>,
    pub f_p: Vec<f64>,
    pub f_tt: Vec<f64>,
    pub f_tp: Vec<f64>,
    pub f_pp: Vec<f64>,
}

impl FieldJets {
    pub fn zeros(n: usize) -> Self {
        FieldJets {
            f: vec![0.0; n],
            f_t: vec![0.0; n],
            f_p: vec![0.0; n],
            f_tt: vec![0.0; n],
            f_tp: vec![0.0; n],
            f_pp: vec![0.0; n],
        }
    }

    /// `self * s + other * t`, componentwise.
    pub fn combine(&self, s: f64, other: &FieldJets, t: f64) -> FieldJets {
        let lin = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| s * x + t * y).collect();
        FieldJets {
            f: lin(&self.f, &other.f),
            f_t: lin(&self.f_t, &other.f_t),
            f_p: lin(&self.f_p, &other.f_p),
            f_tt: lin(&self.f_tt, &other.f_tt),
            f_tp: lin(&self.f_tp, &other.f_tp),
            f_pp: lin(&self.f_pp, &other.f_pp),
        }
    }
}

/// A scalar field on S² held as real spherical-harmonic coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalFunction {
    pub l_max: usize,
    pub coeffs: Vec<f64>,
}

impl SphericalFunction {
    pub fn zeros(l_max: usize) -> Self {
        SphericalFunction { l_max, coeffs: vec![0.0; n_coeffs(l_max)] }
    }

    /// A single basis function `Y_lm`.
    pub fn basis(l_max: usize, l: usize, m: i64) -> Self {
        let mut f = Self::zeros(l_max);
        f.coeffs[lm_index(l, m)] = 1.0;
        f
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        if l > self.l_max {
            0.0
        } else {
            self.coeffs[lm_index(l, m)]
        }
    }

    /// Change the degree cutoff, truncating or zero-padding.
    pub fn with_l_max(&self, l_max: usize) -> Self {
        let mut out = Self::zeros(l_max);
        let n = n_coeffs(l_max.min(self.l_max));
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    fn map_degree(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for l in 0..=self.l_max {
            let s = f(l as f64);
            for m in -(l as i64)..=(l as i64) {
                out.coeffs[lm_index(l, m)] *= s;
            }
        }
        out
    }

    /// Δ_{S²}: scales degree `l` by `-l(l+1)`.
    pub fn laplace_beltrami(&self) -> Self {
        self.map_degree(|l| -l * (l + 1.0))
    }

    /// Δ(Δ+2): scales degree `l` by `l(l+1)(l(l+1)-2)`.
    pub fn willmore_operator(&self) -> Self {
        self.map_degree(|l| {
            let e = l * (l + 1.0);
            e * (e - 2.0)
        })
    }

    /// Projection onto the complement of the kernel (degrees 0 and 1).
    pub fn project_perp(&self) -> Self {
        self.map_degree(|l| if l < 2.0 { 0.0 } else { 1.0 })
    }

    /// Inverse of Δ(Δ+2) on degrees `>= 2`, zero on the kernel.
    pub fn invert_on_perp(&self) -> Self {
        self.map_degree(|l| {
            if l < 2.0 {
                0.0
            } else {
                let e = l * (l + 1.0);
                1.0 / (e * (e - 2.0))
            }
        })
    }

    pub fn add_scaled(&self, other: &SphericalFunction, s: f64) -> Self {
        let l = self.l_max.max(other.l_max);
        let mut out = self.with_l_max(l);
        for (i, c) in other.coeffs.iter().enumerate() {
            out.coeffs[i] += s * c;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        SphericalFunction { l_max: self.l_max, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn sup_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs()))
    }

    /// L²(S²) norm (Parseval).
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Energy in degrees `<= 1`.
    pub fn low_degree_norm(&self) -> f64 {
        self.coeffs.iter().take(4).map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Evaluate at an arbitrary direction given by polar angles.
    pub fn eval_at(&self, theta: f64, phi: f64) -> f64 {
        let p = legendre_jets(theta, self.l_max);
        let mut s = 0.0;
        for l in 0..=self.l_max {
            s += self.coeffs[lm_index(l, 0)] * p[tri(l, 0)][0];
            for m in 1..=l {
                let (sm, cm) = (m as f64 * phi).sin_cos();
                let pn = std::f64::consts::SQRT_2 * p[tri(l, m)][0];
                s += pn * (self.coeffs[lm_index(l, m as i64)] * cm + self.coeffs[lm_index(l, -(m as i64))] * sm);
            }
        }
        s
    }
}

impl SphereGrid {
    /// Build a grid with `n_theta` rings and default field degree `l_max`.
    ///
    /// Panics if `l_max >= n_theta` (the quadrature would not be exact).
    pub fn new(n_theta: usize, l_max: usize) -> Self {
        assert!(n_theta >= 2, "need at least two rings");
        assert!(l_max < n_theta, "l_max must be below n_theta");
        let n_phi = 2 * n_theta;
        let (x, gl_weights) = gauss_legendre(n_theta);
        let theta: Vec<f64> = x.iter().map(|c| c.acos()).collect();
        let sin_t: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let phi: Vec<f64> = (0..n_phi).map(|j| 2.0 * PI * j as f64 / n_phi as f64).collect();
        let l_table = n_theta - 1;
        let mut cos_mphi = vec![0.0; (l_table + 1) * n_phi];
        let mut sin_mphi = vec![0.0; (l_table + 1) * n_phi];
        for m in 0..=l_table {
            for j in 0..n_phi {
                let (s, c) = (m as f64 * phi[j]).sin_cos();
                cos_mphi[m * n_phi + j] = c;
                sin_mphi[m * n_phi + j] = s;
            }
        }
        let plm = theta.iter().map(|&t| legendre_jets(t, l_table)).collect();
        SphereGrid {
            n_theta,
            n_phi,
            l_max,
            theta,
            cos_t: x,
            sin_t,
            gl_weights,
            phi,
            cos_mphi,
            sin_mphi,
            l_table,
            plm,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// Quadrature weight of a node for ∫ f dΣ₀ over the unit sphere.
    #[inline]
    pub fn weight(&self, node: usize) -> f64 {
        self.gl_weights[node / self.n_phi] * 2.0 * PI / self.n_phi as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| self.weight(k)).collect()
    }

    /// Polar angles of a node.
    pub fn angles(&self, node: usize) -> (f64, f64) {
        (self.theta[node / self.n_phi], self.phi[node % self.n_phi])
    }

    /// Unit radial vector Θ at a node.
    pub fn direction(&self, node: usize) -> Vector3<f64> {
        let i = node / self.n_phi;
        let (sp, cp) = self.phi[node % self.n_phi].sin_cos();
        let (st, ct) = (self.sin_t[i], self.cos_t[i]);
        Vector3::new(st * cp, st * sp, ct)
    }

    /// Θ and its coordinate derivatives: [Θ, Θ_θ, Θ_φ, Θ_θθ, Θ_θφ, Θ_φφ].
    pub fn direction_jets(&self, node: usize) -> [Vector3<f64>; 6] {
        let i = node / self.n_phi;
        let (sp, cp) = self.phi[node % self.n_phi].sin_cos();
        let (st, ct) = (self.sin_t[i], self.cos_t[i]);
        let th = Vector3::new(st * cp, st * sp, ct);
        [
            th,
            Vector3::new(ct * cp, ct * sp, -st),
            Vector3::new(-st * sp, st * cp, 0.0),
            -th,
            Vector3::new(-ct * sp, ct * cp, 0.0),
            Vector3::new(-st * cp, -st * sp, 0.0),
        ]
    }

    /// Quadrature of a grid field against dΣ₀.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_theta {
            let ring: f64 = f[i * self.n_phi..(i + 1) * self.n_phi].iter().sum();
            total += self.gl_weights[i] * ring;
        }
        total * 2.0 * PI / self.n_phi as f64
    }

    /// Quadrature inner product ⟨f, g⟩ on dΣ₀.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let prod: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.integrate(&prod)
    }

    /// Project grid values onto harmonics of degree `<= l_max`.
    pub fn analyze(&self, f: &[f64], l_max: usize) -> SphericalFunction {
        assert!(l_max <= self.l_table, "degree {l_max} exceeds grid table {}", self.l_table);
        assert_eq!(f.len(), self.n_nodes());
        let np = self.n_phi;
        let mut out = SphericalFunction::zeros(l_max);
        let dphi = 2.0 * PI / np as f64;
        let mut cm = vec![0.0; l_max + 1];
        let mut sm = vec![0.0; l_max + 1];
        for i in 0..self.n_theta {
            let ring = &f[i * np..(i + 1) * np];
            for m in 0..=l_max {
                let cs = &self.cos_mphi[m * np..(m + 1) * np];
                let sn = &self.sin_mphi[m * np..(m + 1) * np];
                let mut a = 0.0;
                let mut b = 0.0;
                for j in 0..np {
                    a += ring[j] * cs[j];
                    b += ring[j] * sn[j];
                }
                cm[m] = a;
                sm[m] = b;
            }
            let wt = self.gl_weights[i] * dphi;
            let p = &self.plm[i];
            for l in 0..=l_max {
                out.coeffs[lm_index(l, 0)] += wt * p[tri(l, 0)][0] * cm[0];
                for m in 1..=l {
                    let pn = wt * std::f64::consts::SQRT_2 * p[tri(l, m)][0];
                    out.coeffs[lm_index(l, m as i64)] += pn * cm[m];
                    out.coeffs[lm_index(l, -(m as i64))] += pn * sm[m];
                }
            }
        }
        out
    }

    /// Values on the grid.
    pub fn synthesize(&self, f: &SphericalFunction) -> Vec<f64> {
        self.synth_inner(f, false).f
    }

    /// Values and first/second coordinate derivatives on the grid.
    pub fn synthesize_jets(&self, f: &SphericalFunction) -> FieldJets {
        self.synth_inner(f, true)
    }

    fn synth_inner(&self, f: &SphericalFunction, derivs: bool) -> FieldJets {
        let l_max = f.l_max;
        assert!(l_max <= self.l_table, "degree {l_max} exceeds grid table {}", self.l_table);
        let np = self.n_phi;
        let n = self.n_nodes();
        let mut out = if derivs {
            FieldJets::zeros(n)
        } else {
            FieldJets { f: vec![0.0; n], f_t: vec![], f_p: vec![], f_tt: vec![], f_tp: vec![], f_pp: vec![] }
        };
        // per-ring Fourier amplitudes: [value, d/dθ, d²/dθ²] for cos and sin parts
        let mut ac = vec![[0.0; 3]; l_max + 1];
        let mut bs = vec![[0.0; 3]; l_max + 1];
        for i in 0..self.n_theta {
            let p = &self.plm[i];
            for m in 0..=l_max {
                let mut a = [0.0; 3];
                let mut b = [0.0; 3];
                let norm = if m == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
                for l in m..=l_max {
                    let pl = p[tri(l, m)];
                    let ca = f.coeffs[lm_index(l, m as i64)] * norm;
                    let cb = if m == 0 { 0.0 } else { f.coeffs[lm_index(l, -(m as i64))] * norm };
                    for k in 0..3 {
                        a[k] += ca * pl[k];
                        b[k] += cb * pl[k];
                    }
                }
                ac[m] = a;
                bs[m] = b;
            }
            for j in 0..np {
                let node = i * np + j;
                let mut v = [0.0; 6];
                for m in 0..=l_max {
                    let c = self.cos_mphi[m * np + j];
                    let s = self.sin_mphi[m * np + j];
                    let mf = m as f64;
                    v[0] += ac[m][0] * c + bs[m][0] * s;
                    if derivs {
                        v[1] += ac[m][1] * c + bs[m][1] * s;
                        v[2] += mf * (-ac[m][0] * s + bs[m][0] * c);
                        v[3] += ac[m][2] * c + bs[m][2] * s;
                        v[4] += mf * (-ac[m][1] * s + bs[m][1] * c);
                        v[5] += -mf * mf * (ac[m][0] * c + bs[m][0] * s);
                    }
                }
                out.f[node] = v[0];
                if derivs {
                    out.f_t[node] = v[1];
                    out.f_p[node] = v[2];
                    out.f_tt[node] = v[3];
                    out.f_tp[node] = v[4];
                    out.f_pp[node] = v[5];
                }
            }
        }
        out
    }

    /// Laplace–Beltrami of a field from its coordinate derivatives.
    pub fn grid_laplacian(&self, j: &FieldJets) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|k| {
                let i = k / self.n_phi;
                let (s, c) = (self.sin_t[i], self.cos_t[i]);
                j.f_tt[k] + c / s * j.f_t[k] + j.f_pp[k] / (s * s)
            })
            .collect()
    }

    /// Grid values of a function of the direction Θ.
    pub fn tabulate(&self, f: impl Fn(&Vector3<f64>) -> f64) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| f(&self.direction(k))).collect()
    }
}

/// One check of an integral identity.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
}

impl IdentityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        IdentityCheck { lhs, rhs, abs_err: (lhs - rhs).abs() }
    }
}

/// The four quadrature identities for a symmetric matrix `ric`:
/// ∫(x¹)², ∫Ric(Θ,Θ), ∫Ric(Θ,Θ)² and ∫[Ric(Θ₁,Θ̄₂)² − Ric(Θ₁,Θ₁)Ric(Θ̄₂,Θ̄₂)].
pub fn ricci_integral_identities(grid: &SphereGrid, ric: &Matrix3<f64>) -> [IdentityCheck; 4] {
    let n = grid.n_nodes();
    let mut f = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..n {
        let d = grid.direction_jets(k);
        let th = d[0];
        let t1 = d[1];
        let t2 = d[2] / grid.sin_t[k / grid.n_phi];
        let q = |a: &Vector3<f64>, b: &Vector3<f64>| (a.transpose() * ric * b)[0];
        let rtt = q(&th, &th);
        f[0][k] = th.x * th.x;
        f[1][k] = rtt;
        f[2][k] = rtt * rtt;
        f[3][k] = q(&t1, &t2).powi(2) - q(&t1, &t1) * q(&t2, &t2);
    }
    let tr = ric.trace();
    let nrm2 = ric.iter().map(|x| x * x).sum::<f64>();
    [
        IdentityCheck::new(grid.integrate(&f[0]), 4.0 * PI / 3.0),
        IdentityCheck::new(grid.integrate(&f[1]), 4.0 * PI / 3.0 * tr),
        IdentityCheck::new(grid.integrate(&f[2]), 4.0 * PI / 15.0 * (2.0 * nrm2 + tr * tr)),
        IdentityCheck::new(grid.integrate(&f[3]), 2.0 * PI / 3.0 * (nrm2 - tr * tr)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_weights_sum_to_two_and_integrate_polynomials() {
        let (x, w) = gauss_legendre(12);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((i - 2.0 / 23.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn legendre_low_degrees_match_closed_forms() {
        let t = 0.7f64;
        let p = legendre_jets(t, 3);
        let (s, c) = t.sin_cos();
        let y10 = (3.0 / (4.0 * PI)).sqrt() * c;
        assert!((p[tri(1, 0)][0] - y10).abs() < 1e-15);
        assert!((p[tri(1, 0)][1] + (3.0 / (4.0 * PI)).sqrt() * s).abs() < 1e-15);
        // P̄_22 = sqrt(15/(32π)) sin²θ
        let p22 = (15.0 / (32.0 * PI)).sqrt() * s * s;
        assert!((p[tri(2, 2)][0] - p22).abs() < 1e-15);
        let d2 = (15.0 / (32.0 * PI)).sqrt() * 2.0 * (c * c - s * s);
        assert!((p[tri(2, 2)][2] - d2).abs() < 1e-14);
    }

    #[test]
    fn eval_at_matches_synthesis() {
        let g = SphereGrid::new(10, 6);
        let mut f = SphericalFunction::zeros(6);
        for (i, c) in f.coeffs.iter_mut().enumerate() {
            *c = ((i * 7 % 11) as f64 - 5.0) / 10.0;
        }
        let vals = g.synthesize(&f);
        for k in [0, 13, 77, 150] {
            let (t, p) = g.angles(k);
            assert!((f.eval_at(t, p) - vals[k]).abs() < 1e-13);
        }
    }
}
