//! Perturbed metrics g_ε = δ + εh on R³ and their curvature.
//!
//! Tensor conventions: `gamma[n][m][l]` is Γ^n_{ml}; `riemann[a][b][c][d]` is
//! R(∂_a, ∂_b, ∂_c, ∂_d) = g(R(∂_c, ∂_d)∂_b, ∂_a) with
//! R(X, Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_{[X,Y]}Z, so that
//! Ric_{bd} = g^{ac} R_{abcd} and R(X,Y,X,Y) is the sectional curvature of a
//! unit orthonormal pair. `nabla_riemann[e][a][b][c][d]` is (∇_{∂_e}R)_{abcd}.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type T3 = [[[f64; 3]; 3]; 3];
pub type T4 = [[[[f64; 3]; 3]; 3]; 3];
pub type T5 = [T4; 3];

const Z3: T3 = [[[0.0; 3]; 3]; 3];
const Z4: T4 = [Z3; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric is not positive definite at {0:?}")]
    NonPositiveDefinite([f64; 3]),
    #[error("perturbation supplies derivatives up to order {have}, order {need} requested")]
    CatalogDerivativeMissing { have: u8, need: u8 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("|eps| * sup|h| = {0} is not below 1/2")]
    EpsilonTooLarge(f64),
    #[error("Richardson extrapolation diverged: last estimates {0} and {1}")]
    ExtrapolationDiverged(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogId {
    GaussianBump,
    ConformalBump,
    AnisotropicBump,
    Custom,
}

/// One term `amp * exp(-(x - c)ᵀ Q (x - c))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussComponent {
    pub center: Vector3<f64>,
    pub form: Matrix3<f64>,
    pub amp: Matrix3<f64>,
}

/// `constant + Σ_k x_k linear[k]`, used to probe affine invariance.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePart {
    pub constant: Matrix3<f64>,
    pub linear: [Matrix3<f64>; 3],
}

/// h and its partial derivatives at a point; `d2[a][b]` is ∂_a∂_b h, etc.
#[derive(Debug, Clone)]
pub struct HJet {
    pub h: Matrix3<f64>,
    pub d1: [Matrix3<f64>; 3],
    pub d2: [[Matrix3<f64>; 3]; 3],
    pub d3: [[[Matrix3<f64>; 3]; 3]; 3],
}

impl HJet {
    fn zero() -> Self {
        let z = Matrix3::zeros();
        HJet { h: z, d1: [z; 3], d2: [[z; 3]; 3], d3: [[[z; 3]; 3]; 3] }
    }
}

/// A smooth symmetric perturbation with closed-form derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricPerturbation {
    pub catalog_id: CatalogId,
    pub components: Vec<GaussComponent>,
    pub affine: Option<AffinePart>,
    /// Highest derivative order the entry is trusted to supply.
    pub max_order: u8,
}

fn check_symmetric(a: &Matrix3<f64>) -> Result<(), MetricError> {
    if (a - a.transpose()).amax() > 1e-14 * (1.0 + a.amax()) {
        return Err(MetricError::InvalidParameter("amplitude matrix is not symmetric".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::InvalidParameter("amplitude matrix is not finite".into()));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<(), MetricError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MetricError::InvalidParameter(format!("width sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Symmetric matrix from the six upper-triangle entries, row-major.
pub fn sym_from_upper(u: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5])
}

impl MetricPerturbation {
    pub fn zero() -> Self {
        MetricPerturbation { catalog_id: CatalogId::Custom, components: vec![], affine: None, max_order: 3 }
    }

    /// `a exp(-|x - x0|²/σ²)`.
    pub fn gaussian_bump(center: Vector3<f64>, sigma: f64, amp: Matrix3<f64>) -> Result<Self, MetricError> {
        check_sigma(sigma)?;
        check_symmetric(&amp)?;
        Ok(MetricPerturbation {
            catalog_id: CatalogId::GaussianBump,
            components: vec![GaussComponent { center, form: Matrix3::identity() / (sigma * sigma), amp }],
            affine: None,
            max_order: 3,
        })
    }

    /// `c exp(-|x - x0|²/σ²) δ`, so that g_ε is conformally flat.
    pub fn conformal_bump(center: Vector3<f64>, sigma: f64, c: f64) -> Result<Self, MetricError> {
        let mut p = Self::gaussian_bump(center, sigma, Matrix3::identity() * c)?;
        p.catalog_id = CatalogId::ConformalBump;
        Ok(p)
    }

    /// Gaussian with per-axis widths `σ * axis_scale[k]`.
    pub fn anisotropic_bump(
        center: Vector3<f64>,
        sigma: f64,
        axis_scale: Vector3<f64>,
        amp: Matrix3<f64>,
    ) -> Result<Self, MetricError> {
        check_sigma(sigma)?;
        check_symmetric(&amp)?;
        if axis_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(MetricError::InvalidParameter("axis scales must be positive".into()));
        }
        let w = axis_scale * sigma;
        let form = Matrix3::from_diagonal(&Vector3::new(1.0 / (w.x * w.x), 1.0 / (w.y * w.y), 1.0 / (w.z * w.z)));
        Ok(MetricPerturbation {
            catalog_id: CatalogId::AnisotropicBump,
            components: vec![GaussComponent { center, form, amp }],
            affine: None,
            max_order: 3,
        })
    }

    pub fn custom(components: Vec<GaussComponent>, affine: Option<AffinePart>) -> Result<Self, MetricError> {
        for c in &components {
            check_symmetric(&c.amp)?;
            check_symmetric(&c.form)?;
            if c.form.cholesky().is_none() {
                return Err(MetricError::InvalidParameter("component form must be positive definite".into()));
            }
        }
        if let Some(a) = &affine {
            check_symmetric(&a.constant)?;
            for l in &a.linear {
                check_symmetric(l)?;
            }
        }
        Ok(MetricPerturbation { catalog_id: CatalogId::Custom, components, affine, max_order: 3 })
    }

    /// Upper bound on the operator norm of the Gaussian part of h.
    pub fn sup_bound(&self) -> f64 {
        self.components.iter().map(|c| c.amp.symmetric_eigenvalues().amax()).sum()
    }

    /// A point and radius outside of which h is negligible (Gaussian part only).
    pub fn effective_support(&self) -> (Vector3<f64>, f64) {
        if self.components.is_empty() {
            return (Vector3::zeros(), 0.0);
        }
        let c: Vector3<f64> =
            self.components.iter().map(|c| c.center).sum::<Vector3<f64>>() / self.components.len() as f64;
        let r = self
            .components
            .iter()
            .map(|k| {
                let min_eig = k.form.symmetric_eigenvalues().min();
                (k.center - c).norm() + 1.0 / min_eig.sqrt()
            })
            .fold(0.0, f64::max);
        (c, r)
    }

    /// h and its derivatives up to `order` at `x`.
    pub fn jet(&self, x: &Vector3<f64>, order: u8) -> Result<HJet, MetricError> {
        if order > self.max_order {
            return Err(MetricError::CatalogDerivativeMissing { have: self.max_order, need: order });
        }
        let mut j = HJet::zero();
        for c in &self.components {
            let y = x - c.center;
            let qy = c.form * y;
            let phi = (-y.dot(&qy)).exp();
            if phi == 0.0 {
                continue;
            }
            let u = qy * -2.0;
            let b = c.form * -2.0;
            let ap = c.amp * phi;
            j.h += ap;
            if order == 0 {
                continue;
            }
            for a in 0..3 {
                j.d1[a] += ap * u[a];
            }
            if order == 1 {
                continue;
            }
            for a in 0..3 {
                for bb in 0..3 {
                    j.d2[a][bb] += ap * (u[a] * u[bb] + b[(a, bb)]);
                }
            }
            if order == 2 {
                continue;
            }
            for a in 0..3 {
                for bb in 0..3 {
                    for cc in 0..3 {
                        let s = u[a] * u[bb] * u[cc] + b[(a, bb)] * u[cc] + b[(a, cc)] * u[bb] + b[(bb, cc)] * u[a];
                        j.d3[a][bb][cc] += ap * s;
                    }
                }
            }
        }
        if let Some(af) = &self.affine {
            j.h += af.constant;
            for k in 0..3 {
                j.h += af.linear[k] * x[k];
                if order >= 1 {
                    j.d1[k] += af.linear[k];
                }
            }
        }
        Ok(j)
    }

    pub fn eval(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        self.jet(x, 0).expect("order 0 always available").h
    }
    pub fn deriv1(&self, x: &Vector3<f64>) -> Result<[Matrix3<f64>; 3], MetricError> {
        Ok(self.jet(x, 1)?.d1)
    }
    pub fn deriv2(&self, x: &Vector3<f64>) -> Result<[[Matrix3<f64>; 3]; 3], MetricError> {
        Ok(self.jet(x, 2)?.d2)
    }
    pub fn deriv3(&self, x: &Vector3<f64>) -> Result<[[[Matrix3<f64>; 3]; 3]; 3], MetricError> {
        Ok(self.jet(x, 3)?.d3)
    }

    /// The same perturbation with every amplitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            c.amp *= s;
        }
        if let Some(a) = &mut out.affine {
            a.constant *= s;
            for l in &mut a.linear {
                *l *= s;
            }
        }
        out
    }
}

/// g_ε = δ + εh.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientMetric {
    pub perturbation: MetricPerturbation,
    pub epsilon: f64,
}

impl AmbientMetric {
    /// Checks |ε| sup|h| < 1/2 and Cholesky at the centre, on the support
    /// boundary and at eight pseudo-random points.
    pub fn new(perturbation: MetricPerturbation, epsilon: f64) -> Result<Self, MetricError> {
        if !epsilon.is_finite() {
            return Err(MetricError::InvalidParameter("epsilon must be finite".into()));
        }
        let bound = epsilon.abs() * perturbation.sup_bound();
        if bound >= 0.5 {
            return Err(MetricError::EpsilonTooLarge(bound));
        }
        let m = AmbientMetric { perturbation, epsilon };
        let (c, r) = m.perturbation.effective_support();
        let mut probes = vec![c, c + Vector3::new(r, 0.0, 0.0), c + Vector3::new(0.0, 0.0, -r)];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..8 {
            let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            probes.push(c + d * (r.max(1.0) * 1.5));
        }
        for p in &probes {
            if m.g(p).cholesky().is_none() {
                return Err(MetricError::NonPositiveDefinite([p.x, p.y, p.z]));
            }
        }
        Ok(m)
    }

    pub fn flat() -> Self {
        AmbientMetric { perturbation: MetricPerturbation::zero(), epsilon: 0.0 }
    }

    pub fn is_flat(&self) -> bool {
        self.epsilon == 0.0 || (self.perturbation.components.is_empty() && self.perturbation.affine.is_none())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, MetricError> {
        AmbientMetric::new(self.perturbation.clone(), epsilon)
    }

    pub fn g(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::identity() + self.perturbation.eval(x) * self.epsilon
    }

    /// Γ^n_{ml} at `x` (first derivatives of h only).
    pub fn christoffel(&self, x: &Vector3<f64>) -> T3 {
        if self.is_flat() {
            return Z3;
        }
        let j = self.perturbation.jet(x, 1).expect("order 1 always available");
        let e = self.epsilon;
        let g = Matrix3::identity() + j.h * e;
        let ginv = g.try_inverse().expect("metric invertible");
        let mut first = Z3;
        for s in 0..3 {
            for m in 0..3 {
                for l in 0..3 {
                    first[s][m][l] = 0.5 * e * (j.d1[m][(l, s)] + j.d1[l][(s, m)] - j.d1[s][(m, l)]);
                }
            }
        }
        raise(&ginv, &first)
    }

    /// Γ and ∂_e Γ (indexed `[e][n][m][l]`), used by the variational equations.
    pub fn christoffel_with_derivative(&self, x: &Vector3<f64>) -> (T3, T4) {
        if self.is_flat() {
            return (Z3, Z4);
        }
        let jet = MetricJet::new(self, x, 2).expect("order 2 always available");
        let c = ChristoffelJet::new(&jet, false);
        (c.gamma, c.dgamma)
    }
}

/// g and its derivatives at a point.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub g: Matrix3<f64>,
    pub ginv: Matrix3<f64>,
    pub dg: [Matrix3<f64>; 3],
    pub d2g: [[Matrix3<f64>; 3]; 3],
    pub d3g: [[[Matrix3<f64>; 3]; 3]; 3],
}

impl MetricJet {
    pub fn new(m: &AmbientMetric, x: &Vector3<f64>, order: u8) -> Result<Self, MetricError> {
        let h = m.perturbation.jet(x, order)?;
        let e = m.epsilon;
        let g = Matrix3::identity() + h.h * e;
        let chol = g.cholesky().ok_or(MetricError::NonPositiveDefinite([x.x, x.y, x.z]))?;
        let mut out = MetricJet {
            g,
            ginv: chol.inverse(),
            dg: h.d1,
            d2g: h.d2,
            d3g: h.d3,
        };
        for a in 0..3 {
            out.dg[a] *= e;
            for b in 0..3 {
                out.d2g[a][b] *= e;
                for c in 0..3 {
                    out.d3g[a][b][c] *= e;
                }
            }
        }
        Ok(out)
    }
}

fn raise(ginv: &Matrix3<f64>, first: &T3) -> T3 {
    let mut out = Z3;
    for n in 0..3 {
        for m in 0..3 {
            for l in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += ginv[(n, k)] * first[k][m][l];
                }
                out[n][m][l] = s;
            }
        }
    }
    out
}

struct ChristoffelJet {
    gamma: T3,
    dgamma: T4,
    d2gamma: Option<T5>,
}

impl ChristoffelJet {
    fn new(j: &MetricJet, second: bool) -> Self {
        let ginv = &j.ginv;
        let dginv: Vec<Matrix3<f64>> = (0..3).map(|e| -ginv * j.dg[e] * ginv).collect();
        // Christoffel symbols of the first kind and their derivatives
        let mut first = Z3;
        let mut dfirst = Z4;
        for s in 0..3 {
            for m in 0..3 {
                for l in 0..3 {
                    first[s][m][l] = 0.5 * (j.dg[m][(l, s)] + j.dg[l][(s, m)] - j.dg[s][(m, l)]);
                    for e in 0..3 {
                        dfirst[e][s][m][l] = 0.5 * (j.d2g[e][m][(l, s)] + j.d2g[e][l][(s, m)] - j.d2g[e][s][(m, l)]);
                    }
                }
            }
        }
        let gamma = raise(ginv, &first);
        let mut dgamma = Z4;
        for e in 0..3 {
            let a = raise(&dginv[e], &first);
            let b = raise(ginv, &dfirst[e]);
            for n in 0..3 {
                for m in 0..3 {
                    for l in 0..3 {
                        dgamma[e][n][m][l] = a[n][m][l] + b[n][m][l];
                    }
                }
            }
        }
        let d2gamma = if second {
            let mut out = [Z4; 3];
            for f in 0..3 {
                for e in 0..3 {
                    let d2ginv = ginv * j.dg[f] * ginv * j.dg[e] * ginv + ginv * j.dg[e] * ginv * j.dg[f] * ginv
                        - ginv * j.d2g[f][e] * ginv;
                    let mut d2first = Z3;
                    for s in 0..3 {
                        for m in 0..3 {
                            for l in 0..3 {
                                d2first[s][m][l] = 0.5
                                    * (j.d3g[f][e][m][(l, s)] + j.d3g[f][e][l][(s, m)] - j.d3g[f][e][s][(m, l)]);
                            }
                        }
                    }
                    let t1 = raise(&d2ginv, &first);
                    let t2 = raise(&dginv[e], &dfirst[f]);
                    let t3 = raise(&dginv[f], &dfirst[e]);
                    let t4 = raise(ginv, &d2first);
                    for n in 0..3 {
                        for m in 0..3 {
                            for l in 0..3 {
                                out[f][e][n][m][l] = t1[n][m][l] + t2[n][m][l] + t3[n][m][l] + t4[n][m][l];
                            }
                        }
                    }
                }
            }
            Some(out)
        } else {
            None
        };
        ChristoffelJet { gamma, dgamma, d2gamma }
    }
}

/// Curvature data at a point, coordinate frame.
#[derive(Debug, Clone)]
pub struct CurvaturePack {
    pub point: Vector3<f64>,
    pub g: Matrix3<f64>,
    pub ginv: Matrix3<f64>,
    pub gamma: T3,
    pub riemann: T4,
    pub ricci: Matrix3<f64>,
    pub scalar: f64,
    pub traceless: Matrix3<f64>,
    pub nabla_riemann: Option<T5>,
}

impl CurvaturePack {
    /// ‖S‖² in an orthonormal frame: g^{ac} g^{bd} S_ab S_cd.
    pub fn s_norm2(&self) -> f64 {
        let m = self.ginv * self.traceless;
        (m * m).trace()
    }

    /// ‖Ric‖² in an orthonormal frame.
    pub fn ric_norm2(&self) -> f64 {
        let m = self.ginv * self.ricci;
        (m * m).trace()
    }

    /// g^{ab} S_ab.
    pub fn traceless_trace(&self) -> f64 {
        (self.ginv * self.traceless).trace()
    }

    /// R(X, Y, Z, W) for coordinate vectors.
    pub fn riemann_apply(&self, x: &Vector3<f64>, y: &Vector3<f64>, z: &Vector3<f64>, w: &Vector3<f64>) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            if x[a] == 0.0 {
                continue;
            }
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        s += self.riemann[a][b][c][d] * x[a] * y[b] * z[c] * w[d];
                    }
                }
            }
        }
        s
    }

    /// Largest violation of the algebraic symmetries and first Bianchi identity.
    pub fn symmetry_defect(&self) -> f64 {
        let r = &self.riemann;
        let mut worst = 0.0f64;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let v = r[a][b][c][d];
                        worst = worst
                            .max((v + r[b][a][c][d]).abs())
                            .max((v + r[a][b][d][c]).abs())
                            .max((v - r[c][d][a][b]).abs())
                            .max((v + r[a][c][d][b] + r[a][d][b][c]).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs_riemann(&self) -> f64 {
        self.riemann.iter().flatten().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Γ, Riemann, Ricci, R, S and optionally ∇Riemann at `p`.
pub fn curvature_pack(metric: &AmbientMetric, p: &Vector3<f64>, with_nabla: bool) -> Result<CurvaturePack, MetricError> {
    let order = if with_nabla { 3 } else { 2 };
    let j = MetricJet::new(metric, p, order)?;
    let cj = ChristoffelJet::new(&j, with_nabla);
    let (gamma, dgamma) = (&cj.gamma, &cj.dgamma);

    // R^r_{bcd} = ∂_c Γ^r_{db} − ∂_d Γ^r_{cb} + Γ^r_{cl}Γ^l_{db} − Γ^r_{dl}Γ^l_{cb}
    let mut rup = Z4;
    for r in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = dgamma[c][r][d][b] - dgamma[d][r][c][b];
                    for l in 0..3 {
                        s += gamma[r][c][l] * gamma[l][d][b] - gamma[r][d][l] * gamma[l][c][b];
                    }
                    rup[r][b][c][d] = s;
                }
            }
        }
    }
    let mut riemann = Z4;
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        s += j.g[(a, r)] * rup[r][b][c][d];
                    }
                    riemann[a][b][c][d] = s;
                }
            }
        }
    }
    let mut ricci = Matrix3::zeros();
    for b in 0..3 {
        for d in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                for c in 0..3 {
                    s += j.ginv[(a, c)] * riemann[a][b][c][d];
                }
            }
            ricci[(b, d)] = s;
        }
    }
    let ricci = (ricci + ricci.transpose()) * 0.5;
    let scalar = (j.ginv * ricci).trace();
    let traceless = ricci - j.g * (scalar / 3.0);

    let nabla_riemann = if with_nabla {
        let d2gamma = cj.d2gamma.as_ref().expect("second derivatives requested");
        let mut nab = [Z4; 3];
        for e in 0..3 {
            let mut drup = Z4;
            for r in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            let mut s = d2gamma[e][c][r][d][b] - d2gamma[e][d][r][c][b];
                            for l in 0..3 {
                                s += dgamma[e][r][c][l] * gamma[l][d][b] + gamma[r][c][l] * dgamma[e][l][d][b]
                                    - dgamma[e][r][d][l] * gamma[l][c][b]
                                    - gamma[r][d][l] * dgamma[e][l][c][b];
                            }
                            drup[r][b][c][d] = s;
                        }
                    }
                }
            }
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        for d in 0..3 {
                            let mut s = 0.0;
                            for r in 0..3 {
                                s += j.dg[e][(a, r)] * rup[r][b][c][d] + j.g[(a, r)] * drup[r][b][c][d];
                            }
                            for l in 0..3 {
                                s -= gamma[l][e][a] * riemann[l][b][c][d]
                                    + gamma[l][e][b] * riemann[a][l][c][d]
                                    + gamma[l][e][c] * riemann[a][b][l][d]
                                    + gamma[l][e][d] * riemann[a][b][c][l];
                            }
                            nab[e][a][b][c][d] = s;
                        }
                    }
                }
            }
        }
        Some(nab)
    } else {
        None
    };

    Ok(CurvaturePack {
        point: *p,
        g: j.g,
        ginv: j.ginv,
        gamma: cj.gamma,
        riemann,
        ricci,
        scalar,
        traceless,
        nabla_riemann,
    })
}

/// Steps used by [`s_tilde`].
pub const S_TILDE_EPSILONS: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];

/// lim_{ε→0} ‖S_p(ε)‖²/ε² by Richardson extrapolation over [`S_TILDE_EPSILONS`].
///
/// Each level uses the even part (‖S(ε)‖² + ‖S(−ε)‖²)/(2ε²), whose error
/// expansion has only even powers, so the ratio-2 tableau gains two orders
/// per level.
pub fn s_tilde(perturbation: &MetricPerturbation, p: &Vector3<f64>) -> Result<f64, MetricError> {
    if perturbation.max_order < 2 {
        return Err(MetricError::CatalogDerivativeMissing { have: perturbation.max_order, need: 2 });
    }
    let mut table: Vec<Vec<f64>> = Vec::new();
    for (k, &e) in S_TILDE_EPSILONS.iter().enumerate() {
        let mut even = 0.0;
        for sign in [1.0, -1.0] {
            let m = AmbientMetric { perturbation: perturbation.clone(), epsilon: sign * e };
            even += curvature_pack(&m, p, false)?.s_norm2();
        }
        let mut row = vec![even / (2.0 * e * e)];
        for lvl in 1..=k {
            let f = 4f64.powi(lvl as i32);
            let v = (f * row[lvl - 1] - table[k - 1][lvl - 1]) / (f - 1.0);
            row.push(v);
        }
        table.push(row);
    }
    let last = &table[3];
    let best = last[3];
    let prev = last[2];
    let scale = best.abs().max(prev.abs());
    if (best - prev).abs() > 1e-2 * scale && (best - prev).abs() > 1e-12 {
        return Err(MetricError::ExtrapolationDiverged(prev, best));
    }
    if best < 0.0 {
        if best >= -1e-10 {
            return Ok(0.0);
        }
        return Err(MetricError::ExtrapolationDiverged(prev, best));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump() -> MetricPerturbation {
        MetricPerturbation::gaussian_bump(Vector3::zeros(), 1.0, Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)))
            .unwrap()
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let m = AmbientMetric::new(bump(), 0.0).unwrap();
        let pk = curvature_pack(&m, &Vector3::new(0.1, 0.2, 0.3), true).unwrap();
        assert_eq!(pk.max_abs_riemann(), 0.0);
        assert_eq!(pk.traceless.amax(), 0.0);
        assert!(pk.gamma.iter().flatten().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(MetricPerturbation::gaussian_bump(Vector3::zeros(), -1.0, Matrix3::identity()).is_err());
        let asym = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(MetricPerturbation::gaussian_bump(Vector3::zeros(), 1.0, asym).is_err());
        assert!(matches!(AmbientMetric::new(bump(), 0.6), Err(MetricError::EpsilonTooLarge(_))));
    }

    #[test]
    fn missing_order_is_reported() {
        let mut p = bump();
        p.max_order = 2;
        let m = AmbientMetric::new(p, 0.01).unwrap();
        let e = curvature_pack(&m, &Vector3::zeros(), true).unwrap_err();
        assert_eq!(e, MetricError::CatalogDerivativeMissing { have: 2, need: 3 });
    }

    #[test]
    fn christoffel_fast_path_agrees() {
        let m = AmbientMetric::new(bump(), 0.2).unwrap();
        let x = Vector3::new(0.3, -0.4, 0.2);
        let a = m.christoffel(&x);
        let b = curvature_pack(&m, &x, false).unwrap().gamma;
        let (c, _) = m.christoffel_with_derivative(&x);
        for n in 0..3 {
            for i in 0..3 {
                for l in 0..3 {
                    assert!((a[n][i][l] - b[n][i][l]).abs() < 1e-15);
                    assert!((c[n][i][l] - b[n][i][l]).abs() < 1e-15);
                }
            }
        }
    }
}
