//! Small least-squares helpers for slope and coefficient fits.

use nalgebra::{DMatrix, DVector};

/// Solve min ‖Ac − y‖ for the rows of A; fails when A is numerically rank-deficient.
pub fn linear_least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if n < m || m == 0 {
        return Err(format!("{n} samples for {m} unknowns"));
    }
    // column scaling keeps monomials of very different size comparable
    let scale: Vec<f64> = (0..m)
        .map(|j| rows.iter().fold(0.0f64, |s, r| s.max(r[j].abs())).max(f64::MIN_POSITIVE))
        .collect();
    let a = DMatrix::from_fn(n, m, |i, j| rows[i][j] / scale[j]);
    let svd = a.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 1e-12 * smax) {
        return Err(format!("singular values {smin:e}/{smax:e}"));
    }
    let c = svd.solve(&DVector::from_column_slice(y), 0.0)?;
    Ok((0..m).map(|j| c[j] / scale[j]).collect())
}

/// Slope, intercept and R² of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.abs().ln()).collect();
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
