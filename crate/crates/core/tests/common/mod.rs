//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use synergy_core::LongRecord;

/// Fieller's defining inequality `(x̄ − ρȳ)² − z²(v_x + ρ²v_y − 2ρc) ≤ 0`.
pub fn fieller_q(rho: f64, mx: f64, my: f64, vx: f64, vy: f64, c: f64, z: f64) -> f64 {
    (mx - rho * my).powi(2) - z * z * (vx + rho * rho * vy - 2.0 * rho * c)
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if (f(m) <= 0.0) == (fa <= 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Scans `ρ ∈ [lo, hi]` at `step` for the accepted set, then sharpens both
/// edges by bisection. `None` if the accepted set touches the scan range
/// edges or is empty.
#[allow(clippy::too_many_arguments)]
pub fn fieller_grid_oracle(
    mx: f64,
    my: f64,
    vx: f64,
    vy: f64,
    c: f64,
    z: f64,
    lo: f64,
    hi: f64,
    step: f64,
) -> Option<(f64, f64)> {
    let q = |r: f64| fieller_q(r, mx, my, vx, vy, c, z);
    let n = ((hi - lo) / step).round() as usize;
    let mut first = None;
    let mut last = None;
    for i in 0..=n {
        let r = lo + i as f64 * step;
        if q(r) <= 0.0 {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    let (i0, i1) = (first?, last?);
    if i0 == 0 || i1 == n {
        return None;
    }
    let at = |i: usize| lo + i as f64 * step;
    Some((bisect(q, at(i0 - 1), at(i0)), bisect(q, at(i1), at(i1 + 1))))
}

/// Design matrix `[1, C, T, O]` and log outcomes.
pub fn design(data: &[LongRecord]) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len();
    let x = DMatrix::from_fn(n, 4, |i, j| match j {
        0 => 1.0,
        1 => f64::from(data[i].condition),
        2 => f64::from(data[i].task),
        _ => f64::from(data[i].order),
    });
    let y = DVector::from_iterator(n, data.iter().map(|r| r.outcome.ln()));
    (x, y)
}

/// OLS by the normal equations.
pub fn ols_normal_equations(data: &[LongRecord]) -> DVector<f64> {
    let (x, y) = design(data);
    let xtx = x.transpose() * &x;
    xtx.try_inverse().expect("full rank") * x.transpose() * y
}

/// Full Gaussian log-likelihood of `ln y ~ N(Xβ, σ_e² I + σ_u² ZZᵀ)` with a
/// dense covariance matrix.
pub fn dense_loglik(data: &[LongRecord], beta: &[f64], sigma_u2: f64, sigma_e2: f64) -> f64 {
    let (x, y) = design(data);
    let n = data.len();
    let mut v = DMatrix::<f64>::identity(n, n) * sigma_e2;
    for i in 0..n {
        for j in 0..n {
            if data[i].subject_id == data[j].subject_id {
                v[(i, j)] += sigma_u2;
            }
        }
    }
    let Some(chol) = v.cholesky() else {
        return f64::NEG_INFINITY;
    };
    let r = y - x * DVector::from_column_slice(beta);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = r.dot(&chol.solve(&r));
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

/// Generalised least squares for fixed variances, via the dense covariance.
fn gls(data: &[LongRecord], sigma_u2: f64, sigma_e2: f64) -> Vec<f64> {
    let (x, y) = design(data);
    let n = data.len();
    let mut v = DMatrix::<f64>::identity(n, n) * sigma_e2;
    for i in 0..n {
        for j in 0..n {
            if data[i].subject_id == data[j].subject_id {
                v[(i, j)] += sigma_u2;
            }
        }
    }
    let vinv = v.try_inverse().expect("positive definite");
    let xtv = x.transpose() * vinv;
    let b = (&xtv * &x).try_inverse().expect("full rank") * xtv * y;
    b.iter().copied().collect()
}

/// Nelder–Mead minimisation with the standard coefficients.
pub fn nelder_mead(
    f: &impl Fn(&[f64]) -> f64,
    start: &[f64],
    scale: f64,
    max_iter: usize,
    ftol: f64,
) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for k in 0..d {
        let mut p = start.to_vec();
        p[k] += if p[k].abs() > 1e-3 { scale * p[k].abs() } else { scale };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[d] - vals[0]).abs() <= ftol * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|k| pts[..d].iter().map(|p| p[k]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|k| centroid[k] + t * (pts[d][k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
        } else {
            let (xc, fc) = if fr < vals[d] {
                let xc = along(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < vals[d].min(fr) {
                pts[d] = xc;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    pts[i] = (0..d).map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k])).collect();
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (pts[best].clone(), vals[best])
}

#[derive(Debug, Clone)]
pub struct OracleFit {
    pub beta: Vec<f64>,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
    pub loglik: f64,
}

/// Maximum-likelihood fit found by brute force: a dense grid over the two
/// variances, then simplex polishing of all six parameters jointly
/// (variances on the log scale), restarted until it stops improving.
pub fn lmm_brute_force(data: &[LongRecord]) -> OracleFit {
    let mut best = (f64::NEG_INFINITY, vec![]);
    for i in 0..=60 {
        for j in 0..=60 {
            let su2 = 10f64.powf(-6.0 + 6.0 * i as f64 / 60.0);
            let se2 = 10f64.powf(-4.0 + 4.0 * j as f64 / 60.0);
            let b = gls(data, su2, se2);
            let ll = dense_loglik(data, &b, su2, se2);
            if ll > best.0 {
                let mut p = b.clone();
                p.push(su2.ln());
                p.push(se2.ln());
                best = (ll, p);
            }
        }
    }
    let negll = |p: &[f64]| -dense_loglik(data, &p[..4], p[4].exp(), p[5].exp());
    let mut p = best.1;
    let mut fbest = negll(&p);
    for _ in 0..50 {
        let (q, fq) = nelder_mead(&negll, &p, 0.05, 20_000, 1e-15);
        let improved = fbest - fq;
        if fq < fbest {
            p = q;
            fbest = fq;
        }
        if improved < 1e-12 {
            break;
        }
    }
    OracleFit { beta: p[..4].to_vec(), sigma_u2: p[4].exp(), sigma_e2: p[5].exp(), loglik: -fbest }
}
