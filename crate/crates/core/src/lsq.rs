//! Small dense least-squares kernel: damped Gauss–Newton (Levenberg–Marquardt)
//! with a central-difference Jacobian. Parameter counts here are ≤ 4, so plain
//! `Vec<Vec<f64>>` matrices and Gauss–Jordan elimination are sufficient.

#![allow(clippy::needless_range_loop)]

#[derive(Debug, Clone, Copy)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the relative parameter change.
    pub rel_tol: f64,
    pub initial_lambda: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-9,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jᵀ·J evaluated at `params` (undamped).
    pub jtj: Vec<Vec<f64>>,
    pub residual_count: usize,
}

impl LsqResult {
    /// Parameter covariance `s²·(JᵀJ)⁻¹` where `s²` is the reduced residual
    /// variance, or `(JᵀJ)⁻¹` when `scale_by_residual` is false (residuals are
    /// already normalized by their standard deviations).
    pub fn covariance(&self, scale_by_residual: bool) -> Option<Vec<Vec<f64>>> {
        let mut cov = invert(&self.jtj)?;
        if scale_by_residual {
            let dof = self.residual_count.saturating_sub(self.params.len()).max(1);
            let s2 = self.cost / dof as f64;
            for row in cov.iter_mut() {
                for v in row.iter_mut() {
                    *v *= s2;
                }
            }
        }
        Some(cov)
    }
}

fn eval<F>(f: &F, p: &[f64], out: &mut [f64]) -> f64
where
    F: Fn(&[f64], &mut [f64]),
{
    f(p, out);
    out.iter().map(|r| r * r).sum()
}

fn jacobian<F>(f: &F, p: &[f64], m: usize) -> Vec<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = p.len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut q = p.to_vec();
    for j in 0..n {
        let h = 6e-6 * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        f(&q, &mut plus);
        q[j] = p[j] - h;
        f(&q, &mut minus);
        q[j] = p[j];
        for i in 0..m {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

fn normal_equations(jac: &[Vec<f64>], r: &[f64], n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut jtj = vec![vec![0.0; n]; n];
    let mut jtr = vec![0.0; n];
    for (row, ri) in jac.iter().zip(r) {
        for a in 0..n {
            jtr[a] += row[a] * ri;
            for b in 0..n {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    (jtj, jtr)
}

/// Minimizes `Σ r_i(p)²` where `residuals(p, r)` fills `r` (length `m`).
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], m: usize, opts: LsqOptions) -> LsqResult
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    let mut cost = eval(&residuals, &p, &mut r);
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial_r = vec![0.0; m];

    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&residuals, &p, m);
        let (jtj, jtr) = normal_equations(&jac, &r, n);

        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for (k, row) in damped.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve(&damped, &jtr.iter().map(|v| -v).collect::<Vec<_>>()) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(&step).map(|(a, b)| a + b).collect();
            let trial_cost = eval(&residuals, &trial, &mut trial_r);
            if trial_cost.is_finite() && trial_cost <= cost {
                let small = step
                    .iter()
                    .zip(&p)
                    .all(|(s, v)| s.abs() <= opts.rel_tol * (v.abs() + opts.rel_tol));
                p = trial;
                std::mem::swap(&mut r, &mut trial_r);
                let improvement = cost - trial_cost;
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if small || cost == 0.0 || improvement <= 1e-15 * cost {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left: at a (numerical) minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let jac = jacobian(&residuals, &p, m);
    let (jtj, _) = normal_equations(&jac, &r, n);
    LsqResult {
        params: p,
        cost,
        iterations,
        converged,
        jtj,
        residual_count: m,
    }
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
///
/// Rows and columns are first scaled by `1/√|a_ii|` so that unknowns of very
/// different magnitude do not trip the singularity check.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = a[i][i].abs();
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(i, (row, &bi))| {
            let mut r: Vec<f64> = row.iter().enumerate().map(|(j, v)| v * d[i] * d[j]).collect();
            r.push(bi * d[i]);
            r
        })
        .collect();
    let scale = m
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x.iter().zip(&d).map(|(y, di)| y * di).collect())
}

pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        cols.push(solve(a, &e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}
