//! Deterministic least-squares machinery: a linear sinusoid fit and a small
//! Levenberg–Marquardt engine with numeric Jacobians.
//!
//! Initial guesses are always derived from data moments by the callers, never
//! randomized, so repeated fits are bitwise identical.

/// Result of fitting `y ≈ amp·sin(x + phase0) + offset`.
#[derive(Debug, Clone, Copy)]
pub struct SinusoidFit {
    pub amp: f64,
    pub phase0: f64,
    pub offset: f64,
    pub residual_rms: f64,
}

/// Linear least squares on the basis {sin x, cos x, 1}; exact normal
/// equations, no iteration. Needs at least 3 samples.
pub fn fit_sinusoid(x: &[f64], y: &[f64]) -> Option<SinusoidFit> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let row = [xi.sin(), xi.cos(), 1.0];
        for i in 0..3 {
            aty[i] += row[i] * yi;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let mut a = vec![ata[0].to_vec(), ata[1].to_vec(), ata[2].to_vec()];
    let mut b = aty.to_vec();
    solve_in_place(&mut a, &mut b)?;
    let (s, c, off) = (b[0], b[1], b[2]);
    let amp = s.hypot(c);
    // a·sin x + b·cos x = amp·sin(x + atan2(b, a))
    let phase0 = c.atan2(s);
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let m = s * xi.sin() + c * xi.cos() + off;
            (yi - m) * (yi - m)
        })
        .sum();
    Some(SinusoidFit {
        amp,
        phase0,
        offset: off,
        residual_rms: (rss / x.len() as f64).sqrt(),
    })
}

/// Gaussian elimination with partial pivoting; `a` is overwritten.
/// Returns None on (numerically) singular systems.
#[allow(clippy::needless_range_loop)]
fn solve_in_place(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<()> {
    let n = b.len();
    for col in 0..n {
        let piv =
            (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * b[k];
        }
        b[col] = s / a[col][col];
    }
    Some(())
}

/// Levenberg–Marquardt outcome.
#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// 1σ parameter uncertainties from the residual covariance at the optimum.
    pub sigmas: Vec<f64>,
    /// √(Σ residual²).
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimize Σᵢ (y(tᵢ) - model(tᵢ, p))² over p.
///
/// Central-difference Jacobian, multiplicative damping schedule fixed at
/// (×0.3 on accepted steps, ×7 on rejected), at most `max_iter` outer
/// iterations. Deterministic for identical inputs.
pub fn levenberg_marquardt<F>(
    model: F,
    t: &[f64],
    y: &[f64],
    p0: &[f64],
    max_iter: usize,
) -> LmResult
where
    F: Fn(f64, &[f64]) -> f64,
{
    assert_eq!(t.len(), y.len());
    let n = p0.len();
    let m = t.len();
    let mut p = p0.to_vec();
    let residuals = |p: &[f64]| -> Vec<f64> {
        t.iter()
            .zip(y)
            .map(|(&ti, &yi)| yi - model(ti, p))
            .collect()
    };
    let cost = |r: &[f64]| -> f64 { r.iter().map(|ri| ri * ri).sum() };

    let mut r = residuals(&p);
    let mut chi2 = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..max_iter {
        iterations = iter + 1;
        // J[i][j] = ∂model(t_i)/∂p_j  (residual Jacobian is -J).
        let mut jac = vec![vec![0.0; n]; m];
        for j in 0..n {
            let h = 1e-7 * p[j].abs().max(1e-7);
            let mut pp = p.clone();
            pp[j] += h;
            let mut pm = p.clone();
            pm[j] -= h;
            for i in 0..m {
                jac[i][j] = (model(t[i], &pp) - model(t[i], &pm)) / (2.0 * h);
            }
        }
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                jtr[j] += jac[i][j] * r[i];
                for k in 0..n {
                    jtj[j][k] += jac[i][j] * jac[i][k];
                }
            }
        }
        let grad_small = jtr.iter().all(|g| g.abs() < 1e-12 * (1.0 + chi2));

        let mut accepted = false;
        for _ in 0..24 {
            let mut a: Vec<Vec<f64>> = jtj.clone();
            for j in 0..n {
                a[j][j] += lambda * jtj[j][j].max(1e-300);
            }
            let mut step = jtr.clone();
            if solve_in_place(&mut a, &mut step).is_none() {
                lambda *= 7.0;
                continue;
            }
            let p_try: Vec<f64> = p.iter().zip(&step).map(|(pi, si)| pi + si).collect();
            let r_try = residuals(&p_try);
            let chi2_try = cost(&r_try);
            if chi2_try <= chi2 {
                let rel_step = step
                    .iter()
                    .zip(&p_try)
                    .map(|(s, pt)| s.abs() / pt.abs().max(1e-12))
                    .fold(0.0f64, f64::max);
                let rel_drop = (chi2 - chi2_try) / chi2.max(1e-300);
                p = p_try;
                r = r_try;
                chi2 = chi2_try;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if rel_step < 1e-10 || rel_drop < 1e-13 {
                    converged = true;
                }
                break;
            }
            lambda *= 7.0;
        }
        if !accepted || grad_small {
            converged = converged || grad_small || chi2 <= 1e-28;
            break;
        }
        if converged {
            break;
        }
    }

    // Covariance at the optimum: (JᵀJ)⁻¹ · RSS/(m-n).
    let sigmas = covariance_sigmas(&model, t, &p, chi2).unwrap_or_else(|| vec![f64::NAN; n]);
    LmResult {
        params: p,
        sigmas,
        residual_norm: chi2.sqrt(),
        converged,
        iterations,
    }
}

#[allow(clippy::needless_range_loop)]
fn covariance_sigmas<F>(model: &F, t: &[f64], p: &[f64], chi2: f64) -> Option<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let n = p.len();
    let m = t.len();
    if m <= n {
        return None;
    }
    let mut jtj = vec![vec![0.0; n]; n];
    let mut cols = vec![vec![0.0; n]; m];
    for j in 0..n {
        let h = 1e-7 * p[j].abs().max(1e-7);
        let mut pp = p.to_vec();
        pp[j] += h;
        let mut pm = p.to_vec();
        pm[j] -= h;
        for (i, &ti) in t.iter().enumerate() {
            cols[i][j] = (model(ti, &pp) - model(ti, &pm)) / (2.0 * h);
        }
    }
    for i in 0..m {
        for j in 0..n {
            for k in 0..n {
                jtj[j][k] += cols[i][j] * cols[i][k];
            }
        }
    }
    let s2 = chi2 / (m - n) as f64;
    // Invert via n solves against identity columns.
    let mut sigmas = vec![0.0; n];
    for j in 0..n {
        let mut a = jtj.clone();
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        solve_in_place(&mut a, &mut e)?;
        sigmas[j] = (e[j] * s2).max(0.0).sqrt();
    }
    Some(sigmas)
}
