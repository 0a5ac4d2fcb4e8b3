//! SVD-based analysis and initialization of Winograd-domain weights.
//!
//! The factorization is a one-sided (Hestenes) Jacobi SVD: plane rotations
//! orthogonalize column pairs of the working matrix, each rotation derived
//! from the 2x2 block [[‖a_p‖², a_p·a_q], [a_p·a_q, ‖a_q‖²]] of the Gram
//! matrix — the Gram eigenproblem solved implicitly, without ever forming
//! the squared matrix. That matters here: weights inherited from spatial
//! kernels have exact rank r³ = 27 out of t³ = 64 columns, and the implicit
//! form resolves those null directions to ~1e-15·σ₀ instead of the ~1e-8·σ₀
//! floor that explicit squaring would leave.
//!
//! Determinism: fixed row-cyclic sweep order, fixed convergence threshold,
//! ties in the descending σ sort broken by original column index, and a sign
//! rule (first significant entry of each right vector is positive) that
//! makes the factor signs reproducible.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAX_SWEEPS: usize = 64;
/// σ_i at or below σ₀·SIGMA_CUTOFF are treated as exact zeros (no left
/// vector is recoverable from a null column).
const SIGMA_CUTOFF: f64 = 1e-12;
/// Sign rule: the first entry of a right vector larger than this in
/// magnitude is made positive.
const SIGN_EPS: f64 = 1e-12;

/// Thin SVD `A = U·diag(σ)·Vᵀ` with `k = min(rows, cols)` columns.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Singular values, descending. Length k.
    pub sigma: Vec<f64>,
    /// Left singular vectors as columns, rows x k. Columns for σ below the
    /// zero cutoff are zero.
    pub u: Matrix<f64>,
    /// Right singular vectors as rows, k x cols.
    pub vt: Matrix<f64>,
}

/// Full factorization kept internal: all `cols` right vectors survive even
/// past the rank, which low-rank initialization needs when s exceeds
/// min(rows, cols).
struct FullSvd {
    /// Length cols, descending (zeros past the rank).
    sigma: Vec<f64>,
    /// rows x cols; column i is σ_i·u_i (zeroed below the cutoff).
    su: Matrix<f64>,
    /// cols x cols orthogonal; column i is v_i.
    v: Matrix<f64>,
}

fn jacobi_svd(a: &Matrix<f64>) -> Result<FullSvd> {
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in svd input".into()));
    }
    let (rows, cols) = (a.rows(), a.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::Shape("svd of an empty matrix".into()));
    }
    // column-major copy: rotations touch whole columns
    let mut w = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            w[j * rows + i] = a.get(i, j);
        }
    }
    let mut v = vec![0.0f64; cols * cols];
    for j in 0..cols {
        v[j * cols + j] = 1.0;
    }

    // A computed dot product of two length-`rows` columns carries rounding
    // noise up to rows·ε·‖a_p‖‖a_q‖, so treating anything below that as
    // orthogonal is both safe and necessary for termination.
    let tol = rows as f64 * f64::EPSILON;
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        // Columns whose norm has collapsed to rounding residue are final
        // (they are the numerical null space); rotating two of them against
        // each other is 0/0 noise and never settles.
        let max_norm = (0..cols)
            .map(|j| {
                (0..rows)
                    .map(|i| w[j * rows + i] * w[j * rows + i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        let dead = max_norm * tol;
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..rows {
                    let (wp, wq) = (w[p * rows + i], w[q * rows + i]);
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                let (na, nb) = (alpha.sqrt(), beta.sqrt());
                if na <= dead || nb <= dead {
                    continue;
                }
                if gamma == 0.0 || gamma.abs() <= tol * na * nb {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let wp = w[p * rows + i];
                    let wq = w[q * rows + i];
                    w[p * rows + i] = c * wp - s * wq;
                    w[q * rows + i] = s * wp + c * wq;
                }
                for i in 0..cols {
                    let vp = v[p * cols + i];
                    let vq = v[q * cols + i];
                    v[p * cols + i] = c * vp - s * vq;
                    v[q * cols + i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "jacobi svd did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    // singular values = column norms; sort descending, index breaks ties
    let norms: Vec<f64> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| w[j * rows + i] * w[j * rows + i])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));

    let sigma0 = norms[order[0]];
    let mut sigma = Vec::with_capacity(cols);
    let mut su = Matrix::zeros(rows, cols);
    let mut vm = Matrix::zeros(cols, cols);
    for (dst, &src) in order.iter().enumerate() {
        let mut sg = norms[src];
        let dead = sg <= sigma0 * SIGMA_CUTOFF;
        if dead {
            sg = 0.0;
        }
        sigma.push(sg);
        // sign rule on the right vector; the paired left column flips too
        let mut flip = 1.0;
        for i in 0..cols {
            let e = v[src * cols + i];
            if e.abs() > SIGN_EPS {
                if e < 0.0 {
                    flip = -1.0;
                }
                break;
            }
        }
        for i in 0..cols {
            vm.set(i, dst, flip * v[src * cols + i]);
        }
        if !dead {
            for i in 0..rows {
                su.set(i, dst, flip * w[src * rows + i]);
            }
        }
    }
    Ok(FullSvd { sigma, su, v: vm })
}

/// Thin SVD of an arbitrary matrix. Deterministic: identical input bits give
/// identical output bits.
pub fn svd(a: &Matrix<f64>) -> Result<SvdResult> {
    let full = jacobi_svd(a)?;
    let k = a.rows().min(a.cols());
    let mut u = Matrix::zeros(a.rows(), k);
    let mut vt = Matrix::zeros(k, a.cols());
    for j in 0..k {
        let sg = full.sigma[j];
        if sg > 0.0 {
            for i in 0..a.rows() {
                u.set(i, j, full.su.get(i, j) / sg);
            }
        }
        for i in 0..a.cols() {
            vt.set(j, i, full.v.get(i, j));
        }
    }
    Ok(SvdResult {
        sigma: full.sigma[..k].to_vec(),
        u,
        vt,
    })
}

/// Initialize low-rank factors from frozen base weights: the width-s SVD
/// truncation of `g_w`, scaled by `alpha` and split as
/// `g_r(:, i) = α·σ_i·u_i`, `g_c(i, :) = v_iᵀ`, so that
/// `g_r·g_c = α·(best rank-s approximation of g_w)`.
///
/// Right vectors exist for every i < t³ even past the rank of `g_w`; the
/// corresponding `g_r` columns are zero.
pub fn init_lowrank(
    g_w: &Matrix<f64>,
    s: usize,
    alpha: f64,
) -> Result<(Matrix<f64>, Matrix<f64>)> {
    if s < 1 || s > g_w.cols() {
        return Err(Error::Rank(format!(
            "rank {s} outside 1..={}",
            g_w.cols()
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::Numeric(format!("non-finite alpha {alpha}")));
    }
    let full = jacobi_svd(g_w)?;
    let mut g_r = Matrix::zeros(g_w.rows(), s);
    let mut g_c = Matrix::zeros(s, g_w.cols());
    for j in 0..s {
        // su column j is already σ_j·u_j
        for i in 0..g_w.rows() {
            g_r.set(i, j, alpha * full.su.get(i, j));
        }
        for i in 0..g_w.cols() {
            g_c.set(j, i, full.v.get(i, j));
        }
    }
    Ok((g_r, g_c))
}

/// Singular-value mass distribution of a weight matrix.
#[derive(Clone, Debug)]
pub struct SpectrumReport {
    /// All `cols` singular values, descending (zeros past the rank).
    pub sigma: Vec<f64>,
    /// σ_i / Σσ.
    pub individual_fractions: Vec<f64>,
    /// Prefix sums of the individual fractions; last entry is 1.
    pub cumulative_fractions: Vec<f64>,
}

pub fn spectrum_report(g_w: &Matrix<f64>) -> Result<SpectrumReport> {
    let full = jacobi_svd(g_w)?;
    let total: f64 = full.sigma.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all-zero spectrum".into()));
    }
    let individual: Vec<f64> = full.sigma.iter().map(|s| s / total).collect();
    let mut cumulative = Vec::with_capacity(individual.len());
    let mut acc = 0.0;
    for f in &individual {
        acc += f;
        cumulative.push(acc);
    }
    Ok(SpectrumReport {
        sigma: full.sigma,
        individual_fractions: individual,
        cumulative_fractions: cumulative,
    })
}

/// Relative Frobenius error of the best rank-s approximation of `delta`:
/// `sqrt(Σ_{i≥s} σ_i²) / ‖delta‖_F`. Non-increasing in s; exactly 0 at
/// s = cols (the tail sum is empty). Returns 0 for an all-zero `delta`.
pub fn truncated_update_error(delta: &Matrix<f64>, s: usize) -> Result<f64> {
    if s > delta.cols() {
        return Err(Error::Rank(format!(
            "rank {s} exceeds column count {}",
            delta.cols()
        )));
    }
    let full = jacobi_svd(delta)?;
    let total: f64 = full.sigma.iter().map(|x| x * x).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    // tail summed from the smallest value up: adding non-negatives is
    // monotone in IEEE arithmetic, so the curve over s is too
    let mut tail = 0.0f64;
    for j in (s..full.sigma.len()).rev() {
        tail += full.sigma[j] * full.sigma[j];
    }
    Ok((tail / total).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::transform::transforms_f2x3;

    fn reconstruct(r: &SvdResult) -> Matrix<f64> {
        let k = r.sigma.len();
        let mut s = Matrix::zeros(k, k);
        for i in 0..k {
            s.set(i, i, r.sigma[i]);
        }
        r.u.matmul(&s).matmul(&r.vt)
    }

    fn frob(m: &Matrix<f64>) -> f64 {
        m.data().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn diagonal_matrix_sorted_with_positive_signs() {
        let a = Matrix::from_rows(&[
            &[3.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 2.0],
        ]);
        let r = svd(&a).unwrap();
        assert_eq!(r.sigma, vec![3.0, 2.0, 1.0]);
        // right vectors are signed unit vectors; sign rule makes them +e_i
        assert_eq!(r.vt.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(r.vt.row(1), &[0.0, 0.0, 1.0]);
        assert_eq!(r.vt.row(2), &[0.0, 1.0, 0.0]);
        assert_eq!(r.u.get(0, 0), 1.0);
        assert_eq!(r.u.get(2, 1), 1.0);
        assert_eq!(r.u.get(1, 2), 1.0);
    }

    #[test]
    fn reconstruction_and_orthonormality_random() {
        let mut rng = Rng::new(21);
        for &(rows, cols) in &[(8usize, 5usize), (5, 8), (16, 16), (64, 64)] {
            let a = Matrix::new(rows, cols, rng.normals(rows * cols)).unwrap();
            let r = svd(&a).unwrap();
            let k = rows.min(cols);
            assert_eq!(r.sigma.len(), k);
            for w in r.sigma.windows(2) {
                assert!(w[0] >= w[1], "sigma not descending: {:?}", r.sigma);
            }
            // reconstruction
            let rec = reconstruct(&r);
            let mut diff = a.clone();
            for (d, v) in diff.data_mut().iter_mut().zip(rec.data()) {
                *d -= *v;
            }
            assert!(
                frob(&diff) <= 1e-10 * r.sigma[0].max(1e-300),
                "{rows}x{cols}: reconstruction error {}",
                frob(&diff)
            );
            // UᵀU = I and VVᵀ = I on the significant columns
            for i in 0..k {
                if r.sigma[i] == 0.0 {
                    continue;
                }
                for j in 0..k {
                    if r.sigma[j] == 0.0 {
                        continue;
                    }
                    let du: f64 = (0..rows).map(|t| r.u.get(t, i) * r.u.get(t, j)).sum();
                    let dv: f64 = (0..cols).map(|t| r.vt.get(i, t) * r.vt.get(j, t)).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((du - want).abs() <= 1e-10, "UᵀU[{i}{j}] = {du}");
                    assert!((dv - want).abs() <= 1e-10, "VVᵀ[{i}{j}] = {dv}");
                }
            }
        }
    }

    #[test]
    fn svd_is_bit_deterministic() {
        let mut rng = Rng::new(22);
        let a = Matrix::new(32, 64, rng.normals(32 * 64)).unwrap();
        let r1 = svd(&a).unwrap();
        let r2 = svd(&a).unwrap();
        assert_eq!(r1.sigma, r2.sigma);
        assert_eq!(r1.u.data(), r2.u.data());
        assert_eq!(r1.vt.data(), r2.vt.data());
    }

    #[test]
    fn inherited_weights_have_rank_at_most_27() {
        // weights transformed from spatial kernels live in a 27-dim subspace
        // of the 64 Winograd columns; the implicit Gram solve must resolve
        // the other 37 directions to numerical zero
        let ts = transforms_f2x3();
        let mut rng = Rng::new(23);
        for _ in 0..3 {
            let g = Matrix::new(24, 27, rng.normals(24 * 27)).unwrap();
            let g_w = g.matmul(&ts.t_k);
            let r = svd(&g_w).unwrap();
            assert!(r.sigma[0] > 0.0);
            for i in 27..r.sigma.len() {
                assert!(
                    r.sigma[i] <= 1e-10 * r.sigma[0],
                    "sigma[{i}]/sigma[0] = {}",
                    r.sigma[i] / r.sigma[0]
                );
            }
            let rep = spectrum_report(&g_w).unwrap();
            assert!(rep.cumulative_fractions[26] >= 1.0 - 1e-9);
            assert_eq!(rep.sigma.len(), 64);
        }
    }

    #[test]
    fn zero_matrix_svd_and_degenerate_spectrum() {
        let a = Matrix::<f64>::zeros(4, 6);
        let r = svd(&a).unwrap();
        assert!(r.sigma.iter().all(|&s| s == 0.0));
        assert!(r.u.data().iter().all(|&x| x == 0.0));
        assert!(matches!(
            spectrum_report(&a),
            Err(Error::Degenerate(_))
        ));
        assert!(svd(&Matrix::new(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]).unwrap()).is_err());
    }

    #[test]
    fn init_lowrank_is_scaled_truncation() {
        let mut rng = Rng::new(24);
        let g_w = Matrix::new(20, 64, rng.normals(20 * 64)).unwrap();
        let r = svd(&g_w).unwrap();
        let (s, alpha) = (6usize, 0.1f64);
        let (g_r, g_c) = init_lowrank(&g_w, s, alpha).unwrap();
        assert_eq!((g_r.rows(), g_r.cols()), (20, 6));
        assert_eq!((g_c.rows(), g_c.cols()), (6, 64));
        let prod = g_r.matmul(&g_c);
        // compare against α · Σ_{i<s} σ_i u_i v_iᵀ from the public svd
        let mut want = Matrix::<f64>::zeros(20, 64);
        for i in 0..s {
            for a_ in 0..20 {
                for b in 0..64 {
                    let v = want.get(a_, b)
                        + alpha * r.sigma[i] * r.u.get(a_, i) * r.vt.get(i, b);
                    want.set(a_, b, v);
                }
            }
        }
        let mut diff = prod.clone();
        for (d, w) in diff.data_mut().iter_mut().zip(want.data()) {
            *d -= *w;
        }
        assert!(frob(&diff) <= 1e-10 * r.sigma[0]);
    }

    #[test]
    fn init_lowrank_full_width_recovers_alpha_gw() {
        let mut rng = Rng::new(25);
        let g_w = Matrix::new(12, 64, rng.normals(12 * 64)).unwrap();
        let (g_r, g_c) = init_lowrank(&g_w, 64, 0.25).unwrap();
        let prod = g_r.matmul(&g_c);
        let sigma0 = svd(&g_w).unwrap().sigma[0];
        let mut diff = prod;
        for (d, w) in diff.data_mut().iter_mut().zip(g_w.data()) {
            *d -= 0.25 * *w;
        }
        assert!(frob(&diff) <= 1e-10 * sigma0);
    }

    #[test]
    fn init_lowrank_rank_past_matrix_rank_zeroes_columns() {
        // 2x64 matrix has rank ≤ 2; ask for s = 5
        let mut rng = Rng::new(26);
        let g_w = Matrix::new(2, 64, rng.normals(128)).unwrap();
        let (g_r, g_c) = init_lowrank(&g_w, 5, 1.0).unwrap();
        for j in 2..5 {
            for i in 0..2 {
                assert_eq!(g_r.get(i, j), 0.0);
            }
            // right vectors still unit-norm
            let n: f64 = g_c.row(j).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() <= 1e-12);
        }
        assert!(init_lowrank(&g_w, 0, 1.0).is_err());
        assert!(init_lowrank(&g_w, 65, 1.0).is_err());
    }

    #[test]
    fn truncation_error_monotone_and_exact_at_full_width() {
        let mut rng = Rng::new(27);
        let delta = Matrix::new(16, 64, rng.normals(16 * 64)).unwrap();
        let mut prev = f64::INFINITY;
        for s in 0..=64 {
            let e = truncated_update_error(&delta, s).unwrap();
            assert!(e <= prev, "error increased at s={s}: {e} > {prev}");
            prev = e;
        }
        assert_eq!(truncated_update_error(&delta, 64).unwrap(), 0.0);
        assert!(truncated_update_error(&delta, 0).unwrap() <= 1.0 + 1e-12);
        assert!(truncated_update_error(&delta, 65).is_err());
        let zero = Matrix::<f64>::zeros(4, 8);
        assert_eq!(truncated_update_error(&zero, 2).unwrap(), 0.0);
    }
}
