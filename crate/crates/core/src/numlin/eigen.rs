//! Symmetric eigendecomposition by Householder tridiagonalization followed by
//! implicit QL iterations (the EISPACK `tred2`/`tql2` pair), plus Cholesky helpers
//! for the small SPD systems the variational updates need.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Relative asymmetry accepted before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenvalues in `[-CLAMP_TOL·‖S‖_F, 0)` are reported as exactly zero.
pub const CLAMP_TOL: f64 = 1e-9;

const MAX_QL_SWEEPS_PER_VALUE: usize = 60;

/// Eigenvalues (descending) and matching unit eigenvectors stored as columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// All eigenvalues of a symmetric matrix, in descending order.
pub fn sym_eigvals(s: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(s)?;
    let n = s.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut v = s.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e, false);
    tql2(&mut v, &mut d, &mut e, false)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    clamp_small_negatives(&mut values, s.frobenius());
    Ok(values)
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
pub fn sym_eigen(s: &Matrix) -> Result<SymEigen> {
    check_symmetric(s)?;
    let n = s.rows();
    let mut v = s.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    if n > 0 {
        tred2(&mut v, &mut d, &mut e, true);
        tql2(&mut v, &mut d, &mut e, true)?;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    clamp_small_negatives(&mut values, s.frobenius());
    let vectors = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(SymEigen { values, vectors })
}

fn clamp_small_negatives(values: &mut [f64], norm: f64) {
    let floor = -CLAMP_TOL * norm;
    for v in values.iter_mut() {
        if *v < 0.0 && *v >= floor {
            *v = 0.0;
        }
    }
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::shape("matrix has non-finite entries"));
    }
    let tol = SYMMETRY_TOL * s.max_abs().max(f64::MIN_POSITIVE);
    let n = s.rows();
    for i in 0..n {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > tol {
                return Err(Error::shape(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    s[(i, j)],
                    s[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Householder reduction to tridiagonal form. On return `d` holds the diagonal,
/// `e[1..]` the sub-diagonal, and `v` the accumulated transform when `vectors` is set.
fn tred2(v: &mut Matrix, d: &mut [f64], e: &mut [f64], vectors: bool) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    if !vectors {
        // Only the diagonal is needed: it sits on the diagonal of the workspace.
        for i in 0..n - 1 {
            d[i] = v[(i, i)];
        }
        d[n - 1] = v[(n - 1, n - 1)];
        e[0] = 0.0;
        return;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal matrix produced by [`tred2`].
fn tql2(v: &mut Matrix, d: &mut [f64], e: &mut [f64], vectors: bool) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    let mut total_iters = 0usize;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        // e[n-1] is zero, so m < n here.
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                total_iters += 1;
                if iter > MAX_QL_SWEEPS_PER_VALUE {
                    return Err(Error::numerical(
                        total_iters,
                        format!("QL iteration did not converge for eigenvalue {l}"),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if vectors {
                        for k in 0..n {
                            h = v[(k, i + 1)];
                            v[(k, i + 1)] = s * v[(k, i)] + c * h;
                            v[(k, i)] = c * v[(k, i)] - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical(total_iters, "non-finite eigenvalue"));
    }
    Ok(())
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = s[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::numerical(
                j,
                format!("matrix is not positive definite (pivot {j} = {diag:e})"),
            ));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix through its Cholesky factor; the result is exactly symmetric.
pub fn spd_inverse(s: &Matrix) -> Result<Matrix> {
    let n = s.rows();
    let l = cholesky(s)?;
    // L⁻¹ by forward substitution, then S⁻¹ = L⁻ᵀ L⁻¹.
    let mut linv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut v = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                v -= l[(i, k)] * linv[(k, col)];
            }
            linv[(i, col)] = v / l[(i, i)];
        }
    }
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut v = 0.0;
            for k in i..n {
                v += linv[(k, i)] * linv[(k, j)];
            }
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Ok(inv)
}
