//! Dense linear algebra used by the oracles: symmetric eigendecomposition
//! (Householder tridiagonalisation followed by implicit QL) and an LU solver.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Full spectrum of a symmetric matrix.
///
/// Eigenvalues are ascending and `vectors.column(r)` is the unit eigenvector
/// of `values[r]`. Each vector is oriented so that its first component of
/// non-negligible magnitude is positive.
#[derive(Debug, Clone)]
pub struct EigenSystem<T> {
    pub values: Array1<T>,
    pub vectors: Array2<T>,
}

impl<T: Scalar> EigenSystem<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest residual `||M v - lambda v||` over all pairs.
    pub fn max_residual(&self, m: &Array2<T>) -> T {
        let mv = m.dot(&self.vectors);
        let mut worst = T::zero();
        for (r, &lambda) in self.values.iter().enumerate() {
            let res = mv
                .column(r)
                .iter()
                .zip(self.vectors.column(r).iter())
                .map(|(&a, &v)| (a - lambda * v) * (a - lambda * v))
                .sum::<T>()
                .sqrt();
            worst = worst.max(res);
        }
        worst
    }
}

pub fn max_asymmetry<T: Scalar>(m: ArrayView2<T>) -> T {
    let n = m.nrows();
    let mut worst = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix.
///
/// Rejects inputs whose asymmetry exceeds `1e-10` relative to the largest
/// entry (absolute for matrices with entries below one).
pub fn eig_sym<T: Scalar>(m: &Array2<T>) -> Result<EigenSystem<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("eig_sym (square)", n, m.ncols()));
    }
    let scale = m.iter().fold(T::one(), |acc, &x| acc.max(x.abs()));
    let asym = max_asymmetry(m.view());
    if asym > T::of(1e-10) * scale {
        return Err(Error::NotSymmetric(asym.f64()));
    }
    if n == 0 {
        return Ok(EigenSystem {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }

    // Work on the symmetrised copy so tiny asymmetries do not bias the result.
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| (m[[i, j]] + m[[j, i]]) * T::of(0.5));
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    ql_implicit(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&r| d[r]));
    let mut vectors = v.select(Axis(1), &order);

    let cutoff = T::epsilon().sqrt();
    for mut col in vectors.columns_mut() {
        if let Some(&first) = col.iter().find(|x| x.abs() > cutoff) {
            if first < T::zero() {
                col.mapv_inplace(|x| -x);
            }
        }
    }
    Ok(EigenSystem { values, vectors })
}

// Householder reduction to tridiagonal form (EISPACK tred2). On exit `v`
// holds the accumulated orthogonal transform, `d` the diagonal and `e` the
// sub-diagonal in e[1..].
fn tridiagonalize<T: Scalar>(v: &mut Array2<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }

    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = T::zero();
                v[[j, i]] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = T::zero();
            }

            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in (j + 1)..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = T::zero();
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
                    let delta = f * e[k] + g * d[k];
                    v[[k, j]] -= delta;
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = T::zero();
            }
        }
        d[i] = h;
    }

    for i in 0..n.saturating_sub(1) {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    let delta = g * d[k];
                    v[[k, j]] -= delta;
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = T::zero();
    }
    v[[n - 1, n - 1]] = T::one();
    e[0] = T::zero();
}

// Implicit QL iterations on the tridiagonal matrix (EISPACK tql2).
fn ql_implicit<T: Scalar>(v: &mut Array2<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();

    let eps = T::epsilon();
    let two = T::of(2.0);
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::NonFinite("eig_sym (no convergence)"));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
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
                    for k in 0..n {
                        let hk = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * hk;
                        v[[k, i]] = c * v[[k, i]] - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if !p.is_finite() {
                    return Err(Error::NonFinite("eig_sym"));
                }
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Solves `a x = b` by LU decomposition with partial pivoting.
pub fn solve<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim("solve (square)", n, a.ncols()));
    }
    if b.nrows() != n {
        return Err(Error::dim("solve (rhs rows)", n, b.nrows()));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let tiny = T::epsilon() * T::of_usize(n.max(1)) * scale;

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                lu[[i, col]]
                    .abs()
                    .partial_cmp(&lu[[j, col]].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if !(lu[[pivot, col]].abs() > tiny) {
            return Err(Error::Singular("solve"));
        }
        if pivot != col {
            for k in 0..n {
                lu.swap([pivot, k], [col, k]);
            }
            for k in 0..x.ncols() {
                x.swap([pivot, k], [col, k]);
            }
        }
        let p = lu[[col, col]];
        for row in (col + 1)..n {
            let factor = lu[[row, col]] / p;
            if factor == T::zero() {
                continue;
            }
            lu[[row, col]] = factor;
            for k in (col + 1)..n {
                let delta = factor * lu[[col, k]];
                lu[[row, k]] -= delta;
            }
            for k in 0..x.ncols() {
                let delta = factor * x[[col, k]];
                x[[row, k]] -= delta;
            }
        }
    }
    for col in (0..n).rev() {
        let p = lu[[col, col]];
        for k in 0..x.ncols() {
            let mut acc = x[[col, k]];
            for j in (col + 1)..n {
                acc -= lu[[col, j]] * x[[j, k]];
            }
            x[[col, k]] = acc / p;
        }
    }
    Ok(x)
}

/// Moore-Penrose pseudoinverse of a symmetric matrix via its spectrum.
/// Eigenvalues with magnitude below `cutoff` are treated as zero.
pub fn pinv_sym<T: Scalar>(m: &Array2<T>, cutoff: T) -> Result<Array2<T>> {
    let eig = eig_sym(m)?;
    let n = m.nrows();
    let mut out = Array2::<T>::zeros((n, n));
    for (r, &lambda) in eig.values.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        let v = eig.vectors.column(r);
        let inv = T::one() / lambda;
        for i in 0..n {
            let vi = v[i] * inv;
            for j in 0..n {
                out[[i, j]] += vi * v[j];
            }
        }
    }
    Ok(out)
}
