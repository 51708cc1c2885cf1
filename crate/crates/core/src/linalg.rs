//! Dense Cholesky and small least-squares helpers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Lower Cholesky factor of a symmetric matrix, or `None` if a pivot is not
/// strictly positive.
pub fn cholesky(a: ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Jitter levels tried in order when factorizing a covariance.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky with diagonal jitter escalation. Returns the factor and the
/// jitter that was needed.
pub fn cholesky_jittered(a: ArrayView2<f64>) -> Option<(Array2<f64>, f64)> {
    for &jitter in JITTER_LADDER.iter() {
        let mut m = a.to_owned();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[[i, i]] += jitter;
            }
        }
        if let Some(l) = cholesky(m.view()) {
            return Some((l, jitter));
        }
    }
    None
}

/// Solve `L Lᵀ x = b` given the lower factor `L`.
pub fn cholesky_solve(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Ordinary least squares through the normal equations.
///
/// Columns are scaled to unit norm before factorizing; returns `None` when
/// the scaled Gram matrix is numerically singular.
pub fn least_squares(design: ArrayView2<f64>, y: ArrayView1<f64>) -> Option<Array1<f64>> {
    let p = design.ncols();
    let norms: Vec<f64> = (0..p)
        .map(|j| design.column(j).dot(&design.column(j)).sqrt())
        .collect();
    if norms.iter().any(|&n| !(n > 0.0)) {
        return None;
    }
    let mut scaled = design.to_owned();
    for (j, &n) in norms.iter().enumerate() {
        scaled.column_mut(j).mapv_inplace(|v| v / n);
    }
    let gram = scaled.t().dot(&scaled);
    let l = cholesky(gram.view())?;
    // reciprocal condition estimate from the factor's diagonal
    let diag: Vec<f64> = (0..p).map(|i| l[[i, i]]).collect();
    let max = diag.iter().cloned().fold(f64::MIN, f64::max);
    let min = diag.iter().cloned().fold(f64::MAX, f64::min);
    if min / max < 1e-7 {
        return None;
    }
    let rhs = scaled.t().dot(&y);
    let mut beta = cholesky_solve(l.view(), rhs.view());
    for (j, &n) in norms.iter().enumerate() {
        beta[j] /= n;
    }
    Some(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_none());
        assert!(cholesky_jittered(a.view()).is_none());
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, jitter) = cholesky_jittered(a.view()).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-4);
    }

    #[test]
    fn least_squares_exact_fit() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]];
        let y = array![1.0, 3.0, 5.0, 7.0];
        let b = least_squares(x.view(), y.view()).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }
}
