//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Numerical rank: number of singular values above `RANK_TOL * s_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Residual sum of squares of the least-squares fit of `y` on the columns of `m`,
/// together with the numerical rank of `m`. Rank-deficient `m` is handled through
/// the truncated pseudo-inverse.
pub fn lstsq_rss(m: &DMatrix<f64>, y: &DVector<f64>) -> (f64, usize) {
    if m.ncols() == 0 {
        return (y.norm_squared(), 0);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return (y.norm_squared(), 0);
    }
    let tol = RANK_TOL * smax;
    let r = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let u = svd.u.as_ref().expect("svd computed with u");
    // Project onto the leading left singular vectors.
    let mut fitted = DVector::zeros(y.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            let col = u.column(k);
            fitted += col * col.dot(y);
        }
    }
    ((y - fitted).norm_squared(), r)
}

/// Subtract the within-block column means from each contiguous block of rows.
pub fn center_blocks(m: &DMatrix<f64>, starts: &[usize], sizes: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let ncol = m.ncols();
    let mut centered = m.clone();
    let mut means = DMatrix::zeros(sizes.len(), ncol);
    for (i, (&s, &n)) in starts.iter().zip(sizes).enumerate() {
        for c in 0..ncol {
            let mean = m.view((s, c), (n, 1)).sum() / n as f64;
            means[(i, c)] = mean;
            for r in s..s + n {
                centered[(r, c)] -= mean;
            }
        }
    }
    (centered, means)
}

/// Symmetrize in place by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
