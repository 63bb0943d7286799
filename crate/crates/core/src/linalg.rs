//! Small dense linear-algebra helpers shared by the geometry and analysis code.

use nalgebra::{DMatrix, DVector, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

/// Dense ambient representation used for points, tangent vectors and multipliers.
/// Vectors are stored as single-column matrices.
pub type Mat = DMatrix<f64>;

/// Frobenius inner product.
pub fn inner(a: &Mat, b: &Mat) -> f64 {
    a.dot(b)
}

pub fn column(values: &[f64]) -> Mat {
    Mat::from_column_slice(values.len(), 1, values)
}

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Flattens a matrix column-major into a vector.
pub fn vectorize(m: &Mat) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Thin SVD `m = u diag(s) v_t` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: DVector<f64>,
    pub v_t: Mat,
    /// `|u diag(s) v_t - m| / max(|m|, MIN_POSITIVE)`.
    pub residual: f64,
}

/// Relative reconstruction error accepted by [`svd`].
pub const SVD_TOL: f64 = 1e-12;

/// SVD with a reconstruction check. The implicit-shift routine can return
/// inconsistent singular vectors on some inputs with tiny off-diagonal
/// blocks; those are redone with one-sided Jacobi and the more accurate
/// result is kept.
pub fn svd(m: &Mat) -> Svd {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let finish = |u: Mat, s: DVector<f64>, v_t: Mat| {
        let residual = (&u * Mat::from_diagonal(&s) * &v_t - m).norm() / scale;
        Svd { u, s, v_t, residual }
    };
    let d = SVD::new(m.clone(), true, true);
    let fast = finish(d.u.expect("computed"), d.singular_values, d.v_t.expect("computed"));
    if fast.residual <= SVD_TOL {
        return fast;
    }
    let (u, s, v_t) = if m.nrows() >= m.ncols() {
        jacobi_svd(m)
    } else {
        let (u, s, v_t) = jacobi_svd(&m.transpose());
        (v_t.transpose(), s, u.transpose())
    };
    let slow = finish(u, s, v_t);
    if slow.residual < fast.residual {
        slow
    } else {
        fast
    }
}

/// One-sided Jacobi SVD of a matrix with `nrows >= ncols`.
fn jacobi_svd(m: &Mat) -> (Mat, DVector<f64>, Mat) {
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = Mat::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().copied().fold(0.0, f64::max);

    let mut u = Mat::zeros(rows, n);
    let mut vs = Mat::zeros(n, n);
    let s = DVector::from_fn(n, |k, _| norms[order[k]]);
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        vs.set_column(k, &v.column(j));
        if norms[j] > f64::EPSILON * smax && norms[j] > 0.0 {
            u.set_column(k, &(a.column(j) / norms[j]));
            filled = k + 1;
        }
    }
    // Complete u with an orthonormal basis where singular values vanish.
    let mut e = 0;
    for k in filled..n {
        while e < rows {
            let mut cand = DVector::zeros(rows);
            cand[e] = 1.0;
            e += 1;
            for j in 0..k {
                let proj = u.column(j).dot(&cand);
                cand -= u.column(j) * proj;
            }
            let norm = cand.norm();
            if norm > 1e-8 {
                u.set_column(k, &(cand / norm));
                break;
            }
        }
    }
    (u, s, vs.transpose())
}

/// Orthonormal basis (as columns) of the column space of `m`. Singular values
/// below `rel_tol * sigma_max` are treated as zero.
pub fn column_space(m: &Mat, rel_tol: f64) -> Mat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let svd = svd(m);
    let u = svd.u;
    let smax = svd.s.max();
    if smax <= 0.0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let rank = svd
        .s
        .iter()
        .take_while(|&&s| s > rel_tol * smax)
        .count();
    u.columns(0, rank).into_owned()
}

/// Orthonormal basis of the null space of `m` (columns live in the domain of `m`).
pub fn null_space(m: &Mat, rel_tol: f64) -> Mat {
    let n = m.ncols();
    if m.nrows() == 0 {
        return Mat::identity(n, n);
    }
    // Pad with zero rows so the SVD returns a full right basis.
    let padded = if m.nrows() < n {
        let mut p = Mat::zeros(n, n);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd(&padded);
    let v_t = svd.v_t;
    let smax = svd.s.max();
    let rank = if smax <= 0.0 {
        0
    } else {
        svd.s
            .iter()
            .filter(|&&s| s > rel_tol * smax)
            .count()
    };
    v_t.rows(rank, n - rank).transpose()
}

pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    column_space(m, rel_tol).ncols()
}

/// Removes the component of every column of `m` lying in span(`basis`), where
/// `basis` has orthonormal columns.
pub fn project_out(m: &Mat, basis: &Mat) -> Mat {
    if basis.ncols() == 0 {
        return m.clone();
    }
    m - basis * (basis.transpose() * m)
}

/// Nonnegative least squares `min ||a x - b||, x >= 0` (Lawson-Hanson active set).
/// Returns the minimizer and the residual norm.
pub fn nnls(a: &Mat, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let tol = 1e3 * f64::EPSILON * scale * (n.max(1) as f64);

    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        if w[j] <= tol {
            break;
        }
        passive[j] = true;

        for _ in 0..(3 * n + 10) {
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = a.select_columns(idx.iter());
            let z_sub = SVD::new(sub, true, true)
                .solve(b, 1e-14)
                .expect("both factors computed");
            let mut z = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                z[i] = z_sub[k];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &i in &idx {
                if z[i] <= 0.0 {
                    let denom = x[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    let residual = (b - a * &x).norm();
    (x, residual)
}

/// Whether the columns of `gens` positively span `R^dim`, i.e. their conic hull
/// is the whole space. Equivalent to: they span linearly and `-g` lies in
/// their conic hull for every generator `g`.
pub fn positively_spans(gens: &Mat, dim: usize, rel_tol: f64) -> bool {
    if dim == 0 {
        return true;
    }
    if gens.ncols() == 0 || numerical_rank(gens, rel_tol) < dim {
        return false;
    }
    let scale = gens.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    gens.column_iter().all(|g| {
        let target = -g.into_owned();
        let (_, residual) = nnls(gens, &target);
        residual <= rel_tol.max(1e-10) * scale
    })
}
