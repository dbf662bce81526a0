//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::tol;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry, zero for empty matrices.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigen-decomposition of the symmetric part, eigenvalues ascending.
pub fn sym_eigen(m: &Mat) -> (Vector, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (Vector::zeros(0), Mat::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(sym(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = Mat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn min_eig(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).0[0]
}

struct FullSvd {
    u: Mat,
    s: Vec<f64>,
    v: Mat,
}

/// SVD with a square right factor, obtained by zero-padding rows when A is wide.
/// Only the first min(k, n) columns of `u` are meaningful.
fn full_svd(a: &Mat) -> FullSvd {
    let (k, n) = a.shape();
    if k == 0 || n == 0 {
        return FullSvd { u: Mat::zeros(k, n), s: vec![0.0; n.min(k)], v: Mat::identity(n, n) };
    }
    let m = k.max(n);
    let mut padded = Mat::zeros(m, n);
    padded.view_mut((0, 0), (k, n)).copy_from(a);
    let svd = padded.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let mut uo = Mat::zeros(k, n);
    let mut vo = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (c, &i) in idx.iter().enumerate() {
        uo.set_column(c, &u.column(i).rows(0, k));
        vo.set_column(c, &vt.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    FullSvd { u: uo, s, v: vo }
}

fn cutoff(s: &[f64]) -> f64 {
    let smax = s.first().copied().unwrap_or(0.0);
    tol::RANK * smax.max(1.0)
}

pub fn rank(a: &Mat) -> usize {
    let svd = full_svd(a);
    let c = cutoff(&svd.s);
    svd.s.iter().filter(|&&v| v > c).count()
}

/// Orthonormal basis of ker A as columns.
pub fn null_space(a: &Mat) -> Mat {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Mat::identity(n, n);
    }
    let svd = full_svd(a);
    let c = cutoff(&svd.s);
    let r = svd.s.iter().take(n.min(a.nrows())).filter(|&&v| v > c).count();
    svd.v.columns(r, n - r).into_owned()
}

/// Orthonormal basis of im A as columns.
pub fn range_basis(a: &Mat) -> Mat {
    let k = a.nrows();
    if a.ncols() == 0 || k == 0 {
        return Mat::zeros(k, 0);
    }
    let svd = full_svd(a);
    let c = cutoff(&svd.s);
    let r = svd.s.iter().take(k.min(a.ncols())).filter(|&&v| v > c).count();
    svd.u.columns(0, r).into_owned()
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(a: &Mat) -> Mat {
    let (k, n) = a.shape();
    if k == 0 || n == 0 {
        return Mat::zeros(n, k);
    }
    let svd = full_svd(a);
    let c = cutoff(&svd.s);
    let mut out = Mat::zeros(n, k);
    for (i, &s) in svd.s.iter().enumerate().take(k.min(n)) {
        if s > c {
            out += svd.v.column(i) * svd.u.column(i).transpose() / s;
        }
    }
    out
}

/// Orthogonal projector onto im A.
pub fn range_projector(a: &Mat) -> Mat {
    let b = range_basis(a);
    &b * b.transpose()
}

/// Minimal-norm least-squares solution of A x = b with its residual norm.
pub fn lstsq(a: &Mat, b: &Vector) -> (Vector, f64) {
    let x = pinv(a) * b;
    let r = (a * &x - b).norm();
    (x, r)
}

pub fn hstack(blocks: &[&Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[&Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn vcat(parts: &[&Vector]) -> Vector {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vector::zeros(n);
    let mut i = 0;
    for p in parts {
        out.rows_mut(i, p.len()).copy_from(*p);
        i += p.len();
    }
    out
}

pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Rows of the identity selecting the given coordinates.
pub fn selector(n: usize, coords: &[usize]) -> Mat {
    let mut s = Mat::zeros(coords.len(), n);
    for (r, &c) in coords.iter().enumerate() {
        s[(r, c)] = 1.0;
    }
    s
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Mat {
    let mut m = Mat::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn is_zero(m: &Mat) -> bool {
    m.iter().all(|&v| v == 0.0)
}

/// True when the matrix is diagonal in exact arithmetic.
pub fn is_diagonal(m: &Mat) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 2);
        assert!((a * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_tall_matrix() {
        let a = Mat::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 1);
        assert!((a * &n).norm() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = pinv(&a);
        assert!((p - Mat::from_element(2, 2, 0.25)).norm() < 1e-12);
        assert_eq!(rank(&a), 1);
    }

    #[test]
    fn range_basis_of_tall_matrix() {
        let a = Mat::from_row_slice(3, 1, &[1.0, 2.0, 2.0]);
        let b = range_basis(&a);
        assert_eq!(b.ncols(), 1);
        assert!((b.column(0).abs() - Vector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0).norm() < 1e-12);
    }

    #[test]
    fn empty_shapes() {
        assert_eq!(null_space(&Mat::zeros(0, 3)).ncols(), 3);
        assert_eq!(range_basis(&Mat::zeros(3, 0)).ncols(), 0);
        assert_eq!(pinv(&Mat::zeros(0, 2)).shape(), (2, 0));
        assert_eq!(min_eig(&Mat::zeros(0, 0)), 0.0);
    }

    #[test]
    fn sorted_eigenvalues() {
        let m = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -1.0]);
        let (v, _) = sym_eigen(&m);
        assert_eq!(v.as_slice(), &[-1.0, 3.0]);
    }
}
