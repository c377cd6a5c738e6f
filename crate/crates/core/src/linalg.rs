//! Small dense linear-algebra helpers shared by the modules.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen, SVD};

use crate::{Error, Mat, Result};

const EIG_EPS: f64 = 1e-14;
const EIG_MAX_ITER: usize = 10_000;

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a general square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigenvalues of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if let Some(schur) = Schur::try_new(a.clone(), EIG_EPS, EIG_MAX_ITER) {
        return Ok(schur.complex_eigenvalues().iter().copied().collect());
    }
    // Clustered spectra can stall the shifted QR; retry on the centred,
    // rescaled matrix.
    let (c, scale, b) = centre(a);
    if scale == 0.0 {
        return Ok(vec![Complex::new(c, 0.0); a.nrows()]);
    }
    let schur = Schur::try_new(b, EIG_EPS, EIG_MAX_ITER).ok_or(Error::EigFailure)?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z * scale + c).collect())
}

/// `(c, s, (a - c I) / s)` with `c` the mean diagonal entry and `s` the
/// largest remaining entry (`s = 0` when `a = c I`).
fn centre(a: &Mat) -> (f64, f64, Mat) {
    let n = a.nrows();
    let c = a.trace() / n as f64;
    let b = a - Mat::identity(n, n) * c;
    let s = b.amax();
    if s == 0.0 {
        return (c, 0.0, b);
    }
    (c, s, b / s)
}

/// Largest real part over the spectrum; `-inf` for an empty matrix.
pub fn spectral_abscissa(a: &Mat) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

/// Ascending eigenvalues of the symmetric part of `a`.
pub fn sym_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let sa = sym(a);
    let mut v: Vec<f64> = match SymmetricEigen::try_new(sa.clone(), EIG_EPS, EIG_MAX_ITER) {
        Some(eig) => eig.eigenvalues.iter().copied().collect(),
        None => {
            let (c, scale, b) = centre(&sa);
            if scale == 0.0 {
                vec![c; a.nrows()]
            } else {
                SymmetricEigen::try_new(b, EIG_EPS, EIG_MAX_ITER)
                    .ok_or(Error::EigFailure)?
                    .eigenvalues
                    .iter()
                    .map(|l| l * scale + c)
                    .collect()
            }
        }
    };
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

pub fn lambda_min(a: &Mat) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.first().copied().unwrap_or(f64::INFINITY))
}

pub fn lambda_max(a: &Mat) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.last().copied().unwrap_or(f64::NEG_INFINITY))
}

pub fn singular_values(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = SVD::new(a.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Spectral norm (largest singular value).
pub fn norm2(a: &Mat) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Moore-Penrose pseudoinverse; singular values below `rel_tol * sigma_max`
/// are truncated. Returns the pseudoinverse and the numerical rank.
pub fn pinv(a: &Mat, rel_tol: f64) -> (Mat, usize) {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return (Mat::zeros(c, r), 0);
    }
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut out = Mat::zeros(c, r);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            rank += 1;
            out += (vt.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    (out, rank)
}

/// Orthonormal basis of the null space of `a` (columns).
pub fn null_space(a: &Mat, rel_tol: f64) -> Mat {
    let (r, c) = a.shape();
    if r == 0 {
        return Mat::identity(c, c);
    }
    // Pad to at least as many rows as columns so the full V is produced.
    let padded = if r < c {
        let mut p = Mat::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max().max(1e-300);
    let cols: Vec<_> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= rel_tol * smax)
        .map(|(k, _)| vt.row(k).transpose())
        .collect();
    if cols.is_empty() {
        return Mat::zeros(c, 0);
    }
    Mat::from_columns(&cols)
}

/// Solve `a x = b` by LU factorization.
pub fn lu_solve(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve {}x{} with rhs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSolve("LU factorization is singular".into()))
}

/// Assemble a block matrix from a grid of blocks. Every row of blocks must
/// share a height and every column a width.
pub fn block(rows: &[Vec<&Mat>]) -> Result<Mat> {
    if rows.is_empty() {
        return Ok(Mat::zeros(0, 0));
    }
    let ncols_blocks = rows[0].len();
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols_blocks {
            return Err(Error::DimensionMismatch("ragged block layout".into()));
        }
        for (j, b) in r.iter().enumerate() {
            if b.nrows() != heights[i] || b.ncols() != widths[j] {
                return Err(Error::DimensionMismatch(format!(
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    heights[i],
                    widths[j]
                )));
            }
        }
    }
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, r) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in r.iter().enumerate() {
            out.view_mut((r0, c0), (heights[i], widths[j])).copy_from(*b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    Ok(out)
}

pub fn vstack(parts: &[&Mat]) -> Result<Mat> {
    let rows: Vec<Vec<&Mat>> = parts.iter().map(|p| vec![*p]).collect();
    block(&rows)
}

pub fn hstack(parts: &[&Mat]) -> Result<Mat> {
    block(&[parts.to_vec()])
}

/// Block-diagonal matrix.
pub fn block_diag(parts: &[&Mat]) -> Mat {
    let r: usize = parts.iter().map(|p| p.nrows()).sum();
    let c: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Mat::zeros(r, c);
    let (mut r0, mut c0) = (0, 0);
    for p in parts {
        out.view_mut((r0, c0), p.shape()).copy_from(*p);
        r0 += p.nrows();
        c0 += p.ncols();
    }
    out
}

/// Symmetric basis matrix `E_ij + E_ji` (or `E_ii`) of size `n`.
pub fn sym_unit(n: usize, i: usize, j: usize) -> Mat {
    let mut e = Mat::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

/// Index pairs `(i, j)` with `i <= j`, row-major; the parameterization of a
/// symmetric matrix used by the LMI builders.
pub fn sym_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            v.push((i, j));
        }
    }
    v
}

/// Assemble a symmetric matrix from its upper-triangular parameters.
pub fn sym_from_params(n: usize, params: &[f64]) -> Mat {
    let mut m = Mat::zeros(n, n);
    for (k, (i, j)) in sym_pairs(n).into_iter().enumerate() {
        m[(i, j)] = params[k];
        m[(j, i)] = params[k];
    }
    m
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustered_spectrum() {
        let mut a = Mat::identity(5, 5);
        a[(0, 1)] = 3e-16;
        a[(2, 4)] = -2e-16;
        a[(3, 3)] += 4e-16;
        let ev = eigenvalues(&a).unwrap();
        assert!(ev.iter().all(|z| (z.re - 1.0).abs() < 1e-14 && z.im.abs() < 1e-14));
        assert_eq!(eigenvalues(&(Mat::identity(3, 3) * 2.0)).unwrap().len(), 3);
        let s = sym_eigenvalues(&a).unwrap();
        assert!(s.iter().all(|l| (l - 1.0).abs() < 1e-14));
    }

    #[test]
    fn pinv_right_inverse() {
        let a = Mat::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
        let (p, rank) = pinv(&a, 1e-10);
        assert_eq!(rank, 2);
        assert!((&a * &p - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_wide() {
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a, 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn block_rejects_ragged() {
        let a = Mat::zeros(1, 1);
        let b = Mat::zeros(2, 1);
        assert!(block(&[vec![&a, &b]]).is_err());
    }

    #[test]
    fn abscissa_rotation() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(spectral_abscissa(&a).unwrap().abs() < 1e-14);
    }
}
