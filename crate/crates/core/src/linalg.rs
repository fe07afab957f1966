//! Dense complex helpers and the block-diagonal Hermitian solver.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::scalar::{abs2, to_f64, Real};
use crate::{Error, Result};

pub type CMat<T> = DMatrix<Complex<T>>;
pub type CVec<T> = DVector<Complex<T>>;

/// Squared Euclidean norm of a complex vector.
pub fn norm2<T: Real>(v: &CVec<T>) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + abs2(*z))
}

pub fn norm<T: Real>(v: &CVec<T>) -> T {
    norm2(v).sqrt()
}

/// Quadratic form `x^H A x`, real part only (A Hermitian).
pub fn quad_form<T: Real>(a: &CMat<T>, x: &CVec<T>) -> T {
    x.dotc(&(a * x)).re
}

/// Column-major vectorization.
pub fn vec_cols<T: Real>(x: &CMat<T>) -> CVec<T> {
    CVec::from_column_slice(x.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec<T: Real>(v: &CVec<T>, rows: usize, cols: usize) -> Result<CMat<T>> {
    if v.len() != rows * cols {
        return Err(Error::Shape(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(CMat::from_column_slice(rows, cols, v.as_slice()))
}

/// Dense Kronecker product.
pub fn kron<T: Real>(a: &CMat<T>, b: &CMat<T>) -> CMat<T> {
    a.kronecker(b)
}

pub fn identity<T: Real>(n: usize) -> CMat<T> {
    CMat::identity(n, n)
}

/// `(A + A^H) / 2`.
pub fn hermitian_part<T: Real>(a: &CMat<T>) -> CMat<T> {
    let half = Complex::new(T::one() / (T::one() + T::one()), T::zero());
    (a + a.adjoint()) * half
}

/// Largest absolute entry of `A - A^H`.
pub fn hermitian_defect<T: Real>(a: &CMat<T>) -> T {
    let d = a - a.adjoint();
    d.iter().fold(T::zero(), |m, z| {
        let v = abs2(*z).sqrt();
        if v > m {
            v
        } else {
            m
        }
    })
}

/// Sorted real eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues<T: Real>(a: &CMat<T>) -> Vec<T> {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

/// Condition number of a Hermitian matrix from its eigenvalues.
pub fn hermitian_condition<T: Real>(a: &CMat<T>) -> f64 {
    let vals = hermitian_eigenvalues(a);
    let (lo, hi) = match (vals.first(), vals.last()) {
        (Some(lo), Some(hi)) => (to_f64(lo.abs()), to_f64(hi.abs())),
        _ => return f64::INFINITY,
    };
    let min_abs = vals
        .iter()
        .map(|v| to_f64(v.abs()))
        .fold(f64::INFINITY, f64::min);
    let max_abs = lo.max(hi);
    if min_abs == 0.0 {
        f64::INFINITY
    } else {
        max_abs / min_abs
    }
}

/// Cholesky factorization that rejects matrices that are not positive
/// definite. The complex factorization alone accepts negative pivots by
/// taking complex square roots, so the factor's diagonal is checked.
pub fn checked_cholesky<T: Real>(a: CMat<T>) -> Option<Cholesky<Complex<T>, Dyn>> {
    let n = a.nrows();
    if (0..n).any(|i| !(a[(i, i)].re > T::zero())) {
        return None;
    }
    let ch = Cholesky::new(a)?;
    let l = ch.l_dirty();
    let ok = (0..n).all(|i| {
        let d = l[(i, i)];
        d.re > T::zero() && d.re.is_finite() && d.im.abs() <= d.re * crate::scalar::lit(1e-8)
    });
    ok.then_some(ch)
}

/// Solves `A x = b` in place for Hermitian positive-definite `A`, given as a
/// column-major `n x n` slice of which only the lower triangle is read. The
/// slice is overwritten by the Cholesky factor. Returns `false` when a pivot
/// is not positive.
pub fn cholesky_solve_in_place<T: Real>(a: &mut [Complex<T>], n: usize, b: &mut [Complex<T>]) -> bool {
    debug_assert!(a.len() == n * n && b.len() == n);
    for j in 0..n {
        let d = a[j * n + j].re;
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let ljj = d.sqrt();
        let inv = T::one() / ljj;
        a[j * n + j] = Complex::new(ljj, T::zero());
        for v in &mut a[j * n + j + 1..(j + 1) * n] {
            *v = v.scale(inv);
        }
        for c in j + 1..n {
            let f = a[j * n + c].conj();
            let (head, tail) = a.split_at_mut(c * n);
            let src = &head[j * n + c..(j + 1) * n];
            for (dst, s) in tail[c..n].iter_mut().zip(src) {
                *dst -= *s * f;
            }
        }
    }
    for j in 0..n {
        let y = b[j].unscale(a[j * n + j].re);
        b[j] = y;
        let col = &a[j * n + j + 1..(j + 1) * n];
        for (bi, l) in b[j + 1..].iter_mut().zip(col) {
            *bi -= *l * y;
        }
    }
    for j in (0..n).rev() {
        let col = &a[j * n + j + 1..(j + 1) * n];
        let s = col
            .iter()
            .zip(&b[j + 1..])
            .fold(b[j], |acc, (l, bi)| acc - l.conj() * *bi);
        b[j] = s.unscale(a[j * n + j].re);
    }
    true
}

/// Inverse of a Hermitian positive-definite matrix through Cholesky.
pub fn hermitian_pd_inverse<T: Real>(a: &CMat<T>, context: &str) -> Result<CMat<T>> {
    match checked_cholesky(hermitian_part(a)) {
        Some(ch) => Ok(ch.inverse()),
        None => Err(Error::Singular {
            context: context.to_string(),
            condition: hermitian_condition(a),
        }),
    }
}

/// Lower-triangular factor `L` with `A = L L^H` for a Hermitian PSD matrix.
///
/// Falls back to an eigendecomposition square root when Cholesky fails
/// (singular but PSD input, e.g. a zero covariance).
pub fn psd_sqrt<T: Real>(a: &CMat<T>) -> Result<CMat<T>> {
    let h = hermitian_part(a);
    if let Some(ch) = checked_cholesky(h.clone()) {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(h);
    let scale = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
    let floor = -(scale * crate::scalar::lit(1e-9) + crate::scalar::lit(1e-300));
    let mut root = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < floor {
            return Err(Error::NotPositiveDefinite { index: j });
        }
        let s = if lam > T::zero() { lam.sqrt() } else { T::zero() };
        root.column_mut(j).scale_mut(s);
    }
    Ok(root)
}

/// Block-diagonal matrix of square Hermitian blocks.
#[derive(Debug, Clone)]
pub struct BlockDiag<T: Real> {
    pub blocks: Vec<CMat<T>>,
}

impl<T: Real> BlockDiag<T> {
    pub fn new(blocks: Vec<CMat<T>>) -> Self {
        Self { blocks }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn to_dense(&self) -> CMat<T> {
        let n = self.dim();
        let mut out = CMat::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            let k = b.nrows();
            out.view_mut((off, off), (k, k)).copy_from(b);
            off += k;
        }
        out
    }

    pub fn apply(&self, x: &CVec<T>) -> Result<CVec<T>> {
        self.check_len(x)?;
        let mut out = CVec::zeros(x.len());
        let mut off = 0;
        for b in &self.blocks {
            let k = b.nrows();
            let y = b * x.rows(off, k);
            out.rows_mut(off, k).copy_from(&y);
            off += k;
        }
        Ok(out)
    }

    /// Solves `B x = rhs` block by block.
    pub fn solve(&self, rhs: &CVec<T>) -> Result<CVec<T>> {
        block_diag_solve(&self.blocks, rhs)
    }

    fn check_len(&self, x: &CVec<T>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector length {} vs block-diagonal dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Per-block Hermitian positive-definite solve of `blkdiag(blocks) x = rhs`.
///
/// Costs `sum_i n_i^3` instead of `(sum_i n_i)^3`.
pub fn block_diag_solve<T: Real>(blocks: &[CMat<T>], rhs: &CVec<T>) -> Result<CVec<T>> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    if rhs.len() != dim {
        return Err(Error::Shape(format!(
            "rhs length {} vs block-diagonal dimension {dim}",
            rhs.len()
        )));
    }
    let mut out = CVec::zeros(dim);
    let mut off = 0;
    for (index, b) in blocks.iter().enumerate() {
        let k = b.nrows();
        if b.ncols() != k {
            return Err(Error::Shape(format!("block {index} is not square")));
        }
        let ch = checked_cholesky(b.clone()).ok_or(Error::NotPositiveDefinite { index })?;
        let x = ch.solve(&rhs.rows(off, k).into_owned());
        out.rows_mut(off, k).copy_from(&x);
        off += k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type C = Complex<f64>;

    #[test]
    fn in_place_solve_matches_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 2, 5, 17] {
            let g = CMat::<f64>::from_fn(n, n, |_, _| complex_normal(&mut rng));
            let a = &g * g.adjoint() + CMat::identity(n, n) * C::new(0.1, 0.0);
            let b = CVec::<f64>::from_fn(n, |_, _| complex_normal(&mut rng));
            let want = a.clone().lu().solve(&b).unwrap();
            // garbage above the diagonal must be ignored
            let mut work = a.clone();
            for j in 1..n {
                for i in 0..j {
                    work[(i, j)] = C::new(1e6, -3.0);
                }
            }
            let mut x = b.clone();
            assert!(cholesky_solve_in_place(work.as_mut_slice(), n, x.as_mut_slice()));
            assert!((x - want).norm() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn in_place_solve_rejects_indefinite() {
        let mut a = CMat::<f64>::identity(3, 3) * C::new(-1.0, 0.0);
        let mut b = CVec::<f64>::zeros(3);
        assert!(!cholesky_solve_in_place(a.as_mut_slice(), 3, b.as_mut_slice()));
        let mut a = CMat::<f64>::from_row_slice(2, 2, &[C::new(1.0, 0.0), C::new(2.0, 0.0), C::new(2.0, 0.0), C::new(1.0, 0.0)]);
        let mut b = CVec::<f64>::zeros(2);
        assert!(!cholesky_solve_in_place(a.as_mut_slice(), 2, b.as_mut_slice()));
    }
}
