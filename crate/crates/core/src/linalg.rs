//! Dense linear algebra helpers on top of nalgebra's partial-pivoting LU.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivots smaller than this in an LU factorization are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

fn checked_lu(a: &DMatrix<f64>, block: &str) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{block}: expected a square system, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let lu = a.clone().lu();
    let pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if a.nrows() > 0 && !(pivot > PIVOT_TOL) {
        return Err(Error::Singular {
            block: block.to_string(),
            pivot,
        });
    }
    Ok(lu)
}

/// Solves `A X = B`; `block` names the system in the error on failure.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, block: &str) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let lu = checked_lu(a, block)?;
    lu.solve(b).ok_or_else(|| Error::Singular {
        block: block.to_string(),
        pivot: 0.0,
    })
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, block: &str) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = checked_lu(a, block)?;
    lu.solve(b).ok_or_else(|| Error::Singular {
        block: block.to_string(),
        pivot: 0.0,
    })
}

pub fn inverse(a: &DMatrix<f64>, block: &str) -> Result<DMatrix<f64>> {
    solve(a, &DMatrix::identity(a.nrows(), a.ncols()), block)
}

/// Induced ∞-norm: the largest absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Stationary distribution of an irreducible stochastic matrix: solves
/// `(Rᵀ - I) g = 0` with the last equation replaced by `1ᵀ g = 1`.
pub fn stationary(r: &DMatrix<f64>, block: &str) -> Result<DVector<f64>> {
    let n = r.nrows();
    let mut a = r.transpose() - DMatrix::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    solve_vec(&a, &b, block)
}

/// Principal submatrix on the given index set (in the given order).
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}
