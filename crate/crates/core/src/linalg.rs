//! Dense complex matrix algebra used by the performance analysis.
//!
//! Block operators follow one fixed convention. A matrix partitioned into
//! `M x M` blocks `X_{ij}` is block-vectorized by scanning block columns
//! left to right and, inside each block column, block rows top to bottom,
//! emitting `vec(X_{ij})` (column stacking) for every block:
//!
//! ```text
//! bvec(X) = col{ vec(X_11), vec(X_21), ..., vec(X_N1), vec(X_12), ... }
//! ```
//!
//! The block Kronecker product `A (x)_b B` places `A_{ij} (x) B_{kl}` at block
//! row `i * rB + k`, block column `j * cB + l` (each block `M^2 x M^2`), where
//! `rB x cB` is the block grid of `B`. With these two definitions
//! `bvec(A C B) = (B^T (x)_b A) bvec(C)` for every conformable `C`.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const EIG_MAX_ITERATIONS: usize = 10_000;

/// Block structure of a matrix partitioned into square `block_size` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPartition {
    pub block_rows: usize,
    pub block_cols: usize,
    pub block_size: usize,
}

impl BlockPartition {
    pub fn of(matrix: &CMatrix, block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Dimension("block size must be positive".into()));
        }
        let (rows, cols) = matrix.shape();
        if rows == 0 || cols == 0 || rows % block_size != 0 || cols % block_size != 0 {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix is not a multiple of block size {block_size}"
            )));
        }
        Ok(Self {
            block_rows: rows / block_size,
            block_cols: cols / block_size,
            block_size,
        })
    }
}

/// Standard Kronecker product.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Block Kronecker product of two matrices partitioned with the same block size.
pub fn block_kron(a: &CMatrix, b: &CMatrix, block_size: usize) -> Result<CMatrix> {
    let pa = BlockPartition::of(a, block_size)?;
    let pb = BlockPartition::of(b, block_size)?;
    let m = block_size;
    let m2 = m * m;
    let mut out = CMatrix::zeros(pa.block_rows * pb.block_rows * m2, pa.block_cols * pb.block_cols * m2);
    for i in 0..pa.block_rows {
        for j in 0..pa.block_cols {
            let a_ij = a.view((i * m, j * m), (m, m));
            if a_ij.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                continue;
            }
            for k in 0..pb.block_rows {
                for l in 0..pb.block_cols {
                    let b_kl = b.view((k * m, l * m), (m, m));
                    let row = (i * pb.block_rows + k) * m2;
                    let col = (j * pb.block_cols + l) * m2;
                    out.view_mut((row, col), (m2, m2)).copy_from(&a_ij.kronecker(&b_kl));
                }
            }
        }
    }
    Ok(out)
}

/// Block vectorization of a square block matrix.
pub fn bvec(sigma: &CMatrix, block_size: usize) -> Result<CVector> {
    let p = BlockPartition::of(sigma, block_size)?;
    if p.block_rows != p.block_cols {
        return Err(Error::Dimension(format!(
            "bvec needs a square matrix, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let m = block_size;
    let mut out = Vec::with_capacity(sigma.len());
    for l in 0..p.block_cols {
        for k in 0..p.block_rows {
            for c in 0..m {
                for r in 0..m {
                    out.push(sigma[(k * m + r, l * m + c)]);
                }
            }
        }
    }
    Ok(CVector::from_vec(out))
}

/// Inverse of [`bvec`] for an `n_blocks x n_blocks` grid.
pub fn unbvec(v: &CVector, n_blocks: usize, block_size: usize) -> Result<CMatrix> {
    let m = block_size;
    let dim = n_blocks * m;
    if v.len() != dim * dim {
        return Err(Error::Dimension(format!(
            "vector of length {} cannot be a bvec of a {dim}x{dim} matrix",
            v.len()
        )));
    }
    let mut out = CMatrix::zeros(dim, dim);
    let mut t = 0;
    for l in 0..n_blocks {
        for k in 0..n_blocks {
            for c in 0..m {
                for r in 0..m {
                    out[(k * m + r, l * m + c)] = v[t];
                    t += 1;
                }
            }
        }
    }
    Ok(out)
}

fn require_square(a: &CMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "{what} needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Eigenvalues of a general complex matrix (complex Schur form). The
/// deflation tolerance is relaxed from 1e-14 up to 1e-10 when the QR
/// iteration stalls.
pub fn eigenvalues(a: &CMatrix) -> Result<CVector> {
    require_square(a, "eigenvalues")?;
    for eps in [1e-14, 1e-12, 1e-10] {
        if let Some(schur) = Schur::try_new(a.clone(), eps, EIG_MAX_ITERATIONS) {
            if let Some(ev) = schur.eigenvalues() {
                return Ok(ev);
            }
        }
    }
    Err(Error::Numerical {
        what: "complex Schur decomposition did not converge".into(),
        iterations: EIG_MAX_ITERATIONS,
    })
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(a: &CMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    if a.nrows() == 1 && a.ncols() == 1 {
        return a[(0, 0)].norm();
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Block maximum norm of a block-diagonal matrix with Hermitian blocks,
/// which equals `max_k rho(Y_k) = rho(Y)`.
pub fn block_maxnorm_diag_hermitian(y: &CMatrix, block_size: usize) -> Result<f64> {
    let p = BlockPartition::of(y, block_size)?;
    if p.block_rows != p.block_cols {
        return Err(Error::Dimension("block-diagonal matrix must be square".into()));
    }
    let m = block_size;
    let scale = y.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut radius: f64 = 0.0;
    for i in 0..p.block_rows {
        for j in 0..p.block_cols {
            let blk = y.view((i * m, j * m), (m, m));
            if i != j {
                if blk.iter().any(|z| z.norm() > 1e-10 * scale) {
                    return Err(Error::Invariant(format!("block ({i},{j}) off the diagonal is non-zero")));
                }
                continue;
            }
            let blk = blk.into_owned();
            let asym = (&blk - blk.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if asym > 1e-10 * scale {
                return Err(Error::Invariant(format!(
                    "diagonal block {i} is not Hermitian (deviation {asym:.3e})"
                )));
            }
            let eig = blk.symmetric_eigenvalues();
            radius = radius.max(eig.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }
    Ok(radius)
}

/// Upper bound on the induced block maximum norm: the largest block-row sum
/// of block spectral norms.
pub fn block_maxnorm_bound(a: &CMatrix, block_size: usize) -> Result<f64> {
    let p = BlockPartition::of(a, block_size)?;
    let m = block_size;
    let mut best: f64 = 0.0;
    for i in 0..p.block_rows {
        let mut row = 0.0;
        for j in 0..p.block_cols {
            let blk = a.view((i * m, j * m), (m, m));
            if blk.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                continue;
            }
            row += spectral_norm(&blk.into_owned());
        }
        best = best.max(row);
    }
    Ok(best)
}

/// Promote a real matrix.
pub fn complexify(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[CMatrix]) -> CMatrix {
    let dim = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMatrix::zeros(dim, dim);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), b.shape()).copy_from(b);
        off += b.nrows();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(rows, cols, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn kron_identity_and_scalar() {
        let i2 = CMatrix::identity(2, 2);
        let i3 = CMatrix::identity(3, 3);
        assert_eq!(kron(&i2, &i3), CMatrix::identity(6, 6));
        let b = lcg_matrix(3, 2, 7);
        let two = CMatrix::from_element(1, 1, c(2.0));
        assert_eq!(kron(&two, &b), &b * c(2.0));
    }

    #[test]
    fn kron_matches_index_formula() {
        let a = lcg_matrix(2, 2, 1);
        let b = lcg_matrix(3, 3, 2);
        let k = kron(&a, &b);
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..3 {
                    for s in 0..3 {
                        assert_eq!(k[(i * 3 + r, j * 3 + s)], a[(i, j)] * b[(r, s)]);
                    }
                }
            }
        }
    }

    #[test]
    fn block_kron_degenerate_cases() {
        let a = lcg_matrix(3, 3, 3);
        let b = lcg_matrix(2, 2, 4);
        assert_eq!(block_kron(&a, &b, 1).unwrap(), kron(&a, &b));
        let i4 = CMatrix::identity(4, 4);
        assert_eq!(block_kron(&i4, &i4, 2).unwrap(), CMatrix::identity(16, 16));
    }

    #[test]
    fn block_kron_rejects_bad_partition() {
        let a = lcg_matrix(3, 3, 3);
        let b = lcg_matrix(4, 4, 4);
        assert!(matches!(block_kron(&a, &b, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn bvec_hand_enumerated_order() {
        // entries 1..16 in row-major reading order
        let x = CMatrix::from_fn(4, 4, |r, col| c((r * 4 + col + 1) as f64));
        let v: Vec<f64> = bvec(&x, 2).unwrap().iter().map(|z| z.re).collect();
        // blocks: X11=[1 2;5 6], X21=[9 10;13 14], X12=[3 4;7 8], X22=[11 12;15 16]
        let expected = [
            1., 5., 2., 6., 9., 13., 10., 14., 3., 7., 4., 8., 11., 15., 12., 16.,
        ];
        assert_eq!(v, expected);
        assert_eq!(unbvec(&bvec(&x, 2).unwrap(), 2, 2).unwrap(), x);
    }

    #[test]
    fn bvec_scalar_blocks_is_vec() {
        let x = lcg_matrix(3, 3, 9);
        let v = bvec(&x, 1).unwrap();
        let flat: Vec<Complex64> = x.iter().copied().collect(); // column-major
        assert_eq!(v.as_slice(), flat.as_slice());
        assert!(bvec(&CMatrix::zeros(4, 4), 2).unwrap().iter().all(|z| z.norm() == 0.0));
        assert!(bvec(&lcg_matrix(4, 2, 1), 2).is_err());
    }

    #[test]
    fn bvec_identity_for_random_blocks() {
        let a = lcg_matrix(4, 4, 11);
        let b = lcg_matrix(4, 4, 12);
        let kb = block_kron(&b.transpose(), &a, 2).unwrap();
        for seed in 0..5 {
            let cm = lcg_matrix(4, 4, 100 + seed);
            let lhs = bvec(&(&a * &cm * &b), 2).unwrap();
            let rhs = &kb * bvec(&cm, 2).unwrap();
            assert!((lhs - rhs).norm() <= 1e-10 * cm.norm());
        }
    }

    #[test]
    fn spectral_radius_simple() {
        assert!((spectral_radius(&CMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.5), c(-0.2)]));
        assert!((spectral_radius(&d).unwrap() - 0.5).abs() < 1e-12);
        assert!(spectral_radius(&lcg_matrix(2, 3, 1)).is_err());
    }

    #[test]
    fn hermitian_block_norm() {
        assert!((block_maxnorm_diag_hermitian(&CMatrix::identity(4, 4), 2).unwrap() - 1.0).abs() < 1e-12);
        let y = CMatrix::from_diagonal(&CVector::from_vec(vec![c(2.0), c(1.0), c(3.0), c(0.5)]));
        assert!((block_maxnorm_diag_hermitian(&y, 2).unwrap() - 3.0).abs() < 1e-12);
        let mut bad = CMatrix::identity(4, 4);
        bad[(0, 1)] = c(1.0);
        assert!(matches!(block_maxnorm_diag_hermitian(&bad, 2), Err(Error::Invariant(_))));
        let mut off = CMatrix::identity(4, 4);
        off[(0, 3)] = c(1.0);
        assert!(matches!(block_maxnorm_diag_hermitian(&off, 2), Err(Error::Invariant(_))));
    }

    #[test]
    fn maxnorm_bound_basics() {
        assert!((block_maxnorm_bound(&CMatrix::identity(4, 4), 2).unwrap() - 1.0).abs() < 1e-12);
        // left-stochastic: columns sum to one, so the transpose has unit row sums
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, 0.5, 0.3, 0.4, 0.0, 0.5, 0.6]);
        let at = complexify(&a.transpose());
        assert!((block_maxnorm_bound(&at, 1).unwrap() - 1.0).abs() < 1e-12);
    }
}
