//! Dense and sparse linear algebra used by the model: the `Z·A` graph
//! propagation kernel, the Kronecker-structured layer operator, matrix
//! norms and the projection that keeps layer weights inside the
//! well-posedness region.

mod dense;
mod sparse;

pub use dense::{gemm, DenseMatrix};
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};

/// Default relative tolerance for [`operator_norm`].
pub const OPNORM_TOL: f64 = 1e-13;
/// Default iteration cap for [`operator_norm`].
pub const OPNORM_MAX_ITER: usize = 200_000;

/// `Z · A` for dense `Z` (d×n) and sparse `A` (n×m).
pub fn spmm(z: &DenseMatrix, a: &SparseMatrix) -> Result<DenseMatrix> {
    if z.cols() != a.rows() {
        return Err(Error::dims(
            "spmm",
            format!("{}x{} times {}x{}", z.rows(), z.cols(), a.rows(), a.cols()),
        ));
    }
    let mut out = DenseMatrix::zeros(z.rows(), a.cols());
    for i in 0..z.rows() {
        let zrow = z.row(i);
        let orow = out.row_mut(i);
        for (k, &zik) in zrow.iter().enumerate() {
            if zik == 0.0 {
                continue;
            }
            for (j, v) in a.row(k) {
                orow[j] += zik * v;
            }
        }
    }
    Ok(out)
}

/// `Z · Aᵀ` for dense `Z` (d×m) and sparse `A` (n×m).
pub fn spmm_transpose(z: &DenseMatrix, a: &SparseMatrix) -> Result<DenseMatrix> {
    if z.cols() != a.cols() {
        return Err(Error::dims(
            "spmm_transpose",
            format!("{}x{} times ({}x{})ᵀ", z.rows(), z.cols(), a.rows(), a.cols()),
        ));
    }
    let mut out = DenseMatrix::zeros(z.rows(), a.rows());
    for i in 0..z.rows() {
        let zrow = z.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = a.row(j).map(|(k, v)| zrow[k] * v).sum();
        }
    }
    Ok(out)
}

/// The layer operator `M = Aᵀ ⊗ W`, acting on column-vectorized `d×n`
/// embeddings. It is only ever applied as `W·Z·A`.
#[derive(Debug, Clone, Copy)]
pub struct LinearOperatorMt<'a> {
    pub weight: &'a DenseMatrix,
    pub adjacency: &'a SparseMatrix,
}

impl<'a> LinearOperatorMt<'a> {
    pub fn new(weight: &'a DenseMatrix, adjacency: &'a SparseMatrix) -> Result<Self> {
        if weight.rows() != weight.cols() {
            return Err(Error::NotSquare {
                rows: weight.rows(),
                cols: weight.cols(),
            });
        }
        if !adjacency.is_square() {
            return Err(Error::NotSquare {
                rows: adjacency.rows(),
                cols: adjacency.cols(),
            });
        }
        Ok(Self { weight, adjacency })
    }

    fn check(&self, z: &DenseMatrix, op: &'static str) -> Result<()> {
        if z.rows() != self.weight.cols() || z.cols() != self.adjacency.rows() {
            return Err(Error::dims(
                op,
                format!(
                    "embedding {}x{} against weight {}x{} and adjacency {}x{}",
                    z.rows(),
                    z.cols(),
                    self.weight.rows(),
                    self.weight.cols(),
                    self.adjacency.rows(),
                    self.adjacency.cols()
                ),
            ));
        }
        Ok(())
    }

    /// `W · Z · A`, i.e. `unvec((Aᵀ ⊗ W) vec(Z))`.
    pub fn apply(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(z, "kron_apply")?;
        spmm(&self.weight.matmul(z)?, self.adjacency)
    }

    /// `Wᵀ · Z · Aᵀ`, the adjoint `unvec((A ⊗ Wᵀ) vec(Z))`.
    pub fn apply_transpose(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.check(z, "kron_apply_transpose")?;
        let mut wz = DenseMatrix::zeros(z.rows(), z.cols());
        gemm(1.0, self.weight, true, z, false, 0.0, &mut wz);
        spmm_transpose(&wz, self.adjacency)
    }
}

pub fn kron_apply(op: &LinearOperatorMt<'_>, z: &DenseMatrix) -> Result<DenseMatrix> {
    op.apply(z)
}

/// Induced ∞-norm: largest absolute row sum.
pub fn infinity_norm(w: &DenseMatrix) -> f64 {
    (0..w.rows())
        .map(|i| w.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn operator_norm(a: &SparseMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power iteration tolerance must be positive, got {tol}"
        )));
    }
    let n = a.cols();
    if n == 0 || a.values().iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    // Non-uniform start so that no common eigenvector pattern is missed.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * (((i * 7919) % 13) as f64 / 13.0))
        .collect();
    normalize(&mut x);
    let mut estimate = 0.0;
    for iter in 0..max_iter {
        let y = a.matvec(&x);
        let sigma = norm2(&y);
        let mut next = a.matvec_transpose(&y);
        let nrm = norm2(&next);
        if nrm == 0.0 {
            // Start vector in the null space of A: the remaining spectrum is
            // probed from a fresh basis direction.
            x = vec![0.0; n];
            x[iter % n] = 1.0;
            continue;
        }
        next.iter_mut().for_each(|v| *v /= nrm);
        x = next;
        if iter > 0 && (sigma - estimate).abs() <= tol * sigma {
            return Ok(sigma.max(estimate));
        }
        estimate = sigma;
    }
    Err(Error::PowerIteration {
        iterations: max_iter,
        estimate,
    })
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm2(x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

/// Euclidean projection of `x` onto `{y : ‖y‖₁ ≤ radius}` (sort and threshold).
pub fn project_l1_ball(x: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    // Accept summation rounding so that projecting twice is a no-op.
    if l1 <= radius * (1.0 + 4.0 * f64::EPSILON * x.len() as f64) {
        return x.to_vec();
    }
    let mut u: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - radius) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    x.iter()
        .map(|&v| v.signum() * (v.abs() - theta).max(0.0))
        .collect()
}

/// Euclidean projection onto `{M : ‖M‖_∞ ≤ radius}`: each row is projected
/// onto the ℓ1 ball independently.
pub fn project_linf_ball(w: &DenseMatrix, radius: f64) -> Result<DenseMatrix> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "projection radius must be positive, got {radius}"
        )));
    }
    let mut out = w.clone();
    for i in 0..w.rows() {
        let p = project_l1_ball(w.row(i), radius);
        out.row_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}
