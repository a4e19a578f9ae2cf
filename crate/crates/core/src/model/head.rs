use super::params::Head;
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

/// `θ_w · Z_T + θ_b` per node column; returns `y_dim × n`.
pub fn predict_head(head: &Head, z: &DenseMatrix) -> Result<DenseMatrix> {
    if head.bias.len() != head.weight.rows() {
        return Err(Error::dims(
            "predict_head",
            format!("bias length {} for {} outputs", head.bias.len(), head.weight.rows()),
        ));
    }
    let mut out = head.weight.matmul(z)?;
    for (k, b) in head.bias.iter().enumerate() {
        out.row_mut(k).iter_mut().for_each(|x| *x += b);
    }
    Ok(out)
}
