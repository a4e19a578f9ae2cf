use crate::data::{Labels, Task};
use crate::error::{Error, Result};
use crate::model::{predict_head, Head};
use crate::tensor::{gemm, DenseMatrix};

/// Loss over masked nodes with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// `∂loss/∂Z_T`, zero at unmasked columns.
    pub dz: DenseMatrix,
    pub d_head_weight: DenseMatrix,
    pub d_head_bias: Vec<f64>,
}

/// Column-wise softmax, numerically stabilized.
pub fn softmax_columns(logits: &DenseMatrix) -> DenseMatrix {
    let (k, n) = logits.shape();
    let mut out = DenseMatrix::zeros(k, n);
    for j in 0..n {
        let max = (0..k).map(|c| logits[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..k).map(|c| (logits[(c, j)] - max).exp()).sum();
        for c in 0..k {
            out[(c, j)] = (logits[(c, j)] - max).exp() / denom;
        }
    }
    out
}

fn check_mask(mask: &[bool], n: usize) -> Result<usize> {
    if mask.len() != n {
        return Err(Error::dims("loss", format!("mask of length {} for {n} nodes", mask.len())));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        m => Ok(m),
    }
}

/// Mean softmax cross-entropy over masked columns and its gradient with respect to the logits.
pub fn cross_entropy(logits: &DenseMatrix, classes: &[usize], mask: &[bool]) -> Result<(f64, DenseMatrix)> {
    let (k, n) = logits.shape();
    let m = check_mask(mask, n)? as f64;
    if classes.len() != n {
        return Err(Error::dims("cross_entropy", format!("{} labels for {n} nodes", classes.len())));
    }
    let probs = softmax_columns(logits);
    let mut grad = DenseMatrix::zeros(k, n);
    let mut loss = 0.0;
    for j in (0..n).filter(|&j| mask[j]) {
        let y = classes[j];
        if y >= k {
            return Err(Error::InvalidArgument(format!("class {y} with only {k} outputs")));
        }
        // log-softmax directly to stay finite for saturated logits
        let max = (0..k).map(|c| logits[(c, j)]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..k).map(|c| (logits[(c, j)] - max).exp()).sum::<f64>().ln();
        loss += lse - logits[(y, j)];
        for c in 0..k {
            grad[(c, j)] = (probs[(c, j)] - f64::from(c == y)) / m;
        }
    }
    Ok((loss / m, grad))
}

/// Mean squared error over masked columns and all output dimensions.
pub fn mean_squared_error(pred: &DenseMatrix, targets: &DenseMatrix, mask: &[bool]) -> Result<(f64, DenseMatrix)> {
    if pred.shape() != targets.shape() {
        return Err(Error::dims(
            "mean_squared_error",
            format!("predictions {:?} vs targets {:?}", pred.shape(), targets.shape()),
        ));
    }
    let (k, n) = pred.shape();
    let denom = (check_mask(mask, n)? * k) as f64;
    let mut grad = DenseMatrix::zeros(k, n);
    let mut loss = 0.0;
    for j in (0..n).filter(|&j| mask[j]) {
        for c in 0..k {
            let e = pred[(c, j)] - targets[(c, j)];
            loss += e * e;
            grad[(c, j)] = 2.0 * e / denom;
        }
    }
    Ok((loss / denom, grad))
}

/// Task loss of the head's outputs and its gradient with respect to those outputs.
pub fn task_loss(task: &Task, outputs: &DenseMatrix, labels: &Labels, mask: &[bool]) -> Result<(f64, DenseMatrix)> {
    match (task, labels) {
        (Task::Classification { .. }, Labels::Classes(c)) => cross_entropy(outputs, c, mask),
        (Task::Regression { .. }, Labels::Targets(y)) => mean_squared_error(outputs, y, mask),
        _ => Err(Error::InvalidArgument("labels do not match the task".into())),
    }
}

/// Loss of `f_θ(Z_T)` averaged over masked nodes, with gradients for `Z_T` and `θ`.
pub fn loss_and_grad_z(head: &Head, z: &DenseMatrix, labels: &Labels, mask: &[bool], task: &Task) -> Result<LossGrad> {
    let outputs = predict_head(head, z)?;
    let (loss, d_out) = task_loss(task, &outputs, labels, mask)?;
    let mut dz = DenseMatrix::zeros(z.rows(), z.cols());
    gemm(1.0, &head.weight, true, &d_out, false, 0.0, &mut dz);
    let mut d_head_weight = DenseMatrix::zeros(head.weight.rows(), head.weight.cols());
    gemm(1.0, &d_out, false, z, true, 0.0, &mut d_head_weight);
    let d_head_bias = (0..d_out.rows()).map(|c| d_out.row(c).iter().sum()).collect();
    Ok(LossGrad {
        loss,
        dz,
        d_head_weight,
        d_head_bias,
    })
}

/// Fraction of masked nodes whose largest output matches the class label.
pub fn accuracy(outputs: &DenseMatrix, classes: &[usize], mask: &[bool]) -> Result<f64> {
    let m = check_mask(mask, outputs.cols())?;
    let correct = (0..outputs.cols())
        .filter(|&j| mask[j])
        .filter(|&j| {
            let col = outputs.column(j);
            let best = (0..col.len()).fold(0, |b, c| if col[c] > col[b] { c } else { b });
            best == classes[j]
        })
        .count();
    Ok(correct as f64 / m as f64)
}
