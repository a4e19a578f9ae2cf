//! Task losses and metrics, plus smoothness diagnostics of node embeddings.

mod loss;

pub use loss::{
    accuracy, cross_entropy, loss_and_grad_z, mean_squared_error, softmax_columns, task_loss, LossGrad,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

/// One named metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<Option<f64>>>,
    /// Samples that entered the value.
    pub count: usize,
    /// Samples left out (zero MAPE targets, zero-norm MAD columns).
    #[serde(default)]
    pub excluded: usize,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, count: usize) -> Self {
        MetricReport {
            name: name.into(),
            value,
            per_class: None,
            count,
            excluded: 0,
        }
    }

    pub const CSV_HEADER: &'static str = "name,value,count,excluded";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.name, self.value, self.count, self.excluded)
    }
}

/// Renders reports as CSV with a header line.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Rank-statistic AUC of `scores` for positives against negatives; ties count 0.5.
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tie group
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Macro one-vs-rest ROC AUC. `scores` is `num_classes × n`; classes absent
/// from `labels` are skipped.
pub fn roc_auc_macro(scores: &DenseMatrix, labels: &[usize]) -> Result<MetricReport> {
    if scores.cols() != labels.len() {
        return Err(Error::dims(
            "roc_auc_macro",
            format!("{} score columns for {} labels", scores.cols(), labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= scores.rows()) {
        return Err(Error::InvalidArgument(format!("class {bad} with {} score rows", scores.rows())));
    }
    let k = scores.rows();
    let mut present = vec![0usize; k];
    labels.iter().for_each(|&y| present[y] += 1);
    if present.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::UndefinedMetric("ROC AUC needs at least two classes present".into()));
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            (present[c] > 0).then(|| {
                let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                binary_auc(scores.row(c), &positive)
            })
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mut report = MetricReport::new(
        "roc_auc",
        defined.iter().sum::<f64>() / defined.len() as f64,
        labels.len(),
    );
    report.per_class = Some(per_class);
    Ok(report)
}

/// Mean absolute percentage error in percent; zero targets are excluded and counted.
pub fn mape(predictions: &[f64], targets: &[f64]) -> Result<MetricReport> {
    if predictions.len() != targets.len() {
        return Err(Error::dims(
            "mape",
            format!("{} predictions for {} targets", predictions.len(), targets.len()),
        ));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, y) in predictions.iter().zip(targets) {
        if *y != 0.0 {
            sum += ((p - y) / y).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("MAPE with no nonzero targets".into()));
    }
    let mut report = MetricReport::new("mape", 100.0 * sum / count as f64, count);
    report.excluded = targets.len() - count;
    Ok(report)
}

fn column_dist2(z: &DenseMatrix, i: usize, j: usize) -> f64 {
    (0..z.rows()).map(|r| (z[(r, i)] - z[(r, j)]).powi(2)).sum()
}

fn check_embedding(op: &'static str, z: &DenseMatrix, a: &SparseMatrix) -> Result<()> {
    if !a.is_square() || a.rows() != z.cols() {
        return Err(Error::dims(
            op,
            format!("embedding with {} columns against {}x{} adjacency", z.cols(), a.rows(), a.cols()),
        ));
    }
    Ok(())
}

/// `sqrt((1/n) Σ_i Σ_{j∈N(i)} ‖Z_i − Z_j‖²)` over the nonzero adjacency entries.
pub fn dirichlet_energy(z: &DenseMatrix, a: &SparseMatrix) -> Result<f64> {
    check_embedding("dirichlet_energy", z, a)?;
    let total: f64 = a
        .triplets()
        .filter(|&(_, _, w)| w != 0.0)
        .map(|(i, j, _)| column_dist2(z, i, j))
        .sum();
    Ok((total / z.cols() as f64).sqrt())
}

/// Mean cosine distance between embeddings of connected nodes; zero-norm
/// columns are excluded.
pub fn mad(z: &DenseMatrix, a: &SparseMatrix) -> Result<MetricReport> {
    check_embedding("mad", z, a)?;
    let norms: Vec<f64> = (0..z.cols())
        .map(|j| (0..z.rows()).map(|r| z[(r, j)].powi(2)).sum::<f64>().sqrt())
        .collect();
    let (mut sum, mut count, mut excluded) = (0.0, 0usize, 0usize);
    for (i, j, w) in a.triplets() {
        if i == j || w == 0.0 {
            continue;
        }
        if norms[i] == 0.0 || norms[j] == 0.0 {
            excluded += 1;
            continue;
        }
        let dot: f64 = (0..z.rows()).map(|r| z[(r, i)] * z[(r, j)]).sum();
        sum += 1.0 - dot / (norms[i] * norms[j]);
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("MAD with no connected nonzero embeddings".into()));
    }
    let mut report = MetricReport::new("mad", sum / count as f64, count);
    report.excluded = excluded;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::clique;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], positive: &[bool]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &pi) in positive.iter().enumerate() {
            for (j, &pj) in positive.iter().enumerate() {
                if pi && !pj {
                    pairs += 1.0;
                    total += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        total / pairs
    }

    fn binary_scores(p1: &[f64]) -> DenseMatrix {
        DenseMatrix::from_fn(2, p1.len(), |c, j| if c == 1 { p1[j] } else { 1.0 - p1[j] })
    }

    #[test]
    fn auc_cases() {
        let labels = [0, 0, 1, 1];
        assert_eq!(roc_auc_macro(&binary_scores(&[0.1, 0.2, 0.8, 0.9]), &labels).unwrap().value, 1.0);
        assert_eq!(roc_auc_macro(&binary_scores(&[0.9, 0.8, 0.2, 0.1]), &labels).unwrap().value, 0.0);
        let s = [0.1, 0.4, 0.35, 0.8];
        let got = roc_auc_macro(&binary_scores(&s), &labels).unwrap().value;
        assert_eq!(got, 0.75);
        assert_eq!(got, brute_auc(&s, &[false, false, true, true]));
        assert!(matches!(
            roc_auc_macro(&binary_scores(&[0.1, 0.2]), &[1, 1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_skips_absent_classes() {
        let scores = DenseMatrix::from_rows(&[[0.9, 0.1, 0.2], [0.05, 0.8, 0.1], [0.05, 0.1, 0.7]]).unwrap();
        let report = roc_auc_macro(&scores, &[0, 1, 1]).unwrap();
        let per = report.per_class.unwrap();
        assert!(per[2].is_none());
        assert_eq!(report.value, 1.0);
    }

    #[test]
    fn mape_cases() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(mape(&[1.0], &[2.0]).unwrap().value, 50.0);
        assert!((mape(&[1.1, 1.8], &[1.0, 2.0]).unwrap().value - 10.0).abs() < 1e-12);
        let r = mape(&[1.0, 5.0], &[2.0, 0.0]).unwrap();
        assert_eq!((r.value, r.count, r.excluded), (50.0, 1, 1));
        assert!(mape(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn dirichlet_cases() {
        let k10 = clique(10);
        assert_eq!(dirichlet_energy(&DenseMatrix::filled(3, 10, 2.0), &k10).unwrap(), 0.0);
        let two = SparseMatrix::from_undirected_edges(2, [(0, 1, 1.0)]).unwrap();
        let z = DenseMatrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!((dirichlet_energy(&z, &two).unwrap() - 1.0).abs() < 1e-15);
        let de = dirichlet_energy(&DenseMatrix::identity(10), &k10).unwrap();
        assert!((de - 18f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mad_cases() {
        let k10 = clique(10);
        assert!(mad(&DenseMatrix::filled(3, 10, 2.0), &k10).unwrap().value.abs() < 1e-12);
        assert!((mad(&DenseMatrix::identity(10), &k10).unwrap().value - 1.0).abs() < 1e-15);
        let two = SparseMatrix::from_undirected_edges(2, [(0, 1, 1.0)]).unwrap();
        let z = DenseMatrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!((mad(&z, &two).unwrap().value - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert!(matches!(mad(&DenseMatrix::zeros(2, 2), &two), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn reports_serialize() {
        let r = mape(&[1.0, 5.0], &[2.0, 0.0]).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&json).unwrap(), r);
        assert_eq!(reports_to_csv(&[r]), "name,value,count,excluded\nmape,50,1,1\n");
    }

    fn embedding(n: usize) -> impl Strategy<Value = DenseMatrix> {
        proptest::collection::vec(-3.0f64..3.0, 3 * n).prop_map(move |v| DenseMatrix::from_vec(3, n, v).unwrap())
    }

    proptest! {
        #[test]
        fn auc_matches_pairs_and_monotone_transforms(
            s in proptest::collection::vec(0.0f64..1.0, 8),
            y in proptest::collection::vec(0usize..2, 8),
        ) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            let base = roc_auc_macro(&binary_scores(&s), &y).unwrap().value;
            let pos: Vec<bool> = y.iter().map(|&c| c == 1).collect();
            prop_assert!((base - brute_auc(&s, &pos)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp()).collect();
            let s1 = DenseMatrix::from_fn(2, 8, |c, j| if c == 1 { t[j] } else { -t[j] });
            prop_assert!((roc_auc_macro(&s1, &y).unwrap().value - base).abs() < 1e-12);
        }

        #[test]
        fn dirichlet_shift_and_scale(z in embedding(6), shift in -2.0f64..2.0, alpha in 0.0f64..3.0) {
            let a = clique(6);
            let de = dirichlet_energy(&z, &a).unwrap();
            let shifted = z.map(|v| v + shift);
            prop_assert!((dirichlet_energy(&shifted, &a).unwrap() - de).abs() < 1e-9);
            prop_assert!((dirichlet_energy(&z.scaled(alpha), &a).unwrap() - alpha * de).abs() < 1e-9);
        }

        #[test]
        fn mad_column_scale_invariant(z in embedding(5), scales in proptest::collection::vec(0.1f64..5.0, 5)) {
            let a = clique(5);
            prop_assume!((0..5).all(|j| z.column(j).iter().any(|v| v.abs() > 1e-3)));
            let scaled = DenseMatrix::from_fn(3, 5, |i, j| z[(i, j)] * scales[j]);
            let m = mad(&z, &a).unwrap().value;
            prop_assert!((mad(&scaled, &a).unwrap().value - m).abs() < 1e-9);
        }
    }
}
