//! Sequence-level metrics: ROC AUC, accuracy, sensitivity/specificity, F1
//! variants and the 3×3 confusion matrix.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Area under the ROC curve as the normalized Mann–Whitney U statistic:
/// the fraction of (positive, negative) pairs ranked correctly, ties
/// counting one half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: positive.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the U statistic, kept integral so the result is exact
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == v {
            if positive[order[i]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            i += 1;
        }
        twice_u += 2 * pos_here * neg_below + pos_here * neg_here;
        neg_below += neg_here;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Rows are the true class, columns the predicted class, both in
/// (Yes, No, Neither) order.
pub type ConfusionMatrix = [[u64; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Recall of Yes.
    pub sensitivity: f64,
    /// Recall of the merged No/Neither class.
    pub specificity: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class_f1: [f64; 3],
    pub support: [u64; 3],
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics for single-label 3-class predictions. A class with no true and
/// no predicted items has F1 = 0 and still counts toward the macro average;
/// any other zero denominator also yields 0.
pub fn classification_metrics(predicted: &[Label], truth: &[Label]) -> Result<ClassificationMetrics> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let mut cm: ConfusionMatrix = [[0; 3]; 3];
    for (p, t) in predicted.iter().zip(truth) {
        cm[t.index()][p.index()] += 1;
    }
    let n = truth.len() as u64;
    let correct: u64 = (0..3).map(|k| cm[k][k]).sum();
    let support: [u64; 3] = [0, 1, 2].map(|k| cm[k].iter().sum());
    let predicted_count: [u64; 3] = [0, 1, 2].map(|k| (0..3).map(|t| cm[t][k]).sum());

    let per_class_f1 = [0, 1, 2].map(|k| {
        let denom = support[k] + predicted_count[k];
        ratio(2 * cm[k][k], denom)
    });

    // micro-averaged precision and recall over all classes coincide
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for k in 0..3 {
        tp += cm[k][k];
        fp += predicted_count[k] - cm[k][k];
        fn_ += support[k] - cm[k][k];
    }
    let micro_f1 = ratio(2 * tp, 2 * tp + fp + fn_);

    let yes = Label::Yes.index();
    let not_yes_truth = n - support[yes];
    let not_yes_correct: u64 = [Label::No, Label::Neither]
        .iter()
        .map(|t| cm[t.index()][Label::No.index()] + cm[t.index()][Label::Neither.index()])
        .sum();

    Ok(ClassificationMetrics {
        n: truth.len(),
        accuracy: ratio(correct, n),
        sensitivity: ratio(cm[yes][yes], support[yes]),
        specificity: ratio(not_yes_correct, not_yes_truth),
        micro_f1,
        macro_f1: per_class_f1.iter().sum::<f64>() / 3.0,
        weighted_f1: (0..3)
            .map(|k| per_class_f1[k] * support[k] as f64)
            .sum::<f64>()
            / n as f64,
        per_class_f1,
        support,
        confusion: cm,
    })
}

pub fn argmax(p: &[f64; 3]) -> Label {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    Label::from_index(best)
}

/// Holdout report: AUC of P(Yes), Yes-vs-rest sensitivity/specificity at the
/// decision threshold, and 3-class metrics from the argmax prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub n: usize,
    pub auc: f64,
    pub decision_threshold: f64,
    /// Yes-vs-rest accuracy at the decision threshold.
    pub binary_accuracy: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub argmax: ClassificationMetrics,
}

pub fn metric_report(
    model: &str,
    probabilities: &[[f64; 3]],
    truth: &[Label],
    decision_threshold: f64,
) -> Result<MetricReport> {
    if probabilities.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if probabilities.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: probabilities.len(),
        });
    }
    let yes_scores: Vec<f64> = probabilities.iter().map(|p| p[0]).collect();
    let is_yes: Vec<bool> = truth.iter().map(|l| l.is_yes()).collect();
    let auc = roc_auc(&yes_scores, &is_yes)?;

    let argmax_pred: Vec<Label> = probabilities.iter().map(argmax).collect();
    let m = classification_metrics(&argmax_pred, truth)?;

    let called: Vec<bool> = yes_scores.iter().map(|&s| s >= decision_threshold).collect();
    let (mut tp, mut tn, mut pos, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (&c, &t) in called.iter().zip(&is_yes) {
        if t {
            pos += 1;
            tp += u64::from(c);
        } else {
            neg += 1;
            tn += u64::from(!c);
        }
    }
    Ok(MetricReport {
        model: model.to_string(),
        n: truth.len(),
        auc,
        decision_threshold,
        binary_accuracy: ratio(tp + tn, pos + neg),
        accuracy: m.accuracy,
        sensitivity: ratio(tp, pos),
        specificity: ratio(tn, neg),
        micro_f1: m.micro_f1,
        macro_f1: m.macro_f1,
        weighted_f1: m.weighted_f1,
        argmax: m,
    })
}

/// Text table with the metric columns followed by the confusion matrix.
pub fn render_metric_report(reports: &[MetricReport]) -> String {
    let mut out = format!(
        "{:<12} {:>6} {:>9} {:>12} {:>12} {:>9} {:>9} {:>12}\n",
        "Model", "AUC", "Accuracy", "Sensitivity", "Specificity", "Micro F1", "Macro F1", "Weighted F1"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>6.2} {:>9.2} {:>12.2} {:>12.2} {:>9.2} {:>9.2} {:>12.2}\n",
            r.model, r.auc, r.accuracy, r.sensitivity, r.specificity, r.micro_f1, r.macro_f1, r.weighted_f1
        ));
    }
    for r in reports {
        out.push_str(&format!(
            "\n{} (n = {}, decision threshold {:.4}, Yes-vs-rest accuracy {:.4})\n",
            r.model, r.n, r.decision_threshold, r.binary_accuracy
        ));
        out.push_str(&render_confusion(&r.argmax.confusion));
    }
    out
}

pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let mut out = format!("{:<14}{:>9}{:>9}{:>9}\n", "truth \\ pred", "Yes", "No", "Neither");
    for (k, row) in cm.iter().enumerate() {
        out.push_str(&format!(
            "{:<14}{:>9}{:>9}{:>9}\n",
            Label::from_index(k).to_string(),
            row[0],
            row[1],
            row[2]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    #[test]
    fn identical_predictions_score_one() {
        let t = [Yes, No, Neither, Yes, No, Neither, Neither];
        let m = classification_metrics(&t, &t).unwrap();
        for v in [m.accuracy, m.sensitivity, m.specificity, m.micro_f1, m.macro_f1, m.weighted_f1] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(m.confusion, [[2, 0, 0], [0, 2, 0], [0, 0, 3]]);
    }

    #[test]
    fn ten_items_against_hand_filled_matrix() {
        let truth = [Yes, Yes, Yes, Yes, No, No, No, Neither, Neither, Neither];
        let pred = [Yes, Yes, Yes, No, No, No, Yes, Neither, No, Neither];
        let m = classification_metrics(&pred, &truth).unwrap();
        // truth\pred  Yes No Ntr
        //   Yes        3  1  0
        //   No         1  2  0
        //   Neither    0  1  2
        assert_eq!(m.confusion, [[3, 1, 0], [1, 2, 0], [0, 1, 2]]);
        assert_eq!(m.accuracy, 0.7);
        assert_eq!(m.sensitivity, 0.75);
        // not-Yes truth: 6 items, 5 predicted not-Yes
        assert_eq!(m.specificity, 5.0 / 6.0);
        // F1: Yes 2·3/(4+4) = 0.75; No 2·2/(3+4) = 4/7; Neither 2·2/(3+2) = 0.8
        let f1 = [0.75, 4.0 / 7.0, 0.8];
        for k in 0..3 {
            assert!((m.per_class_f1[k] - f1[k]).abs() < 1e-15);
        }
        assert!((m.macro_f1 - (0.75 + 4.0 / 7.0 + 0.8) / 3.0).abs() < 1e-15);
        assert!((m.weighted_f1 - (4.0 * 0.75 + 3.0 * 4.0 / 7.0 + 3.0 * 0.8) / 10.0).abs() < 1e-15);
        assert!((m.micro_f1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn absent_class_f1_is_zero() {
        let t = [Yes, No, Yes];
        let m = classification_metrics(&t, &t).unwrap();
        assert_eq!(m.per_class_f1, [1.0, 1.0, 0.0]);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.weighted_f1, 1.0);
    }

    #[test]
    fn metric_errors() {
        assert!(classification_metrics(&[Yes], &[Yes, No]).is_err());
        assert!(classification_metrics(&[], &[]).is_err());
        assert!(metric_report("x", &[], &[], 0.5).is_err());
    }

    #[test]
    fn report_uses_threshold_and_argmax() {
        let probs = [[0.4, 0.5, 0.1], [0.2, 0.7, 0.1], [0.8, 0.1, 0.1], [0.1, 0.1, 0.8]];
        let truth = [Yes, No, Yes, Neither];
        let r = metric_report("TF-IDF", &probs, &truth, 0.3).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.sensitivity, 1.0);
        assert_eq!(r.specificity, 1.0);
        // argmax misses the first Yes
        assert_eq!(r.accuracy, 0.75);
        let text = render_metric_report(&[r]);
        assert!(text.starts_with("Model"));
        assert!(text.contains("truth \\ pred"));
    }
}
