//! Pixel-level segmentation metrics and ROC analysis.
//!
//! Any metric whose denominator is zero is reported as 0 (or 1 for the
//! Jaccard index of two empty masks) and flagged in [`Degenerate`].

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn check_binary(name: &str, t: &Tensor4) -> Result<()> {
    match t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        Some(v) => Err(Error::Validation(format!("{name} mask contains non-binary value {v}"))),
        None => Ok(()),
    }
}

/// Maps probabilities to `{0, 1}`; values `>= threshold` are positive.
pub fn binarize(probs: &Tensor4, threshold: f64) -> Tensor4 {
    probs.map(|p| if p >= threshold { 1.0 } else { 0.0 })
}

pub fn confusion(pred: &Tensor4, truth: &Tensor4) -> Result<ConfusionCounts> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "confusion: prediction {} vs truth {}",
            pred.shape(),
            truth.shape()
        )));
    }
    check_binary("predicted", pred)?;
    check_binary("truth", truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p == 1.0, t == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Which metrics hit a zero denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Degenerate {
    pub accuracy: bool,
    pub sensitivity: bool,
    pub specificity: bool,
    pub precision: bool,
    pub f1: bool,
    pub jaccard: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.accuracy || self.sensitivity || self.specificity || self.precision || self.f1 || self.jaccard
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scalar_metrics(c: &ConfusionCounts) -> ScalarMetrics {
    let mut d = Degenerate::default();
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut d.accuracy);
    let sensitivity = ratio(c.tp, c.tp + c.fn_, &mut d.sensitivity);
    let specificity = ratio(c.tn, c.tn + c.fp, &mut d.specificity);
    let precision = ratio(c.tp, c.tp + c.fp, &mut d.precision);
    let f1 = if precision + sensitivity == 0.0 {
        d.f1 = true;
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    ScalarMetrics {
        accuracy,
        sensitivity,
        specificity,
        precision,
        f1,
        degenerate: d,
    }
}

/// `|A ∩ B| / |A ∪ B|` from counts, with the degenerate flag for two empty masks.
pub fn jaccard_from_counts(c: &ConfusionCounts) -> (f64, bool) {
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        (1.0, true)
    } else {
        (c.tp as f64 / union as f64, false)
    }
}

pub fn jaccard(pred: &Tensor4, truth: &Tensor4) -> Result<(f64, bool)> {
    Ok(jaccard_from_counts(&confusion(pred, truth)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve over descending unique scores; tied scores share one threshold.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "roc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Validation(format!("roc: score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (p, n) = (pos as f64, neg as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        let (x1, y1) = (fp as f64 / n, tp as f64 / p);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// Metrics for one image or one pooled set of pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub jaccard: f64,
    /// `None` when the truth contains a single class.
    pub auc: Option<f64>,
    pub counts: ConfusionCounts,
    pub degenerate: Degenerate,
}

impl MetricsReport {
    /// Builds a report from counts and, if available, the pooled scores.
    pub fn from_counts(counts: ConfusionCounts, auc: Option<f64>) -> Self {
        let s = scalar_metrics(&counts);
        let (js, js_flag) = jaccard_from_counts(&counts);
        Self {
            accuracy: s.accuracy,
            sensitivity: s.sensitivity,
            specificity: s.specificity,
            precision: s.precision,
            f1: s.f1,
            jaccard: js,
            auc,
            counts,
            degenerate: Degenerate {
                jaccard: js_flag,
                ..s.degenerate
            },
        }
    }

    pub const CSV_HEADER: &'static str = "name,average,accuracy,sensitivity,specificity,precision,f1,jaccard,auc,tp,fp,tn,fn,\
degenerate_accuracy,degenerate_sensitivity,degenerate_specificity,degenerate_precision,degenerate_f1,degenerate_jaccard,auc_undefined";

    pub fn csv_row(&self, name: &str, average: &str) -> String {
        let d = &self.degenerate;
        let b = |f: bool| if f { 1 } else { 0 };
        format!(
            "{name},{average},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.precision,
            self.f1,
            self.jaccard,
            self.auc.map_or(String::new(), |a| a.to_string()),
            self.counts.tp,
            self.counts.fp,
            self.counts.tn,
            self.counts.fn_,
            b(d.accuracy),
            b(d.sensitivity),
            b(d.specificity),
            b(d.precision),
            b(d.f1),
            b(d.jaccard),
            b(self.auc.is_none()),
        )
    }
}

/// Pooled (micro) and per-image averaged (macro) metrics over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub micro: MetricsReport,
    pub macro_avg: MetricsReport,
    pub per_image: Vec<MetricsReport>,
    /// Pooled ROC curve; `None` when the pooled truth has a single class.
    pub roc: Option<RocCurve>,
}

impl Evaluation {
    pub fn to_csv(&self, name: &str) -> String {
        let mut s = String::new();
        writeln!(s, "{}", MetricsReport::CSV_HEADER).unwrap();
        writeln!(s, "{}", self.micro.csv_row(name, "micro")).unwrap();
        writeln!(s, "{}", self.macro_avg.csv_row(name, "macro")).unwrap();
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn macro_average(reports: &[MetricsReport]) -> MetricsReport {
    let avg = |f: fn(&MetricsReport) -> f64| mean(reports.iter().map(f)).unwrap_or(0.0);
    let mut counts = ConfusionCounts::default();
    reports.iter().for_each(|r| counts.merge(&r.counts));
    let any = |f: fn(&Degenerate) -> bool| reports.iter().any(|r| f(&r.degenerate));
    MetricsReport {
        accuracy: avg(|r| r.accuracy),
        sensitivity: avg(|r| r.sensitivity),
        specificity: avg(|r| r.specificity),
        precision: avg(|r| r.precision),
        f1: avg(|r| r.f1),
        jaccard: avg(|r| r.jaccard),
        auc: mean(reports.iter().filter_map(|r| r.auc)),
        counts,
        degenerate: Degenerate {
            accuracy: any(|d| d.accuracy),
            sensitivity: any(|d| d.sensitivity),
            specificity: any(|d| d.specificity),
            precision: any(|d| d.precision),
            f1: any(|d| d.f1),
            jaccard: any(|d| d.jaccard),
        },
    }
}

fn labels_of(truth: &Tensor4) -> Vec<bool> {
    truth.data().iter().map(|&v| v == 1.0).collect()
}

/// Scores probability maps against binary truth masks.
pub fn evaluate_maps(probs: &[Tensor4], truths: &[Tensor4], threshold: f64) -> Result<Evaluation> {
    if probs.len() != truths.len() || probs.is_empty() {
        return Err(Error::Validation(format!(
            "evaluation needs matching non-empty lists, got {} predictions and {} masks",
            probs.len(),
            truths.len()
        )));
    }
    let mut pooled = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut per_image = Vec::with_capacity(probs.len());
    for (p, t) in probs.iter().zip(truths) {
        let c = confusion(&binarize(p, threshold), t)?;
        pooled.merge(&c);
        let l = labels_of(t);
        let auc = roc_auc(p.data(), &l).ok().map(|r| r.auc);
        per_image.push(MetricsReport::from_counts(c, auc));
        scores.extend_from_slice(p.data());
        labels.extend(l);
    }
    let roc = match roc_auc(&scores, &labels) {
        Ok(r) => Some(r),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    Ok(Evaluation {
        micro: MetricsReport::from_counts(pooled, roc.as_ref().map(|r| r.auc)),
        macro_avg: macro_average(&per_image),
        per_image,
        roc,
    })
}

/// Two-column `fpr,tpr` polyline.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr\n");
    for (x, y) in &curve.points {
        writeln!(s, "{x},{y}").unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn mask(v: &[f64]) -> Tensor4 {
        Tensor4::from_vec(Shape4::new(1, 1, v.len(), 1), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_case() {
        let pred = mask(&[1., 1., 1., 0., 0., 0., 0., 0., 0., 0.]);
        let truth = mask(&[1., 1., 0., 1., 1., 0., 0., 0., 0., 0.]);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, tn: 5, fn_: 2 });
        let s = scalar_metrics(&c);
        assert_eq!(s.accuracy, 0.7);
        assert_eq!(s.sensitivity, 0.5);
        assert!((s.specificity - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-15);
        assert!(!s.degenerate.any());
    }

    #[test]
    fn non_binary_rejected() {
        assert!(matches!(confusion(&mask(&[0.5]), &mask(&[1.0])), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_prediction_is_flagged() {
        let c = ConfusionCounts { tp: 0, fp: 0, tn: 10, fn_: 0 };
        let s = scalar_metrics(&c);
        assert_eq!((s.sensitivity, s.precision, s.f1), (0.0, 0.0, 0.0));
        assert!(s.degenerate.sensitivity && s.degenerate.precision && s.degenerate.f1);
        assert_eq!(jaccard_from_counts(&c), (1.0, true));
    }

    #[test]
    fn auc_small_case_and_ties() {
        let r = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        let tied = roc_auc(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedAuc)));
    }

    #[test]
    fn macro_and_micro_differ_on_unequal_images() {
        let probs = vec![mask(&[1.0, 0.0]), mask(&[1.0, 1.0, 1.0, 1.0])];
        let truth = vec![mask(&[1.0, 0.0]), mask(&[0.0, 0.0, 1.0, 1.0])];
        let e = evaluate_maps(&probs, &truth, 0.5).unwrap();
        assert!((e.micro.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!((e.macro_avg.accuracy - 0.75).abs() < 1e-15);
    }
}
