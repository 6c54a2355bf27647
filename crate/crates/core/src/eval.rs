//! Identification metrics: confusion matrix, accuracy, micro one-vs-rest
//! FAR/FRR, EER and rank-k identification rates, plus CSV/table reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Ranks reported as IR@1 ..= IR@MAX_RANK.
pub const MAX_RANK: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

/// `counts[t * classes + p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<(), EvalError> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(EvalError::LabelOutOfRange { label, classes: self.classes });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&t| t != c).map(|t| self.get(t, c)).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }

    pub fn true_negatives(&self, c: usize) -> u64 {
        self.total() - self.get(c, c) - self.false_positives(c) - self.false_negatives(c)
    }

    /// Recall of class `c`, or `None` when it has no samples.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let support: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (support > 0).then(|| self.get(c, c) as f64 / support as f64)
    }
}

pub fn confusion(predicted: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix, EvalError> {
    if predicted.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predicted.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in predicted.iter().zip(labels) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// All rates are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: usize,
    pub total: u64,
    pub accuracy: f64,
    pub far: f64,
    pub frr: f64,
    pub eer: f64,
    /// IR@1 ..= IR@5; empty when no scores were supplied.
    pub ir_at_k: Vec<f64>,
    pub loss: f64,
    pub per_class_recall: Vec<Option<f64>>,
}

pub fn equal_error_rate(far: f64, frr: f64) -> f64 {
    (far + frr) / 2.0
}

pub fn metrics(cm: &ConfusionMatrix, mean_loss: f64) -> Result<EvalReport, EvalError> {
    if cm.classes < 2 {
        return Err(EvalError::TooFewClasses(cm.classes));
    }
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let accuracy = cm.trace() as f64 / total as f64;
    let (mut fp, mut negatives) = (0u64, 0u64);
    for c in 0..cm.classes {
        let f = cm.false_positives(c);
        let tn = total - cm.get(c, c) - f - cm.false_negatives(c);
        fp += f;
        negatives += f + tn;
    }
    let far = fp as f64 / negatives as f64;
    let frr = 1.0 - accuracy;
    Ok(EvalReport {
        classes: cm.classes,
        total,
        accuracy,
        far,
        frr,
        eer: equal_error_rate(far, frr),
        ir_at_k: Vec::new(),
        loss: mean_loss,
        per_class_recall: (0..cm.classes).map(|c| cm.recall(c)).collect(),
    })
}

/// Zero-based rank of the true class: classes scored higher, or scored
/// equal at a lower index, come first.
pub fn true_class_rank(scores: &[f32], truth: usize) -> usize {
    let s = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > s || (v == s && i < truth))
        .count()
}

/// Fraction of samples whose true class ranks within the top `k`, for
/// `k = 1..=max_rank`.
pub fn rank_k_rates(scores: &[Vec<f32>], labels: &[usize], max_rank: usize) -> Vec<f64> {
    let mut hits = vec![0usize; max_rank];
    for (s, &t) in scores.iter().zip(labels) {
        let r = true_class_rank(s, t);
        for h in hits.iter_mut().skip(r) {
            *h += 1;
        }
    }
    let n = labels.len().max(1) as f64;
    hits.into_iter().map(|h| h as f64 / n).collect()
}

/// Full report from per-sample probability vectors.
pub fn evaluate_scores(scores: &[Vec<f32>], labels: &[usize], classes: usize, mean_loss: f64) -> Result<EvalReport, EvalError> {
    let predicted: Vec<usize> = scores.iter().map(|s| top_class(s)).collect();
    let cm = confusion(&predicted, labels, classes)?;
    let mut report = metrics(&cm, mean_loss)?;
    report.ir_at_k = rank_k_rates(scores, labels, MAX_RANK);
    Ok(report)
}

fn top_class(s: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in s.iter().enumerate() {
        if v > s[best] {
            best = i;
        }
    }
    best
}

/// Percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// `x` cut (not rounded) to `decimals` places, with a small guard against
/// representation error.
pub fn truncate_decimals(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s + 1e-9).floor() / s
}

/// One experiment in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub database: String,
    pub bpf: usize,
    pub epochs: usize,
    pub report: EvalReport,
}

pub const CSV_HEADER: [&str; 13] = [
    "database", "bpf", "epochs", "loss", "accuracy", "FAR", "FRR", "EER", "IR@1", "IR@2", "IR@3", "IR@4", "IR@5",
];

fn row_fields(r: &ReportRow) -> Vec<String> {
    let rep = &r.report;
    let mut f = vec![
        r.database.clone(),
        r.bpf.to_string(),
        r.epochs.to_string(),
        format!("{:.4}", rep.loss),
        pct(rep.accuracy),
        pct(rep.far),
        pct(rep.frr),
        pct(rep.eer),
    ];
    for k in 0..MAX_RANK {
        f.push(rep.ir_at_k.get(k).map_or(String::new(), |&v| pct(v)));
    }
    f
}

/// CSV text: `# key=value` lines carrying the run configuration, then a
/// header row and one row per experiment.
pub fn report_csv_string(rows: &[ReportRow], config: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in config {
        let _ = writeln!(out, "# {k}={v}");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(row_fields(r)).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields"));
    out
}

pub fn report_csv(rows: &[ReportRow], config: &[(String, String)], path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report_csv_string(rows, config)).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Read back the `# key=value` config lines and the data rows of a report.
pub fn read_report_csv(text: &str) -> Result<(Vec<(String, String)>, Vec<Vec<String>>), EvalError> {
    let config = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| EvalError::Io {
            path: PathBuf::from("<report>"),
            reason: e.to_string(),
        })?;
    Ok((config, rows))
}

/// Plain-text table with the columns of the CSV report.
pub fn report_table(rows: &[ReportRow]) -> String {
    let headers = [
        "Database", "bpf", "Epochs", "Loss", "Accuracy (%)", "FAR (%)", "FRR (%)", "EER (%)", "IR@1", "IR@2", "IR@3",
        "IR@4", "IR@5",
    ];
    let body: Vec<Vec<String>> = rows.iter().map(row_fields).collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        padded.join(" | ")
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// `class,recall` lines in label order; classes without samples are left blank.
pub fn per_class_csv(report: &EvalReport, names: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "recall"]).expect("in-memory write");
    for (i, r) in report.per_class_recall.iter().enumerate() {
        let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
        w.write_record([name, r.map_or(String::new(), pct)]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(classes: usize, counts: &[u64]) -> ConfusionMatrix {
        ConfusionMatrix { classes, counts: counts.to_vec() }
    }

    #[test]
    fn perfect_two_class() {
        let r = metrics(&cm(2, &[5, 0, 0, 7]), 0.0).unwrap();
        assert_eq!((r.accuracy, r.far, r.frr, r.eer), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_and_degenerate_matrices() {
        assert!(matches!(metrics(&ConfusionMatrix::new(3), 0.0), Err(EvalError::EmptyMatrix)));
        assert!(matches!(metrics(&cm(1, &[3]), 0.0), Err(EvalError::TooFewClasses(1))));
        assert!(confusion(&[0, 3], &[0, 1], 3).is_err());
        assert!(confusion(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn per_class_counts_by_hand() {
        // rows = truth
        let m = cm(3, &[4, 1, 0, 2, 3, 0, 0, 0, 5]);
        assert_eq!(m.false_positives(0), 2);
        assert_eq!(m.false_negatives(0), 1);
        assert_eq!(m.true_negatives(0), 8);
        assert_eq!(m.recall(1), Some(0.6));
        let r = metrics(&m, 0.5).unwrap();
        assert!((r.accuracy - 12.0 / 15.0).abs() < 1e-15);
        assert!((r.far - 3.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn rank_ties_go_to_lower_index() {
        let s = [0.2f32, 0.4, 0.4];
        assert_eq!(true_class_rank(&s, 1), 0);
        assert_eq!(true_class_rank(&s, 2), 1);
        assert_eq!(true_class_rank(&s, 0), 2);
        let rates = rank_k_rates(&[s.to_vec(), s.to_vec()], &[2, 0], 3);
        assert_eq!(rates, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn csv_and_table_layout() {
        let mut report = metrics(&cm(2, &[9, 1, 0, 10]), 0.1234).unwrap();
        report.ir_at_k = vec![0.95, 1.0, 1.0, 1.0, 1.0];
        let row = ReportRow { database: "synthetic".into(), bpf: 3, epochs: 50, report };
        let text = report_csv_string(std::slice::from_ref(&row), &[("seed".into(), "42".into())]);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# seed=42"));
        assert_eq!(lines.next(), Some("database,bpf,epochs,loss,accuracy,FAR,FRR,EER,IR@1,IR@2,IR@3,IR@4,IR@5"));
        assert_eq!(lines.next(), Some("synthetic,3,50,0.1234,95.00,5.00,5.00,5.00,95.00,100.00,100.00,100.00,100.00"));
        let (cfg, rows) = read_report_csv(&text).unwrap();
        assert_eq!(cfg, vec![("seed".to_string(), "42".to_string())]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0][4], "95.00");
        let table = report_table(&[row]);
        assert!(table.lines().next().unwrap().contains("Accuracy (%)"));
        assert!(table.contains("95.00"));
    }

    #[test]
    fn published_eer_triples() {
        // (FAR %, FRR %) as printed in the result tables
        let cases = [(0.01, 0.15, 0.08), (0.04, 2.11, 1.075), (0.02, 2.91, 1.465), (0.03, 0.81, 0.42)];
        for (far, frr, eer) in cases {
            assert!((equal_error_rate(far, frr) - eer).abs() < 1e-12, "{far} {frr}");
        }
        // the tables cut to two decimals rather than rounding
        assert_eq!(truncate_decimals(equal_error_rate(0.01, 0.16), 2), 0.08);
        assert_eq!(truncate_decimals(2.11 / 46.0, 2), 0.04);
    }

    proptest! {
        #[test]
        fn far_identity(classes in 2usize..40, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let counts: Vec<u64> = (0..classes * classes).map(|_| rng.random_range(0..20)).collect();
            let m = cm(classes, &counts);
            prop_assume!(m.total() > 0);
            let r = metrics(&m, 0.0).unwrap();
            prop_assert!((r.far - (1.0 - r.accuracy) / (classes as f64 - 1.0)).abs() < 1e-12);
            prop_assert!((r.accuracy + r.frr - 1.0).abs() < 1e-12);
        }
    }
}
