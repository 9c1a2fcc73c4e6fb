//! Metrics (MSE, accuracy, macro-F1) over score predictions and grouped
//! experiment reports.
//!
//! Macro-F1 is the unweighted mean of per-class F1 over {toxic, non_toxic},
//! restricted to classes that actually occur in the truth labels. A row where
//! some class is absent from the truth is annotated degenerate rather than
//! silently scored: "predicted none toxic" and "no toxic in the test set"
//! are different findings.

use crate::corpus::{label_binary, Label, SizeClass};
use crate::util::csv_field;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty prediction set")]
    Empty,
    #[error("truth score {0} outside [0,1]")]
    TruthOutOfRange(f64),
}

/// Binary confusion counts with "toxic" as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn f1_from(tp: u64, fp: u64, fn_: u64) -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn f1_toxic(&self) -> f64 {
        Self::f1_from(self.tp, self.fp, self.fn_)
    }

    pub fn f1_non_toxic(&self) -> f64 {
        // Swap the positive class.
        Self::f1_from(self.tn, self.fn_, self.fp)
    }
}

/// One evaluated scope: regression error plus thresholded classification
/// quality. `f1_toxic`/`f1_non_toxic` are `None` when the class has no truth
/// support.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub mse: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub f1_toxic: Option<f64>,
    pub f1_non_toxic: Option<f64>,
    pub n_test: u64,
    pub n_toxic_test: u64,
    /// True when a class is absent from the truth labels.
    pub degenerate: bool,
    pub confusion: Confusion,
}

/// Computes metrics over (predicted score, truth score) pairs. MSE is over
/// the raw scores; accuracy and macro-F1 over labels thresholded at
/// `threshold` (strictly greater than).
pub fn metrics(pairs: &[(f64, f64)], threshold: f64) -> Result<MetricRow, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut confusion = Confusion::default();
    let mut squared_errors = Vec::with_capacity(pairs.len());
    for &(pred, truth) in pairs {
        if !(0.0..=1.0).contains(&truth) || truth.is_nan() {
            return Err(EvalError::TruthOutOfRange(truth));
        }
        squared_errors.push((pred - truth) * (pred - truth));
        match (
            label_binary(pred, threshold),
            label_binary(truth, threshold),
        ) {
            (Label::Toxic, Label::Toxic) => confusion.tp += 1,
            (Label::Toxic, Label::NonToxic) => confusion.fp += 1,
            (Label::NonToxic, Label::NonToxic) => confusion.tn += 1,
            (Label::NonToxic, Label::Toxic) => confusion.fn_ += 1,
        }
    }
    // Summing in sorted order makes MSE bitwise permutation-invariant.
    squared_errors.sort_by(f64::total_cmp);
    let squared: f64 = squared_errors.iter().sum();
    let n = pairs.len() as u64;
    let n_toxic_truth = confusion.tp + confusion.fn_;
    let n_non_toxic_truth = confusion.tn + confusion.fp;

    let f1_toxic = (n_toxic_truth > 0).then(|| confusion.f1_toxic());
    let f1_non_toxic = (n_non_toxic_truth > 0).then(|| confusion.f1_non_toxic());
    let present: Vec<f64> = [f1_toxic, f1_non_toxic].into_iter().flatten().collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(MetricRow {
        mse: squared / n as f64,
        accuracy: (confusion.tp + confusion.tn) as f64 / n as f64,
        macro_f1,
        f1_toxic,
        f1_non_toxic,
        n_test: n,
        n_toxic_test: n_toxic_truth,
        degenerate: f1_toxic.is_none() || f1_non_toxic.is_none(),
        confusion,
    })
}

/// Metrics at several thresholds over the same score pairs, e.g. 0.3 / 0.5 /
/// 0.8 sweeps. MSE is threshold-invariant by construction.
pub fn metrics_at_thresholds(
    pairs: &[(f64, f64)],
    thresholds: &[f64],
) -> Result<Vec<(f64, MetricRow)>, EvalError> {
    thresholds
        .iter()
        .map(|&t| metrics(pairs, t).map(|m| (t, m)))
        .collect()
}

/// Identifies one cell of the experiment grid.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Scope {
    pub strategy: String,
    pub locality: String,
    pub size_class: SizeClass,
}

/// Per-instance evaluated metrics feeding a grouped report.
#[derive(Clone, Debug, Serialize)]
pub struct InstanceRow {
    pub instance: String,
    pub scope: Scope,
    pub metrics: MetricRow,
}

/// One size-class row of the report: instances weighted equally.
#[derive(Clone, Debug, Serialize)]
pub struct ClassRow {
    pub scope: Scope,
    pub mse: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean toxic-class F1 over instances with toxic truth support.
    pub f1_toxic: Option<f64>,
    pub n_test: u64,
    pub n_toxic_test: u64,
    pub n_instances: u32,
    /// Member instances whose row was degenerate (a class missing from
    /// truth).
    pub degenerate: u32,
    /// Summed confusion over member instances.
    pub confusion: Confusion,
}

/// Grouped experiment report mirroring the training/inference matrix and the
/// federation-strategy tables.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ClassRow>,
    pub instances: Vec<InstanceRow>,
}

/// Groups per-instance rows by scope, averaging every metric with equal
/// per-instance weight. Macro-F1 averages over non-degenerate instances;
/// the degenerate count is carried alongside.
pub fn report(instance_rows: Vec<InstanceRow>) -> ExperimentReport {
    let mut groups: BTreeMap<Scope, Vec<&InstanceRow>> = BTreeMap::new();
    for row in &instance_rows {
        groups.entry(row.scope.clone()).or_default().push(row);
    }
    let mut rows = Vec::new();
    for (scope, members) in groups {
        let n = members.len() as f64;
        let mse = members.iter().map(|m| m.metrics.mse).sum::<f64>() / n;
        let accuracy = members.iter().map(|m| m.metrics.accuracy).sum::<f64>() / n;
        let non_degenerate: Vec<&&InstanceRow> =
            members.iter().filter(|m| !m.metrics.degenerate).collect();
        let macro_f1 = if non_degenerate.is_empty() {
            members.iter().map(|m| m.metrics.macro_f1).sum::<f64>() / n
        } else {
            non_degenerate
                .iter()
                .map(|m| m.metrics.macro_f1)
                .sum::<f64>()
                / non_degenerate.len() as f64
        };
        let toxic_supported: Vec<f64> = members.iter().filter_map(|m| m.metrics.f1_toxic).collect();
        let f1_toxic = if toxic_supported.is_empty() {
            None
        } else {
            Some(toxic_supported.iter().sum::<f64>() / toxic_supported.len() as f64)
        };
        let mut confusion = Confusion::default();
        for m in &members {
            confusion.tp += m.metrics.confusion.tp;
            confusion.fp += m.metrics.confusion.fp;
            confusion.tn += m.metrics.confusion.tn;
            confusion.fn_ += m.metrics.confusion.fn_;
        }
        rows.push(ClassRow {
            scope,
            mse,
            accuracy,
            macro_f1,
            f1_toxic,
            n_test: members.iter().map(|m| m.metrics.n_test).sum(),
            n_toxic_test: members.iter().map(|m| m.metrics.n_toxic_test).sum(),
            n_instances: members.len() as u32,
            degenerate: members.iter().filter(|m| m.metrics.degenerate).count() as u32,
            confusion,
        });
    }
    ExperimentReport {
        rows,
        instances: instance_rows,
    }
}

impl ExperimentReport {
    /// Fixed columns:
    /// `strategy,locality,size_class,mse,accuracy,macro_f1,n_test,n_toxic_test,degenerate`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "strategy,locality,size_class,mse,accuracy,macro_f1,n_test,n_toxic_test,degenerate"
        )?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{},{},{}",
                csv_field(&row.scope.strategy),
                csv_field(&row.scope.locality),
                row.scope.size_class,
                row.mse,
                row.accuracy,
                row.macro_f1,
                row.n_test,
                row.n_toxic_test,
                row.degenerate
            )?;
        }
        Ok(())
    }

    /// Per-instance rows:
    /// `instance,strategy,locality,size_class,mse,accuracy,macro_f1,n_test,n_toxic_test,degenerate`.
    pub fn write_instances_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "instance,strategy,locality,size_class,mse,accuracy,macro_f1,n_test,n_toxic_test,degenerate"
        )?;
        for row in &self.instances {
            writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{},{},{}",
                csv_field(&row.instance),
                csv_field(&row.scope.strategy),
                csv_field(&row.scope.locality),
                row.scope.size_class,
                row.metrics.mse,
                row.metrics.accuracy,
                row.metrics.macro_f1,
                row.metrics.n_test,
                row.metrics.n_toxic_test,
                row.metrics.degenerate
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn find(&self, strategy: &str, locality: &str, size_class: SizeClass) -> Option<&ClassRow> {
        self.rows.iter().find(|r| {
            r.scope.strategy == strategy
                && r.scope.locality == locality
                && r.scope.size_class == size_class
        })
    }

    /// Merges another report's rows into this one.
    pub fn merge(&mut self, other: ExperimentReport) {
        self.rows.extend(other.rows);
        self.instances.extend(other.instances);
        self.rows.sort_by(|a, b| a.scope.cmp(&b.scope));
        self.instances
            .sort_by(|a, b| a.scope.cmp(&b.scope).then(a.instance.cmp(&b.instance)));
    }
}
