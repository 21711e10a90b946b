use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::labels::Class;

/// Counts indexed `[true][predicted]` in class order (normal, pneumonia, covid).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix3 {
    pub fn new(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (Class, Class)>) -> Self {
        let mut m = Self::default();
        for &(t, p) in pairs {
            m.add(t, p);
        }
        m
    }

    pub fn add(&mut self, truth: Class, predicted: Class) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&self, other: &Self) -> Self {
        let mut out = *self;
        for (r, o) in out.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
        out
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for `class`.
    pub fn one_vs_rest(&self, class: Class) -> (u64, u64, u64, u64) {
        let c = class.index();
        let tp = self.counts[c][c];
        let fp: u64 = (0..3).filter(|&t| t != c).map(|t| self.counts[t][c]).sum();
        let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

/// A rate, or `None` when its denominator is zero (serialized as `null`).
pub type Rate = Option<f64>;

fn ratio(num: u64, den: u64) -> Rate {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub ppv: Rate,
    pub npv: Rate,
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub accuracy: Rate,
    pub balanced_accuracy: Rate,
    pub f1: Rate,
}

impl ClassRates {
    pub const NAMES: [&'static str; 7] = [
        "ppv",
        "npv",
        "sensitivity",
        "specificity",
        "accuracy",
        "balanced_accuracy",
        "f1",
    ];

    pub fn values(&self) -> [Rate; 7] {
        [
            self.ppv,
            self.npv,
            self.sensitivity,
            self.specificity,
            self.accuracy,
            self.balanced_accuracy,
            self.f1,
        ]
    }

    fn from_values(v: [Rate; 7]) -> Self {
        Self {
            ppv: v[0],
            npv: v[1],
            sensitivity: v[2],
            specificity: v[3],
            accuracy: v[4],
            balanced_accuracy: v[5],
            f1: v[6],
        }
    }

    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ppv = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        let f1 = match (ppv, sensitivity) {
            (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
            _ => None,
        };
        Self {
            ppv,
            npv: ratio(tn, tn + fn_),
            sensitivity,
            specificity,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            balanced_accuracy: sensitivity.zip(specificity).map(|(a, b)| (a + b) / 2.0),
            f1,
        }
    }
}

/// One-vs-rest rates for every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub normal: ClassRates,
    pub pneumonia: ClassRates,
    pub covid: ClassRates,
    pub total: u64,
}

impl MetricsReport {
    pub fn get(&self, class: Class) -> &ClassRates {
        match class {
            Class::Normal => &self.normal,
            Class::Pneumonia => &self.pneumonia,
            Class::Covid => &self.covid,
        }
    }

    fn from_fn(total: u64, mut f: impl FnMut(Class) -> ClassRates) -> Self {
        Self {
            normal: f(Class::Normal),
            pneumonia: f(Class::Pneumonia),
            covid: f(Class::Covid),
            total,
        }
    }
}

pub fn class_metrics(cm: &ConfusionMatrix3) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok(MetricsReport::from_fn(total, |c| {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
        ClassRates::from_counts(tp, fp, fn_, tn)
    }))
}

/// Count-weighted mean of reports. Each rate averages only the reports where
/// it is defined, renormalizing by their weights.
pub fn weighted_class_from_subtypes(parts: &[(&MetricsReport, u64)]) -> Result<MetricsReport, MetricsError> {
    let total: u64 = parts.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(MetricsError::ZeroTotalWeight);
    }
    Ok(MetricsReport::from_fn(total, |c| {
        let mut acc = [(0.0f64, 0u64); 7];
        for (report, n) in parts.iter().filter(|(_, n)| *n > 0) {
            for (slot, v) in acc.iter_mut().zip(report.get(c).values()) {
                if let Some(v) = v {
                    slot.0 += *n as f64 * v;
                    slot.1 += n;
                }
            }
        }
        ClassRates::from_values(acc.map(|(s, w)| (w > 0).then(|| s / w as f64)))
    }))
}
