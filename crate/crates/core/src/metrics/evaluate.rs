use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{class_metrics, weighted_class_from_subtypes, ClassRates, ConfusionMatrix3, MetricsError, MetricsReport};
use crate::labels::{Class, Subtype};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub id: String,
    pub class: Class,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub class: Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeReport {
    pub count: u64,
    pub confusion: ConfusionMatrix3,
    pub report: MetricsReport,
}

/// Results for one group of cases (a dataset tag, or everything).
///
/// Subtype matrices partition the cases by their true subtype, so each one
/// only has the row of its own class filled. Class reports are the
/// count-weighted means of that class's subtype reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub confusion: ConfusionMatrix3,
    pub pooled: Option<MetricsReport>,
    pub subtypes: BTreeMap<Subtype, SubtypeReport>,
    pub classes: BTreeMap<Class, MetricsReport>,
    /// Cases without a subtype assignment (pooled only).
    pub unassigned: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall: CellReport,
    pub datasets: BTreeMap<String, CellReport>,
}

fn cell(cases: &[(Class, Class, Option<Subtype>)]) -> Result<CellReport, MetricsError> {
    let mut confusion = ConfusionMatrix3::default();
    let mut by_subtype: BTreeMap<Subtype, ConfusionMatrix3> = BTreeMap::new();
    let mut unassigned = 0;
    for &(t, p, s) in cases {
        confusion.add(t, p);
        match s {
            Some(s) => by_subtype.entry(s).or_default().add(t, p),
            None => unassigned += 1,
        }
    }
    let mut subtypes = BTreeMap::new();
    for (s, cm) in by_subtype {
        subtypes.insert(
            s,
            SubtypeReport {
                count: cm.total(),
                confusion: cm,
                report: class_metrics(&cm)?,
            },
        );
    }
    let mut classes = BTreeMap::new();
    for c in Class::ALL {
        let parts: Vec<(&MetricsReport, u64)> = subtypes
            .iter()
            .filter(|(s, _)| s.class == c)
            .map(|(_, r)| (&r.report, r.count))
            .collect();
        if !parts.is_empty() {
            classes.insert(c, weighted_class_from_subtypes(&parts)?);
        }
    }
    Ok(CellReport {
        pooled: (confusion.total() > 0).then(|| class_metrics(&confusion)).transpose()?,
        confusion,
        subtypes,
        classes,
        unassigned,
    })
}

/// Joins predictions to the truth manifest and builds overall and per-dataset
/// reports. `subtypes` maps case ids to the subtype of their true class.
pub fn evaluate_manifest(
    predictions: &[Prediction],
    truth: &[LabeledCase],
    subtypes: &HashMap<String, Subtype>,
) -> Result<EvaluationReport, MetricsError> {
    let known: HashSet<&str> = truth.iter().map(|t| t.id.as_str()).collect();
    if let Some(p) = predictions.iter().find(|p| !known.contains(p.id.as_str())) {
        return Err(MetricsError::UnknownCase(p.id.clone()));
    }
    let predicted: HashMap<&str, Class> = predictions.iter().map(|p| (p.id.as_str(), p.class)).collect();
    let missing: Vec<String> = truth
        .iter()
        .filter(|t| !predicted.contains_key(t.id.as_str()))
        .map(|t| t.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingPredictions(missing));
    }
    let mut all = Vec::with_capacity(truth.len());
    let mut groups: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for t in truth {
        let row = (t.class, predicted[t.id.as_str()], subtypes.get(&t.id).copied());
        all.push(row);
        groups.entry(t.dataset.as_str()).or_default().push(row);
    }
    let mut datasets = BTreeMap::new();
    for (tag, rows) in groups {
        datasets.insert(tag.to_string(), cell(&rows)?);
    }
    Ok(EvaluationReport {
        overall: cell(&all)?,
        datasets,
    })
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV: one row per (scope, group, class, metric); undefined rates
    /// are empty cells.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scope", "group", "name", "class", "metric", "value", "count"])
            .expect("in-memory write");
        let mut emit = |scope: &str, group: &str, name: &str, report: &MetricsReport| {
            for c in Class::ALL {
                let rates: &ClassRates = report.get(c);
                for (metric, v) in ClassRates::NAMES.iter().zip(rates.values()) {
                    w.write_record([
                        scope,
                        group,
                        name,
                        c.as_str(),
                        metric,
                        &fmt_rate(v),
                        &report.total.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
        };
        let scopes = std::iter::once(("all", &self.overall)).chain(self.datasets.iter().map(|(k, v)| (k.as_str(), v)));
        for (scope, cell) in scopes {
            if let Some(p) = &cell.pooled {
                emit(scope, "pooled", "all", p);
            }
            for (s, r) in &cell.subtypes {
                emit(scope, "subtype", &s.to_string(), &r.report);
            }
            for (c, r) in &cell.classes {
                emit(scope, "class", c.as_str(), r);
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}
