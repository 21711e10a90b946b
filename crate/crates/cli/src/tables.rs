//! CSV interchange between the stepwise training commands: an `id` column
//! followed by numeric columns, or `id,class` for labels.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use circa_core::Class;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>, path: &Path) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            bail!("{}: duplicate id {id}", path.display());
        }
    }
    Ok(())
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, id: &str, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((id.to_string(), values));
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
        let header = r.headers()?.clone();
        if header.get(0) != Some("id") {
            bail!("{}: first column must be `id`", path.display());
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{}: row {}", path.display(), line + 1))?;
            rows.push((rec[0].to_string(), values));
        }
        check_unique(rows.iter().map(|(id, _)| id.as_str()), path)?;
        Ok(Self { columns, rows })
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, values) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn index(&self) -> HashMap<&str, &[f64]> {
        self.rows.iter().map(|(id, v)| (id.as_str(), v.as_slice())).collect()
    }
}

pub fn read_labels(path: &Path) -> Result<Vec<(String, Class)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "class"] {
        bail!("{}: header must be `id,class`", path.display());
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let class: Class = rec[1]
            .trim()
            .parse()
            .map_err(|e| anyhow::anyhow!("{}: case {}: {e}", path.display(), &rec[0]))?;
        out.push((rec[0].to_string(), class));
    }
    check_unique(out.iter().map(|(id, _)| id.as_str()), path)?;
    Ok(out)
}

pub fn write_labels<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, Class)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| path.display().to_string())?;
    w.write_record(["id", "class"])?;
    for (id, c) in rows {
        w.write_record([id, c.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of `tables` concatenated column-wise, in the order of `ids`.
pub fn join(ids: &[&str], tables: &[Table], names: &[&Path]) -> Result<Vec<Vec<f64>>> {
    let indexes: Vec<_> = tables.iter().map(Table::index).collect();
    ids.iter()
        .map(|id| {
            let mut row = Vec::new();
            for (idx, name) in indexes.iter().zip(names) {
                let v = idx
                    .get(id)
                    .with_context(|| format!("{}: no row for case {id}", name.display()))?;
                row.extend_from_slice(v);
            }
            Ok(row)
        })
        .collect()
}
