use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ManifestEntry, PipelineError};
use crate::labels::{Class, Subtype};
use crate::models::{gmm_predict_subtype, GmmModel2D};

pub const DEFAULT_PER_CELL: usize = 50;

/// Draws `k` distinct indices one at a time, each with probability
/// proportional to its weight among those not yet drawn. Non-finite or
/// negative weights count as zero; when every remaining weight is zero the
/// draw is uniform over the remaining indices.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w: Vec<f64> = weights
        .iter()
        .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
        .collect();
    let mut alive: Vec<bool> = vec![true; w.len()];
    let mut picked = Vec::with_capacity(k.min(w.len()));
    for _ in 0..k.min(w.len()) {
        let total: f64 = w.iter().sum();
        let choice = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut last = None;
            let mut chosen = None;
            for (i, &wi) in w.iter().enumerate() {
                if wi <= 0.0 {
                    continue;
                }
                last = Some(i);
                if u < wi {
                    chosen = Some(i);
                    break;
                }
                u -= wi;
            }
            chosen.or(last).expect("positive total has a positive weight")
        } else {
            let remaining: Vec<usize> = (0..w.len()).filter(|&i| alive[i]).collect();
            remaining[rng.random_range(0..remaining.len())]
        };
        picked.push(choice);
        alive[choice] = false;
        w[choice] = 0.0;
    }
    picked
}

/// Splits `total` across cells in proportion to `weights`, never exceeding a
/// cell's `cap`. Largest remainder, ties to the lower index.
fn proportional_split(total: usize, weights: &[usize], caps: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize; weights.len()];
    let mut left = total;
    while left > 0 {
        let open: Vec<usize> = (0..weights.len()).filter(|&i| out[i] < caps[i]).collect();
        if open.is_empty() {
            break;
        }
        let wsum: usize = open.iter().map(|&i| weights[i]).sum();
        if wsum == 0 {
            break;
        }
        let mut shares: Vec<(usize, f64)> = Vec::new();
        let mut given = 0;
        for &i in &open {
            let exact = left as f64 * weights[i] as f64 / wsum as f64;
            let whole = (exact.floor() as usize).min(caps[i] - out[i]);
            out[i] += whole;
            given += whole;
            shares.push((i, exact - exact.floor()));
        }
        let mut rest = left - given;
        shares.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, _) in shares {
            if rest == 0 {
                break;
            }
            if out[i] < caps[i] {
                out[i] += 1;
                rest -= 1;
            }
        }
        if rest == left {
            break;
        }
        left = rest;
    }
    out
}

/// Holdout quota of each cell given the cell sizes of one class in one
/// dataset: `per_cell` each, with any shortfall moved to sibling cells in
/// proportion to their spare cases.
pub fn cell_quotas(sizes: &[usize], per_cell: usize) -> Vec<usize> {
    let base: Vec<usize> = sizes.iter().map(|&n| n.min(per_cell)).collect();
    let deficit = per_cell * sizes.len() - base.iter().sum::<usize>();
    let spare: Vec<usize> = sizes.iter().zip(&base).map(|(n, b)| n - b).collect();
    let extra = proportional_split(deficit, &spare, &spare);
    base.iter().zip(extra).map(|(b, e)| b + e).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub subtype: Subtype,
    pub available: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSplit {
    pub holdout: DatasetManifest,
    pub train: DatasetManifest,
    pub cells: Vec<CellSummary>,
}

/// Density-guided stratified hold-out sampling. Each (dataset, subtype)
/// cell contributes `per_cell` cases drawn without replacement with
/// probability proportional to the subtype component's density at the
/// case's coordinates. Cases without a subtype are assigned one by the
/// mixture. Both outputs keep manifest order.
pub fn stratified_sample(
    manifest: &DatasetManifest,
    gmm: &GmmModel2D,
    per_cell: usize,
    seed: u64,
) -> Result<SampleSplit, PipelineError> {
    let mut cells: BTreeMap<(String, Subtype), Vec<usize>> = BTreeMap::new();
    let mut subtypes_of = Vec::with_capacity(manifest.entries.len());
    for (i, e) in manifest.entries.iter().enumerate() {
        let class = e
            .class
            .ok_or_else(|| PipelineError::Manifest(format!("case {} has no class label", e.id)))?;
        let coords = e
            .coords
            .ok_or_else(|| PipelineError::Manifest(format!("case {} has no embedding coordinates", e.id)))?;
        let subtype = e.subtype.unwrap_or_else(|| gmm_predict_subtype(gmm, coords, class).subtype);
        subtypes_of.push(subtype);
        cells.entry((e.dataset.clone(), subtype)).or_default().push(i);
    }
    let datasets: BTreeSet<String> = manifest.entries.iter().map(|e| e.dataset.clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; manifest.entries.len()];
    let mut summaries = Vec::new();
    for ds in &datasets {
        for class in Class::ALL {
            let keys: Vec<Subtype> = (0..3).map(|k| Subtype::new(class, k)).collect();
            let sizes: Vec<usize> = keys
                .iter()
                .map(|s| cells.get(&(ds.clone(), *s)).map_or(0, Vec::len))
                .collect();
            let available: usize = sizes.iter().sum();
            if available == 0 {
                continue;
            }
            let quota = per_cell * keys.len();
            if available < quota {
                return Err(PipelineError::InsufficientClassCases {
                    dataset: ds.clone(),
                    class,
                    available,
                    quota,
                });
            }
            let quotas = cell_quotas(&sizes, per_cell);
            for ((s, q), n) in keys.iter().zip(&quotas).zip(&sizes) {
                summaries.push(CellSummary {
                    dataset: ds.clone(),
                    subtype: *s,
                    available: *n,
                    quota: *q,
                });
                let Some(members) = cells.get(&(ds.clone(), *s)) else {
                    continue;
                };
                let g = &gmm.classes[class.index()].components[s.component as usize];
                let weights: Vec<f64> = members
                    .iter()
                    .map(|&i| g.log_density(manifest.entries[i].coords.expect("checked")).exp())
                    .collect();
                for j in weighted_sample_without_replacement(&weights, *q, &mut rng) {
                    chosen[members[j]] = true;
                }
            }
        }
    }

    let tag = |i: usize| ManifestEntry {
        subtype: Some(subtypes_of[i]),
        ..manifest.entries[i].clone()
    };
    let holdout = (0..chosen.len()).filter(|&i| chosen[i]).map(tag).collect();
    let train = (0..chosen.len()).filter(|&i| !chosen[i]).map(tag).collect();
    Ok(SampleSplit {
        holdout: manifest.with_entries(holdout),
        train: manifest.with_entries(train),
        cells: summaries,
    })
}
