use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::case::{prepare, segment, size_gate, Timer};
use super::{Backends, DatasetManifest, PipelineConfig, PipelineError, RejectionReason};
use crate::segmentation::{mask_metrics, quality_score, skewed_outlier_threshold, OutlierFence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRejection {
    pub id: String,
    /// `None` for cases that failed with an error rather than a gate.
    pub reason: Option<RejectionReason>,
    pub score: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub total: usize,
    pub kept: usize,
    /// Fence over the scores of cases that passed the size gate.
    pub fence: Option<OutlierFence>,
    pub rejections: Vec<CaseRejection>,
    /// `(id, score)` of every scored case, in manifest order.
    pub scores: Vec<(String, f64)>,
}

enum Screened {
    Scored(f64),
    Rejected(CaseRejection),
}

fn screen(manifest: &DatasetManifest, i: usize, cfg: &PipelineConfig, backends: &Backends) -> Screened {
    let e = &manifest.entries[i];
    let fail = |reason, score, message: String| {
        Screened::Rejected(CaseRejection {
            id: e.id.clone(),
            reason,
            score,
            message,
        })
    };
    let run = || -> Result<Screened, PipelineError> {
        let bytes = manifest.read_image(e)?;
        let mut t = Timer::default();
        let prepared = prepare(&bytes, None, cfg, backends, &mut t)?;
        let Some(mask) = segment(&prepared, cfg, backends, &mut t)? else {
            return Ok(fail(Some(RejectionReason::NoLungFound), None, "no lung region".into()));
        };
        let gate = size_gate(&mask, &prepared, cfg.min_lung_dim);
        if !gate.passed {
            return Ok(fail(
                Some(RejectionReason::TooSmall),
                None,
                format!("lung region {}x{} px", gate.lung_width, gate.lung_height),
            ));
        }
        let m = mask_metrics(&mask).map_err(|e| PipelineError::stage("quality_gate", e))?;
        Ok(Screened::Scored(quality_score(&m).value))
    };
    run().unwrap_or_else(|err| fail(None, None, err.to_string()))
}

/// Segments and scores every case, derives the corpus quality fence from the
/// scores of size-passing cases and drops cases below it. Per-case failures
/// are reported, never fatal.
pub fn clean_dataset(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<(DatasetManifest, CleaningReport), PipelineError> {
    cfg.validate()?;
    let screened: Vec<Screened> = (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| screen(manifest, i, cfg, backends))
        .collect();
    let scores: Vec<(String, f64)> = screened
        .iter()
        .zip(&manifest.entries)
        .filter_map(|(s, e)| match s {
            Screened::Scored(v) => Some((e.id.clone(), *v)),
            Screened::Rejected(_) => None,
        })
        .collect();
    let values: Vec<f64> = scores.iter().map(|(_, v)| *v).collect();
    let fence = skewed_outlier_threshold(&values).ok();
    let mut kept = Vec::new();
    let mut rejections = Vec::new();
    for (s, e) in screened.into_iter().zip(&manifest.entries) {
        match s {
            Screened::Scored(v) => match fence {
                Some(f) if v < f.threshold => rejections.push(CaseRejection {
                    id: e.id.clone(),
                    reason: Some(RejectionReason::LowQuality),
                    score: Some(v),
                    message: format!("quality {v:.4} below fence {:.4}", f.threshold),
                }),
                _ => kept.push(e.clone()),
            },
            Screened::Rejected(r) => rejections.push(r),
        }
    }
    let report = CleaningReport {
        total: manifest.entries.len(),
        kept: kept.len(),
        fence,
        rejections,
        scores,
    };
    Ok((manifest.with_entries(kept), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Class;
    use crate::models::{BackendKind, FnBackend, MockLungGeometry, MockSegmentation, ModelBackend, ModelBackendHandle};
    use crate::pipeline::synthetic::{synthetic_png, SyntheticSpec};
    use crate::pipeline::ManifestEntry;

    fn corpus(dir: &std::path::Path, n: usize) -> DatasetManifest {
        let entries = (0..n)
            .map(|i| {
                let file = format!("{i}.png");
                let spec = SyntheticSpec::new(Class::ALL[i % 3], (i % 3) as u8, 520, i as u64);
                std::fs::write(dir.join(&file), synthetic_png(&spec)).unwrap();
                ManifestEntry::new(format!("case{i}"), "d", Some(spec.class), file)
            })
            .collect();
        DatasetManifest::new(entries, dir).unwrap()
    }

    #[test]
    fn identical_masks_reject_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let m = corpus(dir.path(), 6);
        let cfg = PipelineConfig::default();
        let b = Backends::mock(cfg.canvas_size, cfg.roi.size, cfg.sr_patch);
        let (kept, report) = clean_dataset(&m, &cfg, &b).unwrap();
        assert_eq!(kept.entries.len(), 6);
        assert!(report.rejections.is_empty());
        let fence = report.fence.unwrap().threshold;
        assert!(report.scores.iter().all(|(_, s)| *s >= fence));
    }

    #[test]
    fn the_odd_mask_is_rejected_as_low_quality() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = corpus(dir.path(), 7);
        std::fs::write(dir.path().join("missing.png"), b"not an image").unwrap();
        m.entries.push(ManifestEntry::new("broken", "d", None, "missing.png"));
        let cfg = PipelineConfig::default();
        let mock = Backends::mock(cfg.canvas_size, cfg.roi.size, cfg.sr_patch);

        // for case 3 only the segmenter draws two thin, far-apart lungs:
        // low solidity and area, still large enough for the size gate
        let odd_canvas = {
            let bytes = m.read_image(&m.entries[3]).unwrap();
            prepare(&bytes, None, &cfg, &mock, &mut Timer::default()).unwrap().canvas
        };
        let normal = MockSegmentation::new(512);
        let odd = MockSegmentation::with_geometry(
            512,
            MockLungGeometry {
                left_center: [100.0, 256.0],
                right_center: [412.0, 256.0],
                semi_axes: [20.0, 160.0],
                probability: 0.9,
            },
        );
        let mut desc = normal.descriptor().clone();
        desc.kind = BackendKind::Segmentation;
        let seg = FnBackend::new(desc, move |t| {
            let is_odd = t.data.iter().zip(odd_canvas.pixels()).all(|(a, b)| *a == *b as f32);
            if is_odd {
                odd.run(t)
            } else {
                normal.run(t)
            }
        });
        let backends = Backends {
            segmentation: Some(ModelBackendHandle::new(seg)),
            ..mock
        };
        let (kept, report) = clean_dataset(&m, &cfg, &backends).unwrap();
        assert_eq!(report.total, 8);
        assert_eq!(kept.entries.len(), 6);
        let low: Vec<&CaseRejection> = report
            .rejections
            .iter()
            .filter(|r| r.reason == Some(RejectionReason::LowQuality))
            .collect();
        assert_eq!(low.len(), 1);
        assert_eq!(low[0].id, "case3");
        assert!(low[0].score.unwrap() < report.fence.unwrap().threshold);
        let broken = report.rejections.iter().find(|r| r.id == "broken").unwrap();
        assert_eq!(broken.reason, None);
    }
}
