use serde::{Deserialize, Serialize};

use super::RasterImage;

/// Contrast-limited adaptive histogram equalization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Clip limit as a multiple of the mean bin count; `None` disables clipping.
    pub clip_limit: Option<f64>,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: Some(2.0),
            bins: 256,
        }
    }
}

pub fn enhance_contrast(img: &RasterImage) -> RasterImage {
    enhance_contrast_with(img, &ClaheParams::default())
}

/// CLAHE: per-tile clipped histograms, inclusive-CDF lookup tables
/// (`lut[b] = cdf(b) / n`), bilinear blending between the four nearest tile
/// centres.
///
/// A tile whose histogram occupies a single bin maps through the identity, so
/// a constant image is returned unchanged.
pub fn enhance_contrast_with(img: &RasterImage, params: &ClaheParams) -> RasterImage {
    let (w, h) = img.dims();
    let bins = params.bins.max(2);
    let tx = params.tiles_x.clamp(1, w);
    let ty = params.tiles_y.clamp(1, h);
    let xb: Vec<usize> = (0..=tx).map(|i| i * w / tx).collect();
    let yb: Vec<usize> = (0..=ty).map(|j| j * h / ty).collect();
    let bin_of = |p: f64| ((p * bins as f64) as usize).min(bins - 1);

    let mut luts = Vec::with_capacity(tx * ty);
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = vec![0.0f64; bins];
            for y in yb[j]..yb[j + 1] {
                for x in xb[i]..xb[i + 1] {
                    hist[bin_of(img.get(x, y))] += 1.0;
                }
            }
            let n = ((xb[i + 1] - xb[i]) * (yb[j + 1] - yb[j])) as f64;
            if hist.iter().filter(|&&c| c > 0.0).count() <= 1 {
                luts.push(None);
                continue;
            }
            if let Some(limit) = params.clip_limit {
                let clip = (limit * n / bins as f64).max(1.0);
                let mut excess = 0.0;
                for c in hist.iter_mut() {
                    if *c > clip {
                        excess += *c - clip;
                        *c = clip;
                    }
                }
                let share = excess / bins as f64;
                hist.iter_mut().for_each(|c| *c += share);
            }
            let mut acc = 0.0;
            let lut: Vec<f64> = hist
                .iter()
                .map(|c| {
                    acc += c;
                    (acc / n).min(1.0)
                })
                .collect();
            luts.push(Some(lut));
        }
    }

    let cx: Vec<f64> = (0..tx).map(|i| (xb[i] + xb[i + 1] - 1) as f64 / 2.0).collect();
    let cy: Vec<f64> = (0..ty).map(|j| (yb[j] + yb[j + 1] - 1) as f64 / 2.0).collect();
    let locate = |centres: &[f64], v: f64| -> (usize, usize, f64) {
        if v <= centres[0] {
            return (0, 0, 0.0);
        }
        let last = centres.len() - 1;
        if v >= centres[last] {
            return (last, last, 0.0);
        }
        let i = centres.partition_point(|&c| c <= v) - 1;
        (i, i + 1, (v - centres[i]) / (centres[i + 1] - centres[i]))
    };
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);

    let xs: Vec<(usize, usize, f64)> = (0..w).map(|x| locate(&cx, x as f64)).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (j0, j1, fy) = locate(&cy, y as f64);
        for (x, &(i0, i1, fx)) in xs.iter().enumerate() {
            let p = img.get(x, y);
            let b = bin_of(p);
            let map = |tile: usize| luts[tile].as_ref().map_or(p, |lut| lut[b]);
            let top = lerp(map(j0 * tx + i0), map(j0 * tx + i1), fx);
            let bottom = lerp(map(j1 * tx + i0), map(j1 * tx + i1), fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    RasterImage::from_clamped(w, h, out)
}
