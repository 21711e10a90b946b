use serde::{Deserialize, Serialize};

use super::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    /// Stretch to the target, ignoring aspect ratio.
    Exact,
    /// Scale so the larger side hits the target, then zero-pad symmetrically.
    FitPad,
}

/// Placement of the scaled content inside a fit-pad canvas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPad {
    pub content_w: usize,
    pub content_h: usize,
    pub pad_left: usize,
    pub pad_top: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl FitPad {
    pub fn compute(src_w: usize, src_h: usize, target_w: usize, target_h: usize) -> Self {
        let scale = (target_w as f64 / src_w as f64).min(target_h as f64 / src_h as f64);
        let content_w = ((src_w as f64 * scale).round() as usize).clamp(1, target_w);
        let content_h = ((src_h as f64 * scale).round() as usize).clamp(1, target_h);
        let pad_w = target_w - content_w;
        let pad_h = target_h - content_h;
        Self {
            content_w,
            content_h,
            pad_left: pad_w / 2,
            pad_top: pad_h / 2,
            pad_right: pad_w - pad_w / 2,
            pad_bottom: pad_h - pad_h / 2,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.pad_left + self.pad_top + self.pad_right + self.pad_bottom == 0
    }
}

/// Bilinear resampling with pixel-centre alignment:
/// `src = (dst + 0.5) * src_len / dst_len - 0.5`, clamped to the source grid.
pub fn resize_exact(img: &RasterImage, target_w: usize, target_h: usize) -> RasterImage {
    assert!(target_w >= 1 && target_h >= 1, "target dimensions must be positive");
    let (w, h) = img.dims();
    if (w, h) == (target_w, target_h) {
        return img.clone();
    }
    let axis = |dst_len: usize, src_len: usize| -> Vec<(usize, usize, f64)> {
        let ratio = src_len as f64 / dst_len as f64;
        (0..dst_len)
            .map(|d| {
                let s = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src_len - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(target_w, w);
    let ys = axis(target_h, h);
    let mut out = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) + fx * (img.get(x1, y0) - img.get(x0, y0));
            let bottom = img.get(x0, y1) + fx * (img.get(x1, y1) - img.get(x0, y1));
            out.push(top + fy * (bottom - top));
        }
    }
    RasterImage::from_clamped(target_w, target_h, out)
}

/// Resizes in either mode. The returned [`FitPad`] describes the content
/// window (full canvas, zero padding, for `Exact`).
pub fn resize(
    img: &RasterImage,
    target_w: usize,
    target_h: usize,
    mode: ResizeMode,
) -> (RasterImage, FitPad) {
    match mode {
        ResizeMode::Exact => (
            resize_exact(img, target_w, target_h),
            FitPad {
                content_w: target_w,
                content_h: target_h,
                pad_left: 0,
                pad_top: 0,
                pad_right: 0,
                pad_bottom: 0,
            },
        ),
        ResizeMode::FitPad => {
            let fit = FitPad::compute(img.width(), img.height(), target_w, target_h);
            let content = resize_exact(img, fit.content_w, fit.content_h);
            if fit.is_identity() {
                return (content, fit);
            }
            let mut out = vec![0.0; target_w * target_h];
            for y in 0..fit.content_h {
                let dst = (y + fit.pad_top) * target_w + fit.pad_left;
                out[dst..dst + fit.content_w].copy_from_slice(
                    &content.pixels()[y * fit.content_w..(y + 1) * fit.content_w],
                );
            }
            (RasterImage::from_clamped(target_w, target_h, out), fit)
        }
    }
}
