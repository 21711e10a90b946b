use super::morphology::{closing, connected_components, disc, hull_mask, opening, Component};
use super::{BinaryMask, SegmentationError};
use crate::imaging::RasterImage;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
const SE_RADIUS: isize = 2;

fn keep_largest(mask: &BinaryMask, n: usize) -> (BinaryMask, Vec<Component>) {
    let (w, h) = mask.dims();
    let mut comps = connected_components(mask);
    comps.truncate(n);
    let mut out = BinaryMask::empty(w, h);
    for c in &comps {
        for &i in &c.pixels {
            out.set(i % w, i / w, true);
        }
    }
    (out, comps)
}

/// Turns a lung probability map into a mask of at most two convex lungs.
///
/// Pixels at or above `threshold` are foreground. The two largest 8-connected
/// components are kept, smoothed by opening then closing with a 5x5 disc and
/// each replaced by its convex hull. Hulls that touch are merged into one.
pub fn postprocess_mask(prob: &RasterImage, threshold: f64) -> Result<BinaryMask, SegmentationError> {
    let (w, h) = prob.dims();
    let bin = BinaryMask::from_fn(w, h, |x, y| prob.get(x, y) >= threshold);
    let (kept, comps) = keep_largest(&bin, 2);
    if comps.is_empty() {
        return Err(SegmentationError::NoLungFound);
    }
    let se = disc(SE_RADIUS);
    let smoothed = closing(&opening(&kept, &se), &se);
    // opening may split a lung or leave slivers; rank again
    let (mut mask, mut comps) = keep_largest(&smoothed, 2);
    if comps.is_empty() {
        return Err(SegmentationError::NoLungFound);
    }
    loop {
        let mut hulls = BinaryMask::empty(w, h);
        for c in &comps {
            hulls = hulls.union(&hull_mask(w, h, &c.pixels));
        }
        let next = connected_components(&hulls);
        let stable = hulls == mask;
        mask = hulls;
        if stable {
            break;
        }
        comps = next;
    }
    Ok(mask)
}
