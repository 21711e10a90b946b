use serde::{Deserialize, Serialize};

use super::morphology::hull_mask;
use super::{BinaryMask, SegmentationError};

/// Smallest accepted lung bounding-box side, in native pixels.
pub const MIN_LUNG_DIM: usize = 300;

/// Shape descriptors of the whole foreground region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub eccentricity: f64,
    /// Major-axis angle from the image x axis, counter-clockwise positive.
    pub orientation_deg: f64,
    pub area_fraction: f64,
    pub solidity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub value: f64,
    pub components: [f64; 4],
}

/// Moment-based metrics of the union of all foreground pixels.
pub fn mask_metrics(mask: &BinaryMask) -> Result<MaskMetrics, SegmentationError> {
    let (w, h) = mask.dims();
    let n = mask.count();
    if n == 0 {
        return Err(SegmentationError::EmptyMask);
    }
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut fg = Vec::with_capacity(n);
    for (i, &b) in mask.bits().iter().enumerate() {
        if b {
            fg.push(i);
            sx += (i % w) as f64;
            sy += (i / w) as f64;
        }
    }
    let nf = n as f64;
    let (cx, cy) = (sx / nf, sy / nf);
    let (mut m20, mut m02, mut m11) = (0.0, 0.0, 0.0);
    for &i in &fg {
        let dx = (i % w) as f64 - cx;
        // y axis pointing up
        let dy = cy - (i / w) as f64;
        m20 += dx * dx;
        m02 += dy * dy;
        m11 += dx * dy;
    }
    let (m20, m02, m11) = (m20 / nf, m02 / nf, m11 / nf);
    let half_diff = (m20 - m02) / 2.0;
    let root = (half_diff * half_diff + m11 * m11).sqrt();
    let l1 = (m20 + m02) / 2.0 + root;
    let l2 = ((m20 + m02) / 2.0 - root).max(0.0);
    let eccentricity = if l1 > 0.0 {
        (1.0 - l2 / l1).clamp(0.0, 1.0).sqrt()
    } else {
        0.0
    };
    let orientation_deg = if root > 0.0 {
        (0.5 * (2.0 * m11).atan2(m20 - m02)).to_degrees().clamp(-90.0, 90.0)
    } else {
        0.0
    };
    let hull = hull_mask(w, h, &fg).count();
    Ok(MaskMetrics {
        eccentricity,
        orientation_deg,
        area_fraction: nf / (w * h) as f64,
        solidity: (nf / hull as f64).min(1.0),
    })
}

/// Mean of (eccentricity, 1 - |orientation|/90, area fraction, solidity).
pub fn quality_score(m: &MaskMetrics) -> QualityScore {
    let components = [
        m.eccentricity.clamp(0.0, 1.0),
        (1.0 - m.orientation_deg.abs() / 90.0).clamp(0.0, 1.0),
        m.area_fraction.clamp(0.0, 1.0),
        m.solidity.clamp(0.0, 1.0),
    ];
    QualityScore {
        value: components.iter().sum::<f64>() / 4.0,
        components,
    }
}

/// True when the foreground bounding box is at least `min_dim` pixels on both
/// sides. Empty masks are rejected.
pub fn too_small_check(mask: &BinaryMask, min_dim: usize) -> bool {
    match mask.bounding_box() {
        Some(b) => b.width() >= min_dim && b.height() >= min_dim,
        None => false,
    }
}
