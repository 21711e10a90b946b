use super::{ImagingError, RasterImage};

/// Nearest-rank quantile: the value at rank `ceil(q * n)` (1-based) of the
/// sorted multiset, with `q = 0` giving the minimum.
///
/// Uses selection rather than a full sort; `values` is reordered.
pub fn quantile_nearest_rank(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty set");
    let n = values.len();
    let rank = (q * n as f64).ceil() as usize;
    let idx = rank.saturating_sub(1).min(n - 1);
    let (_, v, _) = values.select_nth_unstable_by(idx, f64::total_cmp);
    *v
}

fn check_quantiles(low_q: f64, high_q: f64) -> Result<(), ImagingError> {
    if !(0.0..=1.0).contains(&low_q) || !(0.0..=1.0).contains(&high_q) || low_q >= high_q {
        return Err(ImagingError::InvalidQuantiles {
            low: low_q,
            high: high_q,
        });
    }
    Ok(())
}

/// Clips to the `[low_q, high_q]` quantile window and rescales to `[0, 1]`.
/// A zero-width window maps every pixel to 0.
pub fn standardize_intensity(
    img: &RasterImage,
    low_q: f64,
    high_q: f64,
) -> Result<RasterImage, ImagingError> {
    check_quantiles(low_q, high_q)?;
    let mut values = img.pixels().to_vec();
    standardize_in_place(&mut values, low_q, high_q)?;
    Ok(RasterImage::from_clamped(img.width(), img.height(), values))
}

/// Slice form of [`standardize_intensity`], used for masked subsets
/// (e.g. lung-only pixels).
pub fn standardize_in_place(
    values: &mut [f64],
    low_q: f64,
    high_q: f64,
) -> Result<(), ImagingError> {
    check_quantiles(low_q, high_q)?;
    if values.is_empty() {
        return Ok(());
    }
    let mut scratch = values.to_vec();
    let lo = quantile_nearest_rank(&mut scratch, low_q);
    let hi = quantile_nearest_rank(&mut scratch, high_q);
    let range = hi - lo;
    if range <= 0.0 {
        values.iter_mut().for_each(|v| *v = 0.0);
        return Ok(());
    }
    for v in values.iter_mut() {
        *v = ((v.clamp(lo, hi) - lo) / range).clamp(0.0, 1.0);
    }
    Ok(())
}
