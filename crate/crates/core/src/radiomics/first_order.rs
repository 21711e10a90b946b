use super::discretize::{discretize, log2_term};
use super::RadiomicsError;

pub const FIRST_ORDER_NAMES: [&str; 19] = [
    "Energy",
    "TotalEnergy",
    "Entropy",
    "Minimum",
    "10Percentile",
    "90Percentile",
    "Maximum",
    "Mean",
    "Median",
    "InterquartileRange",
    "Range",
    "MeanAbsoluteDeviation",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "StandardDeviation",
    "Skewness",
    "Kurtosis",
    "Variance",
    "Uniformity",
];

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Intensity statistics of a segment, in [`FIRST_ORDER_NAMES`] order.
/// Entropy and uniformity use the histogram at `bin_width`. Pixel area is 1,
/// so total energy equals energy.
pub fn extract_first_order(pixels: &[f64], bin_width: f64) -> Result<[f64; 19], RadiomicsError> {
    if pixels.is_empty() {
        return Err(RadiomicsError::EmptySegment);
    }
    let n = pixels.len() as f64;
    let mut s = pixels.to_vec();
    s.sort_by(f64::total_cmp);
    let energy: f64 = s.iter().map(|v| v * v).sum();
    let (levels, n_levels) = discretize(pixels, bin_width);
    let mut hist = vec![0usize; n_levels as usize + 1];
    for l in levels {
        hist[l as usize] += 1;
    }
    let probs: Vec<f64> = hist.iter().map(|&c| c as f64 / n).collect();
    let entropy = -probs.iter().map(|&p| log2_term(p)).sum::<f64>();
    let uniformity: f64 = probs.iter().map(|p| p * p).sum();
    let mean = s.iter().sum::<f64>() / n;
    let central = |k: i32| s.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let flat = s[s.len() - 1] == s[0];
    let (m2, m3, m4) = if flat {
        (0.0, 0.0, 0.0)
    } else {
        (central(2), central(3), central(4))
    };
    let skewness = if flat { 0.0 } else { m3 / m2.powf(1.5) };
    let kurtosis = if flat { 0.0 } else { m4 / (m2 * m2) };
    let p10 = percentile(&s, 0.10);
    let p90 = percentile(&s, 0.90);
    let robust: Vec<f64> = s.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    // with very few pixels no value may fall inside the 10-90 window
    let rmad = if robust.is_empty() {
        0.0
    } else {
        let rmean = robust.iter().sum::<f64>() / robust.len() as f64;
        robust.iter().map(|v| (v - rmean).abs()).sum::<f64>() / robust.len() as f64
    };
    Ok([
        energy,
        energy,
        entropy,
        s[0],
        p10,
        p90,
        s[s.len() - 1],
        mean,
        percentile(&s, 0.5),
        percentile(&s, 0.75) - percentile(&s, 0.25),
        s[s.len() - 1] - s[0],
        s.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
        rmad,
        (energy / n).sqrt(),
        m2.sqrt(),
        skewness,
        kurtosis,
        m2,
        uniformity,
    ])
}
