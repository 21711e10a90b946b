use nalgebra::DMatrix;

use super::discretize::{log2_term, LevelImage};
use super::RadiomicsError;

pub const GLCM_NAMES: [&str; 24] = [
    "Autocorrelation",
    "JointAverage",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "JointEnergy",
    "JointEntropy",
    "Imc1",
    "Imc2",
    "Idm",
    "Idmn",
    "Id",
    "Idn",
    "InverseVariance",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
    "MCC",
];

/// Symmetric co-occurrence matrix (`n_levels x n_levels`, level `i` at index
/// `i - 1`) normalized per offset and averaged over the offsets that produced
/// at least one pair. Returns `None` when no offset finds a pair.
pub fn glcm_matrix(img: &LevelImage, offsets: &[(isize, isize)]) -> Option<DMatrix<f64>> {
    let ng = img.n_levels as usize;
    let mut acc = DMatrix::<f64>::zeros(ng, ng);
    let mut used = 0usize;
    for &(dx, dy) in offsets {
        let mut m = DMatrix::<f64>::zeros(ng, ng);
        let mut total = 0.0;
        for y in 0..img.height as isize {
            for x in 0..img.width as isize {
                let a = img.at(x, y);
                if a == 0 {
                    continue;
                }
                let b = img.at(x + dx, y + dy);
                if b == 0 {
                    continue;
                }
                let (i, j) = (a as usize - 1, b as usize - 1);
                m[(i, j)] += 1.0;
                m[(j, i)] += 1.0;
                total += 2.0;
            }
        }
        if total > 0.0 {
            acc += m / total;
            used += 1;
        }
    }
    (used > 0).then(|| acc / used as f64)
}

/// Maximal correlation coefficient: square root of the second largest
/// eigenvalue of `Q = D⁻¹ P D⁻¹ P` (D = diag of the marginal), computed via the
/// similar symmetric matrix `S²` with `S = D^-½ P D^-½` on non-empty levels.
fn mcc(p: &DMatrix<f64>, px: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..px.len()).filter(|&i| px[i] > 0.0).collect();
    if idx.len() < 2 {
        return 1.0;
    }
    let n = idx.len();
    let s = DMatrix::from_fn(n, n, |a, b| {
        let (i, j) = (idx[a], idx[b]);
        p[(i, j)] / (px[i] * px[j]).sqrt()
    });
    let s2 = &s * &s;
    let sym = (&s2 + s2.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev[1].clamp(0.0, 1.0).sqrt()
}

/// GLCM features in [`GLCM_NAMES`] order.
pub fn extract_glcm(img: &LevelImage, offsets: &[(isize, isize)]) -> Result<[f64; 24], RadiomicsError> {
    let p = glcm_matrix(img, offsets).ok_or(RadiomicsError::EmptySegment)?;
    Ok(glcm_features(&p))
}

pub fn glcm_features(p: &DMatrix<f64>) -> [f64; 24] {
    let ng = p.nrows();
    let ngf = ng as f64;
    let lvl = |i: usize| (i + 1) as f64;
    let px: Vec<f64> = (0..ng).map(|i| p.row(i).sum()).collect();
    let py: Vec<f64> = (0..ng).map(|j| p.column(j).sum()).collect();
    let mux: f64 = (0..ng).map(|i| lvl(i) * px[i]).sum();
    let muy: f64 = (0..ng).map(|j| lvl(j) * py[j]).sum();
    let sx = (0..ng).map(|i| (lvl(i) - mux).powi(2) * px[i]).sum::<f64>().sqrt();
    let sy = (0..ng).map(|j| (lvl(j) - muy).powi(2) * py[j]).sum::<f64>().sqrt();
    let mut psum = vec![0.0; 2 * ng + 1]; // index k = i + j (levels)
    let mut pdiff = vec![0.0; ng]; // index k = |i - j|
    let mut f = [0.0f64; 24];
    let (mut autocorr, mut prom, mut shade, mut tend, mut contrast) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut energy, mut jent, mut hxy1, mut hxy2) = (0.0, 0.0, 0.0, 0.0);
    let (mut idm, mut idmn, mut id, mut idn, mut maxp, mut sumsq, mut cross) = (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0, 0.0);
    for i in 0..ng {
        for j in 0..ng {
            let v = p[(i, j)];
            let pxy = px[i] * py[j];
            if pxy > 0.0 {
                hxy2 -= pxy * pxy.log2();
                if v > 0.0 {
                    hxy1 -= v * pxy.log2();
                }
            }
            if v == 0.0 {
                continue;
            }
            let (a, b) = (lvl(i), lvl(j));
            let d = (a - b).abs();
            psum[i + j + 2] += v;
            pdiff[i.abs_diff(j)] += v;
            autocorr += a * b * v;
            cross += a * b * v;
            let c = a + b - mux - muy;
            prom += c.powi(4) * v;
            shade += c.powi(3) * v;
            tend += c * c * v;
            contrast += d * d * v;
            energy += v * v;
            jent -= log2_term(v);
            idm += v / (1.0 + d * d);
            idmn += v / (1.0 + d * d / (ngf * ngf));
            id += v / (1.0 + d);
            idn += v / (1.0 + d / ngf);
            maxp = maxp.max(v);
            sumsq += (a - mux).powi(2) * v;
        }
    }
    let hx = -px.iter().map(|&v| log2_term(v)).sum::<f64>();
    let hy = -py.iter().map(|&v| log2_term(v)).sum::<f64>();
    let correlation = if sx * sy > 0.0 {
        (cross - mux * muy) / (sx * sy)
    } else {
        1.0
    };
    let diff_avg: f64 = pdiff.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let diff_ent = -pdiff.iter().map(|&v| log2_term(v)).sum::<f64>();
    let diff_var: f64 = pdiff.iter().enumerate().map(|(k, &v)| (k as f64 - diff_avg).powi(2) * v).sum();
    let inv_var: f64 = pdiff.iter().enumerate().skip(1).map(|(k, &v)| v / (k * k) as f64).sum();
    let sum_avg: f64 = psum.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let sum_ent = -psum.iter().map(|&v| log2_term(v)).sum::<f64>();
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 { (jent - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - jent)).exp()).max(0.0).sqrt();
    f[0] = autocorr;
    f[1] = mux;
    f[2] = prom;
    f[3] = shade;
    f[4] = tend;
    f[5] = contrast;
    f[6] = correlation;
    f[7] = diff_avg;
    f[8] = diff_ent;
    f[9] = diff_var;
    f[10] = energy;
    f[11] = jent;
    f[12] = imc1;
    f[13] = imc2;
    f[14] = idm;
    f[15] = idmn;
    f[16] = id;
    f[17] = idn;
    f[18] = inv_var;
    f[19] = maxp;
    f[20] = sum_avg;
    f[21] = sum_ent;
    f[22] = sumsq;
    f[23] = mcc(p, &px);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomics::discretize::DIRECTIONS;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn feat(f: &[f64; 24], name: &str) -> f64 {
        f[GLCM_NAMES.iter().position(|&n| n == name).unwrap()]
    }

    #[test]
    fn constant_region() {
        let img = LevelImage::from_rows(&[&[1, 1, 1], &[1, 1, 1]]);
        let f = extract_glcm(&img, &DIRECTIONS).unwrap();
        assert_eq!(feat(&f, "Contrast"), 0.0);
        assert_eq!(feat(&f, "MaximumProbability"), 1.0);
        assert_eq!(feat(&f, "JointEntropy"), 0.0);
        assert_eq!(feat(&f, "MCC"), 1.0);
    }

    #[test]
    fn two_by_two_horizontal() {
        let img = LevelImage::from_rows(&[&[1, 2], &[1, 2]]);
        let p = glcm_matrix(&img, &[(1, 0)]).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
        let f = glcm_features(&p);
        assert_eq!(feat(&f, "Contrast"), 1.0);
        assert_eq!(feat(&f, "Correlation"), -1.0);
    }

    /// Correlation by a direct double sum over an explicitly enumerated matrix.
    #[test]
    fn gradient_row_correlation_oracle() {
        let row: Vec<u32> = (1..=8).collect();
        let img = LevelImage::from_rows(&[&row]);
        let p = glcm_matrix(&img, &[(1, 0)]).unwrap();
        let mut pairs = Vec::new();
        for k in 0..7u32 {
            pairs.push((k + 1, k + 2));
            pairs.push((k + 2, k + 1));
        }
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|&(a, _)| a as f64).sum::<f64>() / n;
        let my = pairs.iter().map(|&(_, b)| b as f64).sum::<f64>() / n;
        let cov = pairs.iter().map(|&(a, b)| (a as f64 - mx) * (b as f64 - my)).sum::<f64>() / n;
        let vx = pairs.iter().map(|&(a, _)| (a as f64 - mx).powi(2)).sum::<f64>() / n;
        let vy = pairs.iter().map(|&(_, b)| (b as f64 - my).powi(2)).sum::<f64>() / n;
        let expect = cov / (vx * vy).sqrt();
        assert_abs_diff_eq!(feat(&glcm_features(&p), "Correlation"), expect, epsilon = 1e-9);
    }

    #[test]
    fn no_pairs_is_empty() {
        let img = LevelImage::from_rows(&[&[1, 0], &[0, 0]]);
        assert_eq!(extract_glcm(&img, &DIRECTIONS), Err(RadiomicsError::EmptySegment));
    }

    proptest! {
        #[test]
        fn normalized_and_finite(levels in proptest::collection::vec(0u32..5, 36)) {
            let rows: Vec<&[u32]> = levels.chunks(6).collect();
            let img = LevelImage::from_rows(&rows);
            if let Some(p) = glcm_matrix(&img, &DIRECTIONS) {
                prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
                prop_assert!((&p - p.transpose()).abs().max() <= 1e-15);
                let f = glcm_features(&p);
                prop_assert!(f.iter().all(|v| v.is_finite()));
                let mcc = feat(&f, "MCC");
                prop_assert!((0.0..=1.0).contains(&mcc));
            }
        }
    }
}
