//! Run-length, size-zone, neighbourhood-difference and dependence matrices.

use std::collections::BTreeMap;

use super::discretize::{log2_term, LevelImage};
use super::RadiomicsError;

pub const GLRLM_NAMES: [&str; 16] = [
    "ShortRunEmphasis",
    "LongRunEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "GrayLevelVariance",
    "RunVariance",
    "RunEntropy",
    "LowGrayLevelRunEmphasis",
    "HighGrayLevelRunEmphasis",
    "ShortRunLowGrayLevelEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LongRunHighGrayLevelEmphasis",
];

pub const GLSZM_NAMES: [&str; 16] = [
    "SmallAreaEmphasis",
    "LargeAreaEmphasis",
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "ZonePercentage",
    "GrayLevelVariance",
    "ZoneVariance",
    "ZoneEntropy",
    "LowGrayLevelZoneEmphasis",
    "HighGrayLevelZoneEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
];

pub const NGTDM_NAMES: [&str; 5] = ["Coarseness", "Contrast", "Busyness", "Complexity", "Strength"];

pub const GLDM_NAMES: [&str; 7] = [
    "SmallDependenceEmphasis",
    "LargeDependenceEmphasis",
    "GrayLevelNonUniformity",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "DependenceVariance",
    "DependenceEntropy",
];

/// Sparse (gray level, length) -> weight matrix.
pub type SizeMatrix = BTreeMap<(u32, u32), f64>;

/// The 16 statistics shared by run-length and size-zone matrices. `count` is
/// the number of runs (zones), `n_pixels` the segment size.
fn size_matrix_features(m: &SizeMatrix, n_pixels: f64) -> [f64; 16] {
    let nr: f64 = m.values().sum();
    let mut by_level: BTreeMap<u32, f64> = BTreeMap::new();
    let mut by_len: BTreeMap<u32, f64> = BTreeMap::new();
    for (&(i, j), &v) in m {
        *by_level.entry(i).or_default() += v;
        *by_len.entry(j).or_default() += v;
    }
    let sum = |f: &dyn Fn(f64, f64) -> f64| m.iter().map(|(&(i, j), &v)| v * f(i as f64, j as f64)).sum::<f64>() / nr;
    let mu_i = sum(&|i, _| i);
    let mu_j = sum(&|_, j| j);
    let gln = by_level.values().map(|v| v * v).sum::<f64>() / nr;
    let rln = by_len.values().map(|v| v * v).sum::<f64>() / nr;
    [
        sum(&|_, j| 1.0 / (j * j)),
        sum(&|_, j| j * j),
        gln,
        gln / nr,
        rln,
        rln / nr,
        nr / n_pixels,
        sum(&|i, _| (i - mu_i).powi(2)),
        sum(&|_, j| (j - mu_j).powi(2)),
        -m.values().map(|&v| log2_term(v / nr)).sum::<f64>(),
        sum(&|i, _| 1.0 / (i * i)),
        sum(&|i, _| i * i),
        sum(&|i, j| 1.0 / (i * i * j * j)),
        sum(&|i, j| i * i / (j * j)),
        sum(&|i, j| j * j / (i * i)),
        sum(&|i, j| i * i * j * j),
    ]
}

/// Run-length matrix averaged over `directions`.
pub fn glrlm_matrix(img: &LevelImage, directions: &[(isize, isize)]) -> SizeMatrix {
    let mut acc = SizeMatrix::new();
    for &(dx, dy) in directions {
        for y in 0..img.height as isize {
            for x in 0..img.width as isize {
                let l = img.at(x, y);
                // a run starts where the previous pixel along the direction differs
                if l == 0 || img.at(x - dx, y - dy) == l {
                    continue;
                }
                let mut len = 1;
                while img.at(x + dx * len, y + dy * len) == l {
                    len += 1;
                }
                *acc.entry((l, len as u32)).or_default() += 1.0;
            }
        }
    }
    let k = directions.len() as f64;
    acc.values_mut().for_each(|v| *v /= k);
    acc
}

pub fn extract_glrlm(img: &LevelImage, directions: &[(isize, isize)]) -> Result<[f64; 16], RadiomicsError> {
    let np = img.pixel_count();
    if np == 0 || directions.is_empty() {
        return Err(RadiomicsError::EmptySegment);
    }
    Ok(size_matrix_features(&glrlm_matrix(img, directions), np as f64))
}

/// Size-zone matrix over 8-connected zones of equal level.
pub fn glszm_matrix(img: &LevelImage) -> SizeMatrix {
    let (w, h) = (img.width, img.height);
    let mut seen = vec![false; w * h];
    let mut m = SizeMatrix::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        let l = img.levels[start];
        if l == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0u32;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if img.at(x + dx, y + dy) == l {
                        let j = (y + dy) as usize * w + (x + dx) as usize;
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        *m.entry((l, size)).or_default() += 1.0;
    }
    m
}

pub fn extract_glszm(img: &LevelImage) -> Result<[f64; 16], RadiomicsError> {
    let np = img.pixel_count();
    if np == 0 {
        return Err(RadiomicsError::EmptySegment);
    }
    Ok(size_matrix_features(&glszm_matrix(img), np as f64))
}

const COARSENESS_CAP: f64 = 1e6;

/// Neighbourhood grey-tone difference features over the 8-neighbourhood.
/// Pixels without any in-segment neighbour are skipped.
pub fn extract_ngtdm(img: &LevelImage) -> Result<[f64; 5], RadiomicsError> {
    if img.pixel_count() == 0 {
        return Err(RadiomicsError::EmptySegment);
    }
    let mut s: BTreeMap<u32, (f64, f64)> = BTreeMap::new(); // level -> (n_i, s_i)
    for y in 0..img.height as isize {
        for x in 0..img.width as isize {
            let l = img.at(x, y);
            if l == 0 {
                continue;
            }
            let (mut sum, mut cnt) = (0.0, 0.0);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let v = img.at(x + dx, y + dy);
                    if (dx, dy) != (0, 0) && v > 0 {
                        sum += v as f64;
                        cnt += 1.0;
                    }
                }
            }
            if cnt > 0.0 {
                let e = s.entry(l).or_default();
                e.0 += 1.0;
                e.1 += (l as f64 - sum / cnt).abs();
            }
        }
    }
    let nvp: f64 = s.values().map(|e| e.0).sum();
    if nvp == 0.0 {
        return Ok([COARSENESS_CAP, 0.0, 0.0, 0.0, 0.0]);
    }
    let rows: Vec<(f64, f64, f64)> = s.iter().map(|(&l, &(n, si))| (l as f64, n / nvp, si)).collect();
    let ngp = rows.len() as f64;
    let ps: f64 = rows.iter().map(|&(_, p, si)| p * si).sum();
    let s_total: f64 = rows.iter().map(|r| r.2).sum();
    let coarseness = if ps > 0.0 { (1.0 / ps).min(COARSENESS_CAP) } else { COARSENESS_CAP };
    let (mut c2, mut busy_den, mut complexity, mut strength_num) = (0.0, 0.0, 0.0, 0.0);
    for &(i, pi, si) in &rows {
        for &(j, pj, sj) in &rows {
            c2 += pi * pj * (i - j).powi(2);
            busy_den += (i * pi - j * pj).abs();
            complexity += (i - j).abs() * (pi * si + pj * sj) / (pi + pj);
            strength_num += (pi + pj) * (i - j).powi(2);
        }
    }
    let contrast = if ngp > 1.0 {
        c2 / (ngp * (ngp - 1.0)) * s_total / nvp
    } else {
        0.0
    };
    let busyness = if ngp > 1.0 && busy_den > 0.0 { ps / busy_den } else { 0.0 };
    let strength = if s_total > 0.0 { strength_num / s_total } else { 0.0 };
    Ok([coarseness, contrast, busyness, complexity / nvp, strength])
}

/// Grey-level dependence features: for each pixel, 1 + the number of
/// 8-neighbours sharing its level.
pub fn extract_gldm(img: &LevelImage) -> Result<[f64; 7], RadiomicsError> {
    let mut m = SizeMatrix::new();
    for y in 0..img.height as isize {
        for x in 0..img.width as isize {
            let l = img.at(x, y);
            if l == 0 {
                continue;
            }
            let mut dep = 1u32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dx, dy) != (0, 0) && img.at(x + dx, y + dy) == l {
                        dep += 1;
                    }
                }
            }
            *m.entry((l, dep)).or_default() += 1.0;
        }
    }
    let nz: f64 = m.values().sum();
    if nz == 0.0 {
        return Err(RadiomicsError::EmptySegment);
    }
    let mut by_level: BTreeMap<u32, f64> = BTreeMap::new();
    let mut by_dep: BTreeMap<u32, f64> = BTreeMap::new();
    for (&(i, j), &v) in &m {
        *by_level.entry(i).or_default() += v;
        *by_dep.entry(j).or_default() += v;
    }
    let sum = |f: &dyn Fn(f64) -> f64| m.iter().map(|(&(_, j), &v)| v * f(j as f64)).sum::<f64>() / nz;
    let mu = sum(&|j| j);
    let dn = by_dep.values().map(|v| v * v).sum::<f64>() / nz;
    Ok([
        sum(&|j| 1.0 / (j * j)),
        sum(&|j| j * j),
        by_level.values().map(|v| v * v).sum::<f64>() / nz,
        dn,
        dn / nz,
        sum(&|j| (j - mu).powi(2)),
        -m.values().map(|&v| log2_term(v / nz)).sum::<f64>(),
    ])
}
