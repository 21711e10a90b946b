use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::RadiomicsError;
use crate::labels::Class;

pub const DEFAULT_MIN_ETA: f64 = 0.01;
pub const DEFAULT_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p_value: f64,
    pub eta_squared: f64,
}

/// Average ranks (1-based) with ties sharing their mean rank. Also returns
/// the tie term `sum(t^3 - t)`.
fn ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (r, ties)
}

/// Tie-corrected Kruskal–Wallis H across the class groups, its chi-square
/// p-value with `k - 1` degrees of freedom and the effect size
/// `eta² = (H - k + 1) / (n - k)`, clamped at 0.
pub fn kruskal_wallis(values: &[f64], labels: &[Class]) -> Result<KruskalWallis, RadiomicsError> {
    if values.len() != labels.len() {
        return Err(RadiomicsError::ShapeMismatch {
            expected: labels.len(),
            got: values.len(),
        });
    }
    let n = values.len();
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    let k = counts.iter().filter(|&&c| c > 0).count();
    if k < 2 {
        return Err(RadiomicsError::DegenerateGroups);
    }
    if n < 5 {
        return Err(RadiomicsError::InsufficientData { needed: 5, got: n });
    }
    let (r, ties) = ranks(values);
    let mut sums = [0.0f64; 3];
    for (ri, l) in r.iter().zip(labels) {
        sums[l.index()] += ri;
    }
    let nf = n as f64;
    let raw = 12.0 / (nf * (nf + 1.0))
        * (0..3).filter(|&g| counts[g] > 0).map(|g| sums[g] * sums[g] / counts[g] as f64).sum::<f64>()
        - 3.0 * (nf + 1.0);
    let correction = 1.0 - ties / (nf * nf * nf - nf);
    let h = if correction > 0.0 { (raw / correction).max(0.0) } else { 0.0 };
    let df = (k - 1) as f64;
    let p_value = ChiSquared::new(df).expect("positive degrees of freedom").sf(h);
    let kf = k as f64;
    let eta_squared = if nf > kf { ((h - kf + 1.0) / (nf - kf)).max(0.0) } else { 0.0 };
    Ok(KruskalWallis {
        h,
        p_value,
        eta_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRank {
    pub name: String,
    pub h: f64,
    pub p_value: f64,
    pub eta_squared: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub min_eta: f64,
    pub cap: usize,
    pub features: Vec<FeatureRank>,
}

impl SelectionReport {
    /// Catalog indices of the selected features, in selection order.
    pub fn selected_indices(&self) -> Vec<usize> {
        select_features(self, self.min_eta, self.cap)
    }
}

/// Features with `eta² >= min_eta`, by decreasing effect size (ties by
/// catalog index), at most `cap` of them.
pub fn select_features(report: &SelectionReport, min_eta: f64, cap: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..report.features.len())
        .filter(|&i| report.features[i].eta_squared >= min_eta)
        .collect();
    idx.sort_by(|&a, &b| {
        report.features[b]
            .eta_squared
            .total_cmp(&report.features[a].eta_squared)
            .then(a.cmp(&b))
    });
    idx.truncate(cap);
    idx
}

/// Ranks every column of `matrix` (cases × features). Constant columns get
/// H = 0, p = 1.
pub fn rank_features(
    matrix: &[Vec<f64>],
    labels: &[Class],
    names: &[String],
    min_eta: f64,
    cap: usize,
) -> Result<SelectionReport, RadiomicsError> {
    let width = names.len();
    if let Some(row) = matrix.iter().find(|r| r.len() != width) {
        return Err(RadiomicsError::ShapeMismatch {
            expected: width,
            got: row.len(),
        });
    }
    let mut features = Vec::with_capacity(width);
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = matrix.iter().map(|r| r[j]).collect();
        let kw = kruskal_wallis(&col, labels)?;
        features.push(FeatureRank {
            name: name.clone(),
            h: kw.h,
            p_value: kw.p_value,
            eta_squared: kw.eta_squared,
            selected: false,
        });
    }
    let mut report = SelectionReport {
        min_eta,
        cap,
        features,
    };
    for i in select_features(&report, min_eta, cap) {
        report.features[i].selected = true;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const N: Class = Class::Normal;
    const P: Class = Class::Pneumonia;
    const C: Class = Class::Covid;

    /// Textbook H from explicit rank lists, tie-corrected.
    fn oracle(groups: &[Vec<f64>]) -> f64 {
        let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
        let n = pooled.len() as f64;
        let rank_of = |v: f64| {
            let below = pooled.iter().filter(|&&w| w < v).count() as f64;
            let equal = pooled.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let mut s = 0.0;
        for g in groups {
            let r: f64 = g.iter().map(|&v| rank_of(v)).sum();
            s += r * r / g.len() as f64;
        }
        let h = 12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0);
        let mut distinct = pooled.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let ties: f64 = distinct
            .iter()
            .map(|&v| {
                let t = pooled.iter().filter(|&&w| w == v).count() as f64;
                t * t * t - t
            })
            .sum();
        h / (1.0 - ties / (n * n * n - n))
    }

    #[test]
    fn three_separated_groups() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        let l = [N, N, N, P, P, P, C, C, C];
        let kw = kruskal_wallis(&v, &l).unwrap();
        assert_abs_diff_eq!(kw.h, 7.2, epsilon = 1e-12);
        assert_abs_diff_eq!(kw.eta_squared, (7.2 - 2.0) / 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kw.p_value, (-3.6f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn identical_groups() {
        let v = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let l = [N, N, N, P, P, P, C, C, C];
        let kw = kruskal_wallis(&v, &l).unwrap();
        assert_abs_diff_eq!(kw.h, 0.0, epsilon = 1e-12);
        assert_eq!(kw.eta_squared, 0.0);
        let flat = kruskal_wallis(&[2.0; 6], &[N, N, P, P, C, C]).unwrap();
        assert_eq!((flat.h, flat.p_value), (0.0, 1.0));
    }

    #[test]
    fn ties_match_oracle() {
        let v = [1.0, 2.0, 2.0, 3.0, 2.0, 5.0, 5.0, 1.0, 4.0, 4.0, 2.0];
        let l = [N, N, N, N, P, P, P, P, C, C, C];
        let groups: Vec<Vec<f64>> = Class::ALL
            .iter()
            .map(|&c| v.iter().zip(&l).filter(|(_, &x)| x == c).map(|(&a, _)| a).collect())
            .collect();
        assert_abs_diff_eq!(kruskal_wallis(&v, &l).unwrap().h, oracle(&groups), epsilon = 1e-9);
    }

    #[test]
    fn degenerate() {
        assert_eq!(kruskal_wallis(&[1.0; 6], &[N; 6]), Err(RadiomicsError::DegenerateGroups));
    }

    fn report(etas: &[f64]) -> SelectionReport {
        SelectionReport {
            min_eta: DEFAULT_MIN_ETA,
            cap: DEFAULT_CAP,
            features: etas
                .iter()
                .enumerate()
                .map(|(i, &e)| FeatureRank {
                    name: format!("f{i}"),
                    h: 0.0,
                    p_value: 1.0,
                    eta_squared: e,
                    selected: false,
                })
                .collect(),
        }
    }

    #[test]
    fn selection_rules() {
        assert!(select_features(&report(&[0.0; 261]), 0.01, 200).is_empty());
        let etas: Vec<f64> = (0..261).map(|i| if i < 230 { 0.02 + i as f64 * 1e-3 } else { 0.0 }).collect();
        let sel = select_features(&report(&etas), 0.01, 200);
        assert_eq!(sel.len(), 200);
        assert_eq!(sel[0], 229);
        assert!(sel.iter().all(|&i| (30..230).contains(&i)));
        let sel = select_features(&report(&[0.5, 0.3, 0.3, 0.1]), 0.01, 2);
        assert_eq!(sel, vec![0, 1]);
    }

    proptest! {
        #[test]
        fn h_invariant_under_monotone_maps(
            v in proptest::collection::vec(-5.0f64..5.0, 9..40),
            a in 0.1f64..3.0, b in -2.0f64..2.0,
        ) {
            let labels: Vec<Class> = (0..v.len()).map(|i| Class::ALL[i % 3]).collect();
            let w: Vec<f64> = v.iter().map(|&x| (a * x + b).exp()).collect();
            let h1 = kruskal_wallis(&v, &labels).unwrap().h;
            let h2 = kruskal_wallis(&w, &labels).unwrap().h;
            prop_assert!((h1 - h2).abs() <= 1e-9 * (1.0 + h1.abs()));
        }

        #[test]
        fn selection_bounded_and_deterministic(etas in proptest::collection::vec(0.0f64..0.1, 0..300), cap in 0usize..250) {
            let r = report(&etas);
            let s1 = select_features(&r, 0.01, cap);
            prop_assert!(s1.len() <= cap);
            prop_assert_eq!(s1, select_features(&r, 0.01, cap));
        }
    }
}
