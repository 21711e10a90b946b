//! Adjusted-boxplot lower fence for skewed score distributions.

use serde::{Deserialize, Serialize};

use super::SegmentationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierFence {
    pub threshold: f64,
    pub medcouple: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linearly interpolated quartiles of sorted data.
pub fn quartiles(sorted: &[f64]) -> (f64, f64) {
    let at = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    (at(0.25), at(0.75))
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Kernel matrix over the upper half `plus` (values at or above the median,
/// decreasing) and lower half `minus` (at or below, decreasing), both centred
/// on the median. Entries decrease along rows and columns.
struct Kernel<'a> {
    plus: &'a [f64],
    minus: &'a [f64],
}

impl Kernel<'_> {
    fn h(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.plus[i], self.minus[j]);
        if a == b {
            // both equal to the median
            let s = self.plus.len() as i64 - 1 - i as i64 - j as i64;
            s.signum() as f64
        } else {
            (a + b) / (a - b)
        }
    }

    /// k-th largest entry (0-based) without materializing the matrix.
    fn kth_largest(&self, k: usize) -> f64 {
        let p = self.plus.len();
        let q = self.minus.len();
        let mut left = vec![0usize; p];
        let mut right = vec![q; p]; // exclusive
        loop {
            let l_total: usize = left.iter().sum();
            let remaining: usize = (0..p).map(|i| right[i] - left[i]).sum();
            if remaining <= p.max(16) {
                let mut rest: Vec<f64> = (0..p)
                    .flat_map(|i| (left[i]..right[i]).map(move |j| (i, j)))
                    .map(|(i, j)| self.h(i, j))
                    .collect();
                rest.sort_by(|a, b| b.total_cmp(a));
                return rest[k - l_total];
            }
            let mut cands: Vec<(f64, usize)> = (0..p)
                .filter(|&i| left[i] < right[i])
                .map(|i| (self.h(i, (left[i] + right[i] - 1) / 2), right[i] - left[i]))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0));
            let half = remaining.div_ceil(2);
            let mut acc = 0;
            let mut pivot = cands[0].0;
            for &(v, wgt) in &cands {
                acc += wgt;
                pivot = v;
                if acc >= half {
                    break;
                }
            }
            // count_gt[i]: entries of row i strictly above the pivot
            let mut count_gt = vec![0usize; p];
            let mut j = 0;
            for i in (0..p).rev() {
                while j < q && self.h(i, j) > pivot {
                    j += 1;
                }
                count_gt[i] = j;
            }
            let mut count_ge = vec![0usize; p];
            let mut j = 0;
            for i in (0..p).rev() {
                while j < q && self.h(i, j) >= pivot {
                    j += 1;
                }
                count_ge[i] = j;
            }
            let sum_gt: usize = count_gt.iter().sum();
            let sum_ge: usize = count_ge.iter().sum();
            if k < sum_gt {
                for i in 0..p {
                    right[i] = right[i].min(count_gt[i]);
                }
            } else if k >= sum_ge {
                for i in 0..p {
                    left[i] = left[i].max(count_ge[i]);
                }
            } else {
                return pivot;
            }
        }
    }
}

/// Medcouple of `values` in O(n log n).
pub fn medcouple(values: &[f64]) -> f64 {
    let mut x: Vec<f64> = values.to_vec();
    x.sort_by(|a, b| b.total_cmp(a));
    let mut asc = x.clone();
    asc.reverse();
    let med = median_sorted(&asc);
    let plus: Vec<f64> = x.iter().filter(|&&v| v >= med).map(|v| v - med).collect();
    let minus: Vec<f64> = x.iter().filter(|&&v| v <= med).map(|v| v - med).collect();
    if plus.is_empty() || minus.is_empty() {
        return 0.0;
    }
    let kern = Kernel {
        plus: &plus,
        minus: &minus,
    };
    let total = plus.len() * minus.len();
    if total % 2 == 1 {
        kern.kth_largest(total / 2)
    } else {
        (kern.kth_largest(total / 2 - 1) + kern.kth_largest(total / 2)) / 2.0
    }
}

/// Lower adjusted-boxplot fence. Scores strictly below `threshold` are outliers.
pub fn skewed_outlier_threshold(scores: &[f64]) -> Result<OutlierFence, SegmentationError> {
    if scores.len() < 4 {
        return Err(SegmentationError::TooFewSamples {
            needed: 4,
            got: scores.len(),
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, q3) = quartiles(&sorted);
    let mc = medcouple(scores);
    let factor = if mc >= 0.0 { (-4.0 * mc).exp() } else { (-3.0 * mc).exp() };
    Ok(OutlierFence {
        threshold: q1 - 1.5 * factor * (q3 - q1),
        medcouple: mc,
        q1,
        q3,
    })
}
