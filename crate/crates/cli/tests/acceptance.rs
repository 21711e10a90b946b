//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! an oracle written independently of the library code.
//!
//! Runs without the libtest harness so the lines always show. A failure
//! makes the process exit nonzero unless it is marked environmental (a
//! timing bound that needs more cores than the host has); set
//! `CIRCA_ACCEPTANCE_STRICT=1` to fail on those as well.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use circa_core::imaging::RasterImage;
use circa_core::labels::Class;
use circa_core::metrics::{class_metrics, dice, weighted_class_from_subtypes, ClassRates, ConfusionMatrix3, MetricsReport};
use circa_core::models::{
    batch_loss_and_grad, dense_forward, dense_train, em_path, fit_mixture, tree_fit, DecisionTreeModel, DenseNetParams,
    DenseTrainConfig, Gaussian2, GmmConfig, GmmModel2D, Mixture2, MockLungGeometry, MockSegmentation,
    ModelBackendHandle, Node, TreeConfig,
};
use circa_core::pipeline::synthetic::{synthetic_png, SyntheticSpec};
use circa_core::pipeline::{
    canonical_json, process_case, stratified_sample, Backends, DatasetManifest, ManifestEntry, ModelBundle, Pipeline,
    PipelineConfig, QualityGate, RejectionReason, SaliencyParams,
};
use circa_core::radiomics::{
    extract_first_order, extract_glcm, extract_glrlm, glcm_matrix, kruskal_wallis, LevelImage, DIRECTIONS,
    FIRST_ORDER_NAMES, GLCM_NAMES, GLRLM_NAMES,
};
use circa_core::segmentation::morphology::connected_components;
use circa_core::segmentation::{
    lung_trisection, mask_metrics, postprocess_mask, quality_score, skewed_outlier_threshold, BinaryMask, MaskMetrics,
};
use circa_core::Subtype;
use circa_service::{router, AppState, ServiceSettings, Store};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use tower::ServiceExt;

struct Failure {
    msg: String,
    environmental: bool,
}

impl From<String> for Failure {
    fn from(msg: String) -> Self {
        Self {
            msg,
            environmental: false,
        }
    }
}

type Check = Result<String, Failure>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(Failure::from(format!($($fmt)+)));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn golden_config() -> PipelineConfig {
    PipelineConfig {
        saliency: Some(SaliencyParams::default()),
        ..PipelineConfig::default()
    }
}

fn mocks(cfg: &PipelineConfig) -> Backends {
    Backends::mock(cfg.canvas_size, cfg.roi.size, cfg.sr_patch)
}

fn load_bundle() -> (ModelBundle, circa_core::pipeline::BundleManifest) {
    ModelBundle::load(&fixtures().join("demo-bundle")).expect("fixture bundle")
}

// ---------------------------------------------------------------- 1

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn median_of_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Pairwise kernel over all (x_i <= med <= x_j); values tied with the median
/// are indexed 0..k and get sign(i + j + 1 - k).
fn brute_medcouple(values: &[f64]) -> f64 {
    let s = sorted(values);
    let med = median_of_sorted(&s);
    let hi: Vec<f64> = s.iter().filter(|&&v| v >= med).map(|v| v - med).collect();
    let lo: Vec<f64> = s.iter().filter(|&&v| v <= med).map(|v| v - med).collect();
    let k = s.iter().filter(|&&v| v == med).count() as i64;
    let mut h = Vec::with_capacity(hi.len() * lo.len());
    let (mut ti, mut tj);
    ti = 0i64;
    for &a in &hi {
        tj = 0i64;
        let a_tie = a == 0.0;
        for &b in &lo {
            let b_tie = b == 0.0;
            if a_tie && b_tie {
                h.push(((ti + tj + 1 - k).signum()) as f64);
            } else {
                h.push((a + b) / (a - b));
            }
            if b_tie {
                tj += 1;
            }
        }
        if a_tie {
            ti += 1;
        }
    }
    median_of_sorted(&sorted(&h))
}

fn type7(s: &[f64], q: f64) -> f64 {
    let h = (s.len() - 1) as f64 * q;
    let f = h.floor();
    let i = f as usize;
    if i + 1 >= s.len() {
        return s[i];
    }
    s[i] + (h - f) * (s[i + 1] - s[i])
}

fn criterion_1() -> Check {
    let mut r = rng(1);
    let exp = Exp::new(1.0).unwrap();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for t in 0..200 {
        let n = r.random_range(4..=60);
        let mut v: Vec<f64> = (0..n).map(|_| exp.sample(&mut r) * 10.0).collect();
        if t % 3 == 0 {
            v.iter_mut().for_each(|x| *x = x.round());
        }
        if t % 5 == 0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let fence = skewed_outlier_threshold(&v).map_err(|e| format!("sample {t}: {e}"))?;
        let mc = brute_medcouple(&v);
        let s = sorted(&v);
        let (q1, q3) = (type7(&s, 0.25), type7(&s, 0.75));
        let factor = if mc >= 0.0 { (-4.0 * mc).exp() } else { (-3.0 * mc).exp() };
        let thr = q1 - 1.5 * factor * (q3 - q1);
        worst = worst.max((fence.medcouple - mc).abs()).max((fence.threshold - thr).abs());
        ensure!(
            close(fence.medcouple, mc, 1e-9) && close(fence.threshold, thr, 1e-9),
            "sample {t} (n={n}): medcouple {} vs {mc}, fence {} vs {thr}",
            fence.medcouple,
            fence.threshold
        );
    }
    for t in 0..50 {
        let c = r.random_range(-20..20) as f64;
        let half: Vec<f64> = (0..r.random_range(2..30)).map(|_| r.random_range(0..15) as f64 * 0.5).collect();
        let mut v: Vec<f64> = half.iter().flat_map(|d| [c - d, c + d]).collect();
        if t % 2 == 0 {
            v.push(c);
        }
        let fence = skewed_outlier_threshold(&v).map_err(|e| format!("{e}"))?;
        let s = sorted(&v);
        let (q1, q3) = (type7(&s, 0.25), type7(&s, 0.75));
        ensure!(fence.medcouple == 0.0, "symmetric sample {t}: medcouple {}", fence.medcouple);
        ensure!(
            fence.threshold == q1 - 1.5 * (q3 - q1),
            "symmetric sample {t}: fence {} vs Tukey {}",
            fence.threshold,
            q1 - 1.5 * (q3 - q1)
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 samples, max deviation {worst:.1e}; 50 symmetric samples give the Tukey fence; {elapsed:.2?}"))
}

// ---------------------------------------------------------------- 2

fn idx(names: &[&str], name: &str) -> usize {
    names.iter().position(|n| *n == name).unwrap()
}

fn random_levels(r: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    let (w, h) = (r.random_range(2..=6), r.random_range(2..=6));
    let levels = r.random_range(1..=4);
    loop {
        let rows: Vec<Vec<u32>> = (0..h)
            .map(|_| (0..w).map(|_| if r.random::<f64>() < 0.2 { 0 } else { r.random_range(1..=levels) }).collect())
            .collect();
        if rows.iter().flatten().any(|&l| l > 0) {
            return rows;
        }
    }
}

fn level_image(rows: &[Vec<u32>]) -> LevelImage {
    let refs: Vec<&[u32]> = rows.iter().map(|r| r.as_slice()).collect();
    LevelImage::from_rows(&refs)
}

/// Co-occurrence by enumerating every ordered pixel pair.
fn oracle_glcm(rows: &[Vec<u32>], ng: usize) -> Option<Vec<Vec<f64>>> {
    let (h, w) = (rows.len() as isize, rows[0].len() as isize);
    let pixels: Vec<(isize, isize, u32)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| (x, y, rows[y as usize][x as usize]))
        .filter(|p| p.2 > 0)
        .collect();
    let mut acc = vec![vec![0.0; ng]; ng];
    let mut used = 0;
    for &(dx, dy) in &DIRECTIONS {
        let mut m = vec![vec![0.0; ng]; ng];
        let mut total = 0.0;
        for a in &pixels {
            for b in &pixels {
                if b.0 - a.0 == dx && b.1 - a.1 == dy {
                    let (i, j) = (a.2 as usize - 1, b.2 as usize - 1);
                    m[i][j] += 1.0;
                    m[j][i] += 1.0;
                    total += 2.0;
                }
            }
        }
        if total > 0.0 {
            used += 1;
            for i in 0..ng {
                for j in 0..ng {
                    acc[i][j] += m[i][j] / total;
                }
            }
        }
    }
    (used > 0).then(|| acc.iter().map(|r| r.iter().map(|v| v / used as f64).collect()).collect())
}

/// Run counts `(level, length) -> count` averaged over directions, found by
/// testing every start and length for a maximal segment.
fn oracle_runs(rows: &[Vec<u32>]) -> Vec<(u32, u32, f64)> {
    let (h, w) = (rows.len() as isize, rows[0].len() as isize);
    let at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            rows[y as usize][x as usize]
        }
    };
    let mut out: Vec<(u32, u32, f64)> = Vec::new();
    for &(dx, dy) in &DIRECTIONS {
        for y in 0..h {
            for x in 0..w {
                let l = at(x, y);
                if l == 0 {
                    continue;
                }
                for len in 1..=6isize {
                    let inside = (0..len).all(|k| at(x + k * dx, y + k * dy) == l);
                    let maximal = at(x - dx, y - dy) != l && at(x + len * dx, y + len * dy) != l;
                    if inside && maximal {
                        match out.iter_mut().find(|e| e.0 == l && e.1 == len as u32) {
                            Some(e) => e.2 += 0.25,
                            None => out.push((l, len as u32, 0.25)),
                        }
                    }
                }
            }
        }
    }
    out
}

fn oracle_first_order(px: &[f64], bw: f64) -> Vec<(&'static str, f64)> {
    let n = px.len() as f64;
    let s = sorted(px);
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = s.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = s.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let min = s[0];
    let mut hist = std::collections::BTreeMap::new();
    for &v in px {
        *hist.entry(((v - min) / bw).floor() as i64).or_insert(0.0) += 1.0 / n;
    }
    let entropy = -hist.values().map(|p: &f64| p * p.log2()).sum::<f64>();
    let uniformity = hist.values().map(|p| p * p).sum::<f64>();
    let p10 = type7(&s, 0.1);
    let p90 = type7(&s, 0.9);
    let win: Vec<f64> = s.iter().copied().filter(|v| *v >= p10 && *v <= p90).collect();
    // an empty 10-90 window (too few pixels) counts as zero spread
    let rmad = if win.is_empty() {
        0.0
    } else {
        let wmean = win.iter().sum::<f64>() / win.len() as f64;
        win.iter().map(|v| (v - wmean).abs()).sum::<f64>() / win.len() as f64
    };
    let energy = s.iter().map(|v| v * v).sum::<f64>();
    let flat = var == 0.0;
    vec![
        ("Energy", energy),
        ("TotalEnergy", energy),
        ("Entropy", entropy),
        ("Minimum", min),
        ("10Percentile", p10),
        ("90Percentile", p90),
        ("Maximum", s[s.len() - 1]),
        ("Mean", mean),
        ("Median", type7(&s, 0.5)),
        ("InterquartileRange", type7(&s, 0.75) - type7(&s, 0.25)),
        ("Range", s[s.len() - 1] - min),
        ("MeanAbsoluteDeviation", s.iter().map(|v| (v - mean).abs()).sum::<f64>() / n),
        ("RobustMeanAbsoluteDeviation", rmad),
        ("RootMeanSquared", (energy / n).sqrt()),
        ("StandardDeviation", var.sqrt()),
        ("Skewness", if flat { 0.0 } else { m3 / var.powf(1.5) }),
        ("Kurtosis", if flat { 0.0 } else { m4 / (var * var) }),
        ("Variance", var),
        ("Uniformity", uniformity),
    ]
}

fn criterion_2() -> Check {
    let mut r = rng(2);
    let mut checked = 0usize;
    for t in 0..300 {
        // first order on integer intensities so binning is exact
        let n = r.random_range(1..=36);
        let px: Vec<f64> = (0..n).map(|_| r.random_range(0..20) as f64).collect();
        let bw = [1.0, 2.0, 3.0][t % 3];
        let got = extract_first_order(&px, bw).map_err(|e| format!("{e}"))?;
        for (name, want) in oracle_first_order(&px, bw) {
            let g = got[idx(&FIRST_ORDER_NAMES, name)];
            ensure!(close(g, want, 1e-9), "first order {name} on {px:?}: {g} vs {want}");
            checked += 1;
        }

        let rows = random_levels(&mut r);
        let img = level_image(&rows);
        let ng = img.n_levels as usize;
        let oracle = oracle_glcm(&rows, ng);
        let got = glcm_matrix(&img, &DIRECTIONS);
        ensure!(oracle.is_some() == got.is_some(), "GLCM presence differs on {rows:?}");
        if let (Some(p), Some(m)) = (oracle, got) {
            for i in 0..ng {
                for j in 0..ng {
                    ensure!(close(m[(i, j)], p[i][j], 1e-12), "GLCM[{i},{j}] on {rows:?}");
                }
            }
            let f = extract_glcm(&img, &DIRECTIONS).map_err(|e| format!("{e}"))?;
            let lv = |i: usize| (i + 1) as f64;
            let sum2 = |g: &dyn Fn(usize, usize) -> f64| {
                (0..ng).flat_map(|i| (0..ng).map(move |j| (i, j))).map(|(i, j)| g(i, j) * p[i][j]).sum::<f64>()
            };
            let mu = sum2(&|i, _| lv(i));
            let var = sum2(&|i, _| (lv(i) - mu).powi(2));
            let mut want = vec![
                ("Autocorrelation", sum2(&|i, j| lv(i) * lv(j))),
                ("JointAverage", mu),
                ("Contrast", sum2(&|i, j| (lv(i) - lv(j)).powi(2))),
                ("DifferenceAverage", sum2(&|i, j| (lv(i) - lv(j)).abs())),
                ("JointEnergy", p.iter().flatten().map(|v| v * v).sum()),
                ("JointEntropy", -p.iter().flatten().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()),
                ("Idm", sum2(&|i, j| 1.0 / (1.0 + (lv(i) - lv(j)).powi(2)))),
                ("Id", sum2(&|i, j| 1.0 / (1.0 + (lv(i) - lv(j)).abs()))),
                ("MaximumProbability", p.iter().flatten().copied().fold(0.0, f64::max)),
                ("SumAverage", sum2(&|i, j| lv(i) + lv(j))),
                ("SumSquares", var),
                ("ClusterTendency", sum2(&|i, j| (lv(i) + lv(j) - 2.0 * mu).powi(2))),
            ];
            if var > 0.0 {
                want.push(("Correlation", (sum2(&|i, j| lv(i) * lv(j)) - mu * mu) / var));
            }
            for (name, w) in want {
                let g = f[idx(&GLCM_NAMES, name)];
                ensure!(close(g, w, 1e-9), "GLCM {name} on {rows:?}: {g} vs {w}");
                checked += 1;
            }
        }

        let runs = oracle_runs(&rows);
        let np = rows.iter().flatten().filter(|&&l| l > 0).count() as f64;
        let nr: f64 = runs.iter().map(|e| e.2).sum();
        let by = |key: &dyn Fn(&(u32, u32, f64)) -> u32| {
            let mut m = std::collections::BTreeMap::new();
            for e in &runs {
                *m.entry(key(e)).or_insert(0.0) += e.2;
            }
            m.values().map(|v: &f64| v * v).sum::<f64>() / nr
        };
        let mean_of = |g: &dyn Fn(f64, f64) -> f64| runs.iter().map(|&(i, j, c)| c * g(i as f64, j as f64)).sum::<f64>() / nr;
        let want = [
            ("ShortRunEmphasis", mean_of(&|_, j| 1.0 / (j * j))),
            ("LongRunEmphasis", mean_of(&|_, j| j * j)),
            ("GrayLevelNonUniformity", by(&|e| e.0)),
            ("RunLengthNonUniformity", by(&|e| e.1)),
            ("RunPercentage", nr / np),
            ("RunEntropy", -runs.iter().map(|e| (e.2 / nr) * (e.2 / nr).log2()).sum::<f64>()),
            ("LowGrayLevelRunEmphasis", mean_of(&|i, _| 1.0 / (i * i))),
            ("HighGrayLevelRunEmphasis", mean_of(&|i, _| i * i)),
            ("LongRunHighGrayLevelEmphasis", mean_of(&|i, j| i * i * j * j)),
        ];
        let f = extract_glrlm(&img, &DIRECTIONS).map_err(|e| format!("{e}"))?;
        for (name, w) in want {
            let g = f[idx(&GLRLM_NAMES, name)];
            ensure!(close(g, w, 1e-9), "GLRLM {name} on {rows:?}: {g} vs {w}");
            checked += 1;
        }
    }

    // constant regions
    for n in [1usize, 7, 36] {
        let f = extract_first_order(&vec![0.42; n], 0.1).map_err(|e| format!("{e}"))?;
        let (v, e) = (f[idx(&FIRST_ORDER_NAMES, "Variance")], f[idx(&FIRST_ORDER_NAMES, "Entropy")]);
        ensure!(v == 0.0 && e == 0.0, "constant region of {n}: variance {v}, entropy {e}");
    }
    let flat = level_image(&[vec![3, 3, 3], vec![3, 3, 0], vec![3, 3, 3]]);
    let c = extract_glcm(&flat, &DIRECTIONS).map_err(|e| format!("{e}"))?[idx(&GLCM_NAMES, "Contrast")];
    ensure!(c == 0.0, "constant GLCM contrast {c}");
    Ok(format!("{checked} feature values on 300 random cases within 1e-9; constant regions exact"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let mut r = rng(3);
    let mut done = 0;
    let mut max_dev = 0.0f64;
    while done < 100 {
        let n = r.random_range(5..=30);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(0..8) as f64).collect();
        let labels: Vec<Class> = (0..n).map(|_| Class::ALL[r.random_range(0..3)]).collect();
        let groups: Vec<usize> = (0..3).filter(|&g| labels.iter().any(|l| l.index() == g)).collect();
        if groups.len() < 2 || values.iter().all(|v| *v == values[0]) {
            continue;
        }
        done += 1;
        let rank: Vec<f64> = values
            .iter()
            .map(|&v| {
                let below = values.iter().filter(|&&u| u < v).count() as f64;
                let equal = values.iter().filter(|&&u| u == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect();
        let nf = n as f64;
        let rbar = (nf + 1.0) / 2.0;
        let mut between = 0.0;
        for &g in &groups {
            let rs: Vec<f64> = (0..n).filter(|&i| labels[i].index() == g).map(|i| rank[i]).collect();
            let m = rs.iter().sum::<f64>() / rs.len() as f64;
            between += rs.len() as f64 * (m - rbar).powi(2);
        }
        let total: f64 = rank.iter().map(|x| (x - rbar).powi(2)).sum();
        let h = (nf - 1.0) * between / total;
        // the classic form with an explicit tie correction must agree
        let mut ties = 0.0;
        let s = sorted(&values);
        let mut i = 0;
        while i < n {
            let t = s.iter().filter(|&&v| v == s[i]).count();
            ties += (t * t * t - t) as f64;
            i += t;
        }
        let h_classic = 12.0 / (nf * (nf + 1.0)) * between / (1.0 - ties / (nf * nf * nf - nf));
        ensure!(close(h, h_classic, 1e-9), "oracle forms disagree: {h} vs {h_classic}");
        let got = kruskal_wallis(&values, &labels).map_err(|e| format!("{e}"))?;
        let k = groups.len() as f64;
        let eta = ((h - k + 1.0) / (nf - k)).max(0.0);
        max_dev = max_dev.max((got.h - h).abs());
        ensure!(close(got.h, h, 1e-9), "H {} vs {h} on {values:?} / {labels:?}", got.h);
        ensure!(close(got.eta_squared, eta, 1e-9), "eta² {} vs {eta}", got.eta_squared);
        if groups.len() == 3 {
            // chi-square with 2 degrees of freedom: sf(h) = exp(-h/2)
            ensure!(close(got.p_value, (-h / 2.0).exp(), 1e-9), "p {} vs {}", got.p_value, (-h / 2.0).exp());
        }
    }
    Ok(format!("100 tied datasets, max |ΔH| {max_dev:.1e}; eta² and p-values agree"))
}

// ---------------------------------------------------------------- 4

/// Straightforward per-sample forward pass: ReLU hidden layers, softmax
/// output, weighted cross-entropy plus the L2 penalty.
fn oracle_loss(p: &DenseNetParams, x: &[Vec<f64>], y: &[usize], w: &[f64], l2: f64) -> f64 {
    let mut total = 0.0;
    for (i, xi) in x.iter().enumerate() {
        let mut a = xi.clone();
        for (li, layer) in p.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.weights.nrows())
                .map(|r| layer.bias[r] + (0..a.len()).map(|c| layer.weights[(r, c)] * a[c]).sum::<f64>())
                .collect();
            a = if li + 1 < p.layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z };
        }
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += w[i] * (lse - a[y[i]]);
    }
    let penalty: f64 = p.layers.iter().flat_map(|l| l.weights.iter()).map(|v| v * v).sum();
    total / w.iter().sum::<f64>() + l2 * penalty
}

fn criterion_4() -> Check {
    let mut r = rng(4);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let widths = [16, 8, 3];
    let h = 1e-5;
    let mut worst = 0.0f64;
    for net in 0..5u64 {
        let l2 = 1e-3;
        let mut params = DenseNetParams::init(10, &widths, 0.0, l2, net);
        for l in &mut params.layers {
            l.bias.iter_mut().for_each(|b| *b = normal.sample(&mut r) * 0.1);
        }
        let x: Vec<Vec<f64>> = (0..12).map(|_| (0..10).map(|_| normal.sample(&mut r)).collect()).collect();
        let y: Vec<usize> = (0..12).map(|_| r.random_range(0..3)).collect();
        let w: Vec<f64> = y.iter().map(|&c| [0.1, 0.3, 0.9][c]).collect();
        let all: Vec<usize> = (0..12).collect();
        let (loss, grads) = batch_loss_and_grad(&params, &x, &y, &w, &all, None);
        let want = oracle_loss(&params, &x, &y, &w, l2);
        ensure!(close(loss, want, 1e-10), "net {net}: loss {loss} vs oracle {want}");
        for li in 0..params.layers.len() {
            let (rows, cols) = params.layers[li].weights.shape();
            for rr in 0..rows {
                for cc in 0..=cols {
                    // column `cols` is the bias
                    let analytic = if cc < cols { grads[li].0[(rr, cc)] } else { grads[li].1[rr] };
                    let probe = |delta: f64| {
                        let mut q = params.clone();
                        if cc < cols {
                            q.layers[li].weights[(rr, cc)] += delta;
                        } else {
                            q.layers[li].bias[rr] += delta;
                        }
                        oracle_loss(&q, &x, &y, &w, l2)
                    };
                    let numeric = (probe(h) - probe(-h)) / (2.0 * h);
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
    }
    ensure!(worst < 1e-4, "max relative gradient error {worst:.2e}");

    let params = DenseNetParams::init(10, &widths, 0.0, 0.0, 9);
    let mut sum_dev = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..10).map(|_| normal.sample(&mut r) * 30.0).collect();
        let p = dense_forward(&params, &x, false, None).map_err(|e| format!("{e}"))?;
        sum_dev = sum_dev.max((p.to_array().iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(sum_dev <= 1e-6, "softmax sum off by {sum_dev:.2e}");

    // three well separated clusters
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 0..3 {
        for _ in 0..100 {
            let mut v: Vec<f64> = (0..10).map(|_| normal.sample(&mut r) * 0.5).collect();
            v[c] += 4.0;
            x.push(v);
            y.push(Class::ALL[c]);
        }
    }
    let cfg = DenseTrainConfig {
        widths: widths.to_vec(),
        lr: 0.01,
        batch: 32,
        dropout: 0.0,
        l2: 0.0,
        class_weights: [0.1, 0.3, 0.9],
        epochs: 200,
        seed: 5,
    };
    let ys: Vec<usize> = y.iter().map(|c| c.index()).collect();
    let ws: Vec<f64> = ys.iter().map(|&c| cfg.class_weights[c]).collect();
    let before = oracle_loss(&DenseNetParams::init(10, &widths, 0.0, 0.0, cfg.seed), &x, &ys, &ws, 0.0);
    let (trained, report) = dense_train(&x, &y, &cfg).map_err(|e| format!("{e}"))?;
    let after = oracle_loss(&trained, &x, &ys, &ws, 0.0);
    ensure!(close(report.epoch_losses[0], before, 1e-9), "initial loss {} vs {before}", report.epoch_losses[0]);
    let reduction = 1.0 - after / before;
    ensure!(reduction >= 0.9, "weighted cross-entropy {before:.4} -> {after:.4} ({:.1}%)", reduction * 100.0);
    Ok(format!(
        "max gradient rel. error {worst:.1e}; softmax sum within {sum_dev:.0e}; weighted CE {before:.3} -> {after:.4} (-{:.1}%)",
        reduction * 100.0
    ))
}

// ---------------------------------------------------------------- 5

fn oracle_loglik(comps: &[Gaussian2], pts: &[[f64; 2]]) -> f64 {
    pts.iter()
        .map(|p| {
            comps
                .iter()
                .map(|g| {
                    let [a, b, _, c] = g.cov;
                    let det = a * c - b * b;
                    let (dx, dy) = (p[0] - g.mean[0], p[1] - g.mean[1]);
                    // inverse of [[a, b], [b, c]] is [[c, -b], [-b, a]] / det
                    let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
                    g.weight * (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
                })
                .sum::<f64>()
                .ln()
        })
        .sum()
}

fn criterion_5() -> Check {
    let mut r = rng(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let truth = [([0.0, 0.0], 0.2), ([8.0, 0.0], 0.3), ([4.0, 48.0f64.sqrt()], 0.5)];
    let mut pts = Vec::new();
    for (mean, w) in truth {
        for _ in 0..(600.0 * w) as usize {
            pts.push([mean[0] + normal.sample(&mut r), mean[1] + normal.sample(&mut r)]);
        }
    }
    let line: Vec<[f64; 2]> = (0..90).map(|i| [(i / 30 * 10) as f64 + (i % 30) as f64 * 0.1; 2]).collect();

    let mut steps = 0;
    for (data, label) in [(&pts, "mixture"), (&line, "degenerate")] {
        for restart in 0..10 {
            let path = em_path(data, 3, 0.1, 11, restart).map_err(|e| format!("{e}"))?;
            let ll: Vec<f64> = path.iter().map(|c| oracle_loglik(c, data)).collect();
            for t in 1..ll.len() {
                ensure!(
                    ll[t] >= ll[t - 1] - 1e-9 * ll[t - 1].abs(),
                    "{label} restart {restart}: log-likelihood fell at step {t}: {} -> {}",
                    ll[t - 1],
                    ll[t]
                );
            }
            steps += ll.len();
        }
    }

    let fit = fit_mixture(&pts, 3, 10, 0.1, 11).map_err(|e| format!("{e}"))?;
    let mut worst_mean = 0.0f64;
    let mut worst_weight = 0.0f64;
    for (mean, w) in truth {
        let g = fit
            .components
            .iter()
            .min_by(|a, b| {
                let d = |g: &&Gaussian2| (g.mean[0] - mean[0]).hypot(g.mean[1] - mean[1]);
                d(a).total_cmp(&d(b))
            })
            .unwrap();
        worst_mean = worst_mean.max((g.mean[0] - mean[0]).abs()).max((g.mean[1] - mean[1]).abs());
        worst_weight = worst_weight.max((g.weight - w).abs());
    }
    ensure!(worst_mean <= 0.2 && worst_weight <= 0.05, "recovery: mean error {worst_mean:.3}, weight error {worst_weight:.3}");

    let degenerate = fit_mixture(&line, 3, 10, 0.1, 11).map_err(|e| format!("{e}"))?;
    for g in &degenerate.components {
        let [a, b, _, c] = g.cov;
        let small = (a + c) / 2.0 - (((a - c) / 2.0).powi(2) + b * b).sqrt();
        ensure!(close(small, 0.1, 1e-6), "degenerate data: smallest covariance eigenvalue {small}");
    }

    let one = fit_mixture(&pts, 3, 1, 0.1, 21).map_err(|e| format!("{e}"))?;
    let best = fit_mixture(&pts, 3, 100, 0.1, 21).map_err(|e| format!("{e}"))?;
    let bic = |m: &Mixture2| -2.0 * oracle_loglik(&m.components, &pts) + 17.0 * (pts.len() as f64).ln();
    ensure!(close(bic(&best), best.bic, 1e-6 * best.bic.abs()), "BIC {} vs oracle {}", best.bic, bic(&best));
    ensure!(best.bic <= one.bic, "best-of-100 BIC {} > single {}", best.bic, one.bic);
    Ok(format!(
        "{steps} EM steps non-decreasing; mean error {worst_mean:.3}, weight error {worst_weight:.3}; floor 0.1 held; BIC {:.2} <= {:.2}",
        best.bic, one.bic
    ))
}

// ---------------------------------------------------------------- 6

struct Cart<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    cfg: &'a TreeConfig,
    nodes: Vec<Node>,
}

impl Cart<'_> {
    fn gini_score(&self, left: [usize; 3], right: [usize; 3]) -> f64 {
        let cw = self.cfg.class_weights;
        let side = |c: [usize; 3]| {
            let w: Vec<f64> = (0..3).map(|k| c[k] as f64 * cw[k]).collect();
            let t: f64 = w.iter().sum();
            let g = if t > 0.0 { 1.0 - w.iter().map(|v| (v / t).powi(2)).sum::<f64>() } else { 0.0 };
            (t, g)
        };
        let ((tl, gl), (tr, gr)) = (side(left), side(right));
        if tl + tr > 0.0 {
            (tl * gl + tr * gr) / (tl + tr)
        } else {
            0.0
        }
    }

    fn counts(&self, idx: &[usize]) -> [usize; 3] {
        let mut c = [0; 3];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let slot = self.nodes.len();
        let cw = self.cfg.class_weights;
        let w: Vec<f64> = (0..3).map(|k| counts[k] as f64 * cw[k]).collect();
        let t: f64 = w.iter().sum();
        let probs = if t > 0.0 {
            [w[0] / t, w[1] / t, w[2] / t]
        } else {
            counts.map(|c| c as f64 / idx.len() as f64)
        };
        self.nodes.push(Node::Leaf { counts, probs });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.cfg.max_depth || pure || idx.len() < 2 * self.cfg.min_leaf.max(1) {
            return slot;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x[0].len() {
            let mut vals: Vec<f64> = idx.iter().map(|&i| self.x[i][f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for pair in vals.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                let mut thr = lo + (hi - lo) / 2.0;
                if thr >= hi {
                    thr = lo;
                }
                let left: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][f] <= thr).collect();
                let right: Vec<usize> = idx.iter().copied().filter(|&i| self.x[i][f] > thr).collect();
                if left.len() < self.cfg.min_leaf || right.len() < self.cfg.min_leaf {
                    continue;
                }
                let s = self.gini_score(self.counts(&left), self.counts(&right));
                if best.is_none_or(|b| s < b.0 - 1e-12) {
                    best = Some((s, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return slot;
        };
        let (l, rr): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(rr, depth + 1);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

fn random_tree_data(r: &mut ChaCha8Rng, n: usize, nf: usize) -> (Vec<Vec<f64>>, Vec<Class>) {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let coarse = r.random::<bool>();
    for _ in 0..n {
        let row: Vec<f64> = (0..nf)
            .map(|_| if coarse { r.random_range(0..12) as f64 * 0.25 } else { r.random::<f64>() })
            .collect();
        let signal = row[0] + if nf > 1 { row[1] } else { 0.0 } * 0.5;
        let c = if r.random::<f64>() < 0.25 { r.random_range(0..3) } else { ((signal * 2.0) as usize).min(2) };
        x.push(row);
        y.push(Class::ALL[c]);
    }
    (x, y)
}

fn walk_depth(t: &DecisionTreeModel, i: usize) -> usize {
    match &t.nodes[i] {
        Node::Leaf { .. } => 0,
        Node::Split { left, right, .. } => 1 + walk_depth(t, *left).max(walk_depth(t, *right)),
    }
}

fn criterion_6() -> Check {
    let mut r = rng(6);
    let mut total_nodes = 0;
    for d in 0..20 {
        let n = r.random_range(30..=500);
        let nf = r.random_range(1..=4);
        let (x, y) = random_tree_data(&mut r, n, nf);
        let cfg = TreeConfig {
            max_depth: r.random_range(1..=7),
            min_leaf: [1, 3, 10, 25][d % 4],
            features_per_split: nf,
            class_weights: [0.1, 0.3, 0.9],
            seed: d as u64,
        };
        let tree = tree_fit(&x, &y, &cfg).map_err(|e| format!("{e}"))?;
        let ys: Vec<usize> = y.iter().map(|c| c.index()).collect();
        let mut oracle = Cart {
            x: &x,
            y: &ys,
            cfg: &cfg,
            nodes: Vec::new(),
        };
        oracle.grow((0..n).collect(), 0);
        ensure!(
            tree.nodes.len() == oracle.nodes.len(),
            "dataset {d}: {} nodes vs oracle {}",
            tree.nodes.len(),
            oracle.nodes.len()
        );
        for (k, (a, b)) in tree.nodes.iter().zip(&oracle.nodes).enumerate() {
            let same = match (a, b) {
                (Node::Leaf { counts: ca, probs: pa }, Node::Leaf { counts: cb, probs: pb }) => {
                    ca == cb && pa.iter().zip(pb).all(|(u, v)| close(*u, *v, 1e-12))
                }
                (s1 @ Node::Split { .. }, s2 @ Node::Split { .. }) => s1 == s2,
                _ => false,
            };
            ensure!(same, "dataset {d} node {k}: {a:?} vs oracle {b:?}");
        }
        total_nodes += tree.nodes.len();
    }

    let mut leaves = 0;
    for d in 0..5 {
        let (x, y) = random_tree_data(&mut r, 4000, 5);
        let cfg = TreeConfig {
            seed: d,
            ..TreeConfig::default()
        };
        let tree = tree_fit(&x, &y, &cfg).map_err(|e| format!("{e}"))?;
        let depth = walk_depth(&tree, 0);
        ensure!(depth <= 7, "depth {depth}");
        for (counts, _) in tree.leaves() {
            let size: usize = counts.iter().sum();
            ensure!(size >= 100, "leaf with {size} samples");
            leaves += 1;
        }
    }
    Ok(format!("20 datasets match the exhaustive oracle ({total_nodes} nodes); {leaves} default-config leaves all >= 100 samples, depth <= 7"))
}

// ---------------------------------------------------------------- 7

fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
}

fn ellipse(w: usize, h: usize, c: (f64, f64), ax: (f64, f64)) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| ((x as f64 - c.0) / ax.0).powi(2) + ((y as f64 - c.1) / ax.1).powi(2) <= 1.0)
}

/// Every pixel centre inside the convex hull of the foreground pixel centres
/// (boundary included) is foreground, and nothing outside it is.
fn is_digitally_convex(m: &BinaryMask) -> bool {
    let (w, h) = m.dims();
    let mut pts: Vec<(f64, f64)> = (0..w * h).filter(|&i| m.bits()[i]).map(|i| ((i % w) as f64, (i / w) as f64)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        return true;
    }
    (0..w * h).all(|i| {
        let p = ((i % w) as f64, (i / w) as f64);
        let inside = (0..hull.len()).all(|k| cross(hull[k], hull[(k + 1) % hull.len()], p) >= -1e-9);
        inside == m.bits()[i]
    })
}

fn criterion_7() -> Check {
    let (w, h) = (160, 120);
    let big = ellipse(w, h, (40.0, 60.0), (25.0, 45.0));
    let mid = ellipse(w, h, (110.0, 55.0), (20.0, 40.0));
    let speck = rect(w, h, 145, 5, 6, 6);
    let all = big.union(&mid).union(&speck);
    let prob = RasterImage::from_fn(w, h, |x, y| if all.get(x, y) { 0.8 } else { 0.2 });
    let out = postprocess_mask(&prob, 0.5).map_err(|e| format!("{e}"))?;
    let comps = connected_components(&out);
    ensure!(comps.len() == 2, "{} components kept", comps.len());
    ensure!(out.intersection(&speck).count() == 0, "smallest blob retained");
    for (name, blob) in [("large", &big), ("medium", &mid)] {
        let kept = out.intersection(blob).count() as f64 / blob.count() as f64;
        ensure!(kept > 0.97, "{name} blob only {:.1}% retained", kept * 100.0);
    }
    for c in &comps {
        let m = c.to_mask(w, h);
        ensure!(is_digitally_convex(&m), "component with {} px is not convex", c.area);
    }

    let mask = out.clone();
    let bands = lung_trisection(&mask).map_err(|e| format!("{e}"))?;
    let bbox = mask.bounding_box().unwrap();
    let third = bbox.height() / 3;
    let mut union = BinaryMask::empty(w, h);
    for (k, b) in bands.iter().enumerate() {
        ensure!(union.intersection(b).count() == 0, "band {k} overlaps an earlier band");
        union = union.union(b);
        let lo = bbox.y0 + k * third;
        let hi = if k == 2 { bbox.y1 + 1 } else { lo + third };
        ensure!((0..w * h).filter(|&i| b.bits()[i]).all(|i| (lo..hi).contains(&(i / w))), "band {k} rows out of range");
    }
    ensure!(union == mask, "bands do not cover the mask");

    // an axis-aligned rectangle has closed-form moments
    let (rw, rh) = (30usize, 80usize);
    let r = rect(w, h, 20, 10, rw, rh);
    let m = mask_metrics(&r).map_err(|e| format!("{e}"))?;
    let (vx, vy) = (((rw * rw - 1) as f64) / 12.0, ((rh * rh - 1) as f64) / 12.0);
    let ecc = (1.0 - vx.min(vy) / vx.max(vy)).sqrt();
    ensure!(close(m.eccentricity, ecc, 1e-9), "eccentricity {} vs {ecc}", m.eccentricity);
    ensure!(close(m.orientation_deg.abs(), 90.0, 1e-9), "orientation {}", m.orientation_deg);
    ensure!(close(m.area_fraction, (rw * rh) as f64 / (w * h) as f64, 1e-12), "area fraction {}", m.area_fraction);
    ensure!(close(m.solidity, 1.0, 1e-12), "solidity {}", m.solidity);
    let manual = MaskMetrics {
        eccentricity: 0.8,
        orientation_deg: -30.0,
        area_fraction: 0.25,
        solidity: 0.9,
    };
    let q = quality_score(&manual);
    let want = (0.8 + (1.0 - 30.0 / 90.0) + 0.25 + 0.9) / 4.0;
    ensure!(close(q.value, want, 1e-12), "quality {} vs {want}", q.value);
    let qr = quality_score(&m);
    let want_r = (ecc + 0.0 + m.area_fraction + 1.0) / 4.0;
    ensure!(close(qr.value, want_r, 1e-9), "rectangle quality {} vs {want_r}", qr.value);

    let a = rect(64, 64, 10, 10, 10, 10);
    let b = rect(64, 64, 15, 10, 10, 10);
    let far = rect(64, 64, 40, 40, 10, 10);
    let d = [dice(&a, &a), dice(&a, &far), dice(&a, &b)].map(|r| r.unwrap());
    ensure!(d == [1.0, 0.0, 0.5], "dice identities {d:?}");
    Ok("two largest components kept and convex; trisection partitions the mask; quality arithmetic exact; dice 1/0/0.5".into())
}

// ---------------------------------------------------------------- 8

fn oracle_rates(m: [[u64; 3]; 3], c: usize) -> [Option<f64>; 7] {
    let total: u64 = m.iter().flatten().sum();
    let tp = m[c][c];
    let fp: u64 = (0..3).filter(|&t| t != c).map(|t| m[t][c]).sum();
    let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| m[c][p]).sum();
    let tn = total - tp - fp - fn_;
    let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let (ppv, sens, spec) = (div(tp, tp + fp), div(tp, tp + fn_), div(tn, tn + fp));
    let f1 = match (ppv, sens) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
        _ => None,
    };
    [ppv, div(tn, tn + fn_), sens, spec, div(tp + tn, total), sens.zip(spec).map(|(a, b)| (a + b) / 2.0), f1]
}

fn same_rates(a: &ClassRates, b: [Option<f64>; 7]) -> bool {
    a.values().iter().zip(b).all(|(x, y)| match (x, y) {
        (Some(x), Some(y)) => close(*x, y, 1e-12),
        (None, None) => true,
        _ => false,
    })
}

fn criterion_8() -> Check {
    let mut r = rng(8);
    let mut matrices = vec![[[50, 3, 2], [4, 30, 6], [1, 5, 40]], [[0, 0, 0], [2, 7, 1], [0, 3, 9]]];
    for _ in 0..50 {
        matrices.push([[0; 3]; 3].map(|row: [u64; 3]| row.map(|_| r.random_range(0..40))));
    }
    for m in &matrices {
        let rep = class_metrics(&ConfusionMatrix3::new(*m)).map_err(|e| format!("{e}"))?;
        for c in Class::ALL {
            ensure!(same_rates(rep.get(c), oracle_rates(*m, c.index())), "{m:?} class {c}");
        }
    }

    // covid row 1833/2000 correct; 9353 of 10000 non-covid cases not called covid
    let table = [[4500, 200, 300], [153, 4500, 347], [100, 67, 1833]];
    let rep = class_metrics(&ConfusionMatrix3::new(table)).map_err(|e| format!("{e}"))?;
    let (sens, spec) = (rep.covid.sensitivity.unwrap(), rep.covid.specificity.unwrap());
    ensure!(
        format!("{sens:.4}") == "0.9165" && format!("{spec:.4}") == "0.9353",
        "covid sensitivity {sens}, specificity {spec}"
    );

    let parts: Vec<([[u64; 3]; 3], u64)> = vec![
        ([[20, 2, 1], [3, 15, 2], [0, 1, 12]], 23),
        ([[30, 5, 0], [1, 9, 0], [0, 0, 0]], 35),
        ([[7, 0, 3], [0, 4, 1], [2, 2, 20]], 10),
    ];
    let reports: Vec<MetricsReport> = parts.iter().map(|(m, _)| class_metrics(&ConfusionMatrix3::new(*m)).unwrap()).collect();
    let refs: Vec<(&MetricsReport, u64)> = reports.iter().zip(&parts).map(|(rep, (_, n))| (rep, *n)).collect();
    let agg = weighted_class_from_subtypes(&refs).map_err(|e| format!("{e}"))?;
    for c in Class::ALL {
        let mut want = [None; 7];
        for (k, slot) in want.iter_mut().enumerate() {
            let defined: Vec<(f64, f64)> = parts
                .iter()
                .filter_map(|(m, n)| oracle_rates(*m, c.index())[k].map(|v| (v, *n as f64)))
                .collect();
            let wsum: f64 = defined.iter().map(|d| d.1).sum();
            *slot = (wsum > 0.0).then(|| defined.iter().map(|(v, n)| v * n).sum::<f64>() / wsum);
        }
        ensure!(same_rates(agg.get(c), want), "weighted aggregation for {c}");
    }
    Ok(format!(
        "{} matrices match hand rates; covid sensitivity {sens:.4}, specificity {spec:.4}; weighted aggregation exact",
        matrices.len()
    ))
}

// ---------------------------------------------------------------- 9

fn calls(b: &Backends) -> [usize; 3] {
    [&b.segmentation, &b.classifier, &b.feature_extractor].map(|s| s.as_ref().unwrap().calls())
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let (bundle, _) = load_bundle();
    let bundle = Arc::new(bundle);
    let image = std::fs::read(fixtures().join("chest.png")).map_err(|e| format!("fixture image: {e}"))?;
    let golden = std::fs::read_to_string(fixtures().join("chest.golden.json")).map_err(|e| format!("golden: {e}"))?;
    let cfg = golden_config();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let p = Pipeline::new(cfg.clone(), bundle.clone(), mocks(&cfg)).map_err(|e| format!("{e}"))?;
        runs.push(process_case(&image, None, &p).map_err(|e| format!("{e}"))?.result.golden_json());
    }
    ensure!(runs[0] == runs[1], "two runs differ");
    ensure!(runs[0] == golden.trim_end(), "result differs from the stored golden JSON");

    let run = |cfg: PipelineConfig, b: Backends, img: &[u8]| -> Result<(Option<RejectionReason>, [usize; 3]), Failure> {
        let p = Pipeline::new(cfg, bundle.clone(), b.clone()).map_err(|e| format!("{e}"))?;
        let out = process_case(img, None, &p).map_err(|e| format!("{e}"))?;
        Ok((out.result.rejection.map(|r| r.reason), calls(&b)))
    };
    let base = PipelineConfig::default();
    let black = RasterImage::filled(600, 600, 0.0).to_png();
    let (why, n) = run(base.clone(), mocks(&base), &black)?;
    ensure!(why == Some(RejectionReason::NoLungFound) && n == [1, 0, 0], "black image: {why:?} {n:?}");

    let mut small = mocks(&base);
    let geometry = MockLungGeometry {
        left_center: [200.0, 256.0],
        right_center: [312.0, 256.0],
        semi_axes: [69.0, 125.0],
        probability: 0.9,
    };
    small.segmentation = Some(ModelBackendHandle::new(MockSegmentation::with_geometry(512, geometry)));
    let img = synthetic_png(&SyntheticSpec::new(Class::Normal, 0, 512, 3));
    let (why, n) = run(base.clone(), small, &img)?;
    ensure!(why == Some(RejectionReason::TooSmall) && n == [1, 0, 0], "small lungs: {why:?} {n:?}");

    let strict = PipelineConfig {
        quality_gate: QualityGate::Fixed { threshold: 0.99 },
        ..PipelineConfig::default()
    };
    let (why, n) = run(strict.clone(), mocks(&strict), &image)?;
    ensure!(why == Some(RejectionReason::LowQuality) && n == [1, 0, 0], "strict quality gate: {why:?} {n:?}");

    let (why, n) = run(base.clone(), mocks(&base), &image)?;
    ensure!(why.is_none() && n == [1, 1, 1], "accepted case: {why:?} {n:?}");

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "golden JSON identical across runs; gates stop before classification; {elapsed:.2?} (one platform exercised)"
    ))
}

// ---------------------------------------------------------------- 10

fn mixture(components: Vec<Gaussian2>) -> Mixture2 {
    Mixture2 {
        components,
        log_likelihood: 0.0,
        bic: 0.0,
        iterations: 0,
        restart: 0,
        monotone: true,
    }
}

fn unit(mean: [f64; 2]) -> Gaussian2 {
    Gaussian2 {
        weight: 1.0 / 3.0,
        mean,
        cov: [1.0, 0.0, 0.0, 1.0],
    }
}

fn toy_gmm() -> GmmModel2D {
    let comps = vec![unit([0.0, 0.0]), unit([10.0, 0.0]), unit([0.0, 10.0])];
    GmmModel2D {
        config: GmmConfig::default(),
        classes: vec![mixture(comps.clone()), mixture(comps.clone()), mixture(comps)],
    }
}

fn entry(id: String, ds: &str, class: Class, k: usize, coords: [f64; 2]) -> ManifestEntry {
    ManifestEntry {
        subtype: Some(Subtype::new(class, k)),
        coords: Some(coords),
        ..ManifestEntry::new(id, ds, Some(class), "unused.png")
    }
}

fn criterion_10() -> Check {
    let gmm = toy_gmm();
    // cell N1 holds a at the component mean and b one unit away; cells N2, N3 one case each
    let (pa, pb) = ([0.0, 0.0], [1.0, 0.6]);
    let entries = vec![
        entry("a".into(), "d", Class::Normal, 0, pa),
        entry("b".into(), "d", Class::Normal, 0, pb),
        entry("c".into(), "d", Class::Normal, 1, [10.0, 0.0]),
        entry("e".into(), "d", Class::Normal, 2, [0.0, 10.0]),
    ];
    let manifest = DatasetManifest::new(entries, ".").map_err(|e| format!("{e}"))?;
    let density = |p: [f64; 2]| (-0.5 * (p[0] * p[0] + p[1] * p[1])).exp() / (2.0 * std::f64::consts::PI);
    let expected = density(pa) / (density(pa) + density(pb));
    let trials = 10_000;
    let mut hits = 0;
    for seed in 0..trials {
        let split = stratified_sample(&manifest, &gmm, 1, seed).map_err(|e| format!("{e}"))?;
        let ids: Vec<&str> = split.holdout.entries.iter().map(|e| e.id.as_str()).collect();
        ensure!(ids.len() == 3 && ids.contains(&"c") && ids.contains(&"e"), "seed {seed}: holdout {ids:?}");
        hits += ids.contains(&"a") as usize;
    }
    let rate = hits as f64 / trials as f64;
    ensure!((rate - expected).abs() <= 0.02, "empirical {rate:.4} vs density ratio {expected:.4}");

    // two datasets, one with a short cell, per_cell 50
    let mut r = rng(10);
    let mut entries = Vec::new();
    for (ds, sizes) in [("alpha", [60usize, 70, 55]), ("beta", [20, 90, 80])] {
        for class in Class::ALL {
            for (k, &n) in sizes.iter().enumerate() {
                let centre = gmm.classes[class.index()].components[k].mean;
                for i in 0..n {
                    let p = [centre[0] + r.random::<f64>() - 0.5, centre[1] + r.random::<f64>() - 0.5];
                    entries.push(entry(format!("{ds}-{class}-{k}-{i}"), ds, class, k, p));
                }
            }
        }
    }
    let manifest = DatasetManifest::new(entries, ".").map_err(|e| format!("{e}"))?;
    let split = stratified_sample(&manifest, &gmm, 50, 3).map_err(|e| format!("{e}"))?;
    let mut seen: Vec<&str> = split.holdout.entries.iter().chain(&split.train.entries).map(|e| e.id.as_str()).collect();
    let n_all = seen.len();
    seen.sort_unstable();
    seen.dedup();
    ensure!(n_all == manifest.entries.len() && seen.len() == n_all, "holdout and train do not partition the manifest");
    for ds in ["alpha", "beta"] {
        for class in Class::ALL {
            let n = split.holdout.entries.iter().filter(|e| e.dataset == ds && e.class == Some(class)).count();
            ensure!(n == 150, "{ds}/{class}: {n} held out");
        }
    }
    Ok(format!(
        "P(a) {rate:.4} vs density ratio {expected:.4} over {trials} seeds; 150 per class per dataset, partition exact"
    ))
}

// ---------------------------------------------------------------- 11

const TOKEN: &str = "acceptance-token";
const BOUNDARY: &str = "circa-acceptance-boundary";

fn service(dir: &Path, max_upload: Option<usize>) -> Router {
    let cfg = golden_config();
    let (bundle, manifest) = load_bundle();
    let pipeline = Pipeline::new(cfg.clone(), Arc::new(bundle), mocks(&cfg)).unwrap();
    let mut s = ServiceSettings {
        data_dir: dir.to_path_buf(),
        workers: 8,
        ..ServiceSettings::default()
    };
    if let Some(m) = max_upload {
        s.max_upload_bytes = m;
    }
    s.tokens.insert(TOKEN.into(), "acceptance".into());
    router(AppState::new(pipeline, Store::open(dir).unwrap(), Some(manifest), &s))
}

fn upload(uri: &str, image: &[u8], ct: &str, fields: &[(&str, &str)], token: Option<&str>) -> Request<Body> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"x\"\r\nContent-Type: {ct}\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(image);
    body.extend_from_slice(b"\r\n");
    for (k, v) in fields {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes());
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    let mut req = Request::post(uri).header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"));
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    req.body(Body::from(body)).unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, serde_json::Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

fn without_volatile(mut v: serde_json::Value) -> String {
    let id = v["id"].as_str().unwrap_or_default().to_string();
    let o = v.as_object_mut().unwrap();
    o.remove("id");
    o.remove("submitted_at");
    if let Some(r) = o.get_mut("result").and_then(|r| r.as_object_mut()) {
        r.remove("timings");
    }
    canonical_json(&v).replace(&id, "{id}")
}

async fn service_contract() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let app = service(dir.path(), None);
    let png = std::fs::read(fixtures().join("chest.png")).unwrap();
    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../service/tests/golden/predict_fixture.json");
    let golden = std::fs::read_to_string(golden_path).map_err(|e| format!("service golden: {e}"))?;

    let (s, v) = send(&app, upload("/api/v1/predict", &png, "image/png", &[], None)).await;
    ensure!(s == StatusCode::OK, "predict: {s}");
    let id = v["id"].as_str().unwrap_or_default().to_string();
    ensure!(without_volatile(v) == golden.trim_end(), "predict response differs from the golden file");

    let (s, v) = send(&app, Request::get(format!("/api/v1/cases/{id}")).body(Body::empty()).unwrap()).await;
    ensure!(s == StatusCode::OK && v["id"] == id.as_str(), "get case: {s}");
    let (s, v) = send(&app, Request::get("/api/v1/health").body(Body::empty()).unwrap()).await;
    ensure!(s == StatusCode::OK && v["status"] == "ok", "health: {s} {v}");

    let (s, v) = send(&app, upload("/api/v1/predict", b"hello", "text/plain", &[], None)).await;
    ensure!(s == StatusCode::BAD_REQUEST && v["code"] == "unsupported_format", "text upload: {s} {v}");
    let fields = [("label", "covid"), ("notes", "acceptance")];
    let (s, _) = send(&app, upload("/api/v1/verified", &png, "image/png", &fields, None)).await;
    ensure!(s == StatusCode::UNAUTHORIZED, "verified without token: {s}");
    let (s, v) = send(&app, upload("/api/v1/verified", &png, "image/png", &fields, Some(TOKEN))).await;
    ensure!(s == StatusCode::CREATED && v["verified_label"] == "covid", "verified: {s} {v}");
    let missing = "/api/v1/cases/00000000-0000-4000-8000-000000000000";
    let (s, _) = send(&app, Request::get(missing).body(Body::empty()).unwrap()).await;
    ensure!(s == StatusCode::NOT_FOUND, "unknown case: {s}");
    let tiny = service(dir.path(), Some(4096));
    let (s, _) = send(&tiny, upload("/api/v1/predict", &png, "image/png", &[], None)).await;
    ensure!(s == StatusCode::PAYLOAD_TOO_LARGE, "oversize upload: {s}");

    let mut single = Vec::new();
    for _ in 0..3 {
        let t = Instant::now();
        let (s, _) = send(&app, upload("/api/v1/predict", &png, "image/png", &[], None)).await;
        ensure!(s == StatusCode::OK, "single upload {s}");
        single.push(t.elapsed());
    }
    single.sort();
    let single = single[1];
    let t = Instant::now();
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (app, png) = (app.clone(), png.clone());
            tokio::spawn(async move { send(&app, upload("/api/v1/predict", &png, "image/png", &[], None)).await.0 })
        })
        .collect();
    for task in tasks {
        let s = task.await.unwrap();
        ensure!(s == StatusCode::OK, "concurrent upload {s}");
    }
    let parallel = t.elapsed();
    let ratio = parallel.as_secs_f64() / single.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "golden predict, get, health, verified and 400/401/404/413 paths pass; 16 concurrent uploads {parallel:.2?} vs single {single:.2?} = {ratio:.1}x (bound 4x, {cores} core(s))"
    );
    if ratio > 4.0 {
        return Err(Failure {
            msg: detail,
            environmental: cores < 8,
        });
    }
    Ok(detail)
}

fn criterion_11() -> Check {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(service_contract())
}

// ----------------------------------------------------------------

fn main() {
    // `cargo test -- --list` and friends pass libtest flags; nothing to list here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(usize, &str, fn() -> Check); 11] = [
        (1, "medcouple fence", criterion_1),
        (2, "radiomics oracles", criterion_2),
        (3, "Kruskal-Wallis", criterion_3),
        (4, "dense network", criterion_4),
        (5, "Gaussian mixture", criterion_5),
        (6, "decision tree", criterion_6),
        (7, "segmentation post-processing", criterion_7),
        (8, "metrics", criterion_8),
        (9, "end-to-end determinism", criterion_9),
        (10, "stratified sampling", criterion_10),
        (11, "service contract", criterion_11),
    ];
    let strict = std::env::var("CIRCA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut hard = 0;
    let mut soft = 0;
    for (n, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(Failure::from(format!("panicked: {msg}")))
        });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(f) if f.environmental && !strict => {
                soft += 1;
                println!("FAIL {n:>2} {name}: {} [environmental: needs >= 8 cores]", f.msg);
            }
            Err(f) => {
                hard += 1;
                println!("FAIL {n:>2} {name}: {}", f.msg);
            }
        }
    }
    println!("acceptance: {} passed, {hard} failed, {soft} failed on environment", 11 - hard - soft);
    if hard > 0 {
        std::process::exit(1);
    }
}
