use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::labels::{Class, Subtype};

pub const DEFAULT_COMPONENTS: usize = 3;
pub const DEFAULT_RESTARTS: usize = 100;
pub const DEFAULT_REG: f64 = 0.1;
const TOL: f64 = 1e-7;
const MAX_ITER: usize = 500;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major symmetric covariance `[a, b, b, c]`.
    pub cov: [f64; 4],
}

impl Gaussian2 {
    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        let [a, b, _, c] = self.cov;
        let det = a * c - b * b;
        let (dx, dy) = (p[0] - self.mean[0], p[1] - self.mean[1]);
        let maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        -LN_2PI - 0.5 * det.ln() - 0.5 * maha
    }

    pub fn cov_eigenvalues(&self) -> [f64; 2] {
        let [a, b, _, c] = self.cov;
        let half = (a + c) / 2.0;
        let r = (((a - c) / 2.0).powi(2) + b * b).sqrt();
        [half + r, half - r]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture2 {
    pub components: Vec<Gaussian2>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    /// Index of the restart that produced this fit.
    pub restart: usize,
    /// False if the log-likelihood ever decreased between EM iterations.
    pub monotone: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Total log of the mixture density over `points`.
pub fn em_loglik(components: &[Gaussian2], points: &[[f64; 2]]) -> f64 {
    let mut buf = vec![0.0; components.len()];
    points
        .iter()
        .map(|&p| {
            for (b, g) in buf.iter_mut().zip(components) {
                *b = g.weight.ln() + g.log_density(p);
            }
            log_sum_exp(&buf)
        })
        .sum()
}

/// Free parameters of a k-component full-covariance 2D mixture.
pub fn n_parameters(k: usize) -> usize {
    k * (2 + 3 + 1) - 1
}

/// Expected complete-data log-likelihood of one component's density.
fn expected_loglik(g: &Gaussian2, points: &[[f64; 2]], resp: &[Vec<f64>], j: usize) -> f64 {
    points.iter().zip(resp).map(|(p, r)| r[j] * g.log_density(*p)).sum()
}

/// M-step with `reg` added to the covariance diagonal. With `prev`, a
/// component keeps its previous covariance when that scores higher under the
/// current responsibilities; this guarded step is a generalized EM step and
/// cannot lower the log-likelihood, so it is used whenever the plain
/// regularized step would.
fn m_step(points: &[[f64; 2]], resp: &[Vec<f64>], reg: f64, prev: Option<&[Gaussian2]>) -> Vec<Gaussian2> {
    let k = resp[0].len();
    let n = points.len() as f64;
    (0..k)
        .map(|j| {
            let nk: f64 = resp.iter().map(|r| r[j]).sum::<f64>().max(f64::MIN_POSITIVE);
            let mut mean = [0.0; 2];
            for (p, r) in points.iter().zip(resp) {
                mean[0] += r[j] * p[0];
                mean[1] += r[j] * p[1];
            }
            mean = [mean[0] / nk, mean[1] / nk];
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (p, r) in points.iter().zip(resp) {
                let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
                a += r[j] * dx * dx;
                b += r[j] * dx * dy;
                c += r[j] * dy * dy;
            }
            let (a, b, c) = (a / nk + reg, b / nk, c / nk + reg);
            let candidate = Gaussian2 {
                weight: nk / n,
                mean,
                cov: [a, b, b, c],
            };
            match prev {
                Some(prev) => {
                    let kept = Gaussian2 {
                        cov: prev[j].cov,
                        ..candidate
                    };
                    if expected_loglik(&kept, points, resp, j) > expected_loglik(&candidate, points, resp, j) {
                        kept
                    } else {
                        candidate
                    }
                }
                None => candidate,
            }
        })
        .collect()
}

/// E-step; returns responsibilities and the log-likelihood of `comps`.
fn e_step(points: &[[f64; 2]], comps: &[Gaussian2], resp: &mut [Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut buf = vec![0.0; comps.len()];
    for (p, r) in points.iter().zip(resp.iter_mut()) {
        for (b, g) in buf.iter_mut().zip(comps) {
            *b = g.weight.ln() + g.log_density(*p);
        }
        let lse = log_sum_exp(&buf);
        total += lse;
        for (ri, b) in r.iter_mut().zip(&buf) {
            *ri = (b - lse).exp();
        }
    }
    total
}

/// One EM run from random soft responsibilities.
fn em_run(points: &[[f64; 2]], k: usize, reg: f64, rng: &mut ChaCha8Rng, mut path: Option<&mut Vec<Vec<Gaussian2>>>) -> Mixture2 {
    let mut resp: Vec<Vec<f64>> = points
        .iter()
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let mut comps = m_step(points, &resp, reg, None);
    if let Some(p) = path.as_deref_mut() {
        p.push(comps.clone());
    }
    let mut ll = e_step(points, &comps, &mut resp);
    let mut monotone = true;
    let mut iterations = 1;
    while iterations < MAX_ITER {
        let mut next = m_step(points, &resp, reg, None);
        let mut next_resp = resp.clone();
        let mut next_ll = e_step(points, &next, &mut next_resp);
        if next_ll < ll {
            next = m_step(points, &resp, reg, Some(&comps));
            next_ll = e_step(points, &next, &mut next_resp);
        }
        resp = next_resp;
        iterations += 1;
        if next_ll < ll - 1e-9 * ll.abs().max(1.0) {
            monotone = false;
        }
        let change = (next_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        comps = next;
        if let Some(p) = path.as_deref_mut() {
            p.push(comps.clone());
        }
        ll = next_ll;
        if change < TOL {
            break;
        }
    }
    let n = points.len() as f64;
    Mixture2 {
        bic: -2.0 * ll + n_parameters(k) as f64 * n.ln(),
        components: comps,
        log_likelihood: ll,
        iterations,
        restart: 0,
        monotone,
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Parameters after every iteration of one EM run (restart `restart` of
/// [`fit_mixture`] with the same seed), starting with the first M-step.
pub fn em_path(points: &[[f64; 2]], k: usize, reg: f64, seed: u64, restart: usize) -> Result<Vec<Vec<Gaussian2>>, ModelError> {
    if k == 0 || points.len() < k {
        return Err(ModelError::TooFewPoints {
            needed: k.max(1),
            got: points.len(),
        });
    }
    let mut path = Vec::new();
    em_run(points, k, reg, &mut restart_rng(seed, restart), Some(&mut path));
    Ok(path)
}

/// Best-BIC mixture over `restarts` EM runs. Restart `r` draws its initial
/// responsibilities from a stream keyed by `(seed, r)`, so a single-restart fit
/// equals restart 0 of a longer one.
pub fn fit_mixture(
    points: &[[f64; 2]],
    k: usize,
    restarts: usize,
    reg: f64,
    seed: u64,
) -> Result<Mixture2, ModelError> {
    if k == 0 || points.len() < k {
        return Err(ModelError::TooFewPoints {
            needed: k.max(1),
            got: points.len(),
        });
    }
    let mut best: Option<Mixture2> = None;
    for r in 0..restarts.max(1) {
        let mut fit = em_run(points, k, reg, &mut restart_rng(seed, r), None);
        debug_assert!(fit.monotone, "EM log-likelihood decreased");
        fit.restart = r;
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub components: usize,
    pub restarts: usize,
    pub reg: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: DEFAULT_COMPONENTS,
            restarts: DEFAULT_RESTARTS,
            reg: DEFAULT_REG,
            seed: 0,
        }
    }
}

/// One mixture per class in the 2D embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel2D {
    pub config: GmmConfig,
    /// Indexed by [`Class::index`].
    pub classes: Vec<Mixture2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtypeAssignment {
    pub subtype: Subtype,
    pub posterior: Vec<f64>,
    pub coords: [f64; 2],
}

/// Fits the three class mixtures; class `c` uses seed `config.seed + c`.
pub fn gmm_fit(points_by_class: &[Vec<[f64; 2]>; 3], config: &GmmConfig) -> Result<GmmModel2D, ModelError> {
    let classes = Class::ALL
        .iter()
        .map(|c| {
            fit_mixture(
                &points_by_class[c.index()],
                config.components,
                config.restarts,
                config.reg,
                config.seed.wrapping_add(c.index() as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GmmModel2D {
        config: *config,
        classes,
    })
}

/// Component posterior of `point` under one class's mixture.
pub fn posterior(components: &[Gaussian2], point: [f64; 2]) -> Vec<f64> {
    let logs: Vec<f64> = components.iter().map(|g| g.weight.ln() + g.log_density(point)).collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

/// Subtype of `class` whose component has the highest posterior at `point`
/// (ties go to the lower index).
pub fn gmm_predict_subtype(model: &GmmModel2D, point: [f64; 2], class: Class) -> SubtypeAssignment {
    let post = posterior(&model.classes[class.index()].components, point);
    let mut best = 0;
    for (i, &p) in post.iter().enumerate() {
        if p > post[best] {
            best = i;
        }
    }
    SubtypeAssignment {
        subtype: Subtype::new(class, best),
        posterior: post,
        coords: point,
    }
}

impl GmmModel2D {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for m in &self.classes {
            for g in &m.components {
                payload.push(g.weight as f32);
                payload.extend(g.mean.iter().map(|&v| v as f32));
                payload.extend(g.cov.iter().map(|&v| v as f32));
            }
        }
        let meta = GmmMeta {
            config: self.config,
            per_class: self
                .classes
                .iter()
                .map(|m| ClassMeta {
                    k: m.components.len(),
                    log_likelihood: m.log_likelihood,
                    bic: m.bic,
                    iterations: m.iterations,
                    restart: m.restart,
                    monotone: m.monotone,
                })
                .collect(),
        };
        crate::container::encode("gmm2d", &meta, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (meta, v): (GmmMeta, Vec<f32>) = crate::container::decode("gmm2d", bytes)?;
        let total: usize = meta.per_class.iter().map(|c| c.k * 7).sum();
        if v.len() != total || meta.per_class.len() != 3 {
            return Err(ModelError::Corrupt("gmm payload size".into()));
        }
        let mut it = v.chunks_exact(7);
        let classes = meta
            .per_class
            .iter()
            .map(|c| Mixture2 {
                components: (0..c.k)
                    .map(|_| {
                        let s = it.next().expect("length checked");
                        let f = |i: usize| s[i] as f64;
                        Gaussian2 {
                            weight: f(0),
                            mean: [f(1), f(2)],
                            cov: [f(3), f(4), f(5), f(6)],
                        }
                    })
                    .collect(),
                log_likelihood: c.log_likelihood,
                bic: c.bic,
                iterations: c.iterations,
                restart: c.restart,
                monotone: c.monotone,
            })
            .collect();
        Ok(Self {
            config: meta.config,
            classes,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ClassMeta {
    k: usize,
    log_likelihood: f64,
    bic: f64,
    iterations: usize,
    restart: usize,
    monotone: bool,
}

#[derive(Serialize, Deserialize)]
struct GmmMeta {
    config: GmmConfig,
    per_class: Vec<ClassMeta>,
}
