use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::DEFAULT_CLASS_WEIGHTS;
use super::ModelError;
use crate::container;
use crate::labels::{Class, ClassProbabilities};

/// Equal-impurity tolerance when comparing candidate splits.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub class_weights: [f64; 3],
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 7,
            min_leaf: 100,
            features_per_split: 3,
            class_weights: DEFAULT_CLASS_WEIGHTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [usize; 3],
        probs: [f64; 3],
    },
}

/// CART classifier stored as a node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTreeModel {
    pub n_features: usize,
    pub nodes: Vec<Node>,
    pub config: TreeConfig,
}

/// Gini impurity of class weights.
pub fn weighted_gini(w: [f64; 3]) -> f64 {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - w.iter().map(|v| (v / total).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    cfg: &'a TreeConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn weights(&self, counts: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|c| counts[c] as f64 * self.cfg.class_weights[c])
    }

    fn leaf(&self, counts: [usize; 3]) -> Node {
        let w = self.weights(counts);
        let total: f64 = w.iter().sum();
        let probs = if total > 0.0 {
            w.map(|v| v / total)
        } else {
            let n: usize = counts.iter().sum();
            counts.map(|c| c as f64 / n as f64)
        };
        Node::Leaf { counts, probs }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let nf = self.x[0].len();
        if self.cfg.features_per_split >= nf {
            return (0..nf).collect();
        }
        let mut f = rand::seq::index::sample(&mut self.rng, nf, self.cfg.features_per_split).into_vec();
        f.sort_unstable();
        f
    }

    /// Best `(feature, threshold)` among the candidate features, or `None`
    /// when no split leaves `min_leaf` samples on both sides.
    fn best_split(&mut self, idx: &[usize], counts: [usize; 3]) -> Option<(usize, f64)> {
        let total_w: f64 = self.weights(counts).iter().sum();
        let n = idx.len();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in self.candidate_features() {
            let mut sorted = idx.to_vec();
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = [0usize; 3];
            for i in 0..n - 1 {
                left[self.y[sorted[i]]] += 1;
                let (lo, hi) = (self.x[sorted[i]][f], self.x[sorted[i + 1]][f]);
                let n_left = i + 1;
                if lo == hi || n_left < self.cfg.min_leaf || n - n_left < self.cfg.min_leaf {
                    continue;
                }
                let right = [0, 1, 2].map(|c| counts[c] - left[c]);
                let (wl, wr) = (self.weights(left), self.weights(right));
                let (sl, sr): (f64, f64) = (wl.iter().sum(), wr.iter().sum());
                let score = if total_w > 0.0 {
                    (sl * weighted_gini(wl) + sr * weighted_gini(wr)) / total_w
                } else {
                    0.0
                };
                let mut thr = lo + (hi - lo) / 2.0;
                if thr >= hi {
                    thr = lo;
                }
                if best.is_none_or(|(s, _, _)| score < s - TIE_EPS) {
                    best = Some((score, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let mut counts = [0usize; 3];
        for &i in &idx {
            counts[self.y[i]] += 1;
        }
        let slot = self.nodes.len();
        self.nodes.push(self.leaf(counts));
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.cfg.max_depth || pure || idx.len() < 2 * self.cfg.min_leaf.max(1) {
            return slot;
        }
        let Some((feature, threshold)) = self.best_split(&idx, counts) else {
            return slot;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

/// Greedy CART with weighted Gini. At each node `features_per_split` features
/// are drawn without replacement; candidate thresholds are midpoints between
/// consecutive distinct values; ties prefer the lower feature, then the lower
/// threshold; `<=` goes left.
pub fn tree_fit(x: &[Vec<f64>], y: &[Class], cfg: &TreeConfig) -> Result<DecisionTreeModel, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if x.len() != y.len() {
        return Err(ModelError::ShapeMismatch {
            expected: vec![x.len()],
            got: vec![y.len()],
        });
    }
    let nf = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != nf) {
        return Err(ModelError::ShapeMismatch {
            expected: vec![nf],
            got: vec![r.len()],
        });
    }
    let ys: Vec<usize> = y.iter().map(|c| c.index()).collect();
    let mut b = Builder {
        x,
        y: &ys,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        nodes: Vec::new(),
    };
    b.build((0..x.len()).collect(), 0);
    Ok(DecisionTreeModel {
        n_features: nf,
        nodes: b.nodes,
        config: cfg.clone(),
    })
}

/// Leaf probabilities for `x`.
pub fn tree_predict(tree: &DecisionTreeModel, x: &[f64]) -> Result<ClassProbabilities, ModelError> {
    if x.len() != tree.n_features {
        return Err(ModelError::ShapeMismatch {
            expected: vec![tree.n_features],
            got: vec![x.len()],
        });
    }
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if x[*feature] <= *threshold { *left } else { *right },
            Node::Leaf { probs, .. } => return Ok(ClassProbabilities::from_array(*probs)),
        }
    }
}

const NODE_WIDTH: usize = 11;

#[derive(Serialize, Deserialize)]
struct TreeMeta {
    n_features: usize,
    n_nodes: usize,
    config: TreeConfig,
}

impl DecisionTreeModel {
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&[usize; 3], &[f64; 3])> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { counts, probs } => Some((counts, probs)),
            _ => None,
        })
    }

    /// Node rows `[kind, feature, threshold, left, right, c0, c1, c2, p0, p1, p2]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.nodes.len() * NODE_WIDTH);
        for n in &self.nodes {
            match n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => payload.extend([
                    1.0,
                    *feature as f32,
                    *threshold as f32,
                    *left as f32,
                    *right as f32,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                    0.0,
                ]),
                Node::Leaf { counts, probs } => {
                    payload.extend([0.0, 0.0, 0.0, 0.0, 0.0]);
                    payload.extend(counts.map(|c| c as f32));
                    payload.extend(probs.map(|p| p as f32));
                }
            }
        }
        container::encode(
            "decision_tree",
            &TreeMeta {
                n_features: self.n_features,
                n_nodes: self.nodes.len(),
                config: self.config.clone(),
            },
            &payload,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (meta, v): (TreeMeta, Vec<f32>) = container::decode("decision_tree", bytes)?;
        if v.len() != meta.n_nodes * NODE_WIDTH || meta.n_nodes == 0 {
            return Err(ModelError::Corrupt("tree payload size".into()));
        }
        let nodes: Vec<Node> = v
            .chunks_exact(NODE_WIDTH)
            .map(|r| {
                if r[0] == 1.0 {
                    Node::Split {
                        feature: r[1] as usize,
                        threshold: r[2] as f64,
                        left: r[3] as usize,
                        right: r[4] as usize,
                    }
                } else {
                    let probs = [r[8] as f64, r[9] as f64, r[10] as f64];
                    let s: f64 = probs.iter().sum();
                    Node::Leaf {
                        counts: [r[5] as usize, r[6] as usize, r[7] as usize],
                        probs: probs.map(|p| p / s),
                    }
                }
            })
            .collect();
        for n in &nodes {
            if let Node::Split {
                feature, left, right, ..
            } = n
            {
                if *feature >= meta.n_features || *left >= nodes.len() || *right >= nodes.len() {
                    return Err(ModelError::Corrupt("tree node reference out of range".into()));
                }
            }
        }
        Ok(Self {
            n_features: meta.n_features,
            nodes,
            config: meta.config,
        })
    }
}
