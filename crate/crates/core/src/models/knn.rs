use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::container;

pub const DEFAULT_K: usize = 10;
const WEIGHT_EPS: f64 = 1e-9;
/// Distances at or below this count as an exact match.
const EXACT: f64 = 1e-12;

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything else and 0
/// from another zero vector.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0),
    }
}

/// Reference set for out-of-sample 2D embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnEmbedder {
    pub k: usize,
    pub features: Vec<Vec<f64>>,
    pub coords: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    k: usize,
    n: usize,
    dim: usize,
}

/// Neighbours of `query` by increasing distance (ties by index).
pub fn nearest(query: &[f64], train: &[Vec<f64>], k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (i, cosine_distance(query, t)))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(k);
    d
}

/// Inverse-distance-weighted mean of the `k` nearest training coordinates
/// under cosine distance; an exact match returns its own coordinates.
pub fn knn_embed(query: &[f64], train: &[Vec<f64>], coords: &[[f64; 2]], k: usize) -> Result<[f64; 2], ModelError> {
    if train.is_empty() || coords.len() != train.len() {
        return Err(ModelError::EmptyTrainSet);
    }
    if let Some(t) = train.iter().find(|t| t.len() != query.len()) {
        return Err(ModelError::ShapeMismatch {
            expected: vec![t.len()],
            got: vec![query.len()],
        });
    }
    let nb = nearest(query, train, k.max(1));
    if nb[0].1 <= EXACT {
        return Ok(coords[nb[0].0]);
    }
    let mut acc = [0.0; 2];
    let mut wsum = 0.0;
    for &(i, d) in &nb {
        let w = 1.0 / (d + WEIGHT_EPS);
        acc[0] += w * coords[i][0];
        acc[1] += w * coords[i][1];
        wsum += w;
    }
    Ok([acc[0] / wsum, acc[1] / wsum])
}

impl KnnEmbedder {
    pub fn new(k: usize, features: Vec<Vec<f64>>, coords: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if features.is_empty() || features.len() != coords.len() {
            return Err(ModelError::EmptyTrainSet);
        }
        Ok(Self { k, features, coords })
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn embed(&self, query: &[f64]) -> Result<[f64; 2], ModelError> {
        knn_embed(query, &self.features, &self.coords, self.k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.features.first().map_or(0, Vec::len);
        let mut payload: Vec<f32> = Vec::with_capacity(self.features.len() * (dim + 2));
        for (f, c) in self.features.iter().zip(&self.coords) {
            payload.extend(f.iter().map(|&v| v as f32));
            payload.extend(c.iter().map(|&v| v as f32));
        }
        container::encode(
            "knn_embedder",
            &Meta {
                k: self.k,
                n: self.features.len(),
                dim,
            },
            &payload,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (meta, v): (Meta, Vec<f32>) = container::decode("knn_embedder", bytes)?;
        if v.len() != meta.n * (meta.dim + 2) {
            return Err(ModelError::Corrupt("knn payload size".into()));
        }
        let mut features = Vec::with_capacity(meta.n);
        let mut coords = Vec::with_capacity(meta.n);
        for row in v.chunks_exact(meta.dim + 2) {
            features.push(row[..meta.dim].iter().map(|&x| x as f64).collect());
            coords.push([row[meta.dim] as f64, row[meta.dim + 1] as f64]);
        }
        Self::new(meta.k, features, coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
        let f = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![-1.0, 0.5, 0.25],
        ];
        let c = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [3.0, -1.0], [-4.0, 5.0]];
        (f, c)
    }

    #[test]
    fn exact_match_and_k1() {
        let (f, c) = set();
        assert_eq!(knn_embed(&f[3], &f, &c, 3).unwrap(), c[3]);
        assert_eq!(knn_embed(&[2.0, 2.1, 0.0], &f, &c, 1).unwrap(), c[3]);
        assert!(matches!(knn_embed(&[1.0], &[], &[], 1), Err(ModelError::EmptyTrainSet)));
    }

    #[test]
    fn k3_matches_full_scan() {
        let (f, c) = set();
        let q = [0.9, 0.3, 0.4];
        let mut all: Vec<(f64, usize)> = f
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let dot: f64 = q.iter().zip(t).map(|(a, b)| a * b).sum();
                let nq = q.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nt = t.iter().map(|a| a * a).sum::<f64>().sqrt();
                (1.0 - dot / (nq * nt), i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let nb = nearest(&q, &f, 3);
        for (a, b) in nb.iter().zip(&all) {
            assert_eq!(a.0, b.1);
            assert!((a.1 - b.0).abs() < 1e-9);
        }
        let w: Vec<f64> = all[..3].iter().map(|(d, _)| 1.0 / (d + 1e-9)).collect();
        let ws: f64 = w.iter().sum();
        let ex = (0..3).map(|j| w[j] * c[all[j].1][0]).sum::<f64>() / ws;
        let ey = (0..3).map(|j| w[j] * c[all[j].1][1]).sum::<f64>() / ws;
        let got = knn_embed(&q, &f, &c, 3).unwrap();
        assert!((got[0] - ex).abs() < 1e-9 && (got[1] - ey).abs() < 1e-9);
    }

    #[test]
    fn roundtrip() {
        let (f, c) = set();
        let e = KnnEmbedder::new(2, f, c).unwrap();
        let back = KnnEmbedder::from_bytes(&e.to_bytes()).unwrap();
        assert_eq!(back, e);
    }
}
