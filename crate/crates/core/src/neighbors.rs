//! Exact cosine k-nearest-neighbor graphs and per-point density.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

const QUERY_BLOCK: usize = 32;
const CANDIDATE_BLOCK: usize = 256;

/// For each point, the `k` most cosine-similar other points in descending
/// similarity (ties by ascending index), with their similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    k: usize,
    n: usize,
    indices: Vec<u32>,
    sims: Vec<f64>,
}

impl NeighborGraph {
    /// Assembles a graph from explicit rows, checking the invariants.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let mut indices = Vec::with_capacity(n * k);
        let mut sims = Vec::with_capacity(n * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::Argument(format!("row {i} has {} neighbors, expected {k}", row.len())));
            }
            for (pos, &(j, s)) in row.iter().enumerate() {
                if j as usize == i || j as usize >= n {
                    return Err(Error::Argument(format!("row {i} lists invalid neighbor {j}")));
                }
                if !(-1.0..=1.0).contains(&s) {
                    return Err(Error::Argument(format!("row {i}: similarity {s} outside [-1, 1]")));
                }
                if pos > 0 && row[pos - 1].1 < s {
                    return Err(Error::Argument(format!("row {i}: similarities must be non-increasing")));
                }
                indices.push(j);
                sims.push(s);
            }
        }
        Ok(NeighborGraph { k, n, indices, sims })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn similarities(&self, i: usize) -> &[f64] {
        &self.sims[i * self.k..(i + 1) * self.k]
    }

    /// The same graph cut down to its first `k` neighbors per row.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.k {
            return Err(Error::Argument(format!("cannot widen a k={} graph to k={k}", self.k)));
        }
        let mut indices = Vec::with_capacity(self.n * k);
        let mut sims = Vec::with_capacity(self.n * k);
        for i in 0..self.n {
            indices.extend_from_slice(&self.neighbors(i)[..k]);
            sims.extend_from_slice(&self.similarities(i)[..k]);
        }
        Ok(NeighborGraph {
            k,
            n: self.n,
            indices,
            sims,
        })
    }
}

/// Rows as unit-norm f64 vectors, the layout the similarity kernel reads.
pub(crate) fn unit_rows(embeddings: &EmbeddingMatrix) -> Vec<f64> {
    let d = embeddings.d();
    let mut out: Vec<f64> = embeddings.data().iter().map(|&v| f64::from(v)).collect();
    for row in out.chunks_exact_mut(d) {
        crate::embedding::normalize_in_place(row);
    }
    out
}

#[inline]
fn by_similarity(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(&b.1))
}

/// Exact top-`k` cosine neighbors of every row, self excluded.
pub fn build_knn_graph(embeddings: &EmbeddingMatrix, k: usize) -> Result<NeighborGraph> {
    let n = embeddings.n();
    let d = embeddings.d();
    if k == 0 || k >= n {
        return Err(Error::Argument(format!("k must satisfy 1 <= k < N, got k={k} with N={n}")));
    }
    let unit = unit_rows(embeddings);

    let blocks: Vec<(Vec<u32>, Vec<f64>)> = (0..n.div_ceil(QUERY_BLOCK))
        .into_par_iter()
        .map(|b| {
            let q0 = b * QUERY_BLOCK;
            let q1 = (q0 + QUERY_BLOCK).min(n);
            let nq = q1 - q0;
            let mut sims = vec![0.0f64; nq * n];
            for c0 in (0..n).step_by(CANDIDATE_BLOCK) {
                let c1 = (c0 + CANDIDATE_BLOCK).min(n);
                for qi in 0..nq {
                    let q = &unit[(q0 + qi) * d..(q0 + qi + 1) * d];
                    let out = &mut sims[qi * n..(qi + 1) * n];
                    for c in c0..c1 {
                        let cand = &unit[c * d..(c + 1) * d];
                        out[c] = crate::embedding::dot(q, cand).clamp(-1.0, 1.0);
                    }
                }
            }
            let mut idx = Vec::with_capacity(nq * k);
            let mut val = Vec::with_capacity(nq * k);
            let mut cands: Vec<(f64, u32)> = Vec::with_capacity(n);
            for qi in 0..nq {
                let i = q0 + qi;
                cands.clear();
                cands.extend(
                    sims[qi * n..(qi + 1) * n]
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(j, &s)| (s, j as u32)),
                );
                if k < cands.len() {
                    cands.select_nth_unstable_by(k - 1, by_similarity);
                    cands.truncate(k);
                }
                cands.sort_unstable_by(by_similarity);
                for &(s, j) in &cands {
                    idx.push(j);
                    val.push(s);
                }
            }
            (idx, val)
        })
        .collect();

    let mut indices = Vec::with_capacity(n * k);
    let mut sims = Vec::with_capacity(n * k);
    for (i, s) in blocks {
        indices.extend(i);
        sims.extend(s);
    }
    Ok(NeighborGraph { k, n, indices, sims })
}

/// Mean cosine similarity of each point to its `k` neighbors.
pub fn compute_density(graph: &NeighborGraph) -> Vec<f64> {
    (0..graph.n())
        .map(|i| graph.similarities(i).iter().sum::<f64>() / graph.k() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingMatrix::new(n, d, data).unwrap().normalized()
    }

    /// Full sort of every row, no blocking.
    fn brute_force(m: &EmbeddingMatrix, k: usize) -> Vec<Vec<(u32, f64)>> {
        let unit = unit_rows(m);
        let d = m.d();
        (0..m.n())
            .map(|i| {
                let mut all: Vec<(f64, u32)> = (0..m.n())
                    .filter(|&j| j != i)
                    .map(|j| {
                        let s: f64 = (0..d).map(|t| unit[i * d + t] * unit[j * d + t]).sum();
                        (s.clamp(-1.0, 1.0), j as u32)
                    })
                    .collect();
                all.sort_by(by_similarity);
                all.into_iter().take(k).map(|(s, j)| (j, s)).collect()
            })
            .collect()
    }

    #[test]
    fn basis_vectors_tie_to_lowest_index() {
        let m = EmbeddingMatrix::new(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let g = build_knn_graph(&m, 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[0]);
        for i in 0..3 {
            assert_eq!(g.similarities(i), &[0.0]);
        }
    }

    #[test]
    fn identical_points() {
        let m = EmbeddingMatrix::new(4, 2, vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8]).unwrap();
        let g = build_knn_graph(&m, 2).unwrap();
        assert_eq!(g.neighbors(0), &[1, 2]);
        assert_eq!(g.neighbors(2), &[0, 1]);
        assert_eq!(g.neighbors(3), &[0, 1]);
        for i in 0..4 {
            for &s in g.similarities(i) {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let d = compute_density(&g);
        assert!(d.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn k_must_be_below_n() {
        let m = random_matrix(5, 3, 0);
        assert!(build_knn_graph(&m, 5).is_err());
        assert!(build_knn_graph(&m, 0).is_err());
    }

    #[test]
    fn matches_full_sort_oracle() {
        let m = random_matrix(50, 8, 11);
        let g = build_knn_graph(&m, 5).unwrap();
        let oracle = brute_force(&m, 5);
        for (i, row) in oracle.iter().enumerate() {
            let idx: Vec<u32> = row.iter().map(|&(j, _)| j).collect();
            assert_eq!(g.neighbors(i), idx.as_slice(), "row {i}");
            for (a, &(_, b)) in g.similarities(i).iter().zip(row) {
                assert_eq!(*a, b);
            }
        }
    }

    #[test]
    fn orthogonal_points_have_zero_density() {
        let mut data = vec![0.0f32; 16];
        for i in 0..4 {
            data[i * 4 + i] = 1.0;
        }
        let m = EmbeddingMatrix::new(4, 4, data).unwrap();
        let g = build_knn_graph(&m, 3).unwrap();
        assert!(compute_density(&g).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn five_point_density_fixture() {
        // Angles 0°, 30°, 60°, 90°, 180°; k = 2.
        // Hand-computed: d0 = (cos30 + cos60)/2, d1 = (cos30 + cos30)/2 (0° and 60°),
        // d2 = (cos30 + cos30)/2 (30° and 90°), d3 = (cos30 + cos60)/2 (60°, 30°),
        // d4 = (cos90 + cos120)/2 (90° and 60°).
        let deg = [0.0f64, 30.0, 60.0, 90.0, 180.0];
        let rows: Vec<Vec<f64>> = deg
            .iter()
            .map(|a| vec![a.to_radians().cos(), a.to_radians().sin()])
            .collect();
        let m = EmbeddingMatrix::from_f64_rows(&rows).unwrap();
        let g = build_knn_graph(&m, 2).unwrap();
        let d = compute_density(&g);
        let c30 = 0.866_025_403_784_438_6;
        let expect = [
            (c30 + 0.5) / 2.0,
            c30,
            c30,
            (c30 + 0.5) / 2.0,
            (0.0 - 0.5) / 2.0,
        ];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn graph_invariants_on_random_data() {
        let m = random_matrix(120, 6, 5);
        let g = build_knn_graph(&m, 7).unwrap();
        for i in 0..g.n() {
            assert!(!g.neighbors(i).contains(&(i as u32)));
            let s = g.similarities(i);
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn from_rows_rejects_self_neighbor() {
        assert!(NeighborGraph::from_rows(vec![vec![(0, 0.5)], vec![(0, 0.5)]]).is_err());
        assert!(NeighborGraph::from_rows(vec![vec![(1, 0.2)], vec![(0, 0.2)]]).is_ok());
    }

    proptest! {
        #[test]
        fn positive_row_scaling_changes_nothing(seed in 0u64..1000, scales in proptest::collection::vec(0.01f32..100.0, 30)) {
            let m = random_matrix(30, 5, seed);
            let mut data = m.data().to_vec();
            for (i, s) in scales.iter().enumerate() {
                data[i * 5..(i + 1) * 5].iter_mut().for_each(|v| *v *= s);
            }
            let scaled = EmbeddingMatrix::new(30, 5, data).unwrap();
            let a = build_knn_graph(&m, 4).unwrap();
            let b = build_knn_graph(&scaled, 4).unwrap();
            for i in 0..30 {
                prop_assert_eq!(a.neighbors(i), b.neighbors(i));
            }
            for (x, y) in compute_density(&a).iter().zip(compute_density(&b)) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
