//! Density-peak detection, IoU-based peak suppression, pseudo-labeling of
//! peak neighborhoods and novel-category counting.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::neighbors::{build_knn_graph, compute_density, NeighborGraph};
use crate::registry::{CategoryId, CategoryRegistry, Provenance};

/// Peaks in descending density, ties by ascending point index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PeakSet {
    peaks: Vec<(usize, f64)>,
}

fn by_density(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

impl PeakSet {
    pub fn new(mut peaks: Vec<(usize, f64)>) -> Result<Self> {
        peaks.sort_by(by_density);
        let mut seen: Vec<usize> = peaks.iter().map(|p| p.0).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("duplicate peak index".into()));
        }
        Ok(PeakSet { peaks })
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.peaks.iter().copied()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.peaks.iter().map(|p| p.0).collect()
    }

    /// Keeps only peaks whose index passes `keep`, preserving order.
    pub fn filtered(&self, keep: impl Fn(usize) -> bool) -> PeakSet {
        PeakSet {
            peaks: self.peaks.iter().copied().filter(|p| keep(p.0)).collect(),
        }
    }
}

/// Points whose density strictly exceeds that of every one of their neighbors.
pub fn find_density_peaks(graph: &NeighborGraph, densities: &[f64]) -> Result<PeakSet> {
    if densities.len() != graph.n() {
        return Err(Error::Argument(format!(
            "{} densities for a graph of {} points",
            densities.len(),
            graph.n()
        )));
    }
    let peaks: Vec<(usize, f64)> = (0..graph.n())
        .into_par_iter()
        .filter(|&i| {
            graph
                .neighbors(i)
                .iter()
                .all(|&j| densities[i] > densities[j as usize])
        })
        .map(|i| (i, densities[i]))
        .collect();
    PeakSet::new(peaks)
}

fn sorted_neighbors(graph: &NeighborGraph, i: usize) -> Vec<u32> {
    let mut v = graph.neighbors(i).to_vec();
    v.sort_unstable();
    v
}

/// Intersection over union of two sorted index sets.
pub fn iou(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy non-maximum suppression over neighbor-set IoU: walking peaks in
/// descending density, a peak is kept iff its IoU with every kept peak is at
/// most `threshold`.
pub fn dedup_peaks(peaks: &PeakSet, graph_kd: &NeighborGraph, threshold: f64) -> Result<PeakSet> {
    dedup_peaks_with_anchors(peaks, graph_kd, threshold, &[])
}

/// [`dedup_peaks`] where the points in `anchors` count as already kept, so
/// any peak overlapping an anchor's neighborhood above `threshold` is dropped.
/// The anchors themselves are never returned.
pub fn dedup_peaks_with_anchors(
    peaks: &PeakSet,
    graph_kd: &NeighborGraph,
    threshold: f64,
    anchors: &[usize],
) -> Result<PeakSet> {
    if !(threshold > 0.0) {
        return Err(Error::Argument(format!("IoU threshold must be positive, got {threshold}")));
    }
    if let Some(&bad) = peaks.indices().iter().chain(anchors).find(|&&i| i >= graph_kd.n()) {
        return Err(Error::Argument(format!("point {bad} is not in the IoU graph")));
    }
    let mut kept_sets: Vec<Vec<u32>> = anchors.iter().map(|&a| sorted_neighbors(graph_kd, a)).collect();
    let mut kept = Vec::new();
    for (i, d) in peaks.iter() {
        let nn = sorted_neighbors(graph_kd, i);
        if kept_sets.iter().all(|other| iou(&nn, other) <= threshold) {
            kept.push((i, d));
            kept_sets.push(nn);
        }
    }
    Ok(PeakSet { peaks: kept })
}

/// Issues one fresh category per kept peak and labels the peak plus its `m`
/// nearest neighbors with it. A point claimed by several peaks goes to the
/// one it is most similar to, then to the denser peak.
pub fn pseudo_label_peaks(
    kept: &PeakSet,
    graph: &NeighborGraph,
    m: usize,
    registry: &mut CategoryRegistry,
    stage: usize,
) -> Result<Vec<(usize, CategoryId)>> {
    pseudo_label_peaks_where(kept, graph, m, registry, stage, |_| true)
}

/// [`pseudo_label_peaks`] restricted to neighbors for which `eligible` holds;
/// the `m` nearest eligible neighbors within the graph row are used.
pub fn pseudo_label_peaks_where(
    kept: &PeakSet,
    graph: &NeighborGraph,
    m: usize,
    registry: &mut CategoryRegistry,
    stage: usize,
    eligible: impl Fn(usize) -> bool,
) -> Result<Vec<(usize, CategoryId)>> {
    if m > graph.k() {
        return Err(Error::Argument(format!(
            "cannot label {m} neighbors from a k={} graph",
            graph.k()
        )));
    }
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    // point -> (similarity, peak rank); a peak's claim on itself always wins.
    let mut claims: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = Vec::with_capacity(kept.len());
    let better = |new: (f64, usize), old: (f64, usize)| new.0 > old.0 || (new.0 == old.0 && new.1 < old.1);
    for (rank, (p, _)) in kept.iter().enumerate() {
        let mut mine = vec![p];
        let self_claim = (f64::INFINITY, rank);
        claims
            .entry(p)
            .and_modify(|c| {
                if better(self_claim, *c) {
                    *c = self_claim
                }
            })
            .or_insert(self_claim);
        let nbrs = graph
            .neighbors(p)
            .iter()
            .zip(graph.similarities(p))
            .filter(|(&j, _)| eligible(j as usize))
            .take(m);
        for (&j, &s) in nbrs {
            let j = j as usize;
            mine.push(j);
            let claim = (s, rank);
            claims
                .entry(j)
                .and_modify(|c| {
                    if better(claim, *c) {
                        *c = claim
                    }
                })
                .or_insert(claim);
        }
        members.push(mine);
    }
    let ids = registry.register(kept.len(), Provenance::Discovered, stage);
    let mut out = Vec::new();
    for (rank, mine) in members.iter().enumerate() {
        for &j in mine {
            if claims[&j].1 == rank {
                out.push((j, ids[rank]));
            }
        }
    }
    Ok(out)
}

/// Density peaks of `embeddings` after IoU suppression, with the configured
/// `K`, `K^d` and `T`.
pub fn detect_peaks(embeddings: &EmbeddingMatrix, config: &RunConfig) -> Result<PeakSet> {
    let n = embeddings.n();
    if n <= config.k_density {
        return Err(Error::Argument(format!(
            "need more than k_density={} points, got {n}",
            config.k_density
        )));
    }
    let k_iou = config.k_iou.min(n - 1);
    let wide = build_knn_graph(embeddings, config.k_density.max(k_iou))?;
    let density_graph = wide.truncated(config.k_density)?;
    let iou_graph = wide.truncated(k_iou)?;
    let densities = compute_density(&density_graph);
    let peaks = find_density_peaks(&density_graph, &densities)?;
    dedup_peaks(&peaks, &iou_graph, config.iou_threshold)
}

/// Number of categories suggested by the surviving density peaks.
pub fn estimate_category_count(embeddings: &EmbeddingMatrix, config: &RunConfig) -> Result<usize> {
    detect_peaks(embeddings, config).map(|p| p.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_benchmark, SyntheticSpec};

    fn graph(rows: Vec<Vec<u32>>) -> NeighborGraph {
        NeighborGraph::from_rows(
            rows.into_iter()
                .map(|r| {
                    let k = r.len();
                    r.into_iter().enumerate().map(|(p, j)| (j, 1.0 - p as f64 / (k as f64 + 1.0))).collect()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_points_have_no_peaks() {
        let m = EmbeddingMatrix::new(6, 2, [1.0f32, 1.0].repeat(6)).unwrap();
        let g = build_knn_graph(&m, 3).unwrap();
        let d = compute_density(&g);
        assert!(find_density_peaks(&g, &d).unwrap().is_empty());
    }

    #[test]
    fn peaks_beat_all_neighbors() {
        let spec = SyntheticSpec {
            eval_per_category: 0,
            ..SyntheticSpec::single_stage(1, 60, 8, 4)
        };
        let b = generate_benchmark(&spec).unwrap();
        let g = build_knn_graph(&b.embeddings, 10).unwrap();
        let d = compute_density(&g);
        let peaks = find_density_peaks(&g, &d).unwrap();
        assert!(!peaks.is_empty());
        for (i, di) in peaks.iter() {
            assert!(g.neighbors(i).iter().all(|&j| di > d[j as usize]));
        }
    }

    #[test]
    fn disjoint_neighborhoods_keep_both() {
        // Points 0 and 3 are peaks with neighborhoods {1,2} and {4,5}.
        let g = graph(vec![vec![1, 2], vec![0, 2], vec![0, 1], vec![4, 5], vec![3, 5], vec![3, 4]]);
        let peaks = PeakSet::new(vec![(0, 0.9), (3, 0.8)]).unwrap();
        let kept = dedup_peaks(&peaks, &g, 0.1).unwrap();
        assert_eq!(kept.indices(), vec![0, 3]);
    }

    #[test]
    fn identical_neighborhoods_keep_denser() {
        let g = graph(vec![vec![2, 3], vec![2, 3], vec![0, 1], vec![0, 1]]);
        let peaks = PeakSet::new(vec![(1, 0.7), (0, 0.9)]).unwrap();
        let kept = dedup_peaks(&peaks, &g, 0.6).unwrap();
        assert_eq!(kept.indices(), vec![0]);
    }

    #[test]
    fn non_positive_threshold_is_rejected() {
        let g = graph(vec![vec![1], vec![0]]);
        let peaks = PeakSet::new(vec![(0, 0.5)]).unwrap();
        assert!(dedup_peaks(&peaks, &g, 0.0).is_err());
    }

    /// Exhaustive oracle: the greedy NMS result is the unique subset S such that
    /// every peak outside S overlaps (IoU > T) a denser member of S and no
    /// member of S overlaps a denser member of S.
    #[test]
    fn five_peak_nms_matches_exhaustive_oracle() {
        // Twelve points; peaks are 0..5 with hand-made 4-neighbor sets.
        let sets: Vec<Vec<u32>> = vec![
            vec![5, 6, 7, 8],
            vec![5, 6, 7, 9],
            vec![6, 7, 9, 10],
            vec![9, 10, 11, 5],
            vec![10, 11, 9, 6],
        ];
        let mut rows = sets.clone();
        for _ in 5..12 {
            rows.push(vec![0, 1, 2, 3]);
        }
        let g = graph(rows);
        let dens = [0.95, 0.9, 0.85, 0.8, 0.75];
        let peaks = PeakSet::new((0..5).map(|i| (i, dens[i])).collect()).unwrap();
        let threshold = 0.5;
        let kept: Vec<usize> = dedup_peaks(&peaks, &g, threshold).unwrap().indices();

        let mut sorted_sets = sets;
        sorted_sets.iter_mut().for_each(|s| s.sort_unstable());
        let overlaps = |a: usize, b: usize| iou(&sorted_sets[a], &sorted_sets[b]) > threshold;
        let mut valid = Vec::new();
        for mask in 0u32..32 {
            let members: Vec<usize> = (0..5).filter(|i| mask & (1 << i) != 0).collect();
            let ok = (0..5).all(|i| {
                let denser_members = members.iter().filter(|&&j| dens[j] > dens[i]);
                let hit = denser_members.clone().any(|&j| overlaps(i, j));
                if members.contains(&i) { !hit } else { hit }
            });
            if ok {
                valid.push(members);
            }
        }
        assert_eq!(valid.len(), 1);
        assert_eq!(kept, valid[0]);
        assert_eq!(kept, vec![0, 2, 3]);
    }

    #[test]
    fn anchors_suppress_overlapping_peaks() {
        let g = graph(vec![vec![2, 3], vec![2, 3], vec![0, 1], vec![0, 1]]);
        let peaks = PeakSet::new(vec![(0, 0.9)]).unwrap();
        let kept = dedup_peaks_with_anchors(&peaks, &g, 0.6, &[1]).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn single_peak_labels_itself_and_neighbors() {
        let g = graph(vec![vec![1, 2, 3, 4], vec![0, 2, 3, 4], vec![0, 1, 3, 4], vec![0, 1, 2, 4], vec![0, 1, 2, 3]]);
        let mut reg = CategoryRegistry::new();
        reg.register(2, Provenance::Labeled, 0);
        let kept = PeakSet::new(vec![(0, 1.0)]).unwrap();
        let labels = pseudo_label_peaks(&kept, &g, 4, &mut reg, 1).unwrap();
        assert_eq!(labels.len(), 5);
        assert!(labels.iter().all(|&(_, c)| c == CategoryId(2)));
        assert_eq!(reg.info(CategoryId(2)).unwrap().provenance, Provenance::Discovered);
    }

    #[test]
    fn shared_neighbor_goes_to_closer_peak() {
        // Peaks 0 (denser) and 1 both claim point 2; point 2 is closer to peak 1.
        let g = NeighborGraph::from_rows(vec![
            vec![(2, 0.5), (3, 0.4)],
            vec![(2, 0.9), (4, 0.8)],
            vec![(1, 0.9), (0, 0.5)],
            vec![(0, 0.4), (2, 0.1)],
            vec![(1, 0.8), (2, 0.1)],
        ])
        .unwrap();
        let mut reg = CategoryRegistry::new();
        let kept = PeakSet::new(vec![(0, 0.9), (1, 0.8)]).unwrap();
        let labels: BTreeMap<usize, CategoryId> =
            pseudo_label_peaks(&kept, &g, 2, &mut reg, 1).unwrap().into_iter().collect();
        let (a, b) = (labels[&0], labels[&1]);
        assert_ne!(a, b);
        assert_eq!(labels[&2], b);
        assert_eq!(labels[&3], a);
        assert_eq!(labels[&4], b);
    }

    #[test]
    fn equal_similarity_goes_to_denser_peak() {
        let g = NeighborGraph::from_rows(vec![
            vec![(2, 0.5)],
            vec![(2, 0.5)],
            vec![(0, 0.5)],
        ])
        .unwrap();
        let mut reg = CategoryRegistry::new();
        let kept = PeakSet::new(vec![(1, 0.7), (0, 0.9)]).unwrap();
        let labels: BTreeMap<usize, CategoryId> =
            pseudo_label_peaks(&kept, &g, 1, &mut reg, 1).unwrap().into_iter().collect();
        assert_eq!(labels[&2], labels[&0]);
    }

    #[test]
    fn single_cluster_estimates_one() {
        let spec = SyntheticSpec {
            eval_per_category: 0,
            ..SyntheticSpec::single_stage(1, 100, 32, 8)
        };
        let b = generate_benchmark(&spec).unwrap();
        assert_eq!(estimate_category_count(&b.embeddings, &RunConfig::default()).unwrap(), 1);
    }

    #[test]
    fn too_few_points_is_an_argument_error() {
        let m = EmbeddingMatrix::new(5, 2, vec![0.1; 10]).unwrap();
        let err = estimate_category_count(&m, &RunConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
