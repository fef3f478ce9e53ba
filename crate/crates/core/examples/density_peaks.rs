//! Count categories in unlabeled embeddings from density peaks, step by step
//! and through the one-call helper.

use igcd::discovery::{dedup_peaks, estimate_category_count, find_density_peaks};
use igcd::ingest::{generate_benchmark, SyntheticSpec};
use igcd::neighbors::{build_knn_graph, compute_density};
use igcd::RunConfig;

fn main() -> igcd::Result<()> {
    let bench = generate_benchmark(&SyntheticSpec {
        eval_per_category: 0,
        ..SyntheticSpec::single_stage(12, 80, 32, 3)
    })?;
    let x = bench.embeddings.normalized();
    let cfg = RunConfig::default();

    let wide = build_knn_graph(&x, cfg.k_iou)?;
    let graph = wide.truncated(cfg.k_density)?;
    let density = compute_density(&graph);
    let raw = find_density_peaks(&graph, &density)?;
    let kept = dedup_peaks(&raw, &wide, cfg.iou_threshold)?;
    println!("{} local maxima, {} after IoU suppression (true count 12)", raw.len(), kept.len());
    for (row, rho) in kept.iter().take(5) {
        println!("  row {row:4}  density {rho:.4}");
    }

    for t in [0.3, 0.6, 0.9] {
        let cfg = RunConfig { iou_threshold: t, ..cfg.clone() };
        println!("T = {t}: {} categories", estimate_category_count(&x, &cfg)?);
    }
    Ok(())
}
