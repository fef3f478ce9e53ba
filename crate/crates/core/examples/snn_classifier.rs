//! Soft nearest-neighbor classification against a small support set.

use igcd::ingest::{generate_benchmark, SyntheticSpec};
use igcd::rng::{stream, Stream};
use igcd::snn::{argmax, select_per_category, snn_classify, snn_predict, Selection, SupportSet};
use igcd::CategoryId;

fn main() -> igcd::Result<()> {
    let bench = generate_benchmark(&SyntheticSpec::single_stage(6, 60, 16, 11))?;
    let x = bench.embeddings.normalized();
    let stage = &bench.stages[0];
    let feats: Vec<Vec<f64>> = stage.labeled.iter().map(|&(i, _)| x.row_f64(i)).collect();
    let labels: Vec<CategoryId> = stage.labeled.iter().map(|&(_, c)| c).collect();

    let mut rng = stream(0, Stream::Selection);
    for method in [Selection::Density, Selection::Centroid, Selection::Random] {
        let picked = select_per_category(&feats, &labels, 3, method, 10, &mut rng)?;
        let entries = picked.iter().map(|&j| (x.row(stage.labeled[j].0).to_vec(), labels[j])).collect();
        let support = SupportSet::from_entries(x.d(), 3, entries)?;

        let queries: Vec<Vec<f64>> = stage.eval.iter().map(|&(i, _)| x.row_f64(i)).collect();
        let pred = snn_classify(&queries, &support, 0.1)?;
        let hits = pred.iter().zip(&stage.eval).filter(|(p, e)| **p == e.1).count();
        println!("{method:?}: {} supports, accuracy {:.3}", support.len(), hits as f64 / pred.len() as f64);

        if method == Selection::Density {
            let p = snn_predict(&queries[0], &support, 0.1)?;
            let (cats, _) = support.label_positions();
            println!("  first query: {:?} with p = {:.3}", cats[argmax(&p)], p[argmax(&p)]);
        }
    }
    Ok(())
}
