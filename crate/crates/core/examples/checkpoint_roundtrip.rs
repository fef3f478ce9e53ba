//! Save engine state after a run and score the restored copy.

use igcd::config::Mode;
use igcd::dataset::AuditedEmbeddings;
use igcd::engine::{read_checkpoint, run_benchmark, write_checkpoint};
use igcd::eval::final_discovery;
use igcd::ingest::{generate_benchmark, SyntheticSpec};
use igcd::{CategoryId, RunConfig};

fn main() -> igcd::Result<()> {
    let bench = generate_benchmark(&SyntheticSpec {
        n_stages: 2,
        categories_new_per_stage: vec![4],
        categories_old_per_stage: vec![4],
        samples_per_category: 50,
        eval_per_category: 10,
        ..SyntheticSpec::default()
    })?;
    let cfg = RunConfig::desk();
    let run = run_benchmark(&bench, &cfg, Mode::IgcdL)?;

    let bytes = write_checkpoint(&run.state)?;
    println!("checkpoint: {} bytes, magic {:?}", bytes.len(), std::str::from_utf8(&bytes[..4]).unwrap());
    let state = read_checkpoint(&bytes)?;
    // The projector is stored in single precision; everything else is exact.
    assert_eq!(state.support, run.state.support);
    assert_eq!(state.registry, run.state.registry);
    assert_eq!(write_checkpoint(&state)?, bytes);

    let last = bench.stages.last().unwrap();
    let rows: Vec<usize> = last.eval.iter().map(|&(i, _)| i).collect();
    let truth: Vec<CategoryId> = last.eval.iter().map(|&(_, c)| c).collect();
    let pred = state.predict(&rows, &AuditedEmbeddings::new(&bench.embeddings, last), &cfg)?;
    let m_d = final_discovery(&pred, &truth)?;
    println!("restored M_d = {m_d:.4}, original {:.4}", run.discovery);
    Ok(())
}
