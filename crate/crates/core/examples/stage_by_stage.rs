//! Drive the engine one stage at a time and inspect what discovery found.

use igcd::config::Mode;
use igcd::dataset::AuditedEmbeddings;
use igcd::engine::EngineState;
use igcd::eval::CategoryHistory;
use igcd::ingest::{generate_benchmark, SyntheticSpec};
use igcd::{Provenance, RunConfig};

fn main() -> igcd::Result<()> {
    let bench = generate_benchmark(&SyntheticSpec {
        n_stages: 2,
        categories_new_per_stage: vec![3],
        categories_old_per_stage: vec![3],
        samples_per_category: 60,
        eval_per_category: 10,
        ..SyntheticSpec::default()
    })?;
    let cfg = RunConfig::desk();
    let mut state = EngineState::new(bench.embeddings.d(), bench.registry.clone(), &cfg)?;
    let mut history = CategoryHistory::new();

    let s0 = &bench.stages[0];
    let log = state.train_initial(s0, &AuditedEmbeddings::new(&bench.embeddings, s0), &cfg)?;
    history.record(s0.labeled_categories(), s0.unlabeled_categories());
    println!("stage 0: {} steps, final loss {:?}", log.steps, log.final_loss);

    let s1 = &bench.stages[1];
    let view = AuditedEmbeddings::new(&bench.embeddings, s1);
    let found = state.clone().discover(s1, &view, &cfg)?;
    println!(
        "stage 1 discovery: {} kept peaks, {} inside known categories, {} new, {} pseudo-labels",
        found.kept.len(),
        found.known.len(),
        found.new_categories.len(),
        found.labeled.len()
    );

    let report = state.run_stage(s1, &view, &cfg, Mode::IgcdU, &mut history)?;
    print!("{}", report.to_text());
    let discovered = state.registry.iter().filter(|(_, i)| i.provenance == Provenance::Discovered).count();
    println!("registry: {} ids, {discovered} discovered", state.registry.len());
    println!("support: {} entries over {} categories", state.support.len(), state.support.category_count());
    println!("replay: {} entries", state.replay.len());
    Ok(())
}
