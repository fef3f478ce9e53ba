//! Sweep the number of support exemplars per category.

use igcd::config::Mode;
use igcd::engine::run_benchmark;
use igcd::eval::ablation_csv;
use igcd::ingest::{generate_benchmark, SyntheticSpec};
use igcd::RunConfig;

fn main() -> igcd::Result<()> {
    let bench = generate_benchmark(&SyntheticSpec {
        samples_per_category: 60,
        eval_per_category: 10,
        ..SyntheticSpec::default()
    })?;
    let mut rows = Vec::new();
    for m in [1, 3, 5] {
        let cfg = RunConfig {
            support_per_category: m,
            ..RunConfig::desk()
        };
        let run = run_benchmark(&bench, &cfg, Mode::IgcdL)?;
        rows.push((m.to_string(), run.forgetting, run.discovery));
    }
    print!("{}", ablation_csv("support_per_category", &rows));
    Ok(())
}
