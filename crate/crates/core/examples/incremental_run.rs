//! Four-stage run in either setting.
//!
//! `cargo run --release --example incremental_run -- igcd-u`

use igcd::config::Mode;
use igcd::eval::summary_csv;
use igcd::engine::run_benchmark;
use igcd::ingest::{generate_benchmark, SyntheticSpec};
use igcd::RunConfig;

fn main() -> igcd::Result<()> {
    let arg = std::env::args().nth(1).unwrap_or_else(|| "igcd-l".into());
    let mode: Mode = arg
        .parse()
        .map_err(|_| igcd::Error::Argument(format!("unknown mode `{arg}`")))?;
    let bench = generate_benchmark(&SyntheticSpec {
        samples_per_category: 60,
        eval_per_category: 10,
        seed: 1,
        ..SyntheticSpec::default()
    })?;
    let cfg = RunConfig::desk();

    let run = run_benchmark(&bench, &cfg, mode)?;
    for r in &run.reports {
        println!(
            "stage {}: all {:?} old {:?} new {:?}, {} peaks, {} fresh ids",
            r.stage, r.acc_all, r.acc_old, r.acc_new, r.estimated_category_count, r.novel_category_count
        );
    }
    print!("{}", summary_csv(&run.reports, mode, run.forgetting, run.discovery));
    println!("M_f = {:.4}  M_d = {:.4}", run.forgetting, run.discovery);
    assert_eq!(run.audit_violations, 0);
    Ok(())
}
