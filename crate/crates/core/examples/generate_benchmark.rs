//! Build a small synthetic incremental benchmark and write it to disk.
//!
//! `cargo run --example generate_benchmark -- /tmp/bench`

use igcd::ingest::{generate_benchmark, read_benchmark, stage_category_counts, write_benchmark, SyntheticSpec};

fn main() -> igcd::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/example-bench".into());
    let spec = SyntheticSpec {
        samples_per_category: 60,
        eval_per_category: 10,
        ..SyntheticSpec::default()
    };
    let bench = generate_benchmark(&spec)?;
    println!("{} rows of width {}", bench.embeddings.n(), bench.embeddings.d());
    for (t, counts) in stage_category_counts(&bench).iter().enumerate() {
        println!("stage {t}: {counts:?}");
    }

    write_benchmark(&bench, dir.as_ref())?;
    let back = read_benchmark(dir.as_ref())?;
    assert_eq!(back.stages, bench.stages);
    println!("wrote {dir}");
    Ok(())
}
