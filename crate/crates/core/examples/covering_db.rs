//! Builds a small covering database, reads a covering back and renames it
//! onto a subset, the way refinement uses it.
//!
//! cargo run --release --example covering_db -- [t] [max_v] [dir]

use std::env;
use std::time::Instant;

use coverd::coverdb::{rename_to, BuildOptions, CoverDb};

fn main() -> coverd::Result<()> {
    let args: Vec<String> = env::args().skip(1).collect();
    let t: usize = args.first().map_or(Ok(3), |s| s.parse()).expect("t");
    let max_v: usize = args.get(1).map_or(Ok(16), |s| s.parse()).expect("max_v");
    let dir = args.get(2).cloned().unwrap_or_else(|| env::temp_dir().join("coverd-example-db").display().to_string());

    let db = CoverDb::open(&dir);
    let mut opts = BuildOptions::new(t, max_v);
    opts.threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let summary = db.build(&opts)?;
    println!(
        "built {} coverings in {:.1?} (pg exact {}, pg induced {}, greedy {}; {} already present, {} skipped)",
        summary.written,
        start.elapsed(),
        summary.pg_exact,
        summary.pg_induced,
        summary.greedy,
        summary.existing,
        summary.skipped.len()
    );

    let v = max_v;
    let k = (max_v * 3 / 4).max(t);
    let cover = db.get(v, k, t)?;
    println!("C({v},{k},{t}) has {} blocks, stored at {}", cover.len(), db.path_for(v, k, t).display());

    // rename onto the subset {2, 4, ..., 2v}
    let s: Vec<u32> = (1..=v as u32).map(|i| 2 * i).collect();
    for b in rename_to(&cover, &s)?.iter().take(3) {
        println!("  {b}");
    }
    Ok(())
}
