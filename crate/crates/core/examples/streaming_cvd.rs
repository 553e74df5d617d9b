//! Streams a large CVD across several workers without materializing it and
//! reports throughput and the block size histogram.
//!
//! cargo run --release --example streaming_cvd -- [blocks]

use std::collections::BTreeMap;
use std::env;
use std::time::Instant;

use coverd::pg::{CvdStream, InducedSelection, PgParams};

fn main() -> coverd::Result<()> {
    let limit: usize = env::args().nth(1).map_or(100_000, |s| s.parse().expect("block count"));
    let workers = 4;
    let params = PgParams::new(17, 5, 5)?;
    let sel = InducedSelection::random(params.v_prime(), 784, 7)?;
    let base = CvdStream::new(params, &sel, 0, 1)?;
    println!("PG(5, 17) restricted to 784 points: {} blocks in total", params.block_count());

    let start = Instant::now();
    let per_worker = limit / workers;
    let hists: Vec<BTreeMap<usize, u64>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let stream = base.for_worker(w, workers).expect("worker share");
                s.spawn(move || {
                    let mut h = BTreeMap::new();
                    for b in stream.take(per_worker) {
                        *h.entry(b.len()).or_insert(0u64) += 1;
                    }
                    h
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    });
    let mut total = BTreeMap::new();
    for h in hists {
        for (k, n) in h {
            *total.entry(k).or_insert(0) += n;
        }
    }
    let elapsed = start.elapsed();
    let n: u64 = total.values().sum();
    println!("{n} blocks in {elapsed:.2?} ({:.0} blocks/s)", n as f64 / elapsed.as_secs_f64());
    for (k, c) in total {
        println!("  {k:>3} {c}");
    }
    Ok(())
}
