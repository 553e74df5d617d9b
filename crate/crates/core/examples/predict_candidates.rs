//! Lists the admissible CVDs for a 784 pixel input and the estimated size
//! distribution of the one with the fewest blocks.
//!
//! cargo run --example predict_candidates -- [v] [t]

use std::env;

use coverd::design::{enumerate_candidates, estimate_distribution, CandidateFilter, Rounding};

fn main() -> coverd::Result<()> {
    let args: Vec<usize> = env::args().skip(1).map(|s| s.parse().expect("integer argument")).collect();
    let v = args.first().copied().unwrap_or(784);
    let t = args.get(1).copied().unwrap_or(4);
    let filter = CandidateFilter::with_defaults(t);
    let candidates = enumerate_candidates(v, t, filter)?;
    println!("{} candidates for v={v}, t={t}", candidates.len());
    for c in &candidates {
        println!(
            "q={:<3} m={:<2} b={:<14} mean={:>8.3} sd={:>7.3} P(k>{})*b={:.2e}",
            c.params.q(),
            c.params.m(),
            c.b,
            c.mean_f64(),
            c.std_dev(),
            filter.max_k,
            c.expected_oversized(filter.max_k)
        );
    }
    let Some(smallest) = candidates.iter().min_by(|a, b| a.b.cmp(&b.b)) else { return Ok(()) };
    let dist = estimate_distribution(smallest, filter.max_k, Rounding::HalfEven);
    println!("size distribution for q={} m={}:", smallest.params.q(), smallest.params.m());
    for (k, n) in dist.counts.iter().filter(|(_, n)| **n > 0.0) {
        println!("  {k:>3} {n}");
    }
    Ok(())
}
