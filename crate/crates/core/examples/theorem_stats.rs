//! Compares the predicted block size mean and variance of a CVD with the
//! values measured on the generated design.
//!
//! cargo run --release --example theorem_stats -- [q] [m] [t] [v] [seed]

use std::env;

use coverd::design::{cvd_stats, SizeMoments};
use coverd::pg::{CvdStream, InducedSelection, PgParams};

fn main() -> coverd::Result<()> {
    let a: Vec<u64> = env::args().skip(1).map(|s| s.parse().expect("integer argument")).collect();
    let get = |i: usize, d: u64| a.get(i).copied().unwrap_or(d);
    let params = PgParams::new(get(0, 5), get(1, 3) as usize, get(2, 2) as usize)?;
    let v = get(3, 100) as usize;

    let predicted = cvd_stats(params, v)?;
    let sel = InducedSelection::random(params.v_prime(), v, get(4, 1))?;
    let mut m = SizeMoments::default();
    m.extend(CvdStream::new(params, &sel, 0, 1)?.map(|b| b.len()));
    let (mean, var) = m.moments()?;

    println!("PG({}, {}) with t={} on {v} of {} points: {} blocks", params.m(), params.q(), params.t(), params.v_prime(), m.count());
    println!("predicted mean {} variance {}", predicted.mean, predicted.variance);
    println!("measured  mean {mean} variance {var}");
    assert_eq!((mean, var), (predicted.mean, predicted.variance));
    Ok(())
}
