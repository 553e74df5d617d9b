//! The lines of PG(2, 2) form the Fano plane, a (7, 3, 2) covering that
//! meets the Schönheim bound.
//!
//! cargo run --example fano_plane

use coverd::design::schonheim_bound;
use coverd::pg::{bibd_parameters, pg_stream, point_vector, PgParams};

fn main() -> coverd::Result<()> {
    let params = PgParams::new(2, 2, 2)?;
    for i in 1..=params.v_prime() {
        println!("point {i}: {:?}", point_vector(&params, i)?);
    }
    let lines: Vec<_> = pg_stream(params, 0, 1)?.collect();
    for l in &lines {
        println!("line {l}");
    }
    let bibd = bibd_parameters(&params);
    println!("v={} b={} r={} k={} lambda={}", bibd.v, bibd.b, bibd.r, bibd.k, bibd.lambda);
    println!("Schönheim bound L(7,3,2) = {}", schonheim_bound(7, 3, 2)?);
    Ok(())
}
