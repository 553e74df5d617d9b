//! How far the CVDs for a 784 pixel input are above the Schönheim bound.
//!
//! cargo run --example ratio_report

use coverd::design::ratio_report;

fn main() -> coverd::Result<()> {
    for t in [4, 5] {
        let r = ratio_report(784, t, 10.0)?;
        print!("{}", r.to_csv());
        println!("t={t}: {} designs, average ratio {:.4}\n", r.rows.len(), r.average());
    }
    Ok(())
}
