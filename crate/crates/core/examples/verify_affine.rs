//! Verifies a random affine classifier on a 49 pixel input for t=2 with the
//! interval backend, falling back to the exact affine check, and compares
//! the verdict with checking every pair of pixels.
//!
//! cargo run --release --example verify_affine -- [seed]

use coverd::coverdb::{BuildOptions, CoverDb};
use coverd::engine::{verify_ball, RunConfig, Verdict};
use coverd::nnverify::{exact_affine_verify, make_neighborhood, ExactAffineBackend, IbpBackend, Network};
use coverd::pg::Block;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> coverd::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = 49;
    let net = Network::random(&[v, 10], false, &mut rng)?;
    let x: Vec<f64> = (0..v).map(|_| rng.gen_range(0.0..1.0)).collect();
    let label = net.classify(&x)?;

    let db = CoverDb::open(std::env::temp_dir().join("coverd-example-verify"));
    db.build(&BuildOptions::new(2, 24))?;
    let ibp = IbpBackend::new(&net, &x, label)?;
    let exact = ExactAffineBackend::new(&net, &x, label)?;
    let mut cfg = RunConfig::new(2);
    cfg.workers = 2;
    cfg.seed = seed;
    let report = verify_ball(v, &ibp, Some(&exact), &cfg, &db)?;
    println!("verdict: {}", report.verdict.label());
    println!("{}", serde_json::to_string_pretty(&report.stats.to_json()).expect("json"));
    if let Verdict::NonRobust { block, .. } = &report.verdict {
        println!("counterexample found in pixels {block}");
    }

    let mut robust = true;
    for i in 1..=v as u32 {
        for j in i + 1..=v as u32 {
            let nbh = make_neighborhood(&x, &Block::new(vec![i, j])?)?;
            robust &= exact_affine_verify(&net, &nbh, label)?.is_verified();
        }
    }
    println!("exhaustive check: {}", if robust { "robust" } else { "non-robust" });
    assert_eq!(robust, matches!(report.verdict, Verdict::Robust));
    Ok(())
}
