//! Plans a run from a scripted backend profile: the sampled success rates,
//! the refinement sizes and the chosen design.
//!
//! cargo run --release --example plan_design

use std::collections::BTreeMap;
use std::sync::Arc;

use coverd::coverdb::{BuildOptions, CoverDb};
use coverd::engine::{plan_run, RunConfig};
use coverd::nnverify::{Profile, ScriptedBackend, ScriptedComplete};

fn main() -> coverd::Result<()> {
    // success falls off with the block size, time grows with it
    let sizes: BTreeMap<usize, (f64, f64)> =
        (2..=coverd::defaults::MAX_K).map(|k| (k, ((1.0 - k as f64 / 50.0).max(0.0), 0.01 + 0.002 * k as f64))).collect();
    let profile = Arc::new(Profile::new(sizes, Some(0.5))?);
    let incomplete = ScriptedBackend::new(profile.clone(), 3);
    let complete = ScriptedComplete::new(&profile)?;

    let dir = std::env::temp_dir().join("coverd-example-plan");
    let db = CoverDb::open(&dir);
    db.build(&BuildOptions::new(3, 30))?;

    let mut cfg = RunConfig::new(3);
    cfg.workers = 4;
    let (kstats, plan, choice) = plan_run(784, &incomplete, Some(&complete), &cfg, &db)?;
    print!("{}", kstats.to_tsv());
    for (k, next) in plan.coverings() {
        println!("refine size {k} with C({k}, {next}, 3), expected cost {:.3}", plan.refinement_cost(k));
    }
    for s in &choice.scored {
        println!("q={:<3} m={} b={:<10} score {:.1}", s.candidate.params.q(), s.candidate.params.m(), s.candidate.b, s.score);
    }
    let c = choice.candidate();
    println!("chosen: q={} m={} with estimated time {:.1}", c.params.q(), c.params.m(), choice.score());
    Ok(())
}
