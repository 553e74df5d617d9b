//! Command-line interface. The `coverd` binary forwards here.
//!
//! Exit codes: 0 success, 1 non-robust, 2 unknown or timeout, 10 usage
//! errors, 11 any other failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::coverdb::{BuildOptions, CoverDb};
use crate::defaults::{COMPLETE_SAMPLES, DB_CAP, EPS, MAX_K, N_FAIL, N_SAMPLES, N_SAMPLES_REDUCED};
use crate::design::{
    enumerate_candidates, estimate_distribution, ratio_report, schonheim_bound, CandidateFilter, Rounding,
};
use crate::engine::{plan_run, verify_ball, Report, RunConfig, Scheduler, Verdict};
use crate::error::{Error, Result};
use crate::nnverify::{
    image_to_text, read_image, Backend, ExactAffineBackend, IbpBackend, Network, Profile, ScriptedBackend,
    ScriptedComplete,
};
use crate::pg::{pg_stream, CvdStream, InducedSelection, PgParams};
use crate::planner::{DesignChoice, KStats, RefinementPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NON_ROBUST: i32 = 1;
pub const EXIT_UNKNOWN: i32 = 2;
pub const EXIT_USAGE: i32 = 10;
pub const EXIT_FAILURE: i32 = 11;

/// Covering verification designs for few-pixel robustness verification.
#[derive(Parser, Debug)]
#[command(name = "coverd", version)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = crate::defaults::DEFAULT_WORKERS)]
    pub threads: usize,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    /// Covering database directory; COVERD_DB overrides the default.
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate PG coverings or covering verification designs.
    #[command(subcommand)]
    Covergen(Covergen),
    /// List the candidate designs for an input size, or the estimated block
    /// size distribution of one of them.
    Predict(PredictArgs),
    /// Lower bounds on covering numbers.
    #[command(subcommand)]
    Bound(Bound),
    /// Size of each candidate design relative to the Schönheim bound.
    RatioReport(RatioArgs),
    /// Build, query and import the refinement covering database.
    #[command(subcommand)]
    Db(Db),
    /// Sample the backend and choose a design without running the analysis.
    Plan(PlanArgs),
    /// Verify robustness of a network in the t-ball around an image.
    Verify(VerifyArgs),
}

#[derive(Subcommand, Debug)]
pub enum Covergen {
    /// The PG covering C(v', k', t), in the covering file format.
    Pg {
        #[arg(long)]
        q: u64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        t: usize,
        /// Emit only this worker's share.
        #[arg(long, default_value_t = 0)]
        worker: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// The CVD on v points: one block per line, possibly empty.
    Cvd {
        #[arg(long)]
        q: u64,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        v: usize,
        #[arg(long, default_value_t = 0)]
        worker: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Print the block size histogram `k<TAB>count` instead of the blocks.
        #[arg(long)]
        histogram: bool,
    },
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    /// Smallest admissible mean block size (default t).
    #[arg(long)]
    pub min_k: Option<f64>,
    #[arg(long, default_value_t = MAX_K)]
    pub max_k: usize,
    /// Largest admissible expected number of blocks above max-k.
    #[arg(long, default_value_t = EPS)]
    pub eps: f64,
}

impl FilterArgs {
    fn filter(&self, t: usize) -> CandidateFilter {
        CandidateFilter { min_k: self.min_k.unwrap_or(t as f64), max_k: self.max_k, eps: self.eps }
    }
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub v: usize,
    #[arg(long)]
    pub t: usize,
    #[command(flatten)]
    pub filter: FilterArgs,
    /// With --m, print the estimated size distribution of this candidate.
    #[arg(long, requires = "m")]
    pub q: Option<u64>,
    #[arg(long, requires = "q")]
    pub m: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Bound {
    /// The Schönheim bound L(v, k, t).
    Schonheim {
        #[arg(long)]
        v: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        t: u64,
    },
}

#[derive(Args, Debug)]
pub struct RatioArgs {
    #[arg(long)]
    pub v: usize,
    #[arg(long, default_value_t = 10.0)]
    pub min_mean: f64,
    /// Strengths to report, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 5])]
    pub t: Vec<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Db {
    /// Build C(v, k, t) for every t <= k < v <= max-v within the cap.
    Build {
        #[arg(long)]
        t: usize,
        #[arg(long, alias = "max")]
        max_v: usize,
        #[arg(long, default_value_t = DB_CAP)]
        cap: usize,
        /// Rebuild existing entries.
        #[arg(long)]
        force: bool,
    },
    /// Print a stored covering.
    Get {
        #[arg(long)]
        v: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        t: usize,
    },
    /// Validate a covering file and add it to the database. Headerless
    /// block listings need --v, --k and --t.
    Import {
        file: PathBuf,
        #[arg(long, requires_all = ["k", "t"])]
        v: Option<usize>,
        #[arg(long, requires_all = ["v", "t"])]
        k: Option<usize>,
        #[arg(long, requires_all = ["v", "k"])]
        t: Option<usize>,
    },
}

#[derive(Args, Debug)]
pub struct ProblemArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub t: usize,
    /// Incomplete backend: ibp, affine or scripted:PROFILE.tsv.
    #[arg(long, default_value = "ibp")]
    pub backend: String,
    /// Complete backend: affine, none or scripted:PROFILE.tsv. Defaults to
    /// affine for networks without ReLU layers and none otherwise.
    #[arg(long)]
    pub complete_backend: Option<String>,
    /// Workers (default --threads).
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub filter: FilterArgs,
    #[arg(long, default_value_t = N_SAMPLES)]
    pub n_samples: usize,
    #[arg(long, default_value_t = N_SAMPLES_REDUCED)]
    pub reduced_samples: usize,
    #[arg(long, default_value_t = N_FAIL)]
    pub n_fail: usize,
    #[arg(long, default_value_t = COMPLETE_SAMPLES)]
    pub complete_samples: usize,
    /// Drive all workers from one thread in turn.
    #[arg(long)]
    pub round_robin: bool,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Write the plan as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Seconds before giving up.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Write run statistics as flat JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Where to write a counterexample image.
    #[arg(long)]
    pub witness: Option<PathBuf>,
    /// Also write the plan as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Output goes to `out`, diagnostics to stderr.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).is_test(false).try_init();
    match run(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParams(_) | Error::NoCandidates => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn database(cli: &Cli) -> CoverDb {
    match &cli.db {
        Some(p) => CoverDb::open(p),
        None => CoverDb::from_env_or("db"),
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Covergen(Covergen::Pg { q, m, t, worker, workers }) => {
            let params = PgParams::new(*q, *m, *t)?;
            let stream = pg_stream(params, *worker, *workers)?;
            writeln!(out, "c {} {} {} {}", params.v_prime(), params.k_prime(), t, stream.remaining())?;
            for b in stream {
                writeln!(out, "{b}")?;
            }
        }
        Command::Covergen(Covergen::Cvd { q, m, t, v, worker, workers, histogram }) => {
            let params = PgParams::new(*q, *m, *t)?;
            let selection = InducedSelection::random(params.v_prime(), *v, cli.seed)?;
            let stream = CvdStream::new(params, &selection, *worker, *workers)?;
            if *histogram {
                let mut h: BTreeMap<usize, u64> = BTreeMap::new();
                for b in stream {
                    *h.entry(b.len()).or_default() += 1;
                }
                writeln!(out, "k\tcount")?;
                for (k, n) in h {
                    writeln!(out, "{k}\t{n}")?;
                }
            } else {
                for b in stream {
                    writeln!(out, "{b}")?;
                }
            }
        }
        Command::Predict(a) => predict(a, out)?,
        Command::Bound(Bound::Schonheim { v, k, t }) => {
            writeln!(out, "{}", schonheim_bound(*v, *k, *t)?)?;
        }
        Command::RatioReport(a) => {
            for &t in &a.t {
                let report = ratio_report(a.v, t, a.min_mean)?;
                writeln!(out, "# t={t}")?;
                write!(out, "{}", report.to_csv())?;
            }
        }
        Command::Db(cmd) => db_command(cli, cmd, out)?,
        Command::Plan(a) => {
            let problem = Problem::load(&a.problem)?;
            let cfg = run_config(cli, &a.problem, None);
            let db = database(cli);
            let (kstats, plan, choice) =
                plan_run(problem.x.len(), problem.incomplete.as_ref(), problem.complete.as_deref(), &cfg, &db)?;
            let doc = plan_json(&kstats, &plan, &choice);
            let c = choice.candidate();
            writeln!(out, "q\t{}\nm\t{}\nscore\t{:.6}\nselection\t{}", c.params.q(), c.params.m(), choice.score(), digest(&choice.selection))?;
            write!(out, "{}", kstats.to_tsv())?;
            if let Some(p) = &a.report {
                write_json(p, &doc)?;
            }
        }
        Command::Verify(a) => return verify(cli, a, out),
    }
    Ok(EXIT_OK)
}

fn predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let filter = a.filter.filter(a.t);
    if let (Some(q), Some(m)) = (a.q, a.m) {
        let c = crate::design::cvd_stats(PgParams::new(q, m, a.t)?, a.v)?;
        let dist = estimate_distribution(&c, filter.max_k, Rounding::HalfEven);
        writeln!(out, "k\tblocks")?;
        for (k, n) in &dist.counts {
            if *n > 0.0 {
                writeln!(out, "{k}\t{n}")?;
            }
        }
        return Ok(());
    }
    writeln!(out, "q\tm\tv_prime\tk_prime\tb\tmean\tvariance\toversized")?;
    for c in enumerate_candidates(a.v, a.t, filter)? {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6e}",
            c.params.q(),
            c.params.m(),
            c.params.v_prime(),
            c.params.k_prime(),
            c.b,
            c.mean_f64(),
            c.variance_f64(),
            c.expected_oversized(filter.max_k)
        )?;
    }
    Ok(())
}

fn db_command(cli: &Cli, cmd: &Db, out: &mut dyn Write) -> Result<()> {
    let db = database(cli);
    match cmd {
        Db::Build { t, max_v, cap, force } => {
            let mut opts = BuildOptions::new(*t, *max_v);
            opts.cap = *cap;
            opts.threads = cli.threads.max(1);
            opts.force = *force;
            opts.seed = cli.seed;
            let s = db.build(&opts)?;
            writeln!(
                out,
                "written\t{}\nexisting\t{}\nskipped\t{}\npg_exact\t{}\npg_induced\t{}\ngreedy\t{}",
                s.written,
                s.existing,
                s.skipped.len(),
                s.pg_exact,
                s.pg_induced,
                s.greedy
            )?;
        }
        Db::Get { v, k, t } => {
            write!(out, "{}", db.get(*v, *k, *t)?.to_text())?;
        }
        Db::Import { file, v, k, t } => {
            let params = match (v, k, t) {
                (Some(v), Some(k), Some(t)) => Some((*v, *k, *t)),
                _ => None,
            };
            let c = db.import(file, params)?;
            writeln!(out, "{}", db.path_for(c.v, c.k, c.t).display())?;
        }
    }
    Ok(())
}

struct Problem {
    net: Network,
    x: Vec<f64>,
    label: usize,
    incomplete: Box<dyn Backend>,
    complete: Option<Box<dyn Backend>>,
}

impl Problem {
    fn load(a: &ProblemArgs) -> Result<Self> {
        let net = Network::read(&a.net)?;
        let x = read_image(&a.image)?;
        let label = net.classify(&x)?;
        let incomplete = backend(&a.backend, &net, &x, label, false)?
            .ok_or_else(|| Error::invalid("the incomplete backend cannot be `none`"))?;
        let complete_spec = a.complete_backend.clone().unwrap_or_else(|| {
            if a.backend.starts_with("scripted:") {
                a.backend.clone()
            } else if net.is_affine() {
                "affine".into()
            } else {
                "none".into()
            }
        });
        let complete = backend(&complete_spec, &net, &x, label, true)?;
        Ok(Problem { net, x, label, incomplete, complete })
    }
}

fn backend(spec: &str, net: &Network, x: &[f64], label: usize, complete: bool) -> Result<Option<Box<dyn Backend>>> {
    Ok(Some(match spec {
        "none" => return Ok(None),
        "ibp" if !complete => Box::new(IbpBackend::new(net, x, label)?),
        "affine" => Box::new(ExactAffineBackend::new(net, x, label)?),
        s => match s.strip_prefix("scripted:") {
            Some(path) => {
                let profile = Arc::new(Profile::read(Path::new(path))?);
                if complete {
                    Box::new(ScriptedComplete::new(&profile)?)
                } else {
                    Box::new(ScriptedBackend::new(profile, label as u64))
                }
            }
            None => return Err(Error::invalid(format!("unknown backend `{spec}`"))),
        },
    }))
}

fn run_config(cli: &Cli, a: &ProblemArgs, timeout: Option<f64>) -> RunConfig {
    let mut cfg = RunConfig::new(a.t);
    cfg.workers = a.workers.unwrap_or(cli.threads).max(1);
    cfg.seed = cli.seed;
    cfg.max_k = a.filter.max_k;
    cfg.min_k = a.filter.min_k;
    cfg.eps = a.filter.eps;
    cfg.n_samples = a.n_samples;
    cfg.reduced_samples = a.reduced_samples;
    cfg.n_fail = a.n_fail;
    cfg.complete_samples = a.complete_samples;
    cfg.timeout = timeout.map(Duration::from_secs_f64);
    cfg.scheduler = if a.round_robin { Scheduler::RoundRobin } else { Scheduler::Threads };
    cfg
}

fn verify(cli: &Cli, a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
    if a.timeout.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::invalid("timeout must be a nonnegative number of seconds"));
    }
    let problem = Problem::load(&a.problem)?;
    let cfg = run_config(cli, &a.problem, a.timeout);
    let db = database(cli);
    let Report { verdict, stats, kstats, plan, choice } =
        verify_ball(problem.x.len(), problem.incomplete.as_ref(), problem.complete.as_deref(), &cfg, &db)?;
    if let Some(p) = &a.stats {
        write_json(p, &stats.to_json())?;
    }
    if let Some(p) = &a.report {
        write_json(p, &plan_json(&kstats, &plan, &choice))?;
    }
    writeln!(out, "verdict\t{}", verdict.label())?;
    writeln!(out, "label\t{}", problem.label)?;
    let code = match &verdict {
        Verdict::Robust => EXIT_OK,
        Verdict::NonRobust { witness, block } => {
            writeln!(out, "block\t{block}")?;
            writeln!(out, "class\t{}", problem.net.classify(witness)?)?;
            if let Some(p) = &a.witness {
                fs::write(p, image_to_text(witness))?;
            }
            EXIT_NON_ROBUST
        }
        Verdict::Unknown { unresolved, .. } => {
            writeln!(out, "unresolved\t{unresolved}")?;
            EXIT_UNKNOWN
        }
    };
    Ok(code)
}

/// FNV-1a over the selected points, as 16 hex digits.
fn digest(sel: &InducedSelection) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in sel.points() {
        for byte in p.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn fixed(x: f64) -> Value {
    if x.is_finite() {
        json!(format!("{x:.9}"))
    } else {
        json!(if x > 0.0 { "inf" } else { "nan" })
    }
}

fn plan_json(kstats: &KStats, plan: &RefinementPlan, choice: &DesignChoice) -> Value {
    let c = choice.candidate();
    let mut doc = Map::new();
    doc.insert("q".into(), json!(c.params.q()));
    doc.insert("m".into(), json!(c.params.m()));
    doc.insert("t".into(), json!(c.params.t()));
    doc.insert("v".into(), json!(c.v));
    doc.insert("b".into(), json!(c.b.to_string()));
    doc.insert("score".into(), fixed(choice.score()));
    doc.insert("selection_digest".into(), json!(digest(&choice.selection)));
    doc.insert("t_complete".into(), fixed(plan.t_complete));
    let candidates: Vec<Value> = choice
        .scored
        .iter()
        .map(|s| {
            json!({
                "q": s.candidate.params.q(),
                "m": s.candidate.params.m(),
                "b": s.candidate.b.to_string(),
                "mean": fixed(s.candidate.mean_f64()),
                "score": fixed(s.score),
            })
        })
        .collect();
    doc.insert("candidates".into(), Value::Array(candidates));
    let kst: Vec<Value> = kstats
        .per_k
        .iter()
        .map(|(k, s)| json!({"k": k, "success": fixed(s.success()), "time": fixed(s.time()), "samples": s.samples}))
        .collect();
    doc.insert("kstats".into(), Value::Array(kst));
    let f_r: Map<String, Value> = plan.f_r.iter().map(|(k, n)| (k.to_string(), json!(n))).collect();
    doc.insert("f_r".into(), Value::Object(f_r));
    Value::Object(doc)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::invalid(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
