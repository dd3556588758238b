use clap::{Args, Parser, Subcommand, ValueEnum};
use dhjlab::connect::{check_all_k_minus_1_projections, is_connected, is_pairwise_connected};
use dhjlab::corr::{
    kwise_correlation, max_product_correlation, product_pseudorandom_test, pushforward, FnTable, FnTableFile,
    Method, Mode,
};
use dhjlab::cube::{
    disjoint_product, enumerate_lines, line_count, lines_in_set, measure, uniform_coord, uniform_measure, CoordDist,
    CubeSet, Side,
};
use dhjlab::dist::{check_pair_bounds, chain_pair, dhj_default, ChainParams, JointDist};
use dhjlab::extremal::{max_line_free, verify_certificate};
use dhjlab::increment::{
    check_structure, increment_step, main_driver, uniformize, DensityTriple, DriverOutcome, ParamSet,
};
use dhjlab::rational::{self, Rational};
use dhjlab::restrict::{
    collapse_eq, first_unsound_line, restrict_set, sample_restriction, CollapseSpec, Restriction,
};
use dhjlab::verify::{self, random_set, ClaimData, Status};
use serde::Serialize;
use serde_json::{json, Value};
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

const DATA_ENV: &str = "DHJLAB_DATA";

/// Seed used by `verify` when none is given, so the default report is reproducible.
const VERIFY_SEED: u64 = 0;

#[derive(Parser)]
#[command(name = "dhjlab", version, about = "Exact experiments on combinatorial lines in [3]^n")]
struct Cli {
    /// Seed for every random choice; stochastic commands require it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// ParamSet JSON; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Wall-time budget in seconds, for searches that honor one.
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    /// One `path,value` row per leaf of the report.
    Csv,
}

#[derive(Subcommand)]
enum Cmd {
    /// Count or list combinatorial lines of [3]^n or of a set.
    Lines {
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        set: SetArg,
        /// Print only the count.
        #[arg(long)]
        count: bool,
        /// Witness templates to keep when counting lines of a set.
        #[arg(long, default_value_t = 10)]
        witnesses: usize,
    },
    /// Uniform or product measure of a set.
    Measure {
        #[command(flatten)]
        set: SetArg,
        /// Per-coordinate law on 0,1,2 as three rationals, e.g. "1/2,1/3,1/6".
        #[arg(long)]
        coord: Option<String>,
    },
    /// Disjoint product of E1 on {0,1}^n and E2 on {0,2}^n.
    Boxprod {
        #[arg(long)]
        e1: PathBuf,
        #[arg(long)]
        e2: PathBuf,
    },
    /// Verify the finite claims against the stored tables.
    Verify {
        /// Run every claim.
        #[arg(long)]
        all: bool,
        /// Run claims whose id starts with this prefix.
        #[arg(long)]
        claim: Option<String>,
    },
    /// k-wise correlation under a joint law, or the best product correlation of one table.
    Corr {
        /// Function tables, one per coordinate of the law (or one with --product).
        #[arg(long = "f", required = true, num_args = 1..)]
        fs: Vec<PathBuf>,
        /// Joint law file; defaults to the line law.
        #[arg(long)]
        law: Option<PathBuf>,
        /// Maximize over product functions instead.
        #[arg(long)]
        product: bool,
        /// exact, mc or auto
        #[arg(long, default_value = "auto")]
        mode: String,
        #[arg(long, default_value_t = 200_000)]
        samples: u64,
        /// alternating or grid
        #[arg(long, default_value = "alternating")]
        method: String,
    },
    /// Product pseudorandomness test of a table or of 1_E - μ(E).
    Pseudo {
        #[arg(long = "f")]
        f: Option<PathBuf>,
        #[command(flatten)]
        set: SetArg,
        #[arg(long)]
        n_prime: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Restrict or collapse a set and check that derived lines lift.
    Restrict {
        #[command(flatten)]
        set: SetArg,
        /// Fixed coordinates, comma separated.
        #[arg(long, value_delimiter = ',')]
        coords: Vec<usize>,
        /// Values for the fixed coordinates.
        #[arg(long, value_delimiter = ',')]
        z: Vec<u8>,
        /// Sample a restriction keeping each coordinate with this probability.
        #[arg(long)]
        keep: Option<String>,
        /// Blocks to collapse, e.g. "0,1;2,3".
        #[arg(long)]
        collapse: Option<String>,
    },
    /// Drive (S, E1, E2) towards product pseudorandom E1, E2.
    Uniformize {
        #[command(flatten)]
        triple: TripleArgs,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// One density increment step.
    Increment {
        #[command(flatten)]
        triple: TripleArgs,
    },
    /// Alternate increment and uniformization until a line is found or a cap is hit.
    Drive {
        #[command(flatten)]
        set: SetArg,
        #[arg(long)]
        steps: Option<usize>,
        /// Also write the trace as JSON lines here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Largest line-free subset of [3]^n with a certificate.
    Extremal {
        #[arg(long)]
        n: usize,
        /// Write the certificate set file here.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Inspect a joint law: marginals, duplication, decomposition, connectivity, chain pairs.
    Dist {
        /// Law file; defaults to the line law.
        #[arg(long)]
        law: Option<PathBuf>,
        /// Keep these named coordinates.
        #[arg(long, value_delimiter = ',')]
        marginal: Vec<String>,
        /// Conditionally duplicate, keeping these named coordinates.
        #[arg(long, value_delimiter = ',')]
        duplicate: Vec<String>,
        /// Decompose against the uniform law on this support file.
        #[arg(long)]
        component: Option<PathBuf>,
        /// Chain pair law (i,j) with n from --chain-n and K, eta, eta' from the config.
        #[arg(long, value_delimiter = ',')]
        chain: Vec<u32>,
        #[arg(long, default_value_t = 10_000)]
        chain_n: u64,
    },
}

#[derive(Args)]
struct SetArg {
    /// Set file.
    #[arg(long)]
    set: Option<PathBuf>,
    /// Dimension of a seeded random subset of [3]^n instead of a file.
    #[arg(long)]
    random_n: Option<usize>,
    /// Density of the random subset.
    #[arg(long, default_value = "1/2")]
    density: String,
}

#[derive(Args)]
struct TripleArgs {
    #[command(flatten)]
    s: SetArg,
    /// E1 on {0,1}^n; defaults to the full cube.
    #[arg(long)]
    e1: Option<PathBuf>,
    /// E2 on {0,2}^n; defaults to the full cube.
    #[arg(long)]
    e2: Option<PathBuf>,
}

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    params: &'a ParamSet,
    result: Value,
    /// Excluded from reproducibility comparisons.
    metadata: Value,
}

struct Ctx {
    seed: Option<u64>,
    params: ParamSet,
    budget: Option<Duration>,
}

impl Ctx {
    fn seed(&self, what: &str) -> Res<u64> {
        self.seed.ok_or_else(|| format!("{what} is randomized: pass --seed").into())
    }
}

fn read(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn load_set(path: &Path) -> Res<CubeSet> {
    Ok(CubeSet::from_json(&read(path)?)?)
}

fn load_table(path: &Path) -> Res<FnTable> {
    let f: FnTableFile = serde_json::from_str(&read(path)?)?;
    Ok(FnTable::from_file(&f)?)
}

fn load_law(path: Option<&PathBuf>) -> Res<JointDist> {
    match path {
        Some(p) => Ok(JointDist::from_json(&read(p)?)?),
        None => Ok(dhj_default()),
    }
}

fn rat_arg(s: &str) -> Res<Rational> {
    Ok(rational::parse(s)?)
}

impl SetArg {
    fn load(&self, ctx: &Ctx) -> Res<CubeSet> {
        match (&self.set, self.random_n) {
            (Some(p), None) => load_set(p),
            (None, Some(n)) => {
                let d = rat_arg(&self.density)?;
                let num: u64 = d.numer().try_into().map_err(|_| "density numerator too large")?;
                let den: u64 = d.denom().try_into().map_err(|_| "density denominator too large")?;
                Ok(random_set(n, Side::Full, num, den, ctx.seed("--random-n")?))
            }
            (Some(_), Some(_)) => Err("give either --set or --random-n".into()),
            (None, None) => Err("a set is required: --set FILE or --random-n N".into()),
        }
    }

    fn given(&self) -> bool {
        self.set.is_some() || self.random_n.is_some()
    }
}

impl TripleArgs {
    fn load(&self, ctx: &Ctx) -> Res<DensityTriple> {
        let s = self.s.load(ctx)?;
        let n = s.n();
        let e1 = match &self.e1 {
            Some(p) => load_set(p)?,
            None => CubeSet::full(n, Side::ZeroOne)?,
        };
        let e2 = match &self.e2 {
            Some(p) => load_set(p)?,
            None => CubeSet::full(n, Side::ZeroTwo)?,
        };
        Ok(DensityTriple::new(s, e1, e2)?)
    }
}

fn claim_data() -> Res<ClaimData> {
    match std::env::var_os(DATA_ENV) {
        Some(dir) => Ok(ClaimData::from_dir(Path::new(&dir))?),
        None => Ok(ClaimData::builtin()),
    }
}

fn coord_dist(s: &str) -> Res<CoordDist> {
    let parts: Vec<Rational> = s.split(',').map(rat_arg).collect::<Res<_>>()?;
    let [a, b, c]: [Rational; 3] = parts.try_into().map_err(|_| "--coord needs three masses")?;
    Ok([a, b, c])
}

fn blocks(s: &str) -> Res<Vec<Vec<usize>>> {
    s.split(';')
        .map(|b| b.split(',').map(|c| c.trim().parse::<usize>().map_err(|e| e.into())).collect())
        .collect()
}

/// `(result, passed)` for one command.
fn run(cmd: &Cmd, ctx: &Ctx) -> Res<(Value, bool)> {
    let p = &ctx.params;
    Ok(match cmd {
        Cmd::Lines { n, set, count, witnesses } => {
            if set.given() {
                let s = set.load(ctx)?;
                let lc = lines_in_set(&s, *witnesses);
                if *count {
                    (json!(lc.count), true)
                } else {
                    (json!({"n": s.n(), "lines": lc}), true)
                }
            } else {
                let n = n.ok_or("give --n or a set")?;
                if *count {
                    (json!(line_count(n)), true)
                } else {
                    let all: Vec<String> = enumerate_lines(n).map(|t| t.to_string()).collect();
                    (json!({"n": n, "count": all.len(), "lines": all}), true)
                }
            }
        }
        Cmd::Measure { set, coord } => {
            let s = set.load(ctx)?;
            let m = match coord {
                Some(c) => measure(&s, &vec![coord_dist(c)?; s.n()])?,
                None => uniform_measure(&s),
            };
            (json!({"n": s.n(), "side": s.side(), "size": s.len(), "measure": rational::format(&m), "measure_f64": rational::to_f64(&m)}), true)
        }
        Cmd::Boxprod { e1, e2 } => {
            let (e1, e2) = (load_set(e1)?, load_set(e2)?);
            let b = disjoint_product(&e1, &e2)?;
            (json!({"size": b.len(), "measure": rational::format(&uniform_measure(&b)), "set": b}), true)
        }
        Cmd::Verify { all, claim } => {
            let data = claim_data()?;
            let seed = ctx.seed.unwrap_or(VERIFY_SEED);
            let mut rep = verify::verify_all(&data, seed)?;
            if !all {
                let prefix = claim.as_deref().ok_or("give --all or --claim ID")?;
                rep.claims.retain(|id, _| id.starts_with(prefix));
                if rep.claims.is_empty() {
                    return Err(format!("no claim id starts with {prefix:?}").into());
                }
            }
            let ok = rep.all_pass();
            let passed = rep.claims.values().filter(|c| c.status == Status::Pass).count();
            (json!({"all_pass": ok, "passed": passed, "total": rep.claims.len(), "claims": rep.claims}), ok)
        }
        Cmd::Corr { fs, law, product, mode, samples, method } => {
            let tables: Vec<FnTable> = fs.iter().map(|f| load_table(f)).collect::<Res<_>>()?;
            if *product {
                let [f] = tables.as_slice() else {
                    return Err("--product takes one table".into());
                };
                let method = match method.as_str() {
                    "alternating" => Method::Alternating,
                    "grid" => Method::Grid,
                    m => return Err(format!("unknown method {m:?}").into()),
                };
                let d = pushforward(&uniform_coord(), &f.alphabet)?;
                let seed = match method {
                    Method::Grid => ctx.seed.unwrap_or(0),
                    _ => ctx.seed("the alternating maximizer")?,
                };
                let r = max_product_correlation(f, &d, method, &p.maximizer, seed)?;
                (serde_json::to_value(r)?, true)
            } else {
                let d = load_law(law.as_ref())?;
                let mode = match mode.as_str() {
                    "exact" => Mode::Exact,
                    "mc" => Mode::MonteCarlo { samples: *samples },
                    "auto" => Mode::Auto { samples: *samples },
                    m => return Err(format!("unknown mode {m:?}").into()),
                };
                let seed = match mode {
                    Mode::Exact => ctx.seed.unwrap_or(0),
                    _ => ctx.seed("sampled correlation")?,
                };
                let refs: Vec<&FnTable> = tables.iter().collect();
                let r = kwise_correlation(&refs, &d, mode, p.exact_budget, seed)?;
                (serde_json::to_value(r)?, true)
            }
        }
        Cmd::Pseudo { f, set, n_prime, gamma } => {
            let table = match (f, set.given()) {
                (Some(path), false) => load_table(path)?,
                (None, true) => {
                    let s = set.load(ctx)?;
                    FnTable::indicator(&s, rational::to_f64(&uniform_measure(&s)))
                }
                _ => return Err("give exactly one of --f or a set".into()),
            };
            let n_prime = n_prime.unwrap_or_else(|| p.n_prime(table.n));
            let gamma = gamma.unwrap_or_else(|| rational::to_f64(&p.gamma));
            let r = product_pseudorandom_test(&table, n_prime, gamma, &uniform_coord(), &p.tester, ctx.seed("the tester")?)?;
            (serde_json::to_value(r)?, true)
        }
        Cmd::Restrict { set, coords, z, keep, collapse } => {
            let s = set.load(ctx)?;
            let n = s.n();
            if let Some(c) = collapse {
                let spec = CollapseSpec::new(n, blocks(c)?)?;
                let derived = collapse_eq(&s, &spec)?;
                let unsound = first_unsound_line(&s, &spec.coord_map(n)).map(|t| t.to_string());
                let ok = unsound.is_none();
                (json!({"collapse": spec, "size": derived.len(), "set": derived, "unsound_line": unsound}), ok)
            } else {
                let r = match keep {
                    Some(k) => {
                        let mut r = sample_restriction(n, &rat_arg(k)?, &uniform_coord(), ctx.seed("a sampled restriction")?)?;
                        // sampled values live in [3]; move them onto the set's side
                        r.z = r.z.iter().map(|&v| s.side().project(v)).collect();
                        r
                    }
                    None => Restriction::new(n, coords.clone(), z.clone())?,
                };
                let derived = restrict_set(&s, &r)?;
                let unsound = first_unsound_line(&s, &r.coord_map()).map(|t| t.to_string());
                let ok = unsound.is_none();
                (json!({"restriction": r, "size": derived.len(), "set": derived, "unsound_line": unsound}), ok)
            }
        }
        Cmd::Uniformize { triple, rounds } => {
            let t = triple.load(ctx)?;
            let seed = ctx.seed("uniformization")?;
            let (sel, rep) = uniformize(&t, p, rounds.unwrap_or(p.round_cap), seed)?;
            let structure = check_structure(&sel, p, seed)?;
            (json!({"report": rep, "structure": structure, "selected": sel}), true)
        }
        Cmd::Increment { triple } => {
            let t = triple.load(ctx)?;
            let (_, rep) = increment_step(&t, p, ctx.seed("the increment step")?)?;
            (serde_json::to_value(rep)?, true)
        }
        Cmd::Drive { set, steps, trace } => {
            let s = set.load(ctx)?;
            let r = main_driver(&s, p, steps.unwrap_or(p.step_cap), ctx.seed("the driver")?)?;
            if let Some(path) = trace {
                std::fs::write(path, r.trace_jsonl())?;
            }
            let ok = r.outcome != DriverOutcome::LiftMismatch;
            (serde_json::to_value(r)?, ok)
        }
        Cmd::Extremal { n, certificate } => {
            let r = max_line_free(*n, ctx.budget, ctx.seed.unwrap_or(0))?;
            let verified = verify_certificate(&r.witness, r.size);
            let cert = json!({"claimed_size": r.size, "set": &r.witness});
            if let Some(path) = certificate {
                std::fs::write(path, serde_json::to_string_pretty(&cert)?)?;
            }
            (json!({"n": r.n, "size": r.size, "optimal": r.optimal, "nodes": r.nodes, "verified": verified, "certificate": cert}), verified)
        }
        Cmd::Dist { law, marginal, duplicate, component, chain, chain_n } => {
            if !chain.is_empty() {
                let params = ChainParams::new(*chain_n, p.k, p.eta.clone(), p.eta_prime.clone())?;
                let &[i, j] = chain.as_slice() else {
                    return Err("--chain takes two steps i,j".into());
                };
                let xi = chain_pair(&params, i, j)?;
                let b = check_pair_bounds(&params, i, j)?;
                let ok = b.cross_mass_ok && b.diagonal_ok;
                return Ok((json!({"params": params, "law": xi.to_file(), "bounds": b}), ok));
            }
            let mut d = load_law(law.as_ref())?;
            if !duplicate.is_empty() {
                let keep: Vec<&str> = duplicate.iter().map(String::as_str).collect();
                d = d.cs_duplicate_by_name(&keep)?;
            }
            if !marginal.is_empty() {
                let keep: Vec<&str> = marginal.iter().map(String::as_str).collect();
                d = d.marginal_by_name(&keep)?;
            }
            let support = d.support();
            let mut out = json!({
                "law": d.to_file(),
                "support_size": support.len(),
                "connected": is_connected(&support).connected,
                "pairwise": is_pairwise_connected(&d),
                "projections": check_all_k_minus_1_projections(&support).all_connected,
            });
            if let Some(c) = component {
                let comp = JointDist::from_json(&read(c)?)?;
                let dec = d.decompose(&comp)?;
                out["decomposition"] = json!({
                    "beta": rational::format(&dec.beta),
                    "residual": dec.residual.map(|r| r.to_file()),
                });
            }
            (out, true)
        }
    })
}

fn csv_rows(prefix: &str, v: &Value, out: &mut String) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| csv_rows(&key(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| csv_rows(&key(&i.to_string()), v, out)),
        Value::String(s) => out.push_str(&format!("{prefix},{}\n", csv_field(s))),
        leaf => out.push_str(&format!("{prefix},{leaf}\n")),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Lines { .. } => "lines",
        Cmd::Measure { .. } => "measure",
        Cmd::Boxprod { .. } => "boxprod",
        Cmd::Verify { .. } => "verify",
        Cmd::Corr { .. } => "corr",
        Cmd::Pseudo { .. } => "pseudo",
        Cmd::Restrict { .. } => "restrict",
        Cmd::Uniformize { .. } => "uniformize",
        Cmd::Increment { .. } => "increment",
        Cmd::Drive { .. } => "drive",
        Cmd::Extremal { .. } => "extremal",
        Cmd::Dist { .. } => "dist",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let params = match &cli.config {
        Some(path) => match read(path).and_then(|s| Ok(ParamSet::from_json(&s)?)) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => ParamSet::default(),
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let budget = match cli.budget {
        Some(b) if b.is_finite() && b >= 0.0 => Some(Duration::from_secs_f64(b)),
        Some(b) => {
            eprintln!("error: --budget must be a non-negative number of seconds, got {b}");
            return ExitCode::from(2);
        }
        None => None,
    };
    let ctx = Ctx {
        seed: cli.seed,
        params,
        budget,
    };
    let (result, ok) = match run(&cli.cmd, &ctx) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let plain_count = matches!(cli.cmd, Cmd::Lines { count: true, .. });
    let text = if plain_count {
        format!("{result}\n")
    } else {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let report = Report {
            tool: "dhjlab",
            version: env!("CARGO_PKG_VERSION"),
            command: name(&cli.cmd),
            seed: cli.seed,
            params: &ctx.params,
            result,
            metadata: json!({"unix_time": stamp, "elapsed_ms": started.elapsed().as_millis() as u64}),
        };
        match cli.format {
            Format::Json => serde_json::to_string_pretty(&report).expect("reports serialize") + "\n",
            Format::Csv => {
                let mut out = String::from("path,value\n");
                csv_rows("", &serde_json::to_value(&report).expect("reports serialize"), &mut out);
                out
            }
        }
    };
    let written = match &cli.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
