//! CLI over the library: validation, decompression, statistics, path and
//! tuple enumeration, the brute-force oracle, instance generators, and the
//! step-count benchmark.
//!
//! Exit codes: 0 ok, 1 validation/verification failure, 2 usage,
//! 3 resource cap exceeded.

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use slpfo::dagpaths::{extend_and_weight, OrderedDag, Steps};
use slpfo::engine::Engine;
use slpfo::gen;
use slpfo::oracle::{naive_eval_query, naive_initial_paths};
use slpfo::query::parse_query;
use slpfo::slp::{decompress_cap, parse_slp, write_slp, Slp};
use slpfo::structure::{parse_structure, write_structure, Structure};
use slpfo::Error;
use std::collections::BTreeSet;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "slpfo", version, about = "Compressed relational structures with constant-delay local query enumeration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check grammar well-formedness and the apex property
    Validate { slp: String },
    /// Expand the compressed structure to explicit text form
    Decompress {
        slp: String,
        /// node-count cap (default from SLPFO_DECOMPRESS_CAP or built-in)
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Sizes, per-nonterminal expansion sizes, realized types and counts
    Stats {
        slp: String,
        /// neighborhood radius for the type catalog
        #[arg(long, default_value_t = 1)]
        rho: u32,
    },
    /// Stream initial derivation paths with their lexicographic ranks
    Paths {
        slp: String,
        /// only paths ending at this nonterminal
        #[arg(long, name = "type")]
        type_: Option<String>,
        #[arg(long)]
        limit: Option<u64>,
        /// cross-check order and ranks against the brute-force oracle
        #[arg(long)]
        verify: bool,
    },
    /// Exact node counts per realized neighborhood type
    Count {
        slp: String,
        #[arg(long, default_value_t = 1)]
        rho: u32,
        /// restrict to one type index from `stats`
        #[arg(long, name = "type")]
        type_: Option<usize>,
    },
    /// Enumerate query answers from the compressed structure
    Enumerate(EnumArgs),
    /// Evaluate a query by brute force (decompresses SLP inputs)
    OracleEval {
        /// SLP or structure text file
        input: String,
        #[command(flatten)]
        query: QuerySrc,
        #[arg(long)]
        cap: Option<usize>,
    },
    /// Emit a generated instance
    Gen {
        family: Family,
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// output file (stdout if omitted)
        #[arg(short, long)]
        out: Option<String>,
    },
    /// CSV of step counters across instance sizes of a family
    Bench {
        family: Family,
        /// comma-separated sizes
        #[arg(long)]
        sizes: String,
        #[command(flatten)]
        query: QuerySrc,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct EnumArgs {
    slp: String,
    #[command(flatten)]
    query: QuerySrc,
    #[arg(long)]
    limit: Option<u64>,
    /// additionally print explicit derivation paths
    #[arg(long)]
    resolve: bool,
    /// compare the full answer set against the oracle
    #[arg(long)]
    verify: bool,
    /// print counts, level classification, and a delay histogram
    #[arg(long)]
    stats: bool,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Args)]
struct QuerySrc {
    /// inline query s-expression
    #[arg(long, group = "qsrc")]
    query: Option<String>,
    /// file containing the query
    #[arg(long, group = "qsrc")]
    query_file: Option<String>,
}

impl QuerySrc {
    fn text(&self) -> Result<String, Error> {
        match (&self.query, &self.query_file) {
            (Some(q), None) => Ok(q.clone()),
            (None, Some(f)) => {
                std::fs::read_to_string(f).map_err(|e| Error::Other(format!("{f}: {e}")))
            }
            _ => Err(Error::Invalid("exactly one of --query/--query-file is required".into())),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    JsonLines,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Ptree,
    Chain,
    GridStrip,
    RandomApex,
}

fn generate(family: Family, n: u64, seed: u64) -> Slp {
    match family {
        Family::Ptree => gen::ptree(n as u32),
        Family::Chain => gen::chain(n as u32),
        Family::GridStrip => gen::grid_strip(n as usize),
        Family::RandomApex => {
            let params = gen::RandomParams::default();
            gen::random_apex(seed.wrapping_add(n), &params)
        }
    }
}

fn load_slp(path: &str) -> Result<Slp, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Other(format!("{path}: {e}")))?;
    parse_slp(&text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Error::CapExceeded(_)) => {
            eprintln!("error: resource cap exceeded (see SLPFO_DECOMPRESS_CAP)");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Validate { slp } => {
            let slp = load_slp(&slp)?;
            let report = slp.validate();
            println!("nonterminals: {}", slp.nts.len());
            println!(
                "size: {} (universe nodes + arity-weighted tuples + references at 1+rank each)",
                slp.size()
            );
            for p in &slp.nts {
                let st = p.local_size(&slp.sig);
                let rf: usize = p.refs.iter().map(|r| 1 + r.sigma.len()).sum();
                println!("  production {}: {} ({} structure + {} references)", p.name, st + rf, st, rf);
            }
            println!("acyclic: {}", yn(report.acyclic));
            println!("apex: {}", yn(report.apex));
            for e in &report.errors {
                println!("error: {e}");
            }
            Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Decompress { slp, cap } => {
            let slp = load_slp(&slp)?;
            let (s, _) = slp.decompress(cap.unwrap_or_else(decompress_cap))?;
            print!("{}", write_structure(&s));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Stats { slp, rho } => {
            let slp = load_slp(&slp)?;
            println!("nonterminals: {}", slp.nts.len());
            println!("size: {}", slp.size());
            let counts = slp.val_node_counts()?;
            println!("val nodes: {}", counts[slp.initial]);
            let mut eng = Engine::new(slp)?;
            println!("val max degree: {}", eng.d);
            let cat = eng.catalog(rho)?;
            for (a, exp) in cat.expansions.iter().enumerate() {
                println!(
                    "expansion {}: {} nodes, {} boundary",
                    eng.slp.nts[a].name,
                    exp.frag.reps.len(),
                    exp.boundary.iter().filter(|&&b| b).count()
                );
            }
            println!("realized {rho}-types: {}", cat.types.len());
            for ti in 0..cat.types.len() {
                let beta = eng.count_type_nodes(rho, ti)?;
                println!("type {ti}: {} nodes, beta {}", cat.types[ti].canon.s.n, beta);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Paths { slp, type_, limit, verify } => {
            let slp = load_slp(&slp)?;
            let w = std::sync::Arc::new(extend_and_weight(OrderedDag::from_slp(&slp))?);
            let useful: Vec<bool> = match &type_ {
                None => vec![true; slp.nts.len()],
                Some(name) => {
                    let a = slp
                        .nt_by_name(name)
                        .ok_or_else(|| Error::Invalid(format!("unknown nonterminal {name}")))?;
                    (0..slp.nts.len()).map(|i| i == a).collect()
                }
            };
            let cdag = std::sync::Arc::new(slpfo::dagpaths::prune_contract(&w, &useful));
            let mut steps = Steps::default();
            let mut cursor = slpfo::dagpaths::MinMaxPath::first(cdag);
            let mut printed = 0u64;
            let mut listed: Vec<(BigUint, String)> = Vec::new();
            while let Some(c) = cursor.as_mut() {
                if limit.is_some_and(|l| printed >= l) {
                    break;
                }
                let path = w
                    .resolve_lex(&c.total)
                    .ok_or_else(|| Error::Other("rank does not resolve".into()))?;
                println!("{}\t{}", c.total, path.display(&slp));
                if verify {
                    listed.push((c.total.clone(), path.display(&slp)));
                }
                printed += 1;
                if !c.next_path(&mut steps) {
                    break;
                }
            }
            println!("EOE");
            if verify {
                let all = naive_initial_paths(&OrderedDag::from_slp(&slp));
                let expected: Vec<(BigUint, String)> = all
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| useful[p.end(&slp)])
                    .map(|(i, p)| (BigUint::from(i), p.display(&slp)))
                    .take(limit.unwrap_or(u64::MAX) as usize)
                    .collect();
                if listed != expected {
                    eprintln!("verify: MISMATCH against oracle path order");
                    return Ok(ExitCode::from(1));
                }
                eprintln!("verify: ok ({} paths)", listed.len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Count { slp, rho, type_ } => {
            let slp = load_slp(&slp)?;
            let mut eng = Engine::new(slp)?;
            let cat = eng.catalog(rho)?;
            match type_ {
                Some(ti) if ti >= cat.types.len() => {
                    Err(Error::Invalid(format!("type index {ti} out of range")))
                }
                Some(ti) => {
                    println!("{}", eng.count_type_nodes(rho, ti)?);
                    Ok(ExitCode::SUCCESS)
                }
                None => {
                    for ti in 0..cat.types.len() {
                        println!("{ti}\t{}", eng.count_type_nodes(rho, ti)?);
                    }
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Cmd::Enumerate(args) => cmd_enumerate(args),
        Cmd::OracleEval { input, query, cap } => {
            let text =
                std::fs::read_to_string(&input).map_err(|e| Error::Other(format!("{input}: {e}")))?;
            let s: Structure = if text.lines().any(|l| l.trim_start().starts_with("nonterminal")) {
                let slp = parse_slp(&text)?;
                slp.decompress(cap.unwrap_or_else(decompress_cap))?.0
            } else {
                parse_structure(&text)?
            };
            let q = parse_query(&s.sig, &query.text()?)?;
            if q.has_fo_leaf() {
                eprintln!("warning: `fo` queries run on the brute-force oracle only");
            }
            let answers = naive_eval_query(&s, &q, 1 << 28)?;
            for t in &answers {
                let labels: Vec<&str> = t.iter().map(|&v| s.labels[v].as_str()).collect();
                println!("{}", labels.join("\t"));
            }
            println!("EOE");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gen { family, n, seed, out } => {
            let slp = generate(family, n, seed);
            let text = write_slp(&slp);
            match out {
                Some(f) => std::fs::write(&f, text).map_err(|e| Error::Other(format!("{f}: {e}")))?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench { family, sizes, query, seed } => {
            let qtext = query.text()?;
            println!("size,slp_size,preprocessing_steps,outputs,max_delay_steps,median_delay_steps,wall_ms");
            for tok in sizes.split(',') {
                let n: u64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad size {tok}")))?;
                let slp = generate(family, n, seed);
                let slp_size = slp.size();
                let t0 = std::time::Instant::now();
                let mut eng = Engine::new(slp)?;
                let q = parse_query(&eng.slp.sig, &qtext)?;
                let stats = eng.enumerate_query(&q, |_| true)?;
                let wall = t0.elapsed().as_millis();
                let mut delays = stats.delays.clone();
                delays.sort_unstable();
                let median = delays.get(delays.len() / 2).copied().unwrap_or(0);
                if stats.outputs == 0 {
                    println!("{n},{slp_size},{},0,EOE,EOE,{wall}", stats.preprocessing_steps);
                } else {
                    println!(
                        "{n},{slp_size},{},{},{},{median},{wall}",
                        stats.preprocessing_steps, stats.outputs, stats.max_delay_steps
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_enumerate(args: EnumArgs) -> Result<ExitCode, Error> {
    let slp = load_slp(&args.slp)?;
    let mut eng = Engine::new(slp)?;
    let q = parse_query(&eng.slp.sig, &args.query.text()?)?;
    if q.has_fo_leaf() {
        eprintln!("warning: `fo` leaves are not enumerable from compressed form; use oracle-eval");
        return Ok(ExitCode::from(2));
    }
    let wdag = eng.wdag.clone();
    let slp_ref = eng.slp.clone();
    let limit = args.limit;
    let resolve = args.resolve;
    let format = args.format;
    let mut collected: Vec<Vec<slpfo::engine::LexRep>> = Vec::new();
    let verify = args.verify;
    let mut printed = 0u64;
    let stats = eng.enumerate_query(&q, |t| {
        if limit.is_some_and(|l| printed >= l) {
            return false;
        }
        print_tuple(&slp_ref, &wdag, &t, resolve, format);
        printed += 1;
        if verify {
            collected.push(t);
        }
        true
    })?;
    println!("EOE");
    if args.stats {
        eprintln!("outputs: {}", stats.outputs);
        eprintln!("preprocessing steps: {}", stats.preprocessing_steps);
        eprintln!("enumeration steps: {}", stats.enum_steps);
        eprintln!("max delay steps: {}", stats.max_delay_steps);
        eprintln!("levels: {} short, {} long", stats.short_levels, stats.long_levels);
        let mut hist: std::collections::BTreeMap<u64, u64> = std::collections::BTreeMap::new();
        for &d in &stats.delays {
            *hist.entry(d.next_power_of_two()).or_default() += 1;
        }
        for (bucket, count) in hist {
            eprintln!("delay <= {bucket}: {count}");
        }
    }
    if verify {
        if args.limit.is_some() {
            return Err(Error::Invalid("--verify needs the full stream; drop --limit".into()));
        }
        let (dec, map) = eng.slp.decompress(decompress_cap())?;
        let expected = naive_eval_query(&dec, &q, 1 << 28)?;
        let mut got: BTreeSet<Vec<usize>> = BTreeSet::new();
        for t in &collected {
            let ids: Vec<usize> = t
                .iter()
                .map(|lr| {
                    lr.resolve(&wdag)
                        .and_then(|nr| map.get(&nr).copied())
                        .ok_or_else(|| Error::Other("unresolvable output".into()))
                })
                .collect::<Result<_, _>>()?;
            if !got.insert(ids) {
                eprintln!("verify: duplicate tuple emitted");
                return Ok(ExitCode::from(1));
            }
        }
        if got != expected {
            eprintln!(
                "verify: MISMATCH (engine {} tuples, oracle {})",
                got.len(),
                expected.len()
            );
            return Ok(ExitCode::from(1));
        }
        eprintln!("verify: ok ({} tuples)", got.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_tuple(
    slp: &Slp,
    wdag: &slpfo::dagpaths::WeightedDag,
    t: &[slpfo::engine::LexRep],
    resolve: bool,
    format: Format,
) {
    match format {
        Format::Tsv => {
            let mut cols: Vec<String> = t.iter().map(|lr| lr.display(slp)).collect();
            if resolve {
                for lr in t {
                    let nr = lr.resolve(wdag).expect("emitted rank resolves");
                    cols.push(nr.display(slp));
                }
            }
            println!("{}", cols.join("\t"));
        }
        Format::JsonLines => {
            let items: Vec<serde_json::Value> = t
                .iter()
                .map(|lr| {
                    let mut o = serde_json::Map::new();
                    o.insert("lex".into(), serde_json::Value::String(lr.lex.to_string()));
                    o.insert(
                        "node".into(),
                        serde_json::Value::String(
                            slp.nts[lr.nt].local_labels[lr.node].clone(),
                        ),
                    );
                    if resolve {
                        let nr = lr.resolve(wdag).expect("emitted rank resolves");
                        o.insert("path".into(), serde_json::Value::String(nr.display(slp)));
                    }
                    serde_json::Value::Object(o)
                })
                .collect();
            println!("{}", serde_json::Value::Array(items));
        }
    }
}

fn yn(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}
