use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcmap::config::RunConfig;
use tcmap::explorer::{search_all, search_dataflows, SearchOptions};
use tcmap::mapspace::{count_mapspace, enumerate_dataplacements};
use tcmap::model::{curry, Objective};
use tcmap::oracle::oracle_search;
use tcmap::{report, Error};

/// Optimal mapping search for tensor workloads on a memory hierarchy.
#[derive(Parser)]
#[command(name = "tcmap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the optimal mapping.
    Map(Common),
    /// Count the mapspace before and after pruning.
    Count(Common),
    /// Exhaustively search the unpruned mapspace (small instances only).
    Oracle(Common),
    /// Print the curried model of one (dataplacement, dataflow) pair.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dp: usize,
        #[arg(long)]
        df: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    config: PathBuf,
    #[arg(long)]
    objective: Option<Objective>,
    /// Worker threads; overrides TCMAP_THREADS and the config.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    output: Format,
    #[arg(long)]
    line_buffer: bool,
    #[arg(long)]
    oracle_cap: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

enum Failure {
    Config(String),
    NoMapping,
    OracleCap(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::OracleCap { .. } => Failure::OracleCap(e.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

struct Run {
    cfg: RunConfig,
    objective: Objective,
    threads: usize,
    format: Format,
}

impl Run {
    fn new(c: &Common) -> Result<Run, Failure> {
        let mut cfg = RunConfig::load(&c.config)?;
        if c.line_buffer {
            cfg.model.line_buffer = true;
        }
        if let Some(cap) = c.oracle_cap {
            cfg.oracle_cap = cap;
        }
        let env_threads = match std::env::var("TCMAP_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Failure::Config(format!("TCMAP_THREADS: expected a positive integer, got `{v}`")))?,
            ),
            Err(_) => None,
        };
        if c.threads == Some(0) {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        let threads = c
            .threads
            .or(env_threads)
            .or(cfg.threads)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Ok(Run {
            objective: c.objective.unwrap_or(cfg.objective),
            cfg,
            threads,
            format: c.output,
        })
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .expect("thread pool")
    }
}

fn emit_json(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn run(cmd: &Command) -> Result<String, Failure> {
    match cmd {
        Command::Map(c) => {
            let r = Run::new(c)?;
            let (w, a) = (&r.cfg.workload, &r.cfg.arch);
            let t0 = Instant::now();
            let opts = SearchOptions {
                model: r.cfg.model,
                threads: r.threads,
                explore: None,
            };
            let rep = search_all(w, a, r.objective, opts);
            let wall = t0.elapsed();
            match r.format {
                Format::Json => report::search_json(&rep, a, wall).map(|v| emit_json(&v)),
                Format::Text => report::search_text(&rep, a, wall),
            }
            .ok_or(Failure::NoMapping)
        }
        Command::Count(c) => {
            let r = Run::new(c)?;
            let stats = r.pool().install(|| count_mapspace(&r.cfg.workload, &r.cfg.arch, r.cfg.model.line_buffer));
            Ok(match r.format {
                Format::Json => emit_json(&report::count_json(&stats)),
                Format::Text => report::count_text(&stats),
            })
        }
        Command::Oracle(c) => {
            let r = Run::new(c)?;
            let (w, a) = (&r.cfg.workload, &r.cfg.arch);
            let reports = r
                .pool()
                .install(|| oracle_search(w, a, &[r.objective], r.cfg.model, r.cfg.oracle_cap))?;
            let rep = &reports[0];
            if rep.best.is_none() {
                return Err(Failure::NoMapping);
            }
            Ok(match r.format {
                Format::Json => emit_json(&report::oracle_json(rep, a)),
                Format::Text => report::oracle_text(rep, a),
            })
        }
        Command::Explain { common, dp, df } => {
            let r = Run::new(common)?;
            let (w, a) = (&r.cfg.workload, &r.cfg.arch);
            let dps = enumerate_dataplacements(w, a);
            let place = dps
                .get(*dp)
                .ok_or_else(|| Failure::Config(format!("--dp {dp} out of range (0..{})", dps.len())))?;
            let flows: Vec<_> = search_dataflows(w, a, r.cfg.model.line_buffer)
                .into_iter()
                .filter(|pm| pm.dataplacement == *place)
                .collect();
            let pm = flows
                .get(*df)
                .ok_or_else(|| Failure::Config(format!("--df {df} out of range (0..{})", flows.len())))?;
            let cm = curry(pm, w, a, r.objective, r.cfg.model)?;
            let tree = pm.tree();
            Ok(match r.format {
                Format::Text => format!(
                    "dataplacement {dp}: {}\n{}\n{}",
                    place.label(w, a),
                    tree.serialize(w, a),
                    cm.dump(w, a)
                ),
                Format::Json => {
                    let exprs: serde_json::Map<String, serde_json::Value> = cm
                        .dump(w, a)
                        .lines()
                        .filter_map(|l| l.split_once(" = "))
                        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.to_string())))
                        .collect();
                    emit_json(&serde_json::json!({
                        "dataplacement": place.label(w, a),
                        "dataflow": tree.serialize(w, a),
                        "symbols": cm.symbols.names(),
                        "expressions": exprs,
                    }))
                }
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::NoMapping) => {
            eprintln!("error: no valid mapping");
            ExitCode::from(2)
        }
        Err(Failure::OracleCap(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
