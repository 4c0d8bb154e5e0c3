mod bench;
mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sdim_core::analysis::emit_attention_curves;
use sdim_core::data::{generate_user, load_behavior_log, Embedder, InstanceConfig};
use sdim_core::serving::wire::write_frame;
use sdim_core::serving::{
    bse_serve, ctr_serve, encode_sequence, serialize_bucket_table, simulate, BseService, CtrService, Message,
    Precision, RemoteBse, SimulationConfig, Transport,
};
use sdim_core::verify::{self, VerifyConfig};
use sdim_core::HashFamily;

#[derive(Debug, Parser)]
#[command(name = "sdim", version, about = "Hash-sampling attention: verification, benchmarks and serving")]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Embedding dimension.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Number of hash functions.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Signature width.
    #[arg(long, global = true)]
    tau: Option<usize>,
    /// Write the command's report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// File of `key = value` lines; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the statistical and structural check suites; exit status reports the result.
    Verify {
        #[arg(long, value_delimiter = ',')]
        rounds_sweep: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        m_sweep: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        tau_sweep: Option<Vec<usize>>,
        /// Instances averaged in the convergence suites.
        #[arg(long)]
        seeds: Option<usize>,
        /// Monte-Carlo trials per collision-curve cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Also run the timing suite (machine-dependent).
        #[arg(long)]
        perf: bool,
    },
    /// Time every method across an (L, B) grid.
    Bench {
        #[arg(long = "l", value_delimiter = ',', default_values_t = [256, 512, 1024])]
        seq_lens: Vec<usize>,
        #[arg(long = "b", value_delimiter = ',', default_values_t = [1, 64, 256, 1024])]
        batches: Vec<usize>,
        /// Items retrieved per candidate by ETA.
        #[arg(long, default_value_t = 64)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
    /// Emit expected hash-sampling and softmax weight curves over cosine in [-1, 1].
    Curves {
        #[arg(long, default_value_t = 0.5)]
        scale: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Turn a behavior log into one serialized bucket table per user.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 256)]
        max_len: usize,
        /// Weight of the category anchor in synthesized item embeddings.
        #[arg(long, default_value_t = Embedder::DEFAULT_BLEND)]
        blend: f64,
    },
    /// Run the sequence-encoder server.
    ServeBse {
        #[arg(long, default_value = "127.0.0.1:7001")]
        listen: SocketAddr,
        /// Preload users from a behavior log.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        max_len: usize,
        /// Preload this many synthetic users (ids 1..=N).
        #[arg(long, default_value_t = 0)]
        synthetic_users: usize,
        #[arg(long, default_value_t = 1024)]
        l: usize,
        /// Ship bucket vectors as f16.
        #[arg(long)]
        f16: bool,
    },
    /// Run the scoring server against a sequence-encoder server.
    ServeCtr {
        #[arg(long, default_value = "127.0.0.1:7002")]
        listen: SocketAddr,
        #[arg(long, default_value = "127.0.0.1:7001")]
        bse: SocketAddr,
    },
    /// Drive synthetic requests through both services and report per-stage latency.
    Simulate {
        #[arg(long, default_value_t = 100)]
        users: usize,
        #[arg(long, default_value_t = 1000)]
        requests: usize,
        #[arg(long, default_value_t = 1024)]
        b: usize,
        #[arg(long, default_value_t = 1024)]
        l: usize,
        /// Replace a user's sequence every N requests (0 = never).
        #[arg(long, default_value_t = 0)]
        update_every: usize,
        /// Go through loopback TCP servers instead of in-process calls.
        #[arg(long)]
        tcp: bool,
        #[arg(long)]
        f16: bool,
    },
}

struct Globals {
    seed: u64,
    d: Option<usize>,
    m: Option<usize>,
    tau: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
}

impl Globals {
    fn d(&self) -> usize {
        self.d.unwrap_or(128)
    }

    fn m(&self) -> usize {
        self.m.unwrap_or(48)
    }

    fn tau(&self) -> usize {
        self.tau.unwrap_or(3)
    }

    fn family(&self) -> Result<HashFamily> {
        Ok(HashFamily::sample(self.seed, self.m(), self.tau(), self.d())?)
    }

    /// Explicit `--format`, else inferred from the `--out` extension, else `default`.
    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or_else(|| match self.out.as_deref().and_then(Path::extension) {
            Some(e) if e == "csv" => Format::Csv,
            Some(e) if e == "json" => Format::Json,
            _ => default,
        })
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn write_json<T: Serialize>(g: &Globals, value: &T) -> Result<()> {
    let mut w = g.sink()?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn parse_cli() -> Result<Cli> {
    let args: Vec<OsString> = std::env::args_os().collect();
    let cmd = Cli::command();
    let matches = cmd.clone().get_matches_from(args.clone());
    let matches = match matches.get_one::<PathBuf>("config") {
        Some(path) => {
            let entries = config::load(path)?;
            let merged = config::merge(&cmd, &matches, args, &entries)?;
            cmd.get_matches_from(merged)
        }
        None => matches,
    };
    Ok(Cli::from_arg_matches(&matches)?)
}

fn main() -> ExitCode {
    match parse_cli().and_then(run) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = Globals {
        seed: cli.seed,
        d: cli.d,
        m: cli.m,
        tau: cli.tau,
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::Verify {
            rounds_sweep,
            m_sweep,
            tau_sweep,
            seeds,
            trials,
            perf,
        } => cmd_verify(&g, rounds_sweep, m_sweep, tau_sweep, seeds, trials, perf),
        Command::Bench {
            seq_lens,
            batches,
            k,
            warmup,
            iters,
        } => {
            let report = bench::run(&bench::BenchConfig {
                seq_lens,
                batches,
                d: g.d(),
                m: g.m(),
                tau: g.tau(),
                k,
                seed: g.seed,
                warmup,
                iters,
            })?;
            for c in &report.cells {
                let sdim = c.methods.iter().find(|m| m.method == "sdim").expect("sdim measured");
                eprintln!(
                    "L={:<5} B={:<5} sdim speedup vs TA: {:.1}x per request, {:.1}x candidate phase",
                    c.seq_len, c.candidates, sdim.speedup_vs_ta, sdim.candidate_speedup_vs_ta
                );
            }
            match g.format(Format::Json) {
                Format::Json => write_json(&g, &report)?,
                Format::Csv => g.sink()?.write_all(report.csv().as_bytes())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Curves { scale, points } => {
            let table = emit_attention_curves(g.tau() as u32, scale, points)?;
            match g.format(Format::Csv) {
                Format::Csv => {
                    let mut w = g.sink()?;
                    table.write_csv(&mut w)?;
                    w.flush()?;
                }
                Format::Json => write_json(&g, &table)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Encode { input, max_len, blend } => cmd_encode(&g, &input, max_len, blend),
        Command::ServeBse {
            listen,
            input,
            max_len,
            synthetic_users,
            l,
            f16,
        } => {
            let precision = if f16 { Precision::F16 } else { Precision::F32 };
            let service = Arc::new(BseService::with_precision(g.family()?, precision));
            if let Some(path) = input {
                let log = load_behavior_log(&path, max_len)?;
                let embedder = Embedder::new(g.d(), g.seed, Embedder::DEFAULT_BLEND)?;
                for u in &log.users {
                    service.replace_sequence(u.user_id, u.to_sequence(&embedder))?;
                }
            }
            if synthetic_users > 0 {
                let inst = InstanceConfig {
                    seq_len: l,
                    dim: g.d(),
                    users: synthetic_users,
                    seed: g.seed,
                    ..InstanceConfig::default()
                };
                for u in 0..synthetic_users {
                    let user = generate_user(&inst, u)?;
                    service.replace_sequence(user.user_id, user.sequence)?;
                }
            }
            let handle = bse_serve(TcpListener::bind(listen)?, service.clone())?;
            eprintln!("bse listening on {} with {} users", handle.local_addr(), service.users());
            handle.wait();
            Ok(ExitCode::SUCCESS)
        }
        Command::ServeCtr { listen, bse } => {
            let service = Arc::new(CtrService::new(g.family()?, RemoteBse::new(bse)));
            let handle = ctr_serve(TcpListener::bind(listen)?, service)?;
            eprintln!("ctr listening on {}, tables from {bse}", handle.local_addr());
            handle.wait();
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            users,
            requests,
            b,
            l,
            update_every,
            tcp,
            f16,
        } => {
            let defaults = SimulationConfig::default();
            let cfg = SimulationConfig {
                instance: InstanceConfig {
                    seq_len: l,
                    candidates: b,
                    dim: g.d(),
                    users,
                    seed: g.seed,
                    ..defaults.instance
                },
                m: g.m(),
                tau: g.tau(),
                requests,
                update_every,
                transport: if tcp { Transport::Tcp } else { Transport::InProcess },
                precision: if f16 { Precision::F16 } else { Precision::F32 },
            };
            let report = simulate(&cfg)?;
            if g.format(Format::Json) == Format::Csv {
                bail!("simulate reports are JSON only");
            }
            write_json(&g, &report)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_verify(
    g: &Globals,
    rounds_sweep: Option<Vec<usize>>,
    m_sweep: Option<Vec<usize>>,
    tau_sweep: Option<Vec<usize>>,
    seeds: Option<usize>,
    trials: Option<usize>,
    perf: bool,
) -> Result<ExitCode> {
    let mut cfg = VerifyConfig {
        seed: g.seed,
        perf,
        ..VerifyConfig::default()
    };
    if let Some(v) = rounds_sweep {
        cfg.rounds_sweep = v;
    }
    if let Some(v) = m_sweep {
        cfg.m_sweep = v;
    }
    if let Some(v) = tau_sweep {
        cfg.tau_sweep = v;
    }
    if let Some(n) = seeds {
        cfg.convergence_seeds = n;
    }
    if let Some(n) = trials {
        cfg.collision_trials = n;
    }
    if let Some(d) = g.d {
        cfg.dim = d;
        cfg.perf_dim = d;
    }
    if let Some(tau) = g.tau {
        cfg.convergence_tau = tau;
        cfg.perf_tau = tau;
    }
    if let Some(m) = g.m {
        cfg.perf_m = m;
    }
    let report = verify::run(&cfg)?;

    let mut summary: Box<dyn Write> = if g.out.is_some() {
        Box::new(io::stdout().lock())
    } else {
        Box::new(io::stderr().lock())
    };
    for c in &report.checks {
        let status = match (c.passed, c.kind) {
            (true, _) => "PASS",
            (false, verify::CheckKind::Gate) => "FAIL",
            (false, verify::CheckKind::Report) => "NOTE",
        };
        writeln!(summary, "{status}  {:<24} {}  ({})", c.suite, c.name, c.detail)?;
    }
    drop(summary);

    match g.format(Format::Json) {
        Format::Json => write_json(g, &report)?,
        Format::Csv => {
            let mut w = g.sink()?;
            report.write_csv(&mut w)?;
            w.flush()?;
        }
    }

    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        for c in report.failures() {
            eprintln!("failed: {} / {}", c.suite, c.name);
        }
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_encode(g: &Globals, input: &Path, max_len: usize, blend: f64) -> Result<ExitCode> {
    let Some(out) = &g.out else {
        bail!("encode needs --out");
    };
    let log = load_behavior_log(input, max_len)?;
    let family = g.family()?;
    let embedder = Embedder::new(g.d(), g.seed, blend)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let mut bytes = 0usize;
    for u in &log.users {
        let table = encode_sequence(&u.to_sequence(&embedder), &family, u.user_id)?;
        let encoded = serialize_bucket_table(&table)?;
        bytes += encoded.len();
        write_frame(&mut w, &Message::BucketTable(encoded))?;
    }
    w.flush()?;
    eprintln!(
        "{} users, {} rows ({} malformed skipped), {} table bytes -> {}",
        log.users.len(),
        log.rows,
        log.malformed,
        bytes,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
