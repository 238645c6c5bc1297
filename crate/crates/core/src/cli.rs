//! Command-line front end.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::builtin;
use crate::codec::CodecSpec;
use crate::monitor::{
    branch_series, compile, read_csv_log, write_series_csv, AggregateStats, EventSink, LogFormat,
    LogSink, MonitorAutomaton, MonitorConfig, NullSink, Side,
};
use crate::proxy::{MonitoredEndpoint, Proxy, ProxyConfig};
use crate::pst::parse_pst;
use crate::sim::bench::{self, BenchConfig, Scenario};
use crate::sim::game::{self, Policy, ScriptedBehavior};
use crate::sim::{smtp, CodecChannel};
use crate::stats::{CiMethod, IntervalKind, ZConvention};

#[derive(Debug, Parser)]
#[command(
    name = "pstmon",
    version,
    about = "Runtime monitors for probabilistic session types"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a session type.
    Check { pst: PathBuf },
    /// Compile a session type and write `automaton.json` into a directory.
    Generate {
        pst: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the monitoring proxy between clients and an upstream server.
    RunProxy(ProxyArgs),
    /// Run a scripted endpoint.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Measure monitoring overhead on the SMTP scenario.
    Bench(BenchArgs),
    /// Extract the per-visit series of one branch from an event log.
    PlotData {
        log: PathBuf,
        #[arg(long)]
        choice: String,
        #[arg(long)]
        branch: String,
        /// Only this session.
        #[arg(long)]
        session: Option<u64>,
        /// Output file (default: standard output).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = CiMethod::DEFAULT_LEVEL)]
    pub confidence: f64,
    #[arg(long, default_value = "wald")]
    pub ci: IntervalKind,
    #[arg(long, default_value = "two-sided")]
    pub z_convention: ZConvention,
    /// Visits needed at a choice point before warnings may be raised.
    #[arg(long, default_value_t = 1)]
    pub min_samples: u64,
}

impl StatsArgs {
    fn monitor_config(&self, perspective: Side) -> Result<MonitorConfig> {
        Ok(MonitorConfig {
            method: CiMethod::with_convention(self.ci, self.confidence, self.z_convention)?,
            perspective,
            min_samples: self.min_samples,
        })
    }
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    #[arg(long)]
    pub listen: SocketAddr,
    #[arg(long)]
    pub upstream: SocketAddr,
    /// Session type to monitor.
    #[arg(
        long = "type",
        value_name = "PST",
        required_unless_present = "automaton",
        conflicts_with = "automaton"
    )]
    pub pst: Option<PathBuf>,
    /// Previously generated automaton instead of a session type.
    #[arg(long)]
    pub automaton: Option<PathBuf>,
    #[arg(long)]
    pub codec: PathBuf,
    /// Network side the session type is written for.
    #[arg(long, default_value = "server")]
    pub perspective: Side,
    #[command(flatten)]
    pub stats: StatsArgs,
    /// Event log file.
    #[arg(long, env = "PSTMON_LOG")]
    pub log: Option<PathBuf>,
    /// Write the event log as JSON lines instead of CSV.
    #[arg(long)]
    pub jsonl: bool,
    /// Also keep branch counts across sessions (reported only).
    #[arg(long)]
    pub aggregate: bool,
    /// Close sessions after this many seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct MonitorArgs {
    /// Embed a monitor in this endpoint.
    #[arg(long)]
    pub monitor: bool,
    /// Session type (default: the shipped one for this protocol).
    #[arg(long = "type", value_name = "PST")]
    pub pst: Option<PathBuf>,
    /// Codec (default: the shipped one for this protocol).
    #[arg(long)]
    pub codec: Option<PathBuf>,
    #[arg(long)]
    pub perspective: Option<Side>,
    #[command(flatten)]
    pub stats: StatsArgs,
    #[arg(long, env = "PSTMON_LOG")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Simulate {
    /// Guessing-game server.
    GameServer {
        #[arg(long)]
        listen: SocketAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        monitor: MonitorArgs,
    },
    /// Guessing-game client.
    GameClient {
        #[arg(long)]
        connect: SocketAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// compliant, spammer or sequence
        #[arg(long, default_value = "compliant")]
        policy: String,
        /// Outer-choice rounds before quitting (compliant, spammer).
        #[arg(long)]
        rounds: Option<u64>,
        /// Comma-separated labels for the sequence policy.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[command(flatten)]
        monitor: MonitorArgs,
    },
    /// SMTP stub server that discards all mail.
    SmtpStub {
        #[arg(long)]
        listen: SocketAddr,
    },
    /// SMTP client sending a fixed number of mails.
    SmtpClient {
        #[arg(long)]
        connect: SocketAddr,
        #[arg(long, default_value_t = 1)]
        emails: u64,
        #[arg(long, default_value_t = 1)]
        recipients: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        monitor: MonitorArgs,
    },
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
    pub emails: Vec<u64>,
    #[arg(long, default_value_t = 20)]
    pub reps: u32,
    #[arg(long, value_delimiter = ',', default_value = "unsafe,blackbox,greybox")]
    pub scenarios: Vec<Scenario>,
    #[arg(long, default_value_t = 1)]
    pub recipients: u64,
    /// Directory for `bench.csv` and scratch files.
    #[arg(short, long, default_value = "bench-out")]
    pub out: PathBuf,
    /// `pstmon` executable for the spawned processes (default: this one).
    #[arg(long)]
    pub exe: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_type(path: &Path) -> Result<MonitorAutomaton> {
    let t = parse_pst(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    Ok(compile(&t)?)
}

fn load_codec(path: &Path, automaton: &MonitorAutomaton, perspective: Side) -> Result<CodecSpec> {
    let codec = CodecSpec::load(path).with_context(|| format!("loading {}", path.display()))?;
    codec
        .check_against(&automaton.signatures(), perspective)
        .with_context(|| format!("codec {} does not fit the session type", path.display()))?;
    Ok(codec)
}

fn open_sink(log: Option<&Path>, jsonl: bool) -> Result<Arc<dyn EventSink>> {
    Ok(match log {
        Some(path) => {
            let format = if jsonl {
                LogFormat::Jsonl
            } else {
                LogFormat::Csv
            };
            Arc::new(
                LogSink::create(path, format)
                    .with_context(|| format!("creating {}", path.display()))?,
            )
        }
        None => Arc::new(NullSink),
    })
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

fn check(path: &Path) -> Result<ExitCode> {
    let t = match parse_pst(&read(path)?) {
        Ok(t) => t,
        Err(err) => {
            eprintln!("{}: {err}", path.display());
            return Ok(ExitCode::FAILURE);
        }
    };
    let errors = crate::pst::validate(&t);
    if !errors.is_empty() {
        for e in &errors {
            if e.span.is_known() {
                eprintln!("{}:{}: {} at {}", path.display(), e.span, e.kind, e.path);
            } else {
                eprintln!("{}: {e}", path.display());
            }
        }
        return Ok(ExitCode::FAILURE);
    }
    let automaton = compile(&t)?;
    let labels: BTreeSet<_> = automaton
        .signatures()
        .into_iter()
        .map(|s| s.label)
        .collect();
    println!(
        "{} choice points, {} labels",
        automaton.choice_count(),
        labels.len()
    );
    for (_, c) in automaton.choice_states() {
        println!(
            "  {} {} {{{}}}",
            c.id,
            c.polarity.symbol(),
            c.labels().join(", ")
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(pst: &Path, out: &Path) -> Result<()> {
    let automaton = load_type(pst)?;
    fs::create_dir_all(out)?;
    let target = out.join("automaton.json");
    fs::write(&target, automaton.to_json())?;
    println!("wrote {}", target.display());
    Ok(())
}

fn run_proxy(args: ProxyArgs) -> Result<()> {
    let automaton = match (&args.pst, &args.automaton) {
        (Some(pst), _) => load_type(pst)?,
        (None, Some(json)) => MonitorAutomaton::from_json(&read(json)?)?,
        (None, None) => bail!("either --type or --automaton is required"),
    };
    let codec = load_codec(&args.codec, &automaton, args.perspective)?;
    let mut config = ProxyConfig::new(
        args.listen,
        args.upstream,
        Arc::new(automaton),
        Arc::new(codec),
        open_sink(args.log.as_deref(), args.jsonl)?,
    );
    config.monitor = args.stats.monitor_config(args.perspective)?;
    config.aggregate = args.aggregate.then(|| Arc::new(AggregateStats::new()));
    config.session_timeout = args.timeout.map(Duration::from_secs_f64);
    runtime()?.block_on(async move {
        let proxy = Proxy::bind(config).await?;
        let mut stdout = io::stdout();
        writeln!(stdout, "listening {}", proxy.local_addr()?)?;
        stdout.flush()?;
        proxy
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

struct Monitored {
    automaton: Arc<MonitorAutomaton>,
    codec: Arc<CodecSpec>,
    config: MonitorConfig,
    sink: Arc<dyn EventSink>,
}

impl MonitorArgs {
    /// Type, codec and sink for an endpoint, falling back to the shipped
    /// protocol files. The codec is needed even without a monitor.
    fn resolve(
        &self,
        default_pst: &str,
        default_codec: &str,
        default_perspective: Side,
    ) -> Result<Monitored> {
        let pst = match &self.pst {
            Some(p) => read(p)?,
            None => default_pst.to_string(),
        };
        let automaton = compile(&parse_pst(&pst)?)?;
        let perspective = self.perspective.unwrap_or(default_perspective);
        let codec = match &self.codec {
            Some(p) => CodecSpec::load(p)?,
            None => CodecSpec::from_json(default_codec)?,
        };
        codec.check_against(&automaton.signatures(), perspective)?;
        Ok(Monitored {
            automaton: Arc::new(automaton),
            codec: Arc::new(codec),
            config: self.stats.monitor_config(perspective)?,
            sink: open_sink(self.log.as_deref(), false)?,
        })
    }
}

fn simulate(cmd: Simulate) -> Result<()> {
    let rt = runtime()?;
    match cmd {
        Simulate::GameServer {
            listen,
            seed,
            monitor,
        } => {
            let m = monitor.resolve(
                builtin::GAME_PST,
                builtin::GAME_CODEC,
                builtin::GAME_PERSPECTIVE,
            )?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(listen).await?;
                println!("listening {}", listener.local_addr()?);
                if !monitor.monitor {
                    return game::serve_game(listener, seed, m.codec).await;
                }
                let mut i = 0u64;
                loop {
                    let (stream, _) = listener.accept().await?;
                    i += 1;
                    let mut ep = MonitoredEndpoint::new(
                        stream,
                        Side::Server,
                        Arc::clone(&m.automaton),
                        m.codec.clone(),
                        m.config,
                        Arc::clone(&m.sink),
                        i,
                    );
                    let s = seed.wrapping_add(i - 1);
                    tokio::spawn(async move {
                        if let Err(err) = game::game_server(&mut ep, s).await {
                            tracing::warn!(session = i, "{err:#}");
                        }
                        let summary = ep.close().await;
                        tracing::info!(session = i, verdict = %summary.verdict, "session closed");
                    });
                }
            })
        }
        Simulate::GameClient {
            connect,
            seed,
            policy,
            rounds,
            labels,
            monitor,
        } => {
            let behavior = match policy.as_str() {
                "compliant" => ScriptedBehavior::compliant(seed, rounds),
                "spammer" => ScriptedBehavior::new(
                    seed,
                    Policy::HelpSpammer {
                        rounds: rounds.unwrap_or(20),
                    },
                ),
                "sequence" => ScriptedBehavior::new(seed, Policy::Sequence(labels)),
                other => bail!("unknown policy `{other}` (compliant, spammer, sequence)"),
            };
            let plan = behavior.plan()?;
            let m = monitor.resolve(
                builtin::GAME_PST,
                builtin::GAME_CODEC,
                builtin::GAME_PERSPECTIVE,
            )?;
            let trace = rt.block_on(async move {
                let stream = tokio::net::TcpStream::connect(connect).await?;
                if monitor.monitor {
                    let mut ep = MonitoredEndpoint::new(
                        stream,
                        Side::Client,
                        m.automaton,
                        m.codec,
                        m.config,
                        m.sink,
                        1,
                    );
                    let trace = game::game_client(&mut ep, &plan, seed).await;
                    let summary = ep.close().await;
                    eprintln!("monitor verdict: {}", summary.verdict);
                    trace
                } else {
                    let mut chan = CodecChannel::new(stream, Side::Client, m.codec);
                    let trace = game::game_client(&mut chan, &plan, seed).await;
                    chan.close().await;
                    trace
                }
            })?;
            for msg in trace {
                println!("{msg}");
            }
            Ok(())
        }
        Simulate::SmtpStub { listen } => rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind(listen).await?;
            println!("listening {}", listener.local_addr()?);
            smtp::serve_smtp_stub(listener, builtin::smtp_codec()).await
        }),
        Simulate::SmtpClient {
            connect,
            emails,
            recipients,
            json,
            monitor,
        } => {
            let m = monitor.resolve(
                builtin::SMTP_PST,
                builtin::SMTP_CODEC,
                builtin::SMTP_PERSPECTIVE,
            )?;
            let report = rt.block_on(async move {
                let stream = tokio::net::TcpStream::connect(connect)
                    .await
                    .with_context(|| format!("connecting to {connect}"))?;
                if monitor.monitor {
                    let mut ep = MonitoredEndpoint::new(
                        stream,
                        Side::Client,
                        m.automaton,
                        m.codec,
                        m.config,
                        m.sink,
                        1,
                    );
                    let report = smtp::smtp_client(&mut ep, emails, recipients).await;
                    ep.close().await;
                    report
                } else {
                    let mut chan = CodecChannel::new(stream, Side::Client, m.codec);
                    let report = smtp::smtp_client(&mut chan, emails, recipients).await;
                    chan.close().await;
                    report
                }
            })?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                for msg in &report.trace {
                    println!("{msg}");
                }
                if let Some(mean) = report.mean_response_ms() {
                    println!(
                        "mean response {mean:.3} ms over {} requests",
                        report.response_ms.len()
                    );
                }
            }
            Ok(())
        }
    }
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let exe = match args.exe {
        Some(e) => e,
        None => std::env::current_exe()?,
    };
    let mut config = BenchConfig::new(exe, args.out.clone());
    config.emails = args.emails;
    config.repetitions = args.reps;
    config.scenarios = args.scenarios;
    config.recipients = args.recipients;
    let results = bench::run_bench(&config)?;
    let path = args.out.join("bench.csv");
    bench::write_bench_csv(&results, fs::File::create(&path)?)?;
    println!("wrote {} ({} runs)", path.display(), results.len());
    let unsafe_mean = bench::grand_mean(&results, Scenario::Unsafe, None);
    for s in &config.scenarios {
        let modes: &[Option<bool>] = if s.is_monitored() {
            &[Some(false), Some(true)]
        } else {
            &[None]
        };
        for &mode in modes {
            let Some(mean) = bench::grand_mean(&results, *s, mode) else {
                continue;
            };
            let logging = match mode {
                None => "",
                Some(true) => " (logging on)",
                Some(false) => " (logging off)",
            };
            match unsafe_mean {
                Some(u) if s.is_monitored() => {
                    println!(
                        "{s}{logging}: {mean:.4} ms, overhead {:+.1}%",
                        (mean / u - 1.0) * 100.0
                    )
                }
                _ => println!("{s}{logging}: {mean:.4} ms"),
            }
        }
    }
    Ok(())
}

fn plot_data(
    log: &Path,
    choice: &str,
    branch: &str,
    session: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let file = fs::File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let events = read_csv_log(file)?;
    let rows = branch_series(&events, choice, branch, session);
    match out {
        Some(path) => write_series_csv(&rows, fs::File::create(path)?)?,
        None => write_series_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Check { pst } => return check(&pst),
        Command::Generate { pst, out } => generate(&pst, &out)?,
        Command::RunProxy(args) => run_proxy(args)?,
        Command::Simulate(cmd) => simulate(cmd)?,
        Command::Bench(args) => run_bench(args)?,
        Command::PlotData {
            log,
            choice,
            branch,
            session,
            out,
        } => plot_data(&log, &choice, &branch, session, out.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}
