//! Overhead benchmark: SMTP clients against the stub server, unmonitored,
//! through the black-box proxy, and with the monitor embedded in the
//! client.
//!
//! Every client and proxy runs as its own process (the `pstmon` binary), so
//! CPU time and peak memory of the monitoring process can be read from the
//! kernel's accounting when it exits.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use crate::builtin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Unsafe,
    Blackbox,
    Greybox,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Unsafe, Scenario::Blackbox, Scenario::Greybox];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Unsafe => "unsafe",
            Scenario::Blackbox => "blackbox",
            Scenario::Greybox => "greybox",
        }
    }

    pub fn is_monitored(self) -> bool {
        self != Scenario::Unsafe
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unsafe" => Ok(Scenario::Unsafe),
            "blackbox" => Ok(Scenario::Blackbox),
            "greybox" => Ok(Scenario::Greybox),
            _ => Err(format!(
                "unknown scenario `{s}` (unsafe, blackbox, greybox)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// The `pstmon` executable used for client and proxy processes.
    pub exe: PathBuf,
    /// Scratch space for the type, codec and event logs.
    pub work_dir: PathBuf,
    pub scenarios: Vec<Scenario>,
    pub emails: Vec<u64>,
    pub repetitions: u32,
    pub recipients: u64,
}

impl BenchConfig {
    pub fn new(exe: PathBuf, work_dir: PathBuf) -> Self {
        BenchConfig {
            exe,
            work_dir,
            scenarios: Scenario::ALL.to_vec(),
            emails: vec![10, 50, 100],
            repetitions: 20,
            recipients: 1,
        }
    }
}

/// One run of one cell. `response_ms` is `None` when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub scenario: Scenario,
    /// `None` for the unmonitored scenario.
    pub logging: Option<bool>,
    pub emails: u64,
    pub rep: u32,
    pub response_ms: Option<Vec<f64>>,
    pub cpu_s: f64,
    pub max_rss_bytes: u64,
}

pub const BENCH_CSV_HEADER: &str = "scenario,logging,emails,rep,mean_resp_ms,cpu_s,max_rss_bytes";

impl BenchResult {
    pub fn mean_resp_ms(&self) -> Option<f64> {
        let r = self.response_ms.as_ref()?;
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }

    pub fn logging_str(&self) -> &'static str {
        match self.logging {
            None => "na",
            Some(true) => "on",
            Some(false) => "off",
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{}",
            self.scenario,
            self.logging_str(),
            self.emails,
            self.rep,
            self.mean_resp_ms()
                .map(|m| format!("{m:.6}"))
                .unwrap_or_default(),
            self.cpu_s,
            self.max_rss_bytes
        )
    }
}

pub fn write_bench_csv<W: Write>(results: &[BenchResult], mut out: W) -> io::Result<()> {
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for r in results {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()
}

/// Requests one client session issues: Helo, per mail MailFrom, the
/// recipients, Data and the body, then Quit.
pub fn request_count(emails: u64, recipients: u64) -> usize {
    (2 + emails * (3 + recipients)) as usize
}

/// Grand mean of the per-run mean response times of one scenario and
/// logging mode.
pub fn grand_mean(
    results: &[BenchResult],
    scenario: Scenario,
    logging: Option<bool>,
) -> Option<f64> {
    let means: Vec<f64> = results
        .iter()
        .filter(|r| r.scenario == scenario && r.logging == logging)
        .filter_map(BenchResult::mean_resp_ms)
        .collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

#[derive(Debug, Clone, Copy, Default)]
struct Usage {
    cpu_s: f64,
    max_rss_bytes: u64,
}

/// Reaps `child` and returns its exit code with its resource usage.
fn wait_with_usage(child: Child) -> io::Result<(i32, Usage)> {
    let pid = child.id() as libc::pid_t;
    let mut status: libc::c_int = 0;
    // SAFETY: rusage is plain old data, and the pid belongs to a child we
    // spawned and have not reaped yet.
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    let r = unsafe { libc::wait4(pid, &mut status, 0, &mut ru) };
    if r < 0 {
        return Err(io::Error::last_os_error());
    }
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 / 1e6;
    let code = if libc::WIFEXITED(status) {
        libc::WEXITSTATUS(status)
    } else {
        128 + libc::WTERMSIG(status)
    };
    Ok((
        code,
        Usage {
            cpu_s: tv(ru.ru_utime) + tv(ru.ru_stime),
            // ru_maxrss is in kilobytes on Linux
            max_rss_bytes: (ru.ru_maxrss as u64) * 1024,
        },
    ))
}

#[derive(Deserialize)]
struct ClientOutput {
    response_ms: Vec<f64>,
}

struct Files {
    pst: PathBuf,
    codec: PathBuf,
}

struct Harness<'a> {
    config: &'a BenchConfig,
    files: Files,
    stub: SocketAddr,
}

fn start_stub() -> Result<SocketAddr> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let rt = match tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(err) => {
                let _ = tx.send(Err(anyhow!(err)));
                return;
            }
        };
        rt.block_on(async move {
            let listener = match tokio::net::TcpListener::bind("127.0.0.1:0").await {
                Ok(l) => l,
                Err(err) => {
                    let _ = tx.send(Err(anyhow!(err)));
                    return;
                }
            };
            let _ = tx.send(listener.local_addr().map_err(|e| anyhow!(e)));
            let _ = super::smtp::serve_smtp_stub(listener, builtin::smtp_codec()).await;
        });
    });
    rx.recv().context("stub server thread died")?
}

impl Harness<'_> {
    fn log_path(&self, tag: &str) -> PathBuf {
        self.config.work_dir.join(format!("events-{tag}.csv"))
    }

    fn run_client(
        &self,
        addr: SocketAddr,
        emails: u64,
        monitor_log: Option<Option<&Path>>,
    ) -> Result<(Vec<f64>, Usage)> {
        let mut cmd = Command::new(&self.config.exe);
        cmd.args(["simulate", "smtp-client", "--json", "--connect"])
            .arg(addr.to_string())
            .args(["--emails", &emails.to_string()])
            .args(["--recipients", &self.config.recipients.to_string()])
            .stdin(Stdio::null())
            .stdout(Stdio::piped());
        if let Some(log) = monitor_log {
            cmd.arg("--monitor")
                .arg("--type")
                .arg(&self.files.pst)
                .arg("--codec")
                .arg(&self.files.codec);
            if let Some(log) = log {
                cmd.arg("--log").arg(log);
            }
        }
        let mut child = cmd.spawn().context("spawning client")?;
        let mut out = String::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_string(&mut out)?;
        let (code, usage) = wait_with_usage(child)?;
        if code != 0 {
            bail!("client exited with status {code}");
        }
        let parsed: ClientOutput = serde_json::from_str(out.trim()).context("client output")?;
        Ok((parsed.response_ms, usage))
    }

    fn run_blackbox(&self, emails: u64, log: Option<&Path>) -> Result<(Vec<f64>, Usage)> {
        let mut cmd = Command::new(&self.config.exe);
        cmd.args([
            "run-proxy",
            "--listen",
            "127.0.0.1:0",
            "--perspective",
            "server",
            "--upstream",
        ])
        .arg(self.stub.to_string())
        .arg("--type")
        .arg(&self.files.pst)
        .arg("--codec")
        .arg(&self.files.codec)
        .stdin(Stdio::null())
        .stdout(Stdio::piped());
        if let Some(log) = log {
            cmd.arg("--log").arg(log);
        }
        let mut child = cmd.spawn().context("spawning proxy")?;
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut first = String::new();
        stdout.read_line(&mut first)?;
        let addr = first
            .trim()
            .strip_prefix("listening ")
            .and_then(|a| a.parse::<SocketAddr>().ok());
        let result = match addr {
            Some(addr) => self.run_client(addr, emails, None),
            None => Err(anyhow!("proxy did not report its address: {first:?}")),
        };
        // SAFETY: signalling our own child process.
        unsafe {
            libc::kill(child.id() as libc::pid_t, libc::SIGINT);
        }
        let mut rest = String::new();
        let _ = stdout.read_to_string(&mut rest);
        let (code, usage) = wait_with_usage(child)?;
        let (times, _) = result?;
        if code != 0 {
            bail!("proxy exited with status {code}");
        }
        Ok((times, usage))
    }

    fn run_cell(
        &self,
        scenario: Scenario,
        logging: Option<bool>,
        emails: u64,
        rep: u32,
    ) -> BenchResult {
        let tag = format!("{scenario}-{emails}-{rep}");
        let log = (logging == Some(true)).then(|| self.log_path(&tag));
        let outcome = match scenario {
            Scenario::Unsafe => self
                .run_client(self.stub, emails, None)
                .map(|(t, _)| (t, Usage::default())),
            Scenario::Blackbox => self.run_blackbox(emails, log.as_deref()),
            Scenario::Greybox => self.run_client(self.stub, emails, Some(log.as_deref())),
        };
        if let Some(log) = &log {
            let _ = fs::remove_file(log);
        }
        let expected = request_count(emails, self.config.recipients);
        let outcome = outcome.and_then(|(t, u)| {
            if t.len() == expected {
                Ok((t, u))
            } else {
                Err(anyhow!(
                    "{} response times for {expected} requests",
                    t.len()
                ))
            }
        });
        match outcome {
            Ok((times, usage)) => BenchResult {
                scenario,
                logging,
                emails,
                rep,
                response_ms: Some(times),
                cpu_s: usage.cpu_s,
                max_rss_bytes: usage.max_rss_bytes,
            },
            Err(err) => {
                tracing::warn!(%scenario, emails, rep, "bench run failed: {err:#}");
                BenchResult {
                    scenario,
                    logging,
                    emails,
                    rep,
                    response_ms: None,
                    cpu_s: 0.0,
                    max_rss_bytes: 0,
                }
            }
        }
    }
}

/// Runs every scenario × logging mode × email count `repetitions` times.
///
/// Cells are interleaved within each repetition so slow drift of the
/// machine affects all scenarios alike. One untimed warm-up pass runs first.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchResult>> {
    fs::create_dir_all(&config.work_dir)?;
    let files = Files {
        pst: config.work_dir.join("smtp.pst"),
        codec: config.work_dir.join("smtp.codec.json"),
    };
    fs::write(&files.pst, builtin::SMTP_PST)?;
    fs::write(&files.codec, builtin::SMTP_CODEC)?;
    let harness = Harness {
        config,
        files,
        stub: start_stub()?,
    };

    let mut cells = Vec::new();
    for &s in &config.scenarios {
        if s.is_monitored() {
            cells.push((s, Some(false)));
            cells.push((s, Some(true)));
        } else {
            cells.push((s, None));
        }
    }
    if let Some(&emails) = config.emails.first() {
        for &(s, l) in &cells {
            harness.run_cell(s, l, emails, 0);
        }
    }
    let mut results = Vec::new();
    for rep in 0..config.repetitions {
        for &emails in &config.emails {
            for &(s, l) in &cells {
                results.push(harness.run_cell(s, l, emails, rep));
            }
        }
    }
    results.sort_by_key(|r| (r.scenario, r.logging, r.emails, r.rep));
    Ok(results)
}
