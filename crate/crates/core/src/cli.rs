// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.
//!
//! Each invocation runs one subcommand against a session kept in a state
//! file (`--state`, default `cellsim.state`). The file holds a
//! [`snapshot`](crate::snapshot::save) and is locked while a command runs.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bench::{self, BenchError};
use crate::cellconfig::{self, CellConfig, ConfigError, LoadError, Violation, CONFIG_MAGIC};
use crate::dsl;
use crate::hvcore::{CellId, HvError, Hypervisor, OwnershipLedger};
use crate::machine::{build_platform, MachinePlatform, PlatformError, PlatformSpec};
use crate::snapshot::{self, SnapshotError};

#[derive(Debug, Parser)]
#[command(name = "cellsim", version, about = "Static-partitioning hypervisor simulator")]
struct Cli {
    /// Session state file.
    #[arg(long, global = true, default_value = "cellsim.state")]
    state: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the hypervisor and lift the running OS into the root cell.
    Enable {
        /// Preset name or platform description file.
        #[arg(long, default_value = "jetson-tk1")]
        platform: String,
        /// Root cell configuration.
        #[arg(long)]
        root: PathBuf,
    },
    /// Stop the hypervisor. All non-root cells must be destroyed first.
    Disable,
    /// Manage cells.
    #[command(subcommand)]
    Cell(CellCmd),
    /// Parse and validate a cell configuration.
    CheckConfig {
        file: PathBuf,
        /// Also check it against a freshly enabled platform.
        #[arg(long)]
        platform: Option<String>,
        /// Write the canonical binary encoding here.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Interrupt-latency benchmark.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Export logs.
    #[command(subcommand)]
    Events(EventsCmd),
}

#[derive(Debug, Subcommand)]
enum CellCmd {
    /// Create a cell from a text or binary configuration.
    Create { config: PathBuf },
    /// Preload a raw image into a created or stopped cell.
    Load {
        cell: String,
        image: PathBuf,
        #[arg(long, value_parser = parse_addr)]
        addr: u64,
    },
    /// Start a created or stopped cell.
    Start { cell: String },
    /// Stop a running or failed cell; it keeps its resources.
    Stop { cell: String },
    /// Remove a cell and return its resources to the root cell.
    Destroy { cell: String },
    /// Wipe a cell's image and start it again.
    Relaunch { cell: String },
    /// Show all cells.
    List,
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Run scenarios and print the report as JSON.
    Run(BenchArgs),
    /// Run scenarios and print the latency table.
    Table(BenchArgs),
    /// Run scenarios and print CSV.
    Csv(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioSet {
    Canonical,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "canonical")]
    scenarios: ScenarioSet,
    /// Samples per scenario [default: four hours at each rate].
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "jetson-tk1")]
    platform: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum EventsCmd {
    /// Dump the trap-event log as JSON lines.
    Export {
        /// Dump channel doorbell traffic instead.
        #[arg(long)]
        traffic: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_addr(s: &str) -> Result<u64, String> {
    dsl::parse_hex(s).ok_or_else(|| format!("`{s}` is not a hex address"))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    Binary { path: PathBuf, source: LoadError },
    #[error("{path}: not UTF-8 text")]
    NotText { path: PathBuf },
    #[error("unknown platform `{0}` (not a preset or readable file)")]
    UnknownPlatform(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("no session in {0}; run `cellsim enable` first")]
    NoSession(PathBuf),
    #[error("no cell `{0}`")]
    NoSuchCell(String),
    #[error("configuration rejected:\n{}", list(.0))]
    Rejected(Vec<Violation>),
    #[error(transparent)]
    Hv(HvError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("state file: {0}")]
    Snapshot(#[from] SnapshotError),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl From<HvError> for CliError {
    fn from(e: HvError) -> Self {
        match e {
            HvError::ValidationFailed(v) | HvError::ConfigMismatch(v) => CliError::Rejected(v),
            other => CliError::Hv(other),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a cell config, detecting the binary form by its magic.
pub fn read_config(path: &Path) -> Result<CellConfig, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(&CONFIG_MAGIC.to_le_bytes()) {
        return cellconfig::load_binary(&bytes).map_err(|source| CliError::Binary {
            path: path.to_path_buf(),
            source,
        });
    }
    let text = String::from_utf8(bytes).map_err(|_| CliError::NotText {
        path: path.to_path_buf(),
    })?;
    cellconfig::parse_config(&text).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

/// Resolves a preset name or a platform description file.
pub fn load_platform(arg: &str) -> Result<MachinePlatform, CliError> {
    let spec = match PlatformSpec::preset(arg) {
        Some(spec) => spec,
        None => {
            let text = std::fs::read_to_string(arg).map_err(|_| CliError::UnknownPlatform(arg.to_string()))?;
            PlatformSpec::parse(&text)?
        }
    };
    Ok(build_platform(spec)?)
}

/// The locked state file and the hypervisor it holds.
struct Session {
    file: File,
    hv: Option<Hypervisor>,
}

impl Session {
    fn open(path: &Path, create: bool) -> Result<Self, CliError> {
        if !create && !path.exists() {
            return Err(CliError::NoSession(path.to_path_buf()));
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(create)
            .truncate(false)
            .open(path)
            .map_err(io_err(path))?;
        file.lock().map_err(io_err(path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(path))?;
        let hv = if bytes.is_empty() {
            None
        } else {
            Some(snapshot::load(&bytes)?)
        };
        Ok(Self { file, hv })
    }

    fn hv(&mut self, path: &Path) -> Result<&mut Hypervisor, CliError> {
        self.hv.as_mut().ok_or_else(|| CliError::NoSession(path.to_path_buf()))
    }

    fn save(&mut self, path: &Path) -> Result<(), CliError> {
        let Some(hv) = &self.hv else { return Ok(()) };
        let bytes = snapshot::save(hv);
        self.file.set_len(0).map_err(io_err(path))?;
        self.file.seek(SeekFrom::Start(0)).map_err(io_err(path))?;
        self.file.write_all(&bytes).map_err(io_err(path))?;
        self.file.sync_all().map_err(io_err(path))
    }
}

fn resolve(hv: &Hypervisor, s: &str) -> Result<CellId, CliError> {
    if let Ok(n) = s.parse::<u32>() {
        if hv.cell(CellId(n)).is_ok() {
            return Ok(CellId(n));
        }
    }
    hv.cell_by_name(s)
        .map(|c| c.id())
        .ok_or_else(|| CliError::NoSuchCell(s.to_string()))
}

fn emit(out: &mut dyn Write, dest: Option<&Path>, data: &[u8]) -> Result<(), CliError> {
    match dest {
        Some(p) => std::fs::write(p, data).map_err(io_err(p)),
        None => out.write_all(data).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn cell_table(hv: &Hypervisor) -> String {
    let mut s = format!("{:<3} {:<16} {:<8} {:<8} {}\n", "ID", "NAME", "STATE", "CPUS", "MEMORY");
    for c in hv.cells() {
        let mem: Vec<String> = c
            .config()
            .mem
            .iter()
            .map(|m| format!("{:#x}+{:#x}", m.base, m.size))
            .collect();
        s.push_str(&format!(
            "{:<3} {:<16} {:<8} {:<8} {}\n",
            c.id(),
            c.name(),
            c.state(),
            dsl::format_list(c.config().cpus.iter().copied()),
            mem.join(",")
        ));
    }
    s
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let path = cli.state.as_path();
    let say = |out: &mut dyn Write, msg: String| {
        let _ = writeln!(out, "{msg}");
    };
    match cli.cmd {
        Command::Enable { platform, root } => {
            let platform = load_platform(&platform)?;
            let root = read_config(&root)?;
            let mut session = Session::open(path, true)?;
            let hv = match session.hv.take() {
                Some(hv) if hv.is_enabled() => {
                    session.hv = Some(hv);
                    return Err(HvError::AlreadyEnabled.into());
                }
                Some(hv) if hv.platform() == &platform => hv,
                _ => Hypervisor::new(platform),
            };
            let hv = session.hv.insert(hv);
            hv.enable(root)?;
            let owned = hv.ledger().owned_by(CellId::ROOT).len();
            let msg = format!(
                "hypervisor enabled on {}; root cell `{}` owns {owned} resources",
                hv.platform().name(),
                hv.cell(CellId::ROOT)?.name()
            );
            session.save(path)?;
            say(out, msg);
        }
        Command::Disable => {
            let mut session = Session::open(path, false)?;
            session.hv(path)?.disable()?;
            session.save(path)?;
            say(out, "hypervisor disabled".into());
        }
        Command::Cell(CellCmd::List) => {
            let mut session = Session::open(path, false)?;
            let hv = session.hv(path)?;
            if !hv.is_enabled() {
                return Err(HvError::NotEnabled.into());
            }
            let _ = out.write_all(cell_table(hv).as_bytes());
        }
        Command::Cell(cmd) => {
            let mut session = Session::open(path, false)?;
            let hv = session.hv(path)?;
            let msg = match cmd {
                CellCmd::Create { config } => {
                    let cfg = read_config(&config)?;
                    let name = cfg.name.clone();
                    let id = hv.create_cell(cfg)?;
                    format!("created cell {id} `{name}`")
                }
                CellCmd::Load { cell, image, addr } => {
                    let id = resolve(hv, &cell)?;
                    let data = std::fs::read(&image).map_err(io_err(&image))?;
                    hv.load_image(id, addr, &data)?;
                    format!("loaded {} bytes at {addr:#x} into cell {id}", data.len())
                }
                CellCmd::Start { cell } => {
                    let id = resolve(hv, &cell)?;
                    hv.start_cell(id)?;
                    format!("cell {id} running")
                }
                CellCmd::Stop { cell } => {
                    let id = resolve(hv, &cell)?;
                    hv.stop_cell(id)?;
                    format!("cell {id} stopped")
                }
                CellCmd::Destroy { cell } => {
                    let id = resolve(hv, &cell)?;
                    hv.destroy_cell(id)?;
                    format!("cell {id} destroyed; resources returned to the root cell")
                }
                CellCmd::Relaunch { cell } => {
                    let id = resolve(hv, &cell)?;
                    hv.relaunch_cell(id)?;
                    format!("cell {id} relaunched")
                }
                CellCmd::List => unreachable!(),
            };
            session.save(path)?;
            say(out, msg);
        }
        Command::CheckConfig { file, platform, emit: dest } => {
            let cfg = read_config(&file)?;
            if let Some(p) = platform {
                let platform = load_platform(&p)?;
                let mut ledger = OwnershipLedger::new();
                ledger.assign_all(&platform, CellId::ROOT);
                let v = cellconfig::validate_against(&cfg, &platform, &ledger);
                if !v.is_empty() {
                    return Err(CliError::Rejected(v));
                }
            }
            if let Some(dest) = &dest {
                std::fs::write(dest, cellconfig::emit_binary(&cfg)).map_err(io_err(dest))?;
            }
            let devices = cfg.devices.len();
            say(
                out,
                format!(
                    "ok: cell `{}`: cpus {}, {} memory region(s), {devices} device(s), irqs [{}]",
                    cfg.name,
                    dsl::format_list(cfg.cpus.iter().copied()),
                    cfg.mem.len(),
                    dsl::format_list(cfg.irqs.iter().copied())
                ),
            );
        }
        Command::Bench(cmd) => {
            let (kind, args) = match cmd {
                BenchCmd::Run(a) => ("run", a),
                BenchCmd::Table(a) => ("table", a),
                BenchCmd::Csv(a) => ("csv", a),
            };
            let platform = load_platform(&args.platform)?;
            let scenarios = match args.scenarios {
                ScenarioSet::Canonical => bench::canonical_scenarios(args.samples, args.seed),
            };
            let report = bench::run_report(&platform, &scenarios, args.seed)?;
            let data = match kind {
                "run" => {
                    let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
                    s.push('\n');
                    s.into_bytes()
                }
                "table" => bench::render_table(&report).into_bytes(),
                _ => bench::export_csv(&report),
            };
            emit(out, args.out.as_deref(), &data)?;
        }
        Command::Events(EventsCmd::Export { traffic, out: dest }) => {
            let mut session = Session::open(path, false)?;
            let hv = session.hv(path)?;
            let data = if traffic { hv.traffic_jsonl() } else { hv.events_jsonl() };
            emit(out, dest.as_deref(), data.as_bytes())?;
        }
    }
    Ok(())
}

/// Runs one command line (including the program name), writing normal
/// output to `out` and diagnostics to `err`. Returns the exit code.
pub fn run_cli_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

/// [`run_cli_with`] on the process's standard streams.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(args, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli_with(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&["cellsim"]).0, 2);
        assert_eq!(run(&["cellsim", "cell", "fly"]).0, 2);
        assert_eq!(run(&["cellsim", "cell", "load", "x", "y", "--addr", "zz"]).0, 2);
        let (code, out, _) = run(&["cellsim", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("check-config"));
    }

    #[test]
    fn missing_session_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let state = dir.path().join("s");
        let (code, _, err) = run(&["cellsim", "--state", state.to_str().unwrap(), "cell", "list"]);
        assert_eq!(code, 1);
        assert!(err.contains("enable"));
        assert!(!state.exists());
    }

    #[test]
    fn parses_hex_addresses() {
        assert_eq!(parse_addr("0x9000_0000"), Ok(0x9000_0000));
        assert!(parse_addr("x").is_err());
    }
}
