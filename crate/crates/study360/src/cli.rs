//! Command-line entry points. Exit codes: 0 ok, 1 runtime failure,
//! 2 invalid input.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use study360_core::analysis::{analyze, parse_aois, replay_trace, AnalyzeParams};
use study360_core::biometric::parse_rules;
use study360_core::hub::HubConfig;
use study360_core::log::{read_log, JsonlLog};
use study360_core::media::MediaCatalog;
use study360_core::sim::{MotionScript, SimConfig};
use study360_core::study::{canonicalize, parse_study, validate_study, StudyConfig};

use crate::client::{run_sim, ClientError};
use crate::server::{serve, ServeError, ServeOptions};

pub const LOG_DIR_ENV: &str = "STUDY360_LOG_DIR";

#[derive(Debug, Parser)]
#[command(name = "study360", version, about = "Run, simulate and analyze guided 360-video study sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Host a session: protocol endpoint, manifest and media.
    Serve(ServeArgs),
    /// Check a study file and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Connect a simulated headset to a running server.
    Simulate(SimulateArgs),
    /// Summarize a session log into report.json and heatmap.pgm.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub media_dir: PathBuf,
    #[arg(long, default_value_t = 8360)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// JSONL log file. STUDY360_LOG_DIR replaces its directory.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Biometric rules file.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Also accept length-framed protocol connections on this port.
    #[arg(long)]
    pub tcp_port: Option<u16>,
    /// Defaults to the study's session label.
    #[arg(long)]
    pub session_id: Option<String>,
    /// State broadcast interval while running; 0 disables.
    #[arg(long, default_value_t = 1000)]
    pub heartbeat_ms: i64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// WebSocket URL, e.g. ws://127.0.0.1:8360/ws
    #[arg(long)]
    pub endpoint: String,
    /// Motion script: JSON list of [t_ms, yaw, pitch].
    #[arg(long, conflicts_with = "seek", required_unless_present = "seek")]
    pub script: Option<PathBuf>,
    /// Turn toward each cue's anchor instead of following a script.
    #[arg(long)]
    pub seek: bool,
    #[arg(long, default_value_t = 90.0)]
    pub speed: f64,
    #[arg(long, default_value_t = 0)]
    pub latency_ms: i64,
    #[arg(long, default_value_t = SimConfig::DEFAULT_RATE_HZ)]
    pub rate: f64,
    #[arg(long)]
    pub duration: i64,
    #[arg(long, default_value_t = 45.0)]
    pub half_fov: f64,
    #[arg(long)]
    pub session_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// JSON list of {id, center: {yaw_deg, pitch_deg}, yaw_width_deg, pitch_height_deg}.
    #[arg(long)]
    pub aois: Option<PathBuf>,
    #[arg(long, default_value = "36x18", value_parser = parse_grid)]
    pub grid: (usize, usize),
    #[arg(long, default_value_t = 45.0)]
    pub half_fov: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (c, r) = s.split_once(['x', 'X']).ok_or("expected COLSxROWS, e.g. 36x18")?;
    let c: usize = c.trim().parse().map_err(|_| format!("bad column count `{c}`"))?;
    let r: usize = r.trim().parse().map_err(|_| format!("bad row count `{r}`"))?;
    if c == 0 || r == 0 {
        return Err("grid dimensions must be positive".into());
    }
    Ok((c, r))
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input; each line goes to stderr.
    Invalid(Vec<String>),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn lines(&self) -> Vec<String> {
        match self {
            CliError::Invalid(lines) => lines.clone(),
            CliError::Runtime(msg) => vec![format!("error: {msg}")],
        }
    }

    fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(vec![format!("error: {}", msg.into())])
    }
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::invalid(format!("cannot read {what} {}: {e}", path.display())))
}

/// Parses and validates a study file.
pub fn load_study(path: &Path) -> Result<StudyConfig, CliError> {
    let text = read_input(path, "config")?;
    let cfg = parse_study(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let violations = validate_study(&cfg);
    if !violations.is_empty() {
        let mut lines = vec![format!("{}: {} violation(s)", path.display(), violations.len())];
        lines.extend(violations.iter().map(|v| format!("  {v}")));
        return Err(CliError::Invalid(lines));
    }
    Ok(canonicalize(&cfg))
}

/// Where the session log goes: `--log` as given, with its directory
/// replaced by `env_dir` when that is set.
pub fn resolve_log_path(log: Option<&Path>, env_dir: Option<OsString>, session_id: &str) -> PathBuf {
    let default_name = format!("{session_id}.jsonl");
    match (env_dir.filter(|d| !d.is_empty()), log) {
        (Some(dir), Some(log)) => {
            PathBuf::from(dir).join(log.file_name().map_or_else(|| default_name.clone().into(), |n| n.to_os_string()))
        }
        (Some(dir), None) => PathBuf::from(dir).join(default_name),
        (None, Some(log)) => log.to_path_buf(),
        (None, None) => PathBuf::from(default_name),
    }
}

pub fn validate(config: &Path) -> Result<String, CliError> {
    let cfg = load_study(config)?;
    Ok(format!(
        "ok: {} ({} cue(s), {} audio track(s), {} ms)",
        cfg.session_label,
        cfg.cues.len(),
        cfg.audio_tracks.len(),
        cfg.media.duration_ms
    ))
}

pub async fn run_serve(args: ServeArgs) -> Result<(), CliError> {
    let study = load_study(&args.config)?;
    let catalog = MediaCatalog::load(&args.media_dir)
        .map_err(|e| CliError::invalid(format!("cannot load media dir {}: {e}", args.media_dir.display())))?;
    let rules = match &args.rules {
        Some(p) => parse_rules(&read_input(p, "rules")?).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    let session_id = args.session_id.clone().unwrap_or_else(|| study.session_label.clone());
    let log_path = resolve_log_path(args.log.as_deref(), std::env::var_os(LOG_DIR_ENV), &session_id);
    let log = JsonlLog::open(&log_path)
        .map_err(|e| CliError::Runtime(format!("cannot open log {}: {e}", log_path.display())))?;

    let mut opts = ServeOptions::new(study, catalog, Box::new(log));
    opts.hub = HubConfig { session_id, heartbeat_ms: args.heartbeat_ms, rules };
    opts.http_addr = SocketAddr::new(args.bind, args.port);
    opts.tcp_addr = args.tcp_port.map(|p| SocketAddr::new(args.bind, p));
    let server = serve(opts).await.map_err(|e| match e {
        ServeError::Bind { .. } => CliError::Runtime(e.to_string()),
        _ => CliError::invalid(e.to_string()),
    })?;
    println!("session {} listening on {}", server.session_id, server.base_url());
    if let Some(tcp) = server.tcp_addr {
        println!("framed tcp on {tcp}");
    }
    println!("log {}", log_path.display());
    server
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    Ok(())
}

pub async fn run_simulate(args: SimulateArgs) -> Result<String, CliError> {
    let mut cfg = if args.seek {
        SimConfig::seek(args.speed, args.latency_ms)
    } else {
        let path = args.script.as_deref().expect("clap requires --script without --seek");
        let text = read_input(path, "motion script")?;
        let text = String::from_utf8_lossy(&text);
        SimConfig::scripted(MotionScript::from_json(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?)
    };
    cfg.pose_rate_hz = args.rate;
    cfg.half_fov_deg = args.half_fov;
    cfg.session_id = args.session_id;
    cfg.validate().map_err(CliError::invalid)?;
    if args.duration <= 0 {
        return Err(CliError::invalid("duration must be positive"));
    }
    let report = run_sim(&args.endpoint, cfg, args.duration).await.map_err(|e| match e {
        ClientError::Config(m) => CliError::invalid(m),
        other => CliError::Runtime(other.to_string()),
    })?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(code) = &report.rejected {
        println!("{text}");
        return Err(CliError::Runtime(format!("server rejected the headset: {code}")));
    }
    Ok(text)
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<PathBuf, CliError> {
    let loaded = read_log(&args.log).map_err(|e| CliError::invalid(format!("cannot read log {}: {e}", args.log.display())))?;
    let aois = match &args.aois {
        Some(p) => parse_aois(&read_input(p, "AOI file")?).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    if !(args.half_fov > 0.0 && args.half_fov <= 180.0) {
        return Err(CliError::invalid("half-fov must be in (0, 180]"));
    }
    if loaded.corrupt_lines > 0 {
        log::warn!("skipped {} corrupt log line(s)", loaded.corrupt_lines);
    }
    let replay = replay_trace(&loaded);
    let params = AnalyzeParams { grid_cols: args.grid.0, grid_rows: args.grid.1, half_fov_deg: args.half_fov };
    let analysis = analyze(&replay, &aois, params);
    let write = |name: &str, text: &str| {
        let path = args.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    };
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out_dir.display())))?;
    write("report.json", &analysis.report_text())?;
    write("heatmap.pgm", &analysis.heatmap.to_pgm())?;
    Ok(args.out_dir.join("report.json"))
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Cmd::Validate { config } => validate(&config).map(|s| println!("{s}")),
        Cmd::Analyze(args) => run_analyze(&args).map(|p| println!("wrote {}", p.display())),
        Cmd::Serve(args) => runtime().and_then(|rt| rt.block_on(run_serve(args))),
        Cmd::Simulate(args) => runtime().and_then(|rt| rt.block_on(run_simulate(args))).map(|s| println!("{s}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            for line in e.lines() {
                eprintln!("{line}");
            }
            e.exit_code()
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start runtime: {e}")))
}
