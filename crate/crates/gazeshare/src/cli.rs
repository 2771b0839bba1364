//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gazeshare_core::ParticipantId;
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader as AsyncBufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::Mutex;
use tokio::time::Instant;

use crate::config::{load_layout, load_settings, load_task, HubConfig, SettingsFile};
use crate::evalkit::{
    self, derived_seed, evaluate_samples, generate_stream, merge_streams, source_streams, CalibrationSchedule, CameraPose,
    ReceivedSample, Scanpath, SimulatedDetector, SimulatedObject, SourceStream, SyntheticParticipant,
};
use crate::hub::record::{format_entry, read_log, replay, write_log, LogEntry, Recorder};
use crate::hub::server::{self, ServeOptions};
use crate::protocol::{decode, encode, Bye, Decoded, Envelope, Message, RENDERER_PORT, TELEMETRY_PORT};

#[derive(Debug, Parser)]
#[command(name = "gazeshare", version, about = "Shared gaze hub for projected tabletops")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the hub.
    Serve(ServeArgs),
    /// Drive a hub with synthetic participants and a simulated detector.
    Simulate(SimulateArgs),
    /// Run the 9-point calibration evaluation and write report files.
    Evaluate(EvaluateArgs),
    /// Replay a recording through a fresh hub deterministically.
    Replay(ReplayArgs),
    /// Relay telemetry connections to a hub and record everything sent.
    Record(RecordArgs),
}

/// Hub settings shared by every subcommand. Flags override the settings file.
#[derive(Debug, Args, Default, Clone)]
pub struct HubArgs {
    /// Settings file (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Table layout file (TOML).
    #[arg(long, value_name = "PATH")]
    layout: Option<PathBuf>,
    /// Task definition file (TOML).
    #[arg(long, value_name = "PATH")]
    task: Option<PathBuf>,
    #[arg(long, value_name = "HZ")]
    tick_hz: Option<u32>,
    #[arg(long, value_name = "N")]
    grid_rows: Option<usize>,
    #[arg(long, value_name = "N")]
    grid_cols: Option<usize>,
    /// Attention half-life in seconds.
    #[arg(long, value_name = "S")]
    half_life: Option<f64>,
    /// Dwell at which a cell saturates, in seconds.
    #[arg(long, value_name = "S")]
    dwell_cap: Option<f64>,
    /// Dwell below which a cell stays hidden, in seconds.
    #[arg(long, value_name = "S")]
    reveal_threshold: Option<f64>,
}

fn relative_to(base: Option<&Path>, p: &str) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if Path::new(p).is_relative() => dir.join(p),
        _ => PathBuf::from(p),
    }
}

impl HubArgs {
    fn resolve(&self) -> Result<(HubConfig, SettingsFile)> {
        let settings = match &self.config {
            Some(p) => load_settings(p)?,
            None => SettingsFile::default(),
        };
        let base = self.config.as_deref();
        let mut cfg = HubConfig::default();
        let layout = self.layout.clone().or_else(|| settings.layout.as_deref().map(|p| relative_to(base, p)));
        if let Some(p) = layout {
            cfg.layout = load_layout(&p)?;
        }
        let task = self.task.clone().or_else(|| settings.task.as_deref().map(|p| relative_to(base, p)));
        if let Some(p) = task {
            cfg.task = load_task(&p)?;
        }
        let s = &settings;
        cfg.tick_hz = self.tick_hz.or(s.tick_hz).unwrap_or(cfg.tick_hz);
        cfg.grid_rows = self.grid_rows.or(s.grid_rows).unwrap_or(cfg.grid_rows);
        cfg.grid_cols = self.grid_cols.or(s.grid_cols).unwrap_or(cfg.grid_cols);
        let a = &mut cfg.attention;
        a.half_life_s = self.half_life.or(s.half_life_s).unwrap_or(a.half_life_s);
        a.dwell_cap_s = self.dwell_cap.or(s.dwell_cap_s).unwrap_or(a.dwell_cap_s);
        a.reveal_threshold_s = self.reveal_threshold.or(s.reveal_threshold_s).unwrap_or(a.reveal_threshold_s);
        a.max_gap_s = s.max_gap_s.unwrap_or(a.max_gap_s);
        // object dwell follows the grid so the two visualizations agree
        let o = &mut cfg.objects;
        o.half_life_s = a.half_life_s;
        o.dwell_cap_s = a.dwell_cap_s;
        o.attend_threshold_s = a.reveal_threshold_s;
        o.max_gap_s = a.max_gap_s;
        o.hint_threshold_s = s.hint_threshold_s.unwrap_or(o.hint_threshold_s);
        cfg.trails.speed_mm_s = s.trail_speed_mm_s.unwrap_or(cfg.trails.speed_mm_s);
        cfg.stale_window_s = s.stale_window_s.unwrap_or(cfg.stale_window_s);
        cfg.modes.heatmap = s.heatmap.unwrap_or(cfg.modes.heatmap);
        cfg.modes.trails = s.trails.unwrap_or(cfg.modes.trails);
        cfg.modes.objects = s.objects.unwrap_or(cfg.modes.objects);
        cfg.validate()?;
        Ok((cfg, settings))
    }
}

fn parse_ports(s: &str) -> Result<(u16, u16), String> {
    let (a, b) = s.split_once(',').ok_or("expected TELEMETRY,RENDERER")?;
    let port = |p: &str| p.trim().parse::<u16>().map_err(|e| format!("{p:?}: {e}"));
    Ok((port(a)?, port(b)?))
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    hub: HubArgs,
    /// Telemetry and renderer ports.
    #[arg(long, value_name = "TELEMETRY,RENDERER", value_parser = parse_ports)]
    ports: Option<(u16, u16)>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    /// Write every received frame and tick to this recording.
    #[arg(long, value_name = "PATH")]
    record: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 4)]
    participants: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Camera pose preset: horizontal, vertical or identity.
    #[arg(long, default_value = "horizontal")]
    view: String,
    /// Gaze noise σ in camera pixels.
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Scanpath program for every participant instead of random ones.
    #[arg(long, value_name = "PATH")]
    scanpath: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    hub: HubArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Seconds of data to send.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Hub telemetry address.
    #[arg(long, default_value = "127.0.0.1:9470")]
    hub_addr: String,
    /// Skip the network and only write the recording.
    #[arg(long, requires = "record")]
    offline: bool,
    /// Write what was sent, as a recording.
    #[arg(long, value_name = "PATH")]
    record: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    hub: HubArgs,
    /// Calibration routine; only the 9-point lattice is defined.
    #[arg(long, default_value = "9pt")]
    schedule: String,
    /// Viewing position label and simulated camera preset.
    #[arg(long, default_value = "horizontal")]
    view: String,
    /// Report directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Evaluate a recorded session instead of simulating one.
    #[arg(long, value_name = "PATH")]
    replay: Option<PathBuf>,
    /// Participant to evaluate in a recording (default: first seen).
    #[arg(long)]
    participant: Option<String>,
    /// Hub time at which the first target was shown.
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Lattice inset as a fraction of the projection extent.
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated gaze noise σ in camera pixels.
    #[arg(long, default_value_t = 10.0)]
    noise_px: f64,
    /// Free-text note on viewing distance for the report.
    #[arg(long)]
    distance_note: Option<String>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    hub: HubArgs,
    /// Recording to replay.
    #[arg(long, value_name = "PATH")]
    replay: PathBuf,
    /// Write every broadcast frame here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecordArgs {
    /// Address clients connect to.
    #[arg(long, default_value = "127.0.0.1:9480")]
    listen: SocketAddr,
    /// Hub telemetry address.
    #[arg(long, default_value = "127.0.0.1:9470")]
    hub_addr: String,
    #[arg(long, value_name = "PATH")]
    record: PathBuf,
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Serve(a) => serve(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Record(a) => record(a),
    }
}

/// A closed pipe on stdout is not an error.
fn stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().context("starting async runtime")
}

fn serve(a: ServeArgs) -> Result<()> {
    let (cfg, settings) = a.hub.resolve()?;
    let (tp, rp) = a.ports.unwrap_or((
        settings.telemetry_port.unwrap_or(TELEMETRY_PORT),
        settings.renderer_port.unwrap_or(RENDERER_PORT),
    ));
    let opts = ServeOptions {
        telemetry_addr: SocketAddr::new(a.bind, tp),
        renderer_addr: SocketAddr::new(a.bind, rp),
        record: a.record,
    };
    runtime()?.block_on(async move {
        let handle = server::start(cfg, opts).await?;
        eprintln!("telemetry {} renderer {}", handle.telemetry_addr, handle.renderer_addr);
        tokio::signal::ctrl_c().await.context("waiting for shutdown signal")?;
        let summary = handle.stop().await;
        eprintln!(
            "stopped after {} ticks, {} frames, {} late ticks, max lateness {:.2} ms",
            summary.ticks,
            summary.frames,
            summary.late_ticks,
            summary.max_tick_lateness_s * 1e3
        );
        Ok(())
    })
}

fn camera(view: &str, cfg: &HubConfig) -> Result<CameraPose> {
    CameraPose::preset(view, &cfg.layout).with_context(|| format!("unknown view {view:?} (horizontal, vertical, identity)"))
}

fn build_sources(sim: &SimArgs, cfg: &HubConfig, duration: f64) -> Result<Vec<SourceStream>> {
    let cam = camera(&sim.view, cfg)?;
    let fixed = sim.scanpath.as_deref().map(Scanpath::load).transpose()?;
    let participants: Vec<SyntheticParticipant> = (0..sim.participants)
        .map(|i| {
            let scanpath = fixed.clone().unwrap_or_else(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(sim.seed, 1000 + i as u64));
                Scanpath::random(&mut rng, &cfg.layout, 16)
            });
            let mut p = SyntheticParticipant::new(format!("p{}", i + 1), scanpath, cam.clone());
            p.noise_px = sim.noise_px;
            p
        })
        .collect();
    let objects: Vec<SimulatedObject> = cfg
        .task
        .objects
        .iter()
        .filter_map(|o| o.pose.map(|pose| SimulatedObject { object_id: o.id.clone(), obb: pose.into() }))
        .collect();
    let detector = (!objects.is_empty()).then(|| SimulatedDetector::new(objects));
    Ok(source_streams(&participants, detector.as_ref(), &cfg.layout, duration, sim.seed)?)
}

fn write_entries(path: &Path, entries: &[LogEntry]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_log(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (cfg, _) = a.hub.resolve()?;
    if !(a.duration.is_finite() && a.duration > 0.0) {
        bail!("--duration must be positive");
    }
    let sources = build_sources(&a.sim, &cfg, a.duration)?;
    if a.offline {
        let path = a.record.as_deref().expect("clap enforces --record");
        write_entries(path, &merge_streams(&sources))?;
        return Ok(());
    }
    let sent = runtime()?.block_on(send_live(&a.hub_addr, sources))?;
    if let Some(path) = &a.record {
        write_entries(path, &sent)?;
    }
    Ok(())
}

async fn read_reply(r: &mut AsyncBufReader<tokio::net::tcp::OwnedReadHalf>) -> Result<Envelope> {
    let mut line = String::new();
    if r.read_line(&mut line).await? == 0 {
        bail!("hub closed the connection during the handshake");
    }
    match decode(line.as_bytes())? {
        Decoded::Message(env) => Ok(env),
        Decoded::Unknown { kind, .. } => bail!("unexpected {kind:?} reply"),
    }
}

/// Connects every source, then paces frames against one shared start instant.
async fn send_live(addr: &str, sources: Vec<SourceStream>) -> Result<Vec<LogEntry>> {
    let mut conns = Vec::new();
    for s in &sources {
        let sock = TcpStream::connect(addr).await.with_context(|| format!("connecting to {addr}"))?;
        sock.set_nodelay(true)?;
        let (r, mut w) = sock.into_split();
        let mut r = AsyncBufReader::new(r);
        w.write_all(encode(&s.hello).as_bytes()).await?;
        match read_reply(&mut r).await?.body {
            Message::Grant(g) => info!("granted {}", g.session_token),
            Message::Reject(rj) => bail!("hub rejected the connection: {}", rj.detail),
            other => bail!("unexpected {:?} reply", other.kind()),
        }
        conns.push((r, w));
    }
    let start = Instant::now();
    let hellos = sources.len();
    let sent = Arc::new(Mutex::new(sources.iter().map(|s| LogEntry::message(0.0, &s.hello)).collect::<Vec<_>>()));
    let mut tasks = Vec::new();
    for (s, (r, mut w)) in sources.into_iter().zip(conns) {
        let sent = sent.clone();
        tasks.push(tokio::spawn(async move {
            // drain replies so the hub never blocks on us
            let drain = tokio::spawn(async move {
                let mut r = r;
                let mut sink = Vec::new();
                while r.read_until(b'\n', &mut sink).await.map(|n| n > 0).unwrap_or(false) {
                    sink.clear();
                }
            });
            for (t, env) in &s.frames {
                tokio::time::sleep_until(start + Duration::from_secs_f64(*t)).await;
                w.write_all(encode(env).as_bytes()).await?;
                sent.lock().await.push(LogEntry::message(*t, env));
            }
            let bye = Envelope::new(s.frames.len() as u64 + 1, start.elapsed().as_secs_f64(), Message::Bye(Bye {
                participant_id: match &s.hello.body {
                    Message::Hello(h) => h.participant_id.clone(),
                    _ => None,
                },
            }));
            w.write_all(encode(&bye).as_bytes()).await?;
            w.shutdown().await?;
            drain.abort();
            anyhow::Ok(())
        }));
    }
    for t in tasks {
        t.await.context("sender task")??;
    }
    let mut entries = Arc::try_unwrap(sent).expect("senders finished").into_inner();
    // senders interleave nondeterministically; order as the hub would see them
    entries[hellos..].sort_by(|x, y| x.time().total_cmp(&y.time()).then_with(|| format_entry(x).cmp(&format_entry(y))));
    Ok(entries)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (cfg, _) = a.hub.resolve()?;
    if a.schedule != "9pt" {
        bail!("unknown schedule {:?}; only 9pt is defined", a.schedule);
    }
    let layout = &cfg.layout;
    let sched = CalibrationSchedule::nine_point(layout, a.margin, a.view.clone()).with_start(a.start);
    sched.validate()?;
    let (samples, note) = match &a.replay {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let entries = read_log(BufReader::new(f))?;
            let pid = a.participant.as_deref().map(ParticipantId::from);
            let samples = evalkit::samples_from_log(&entries, pid.as_ref());
            if samples.is_empty() {
                bail!("no gaze samples in {}", path.display());
            }
            (samples, format!("recorded session {}", path.display()))
        }
        None => {
            let mut p = SyntheticParticipant::new("calibration", Scanpath::calibration(&sched, layout, 0.05)?, camera(&a.view, &cfg)?);
            p.noise_px = a.noise_px;
            let samples = generate_stream(&p, layout, 0.0, sched.end_t(), derived_seed(a.seed, 0))?
                .into_iter()
                .map(|s| ReceivedSample { receipt_t: s.t, msg: s.msg })
                .collect::<Vec<_>>();
            (samples, format!("simulated {} camera, gaze noise {} px", a.view, a.noise_px))
        }
    };
    let report = evaluate_samples(&samples, &sched, layout, a.distance_note.unwrap_or(note))?;
    report.write_to(&a.out)?;
    stdout(&report.to_text())?;
    if !report.empty_points.is_empty() {
        warn!("{} calibration points kept no samples", report.empty_points.len());
    }
    Ok(())
}

fn replay_cmd(a: ReplayArgs) -> Result<()> {
    let (cfg, _) = a.hub.resolve()?;
    let f = File::open(&a.replay).with_context(|| format!("opening {}", a.replay.display()))?;
    let entries = read_log(BufReader::new(f))?;
    let mut out = match &a.out {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let mut digest = Sha256::new();
    let mut write_err = None;
    let outcome = replay(cfg, &entries, |_, frame| {
        digest.update(frame.as_bytes());
        if let Some(w) = &mut out {
            if let Err(e) = w.write_all(frame.as_bytes()) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing broadcasts");
    }
    if let Some(w) = &mut out {
        w.flush()?;
    }
    let summary = serde_json::json!({
        "ticks": outcome.timing.ticks,
        "messages": outcome.timing.messages,
        "gaze_mapped": outcome.counts.gaze_mapped,
        "gaze_discarded": outcome.counts.gaze_discarded,
        "detections": outcome.counts.detections,
        "malformed_lines": outcome.counts.lines.malformed,
        "unknown_lines": outcome.counts.lines.unknown,
        "deadline_misses": outcome.timing.deadline_misses,
        "max_lateness_fraction": outcome.timing.max_lateness_fraction(),
        "broadcast_sha256": hex::encode(digest.finalize()),
    });
    stdout(&format!("{}\n", serde_json::to_string_pretty(&summary)?))
}

fn record(a: RecordArgs) -> Result<()> {
    runtime()?.block_on(async move {
        let listener = TcpListener::bind(a.listen).await.with_context(|| format!("binding {}", a.listen))?;
        let file = File::create(&a.record).with_context(|| format!("creating {}", a.record.display()))?;
        let recorder = Arc::new(std::sync::Mutex::new(Recorder::new(BufWriter::new(file))));
        let start = Instant::now();
        eprintln!("relaying {} -> {}", a.listen, a.hub_addr);
        loop {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => break,
                accepted = listener.accept() => {
                    let (client, peer) = accepted?;
                    let hub = a.hub_addr.clone();
                    let recorder = recorder.clone();
                    tokio::spawn(async move {
                        if let Err(e) = relay(client, &hub, recorder, start).await {
                            warn!("relay for {peer}: {e:#}");
                        }
                    });
                }
            }
        }
        recorder.lock().expect("recorder lock").flush()?;
        Ok(())
    })
}

async fn relay(
    client: TcpStream,
    hub: &str,
    recorder: Arc<std::sync::Mutex<Recorder<BufWriter<File>>>>,
    start: Instant,
) -> Result<()> {
    let upstream = TcpStream::connect(hub).await.with_context(|| format!("connecting to {hub}"))?;
    let (cr, mut cw) = client.into_split();
    let (ur, mut uw) = upstream.into_split();
    let down = tokio::spawn(async move {
        let mut ur = ur;
        tokio::io::copy(&mut ur, &mut cw).await
    });
    let mut cr = AsyncBufReader::new(cr);
    let mut line = Vec::new();
    loop {
        line.clear();
        if cr.read_until(b'\n', &mut line).await? == 0 {
            break;
        }
        let t = start.elapsed().as_secs_f64();
        uw.write_all(&line).await?;
        let text = String::from_utf8_lossy(&line);
        let text = text.trim_end();
        if !text.is_empty() {
            recorder.lock().expect("recorder lock").line(t, text)?;
        }
    }
    uw.shutdown().await?;
    down.abort();
    Ok(())
}
