//! Live hub: sockets in, broadcasts out.
//!
//! Each connection runs in its own task and forwards decoded frames over a
//! multi-producer channel. A single hub task owns the [`Session`], handles
//! frames in arrival order and ticks on a fixed interval; broadcasts fan out
//! to renderers through a lossy broadcast channel, so a slow renderer skips
//! frames instead of growing a queue. No session state is shared with the
//! connection tasks.

use std::fs::File;
use std::io::{self, BufWriter};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::{future, stream, Sink, SinkExt, Stream, StreamExt};
use gazeshare_core::ParticipantId;
use log::{debug, info, warn};
use serde::Serialize;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message as WsMessage;

use super::record::Recorder;
use super::session::{Received, Session};
use crate::config::{ConfigError, HubConfig};
use crate::protocol::{
    decode, encode, Bye, Decoded, Envelope, Grant, Hello, LineStats, Message, ProtocolError, Reject, RejectReason, Role,
    SeqTracker, MAX_LINE_BYTES, RENDERER_PORT, TELEMETRY_PORT,
};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub telemetry_addr: SocketAddr,
    pub renderer_addr: SocketAddr,
    pub record: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            telemetry_addr: SocketAddr::from(([0, 0, 0, 0], TELEMETRY_PORT)),
            renderer_addr: SocketAddr::from(([0, 0, 0, 0], RENDERER_PORT)),
            record: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("binding {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("opening recording {path}: {source}")]
    Record { path: String, source: io::Error },
}

/// Totals reported when the hub stops.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct HubSummary {
    pub ticks: u64,
    pub frames: u64,
    pub max_tick_lateness_s: f64,
    /// Ticks that finished more than 10% of an interval after their slot.
    pub late_ticks: u64,
}

#[derive(Clone, Copy)]
struct Clock(Instant);

impl Clock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

enum Inbound {
    Hello { receipt_t: f64, raw: String, env: Envelope, reply: oneshot::Sender<Result<Grant, Reject>> },
    Frame { receipt_t: f64, raw: String, env: Envelope },
    Closed { receipt_t: f64, participant: ParticipantId },
}

pub struct HubHandle {
    pub telemetry_addr: SocketAddr,
    pub renderer_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    hub: JoinHandle<HubSummary>,
    acceptors: Vec<JoinHandle<()>>,
}

impl HubHandle {
    pub async fn stop(self) -> HubSummary {
        let _ = self.shutdown.send(true);
        for a in &self.acceptors {
            a.abort();
        }
        self.hub.await.unwrap_or_default()
    }
}

/// Binds both listeners and starts the hub task.
pub async fn start(config: HubConfig, opts: ServeOptions) -> Result<HubHandle, ServeError> {
    let session = Session::new(config)?;
    let recorder = match &opts.record {
        Some(path) => {
            let f = File::create(path).map_err(|source| ServeError::Record { path: path.display().to_string(), source })?;
            Some(Recorder::new(BufWriter::new(f)))
        }
        None => None,
    };
    let telemetry = TcpListener::bind(opts.telemetry_addr)
        .await
        .map_err(|source| ServeError::Bind { addr: opts.telemetry_addr, source })?;
    let renderer = TcpListener::bind(opts.renderer_addr)
        .await
        .map_err(|source| ServeError::Bind { addr: opts.renderer_addr, source })?;
    let telemetry_addr = telemetry.local_addr().map_err(|source| ServeError::Bind { addr: opts.telemetry_addr, source })?;
    let renderer_addr = renderer.local_addr().map_err(|source| ServeError::Bind { addr: opts.renderer_addr, source })?;

    let clock = Clock(Instant::now());
    let (tx, rx) = mpsc::channel::<Inbound>(4096);
    let (btx, _) = broadcast::channel::<Arc<str>>(8);
    let (stop_tx, stop_rx) = watch::channel(false);

    let hub = tokio::spawn(hub_loop(session, rx, btx.clone(), recorder, clock, stop_rx.clone()));
    let acceptors = vec![
        tokio::spawn(accept_tcp(telemetry, Shared { tx: tx.clone(), btx: btx.clone(), clock, stop: stop_rx.clone() })),
        tokio::spawn(accept_ws(renderer, Shared { tx, btx, clock, stop: stop_rx })),
    ];
    info!("telemetry on {telemetry_addr}, renderer socket on {renderer_addr}");
    Ok(HubHandle { telemetry_addr, renderer_addr, shutdown: stop_tx, hub, acceptors })
}

fn record_line<W: io::Write>(rec: &mut Option<Recorder<W>>, t: f64, raw: &str) {
    if let Some(r) = rec {
        if let Err(e) = r.line(t, raw) {
            warn!("recording failed: {e}");
        }
    }
}

async fn hub_loop(
    mut session: Session,
    mut rx: mpsc::Receiver<Inbound>,
    btx: broadcast::Sender<Arc<str>>,
    mut recorder: Option<Recorder<BufWriter<File>>>,
    clock: Clock,
    mut stop: watch::Receiver<bool>,
) -> HubSummary {
    let interval_s = session.config().tick_interval_s();
    let mut interval = tokio::time::interval(Duration::from_secs_f64(interval_s));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut summary = HubSummary::default();

    loop {
        tokio::select! {
            biased;
            _ = async { stop.wait_for(|&s| s).await.map(|_| ()) } => break,
            slot = interval.tick() => {
                let t = clock.now();
                let b = session.tick(t);
                if let Some(r) = &mut recorder {
                    let _ = r.tick(t);
                }
                let frame = encode(&Envelope::new(b.tick, t, Message::State(Box::new(b))));
                let _ = btx.send(Arc::from(frame));
                let lateness = slot.elapsed().as_secs_f64();
                summary.ticks += 1;
                summary.max_tick_lateness_s = summary.max_tick_lateness_s.max(lateness);
                if lateness > 0.1 * interval_s {
                    summary.late_ticks += 1;
                    debug!("tick {} finished {:.1} ms late", summary.ticks, lateness * 1e3);
                }
            }
            Some(msg) = rx.recv() => {
                summary.frames += 1;
                match msg {
                    Inbound::Hello { receipt_t, raw, env, reply } => {
                        record_line(&mut recorder, receipt_t, &raw);
                        let answer = match session.receive(receipt_t, &env) {
                            Received::Granted(g) => Ok(g),
                            Received::Rejected(r) => Err(r),
                            _ => unreachable!("hello always answers"),
                        };
                        let _ = reply.send(answer);
                    }
                    Inbound::Frame { receipt_t, raw, env } => {
                        record_line(&mut recorder, receipt_t, &raw);
                        if let Received::GazeRejected(e) = session.receive(receipt_t, &env) {
                            debug!("{e}");
                        }
                    }
                    Inbound::Closed { receipt_t, participant } => {
                        let bye = Envelope::new(0, receipt_t, Message::Bye(Bye { participant_id: Some(participant) }));
                        let mut raw = encode(&bye);
                        raw.pop();
                        record_line(&mut recorder, receipt_t, &raw);
                        session.receive(receipt_t, &bye);
                    }
                }
            }
        }
    }
    if let Some(r) = &mut recorder {
        let _ = r.flush();
    }
    summary
}

/// What every connection task gets.
#[derive(Clone)]
struct Shared {
    tx: mpsc::Sender<Inbound>,
    btx: broadcast::Sender<Arc<str>>,
    clock: Clock,
    stop: watch::Receiver<bool>,
}

async fn accept_tcp(listener: TcpListener, shared: Shared) {
    loop {
        let Ok((sock, peer)) = listener.accept().await else { continue };
        let _ = sock.set_nodelay(true);
        let shared = shared.clone();
        tokio::spawn(async move {
            debug!("telemetry connection from {peer}");
            let (r, w) = sock.into_split();
            let frames = stream::unfold(BufReader::new(r), |mut r| async move {
                let mut buf = Vec::new();
                match r.read_until(b'\n', &mut buf).await {
                    Ok(0) => None,
                    Ok(_) => Some((Ok(buf), r)),
                    Err(e) => Some((Err(e), r)),
                }
            });
            let sink = futures_util::sink::unfold(w, |mut w, line: String| async move {
                w.write_all(line.as_bytes()).await?;
                Ok::<_, io::Error>(w)
            });
            let stats = run_connection(Box::pin(frames), Box::pin(sink), shared).await;
            debug!("telemetry connection {peer} closed: {stats:?}");
        });
    }
}

async fn accept_ws(listener: TcpListener, shared: Shared) {
    loop {
        let Ok((sock, peer)) = listener.accept().await else { continue };
        let shared = shared.clone();
        tokio::spawn(async move {
            let ws = match tokio_tungstenite::accept_async(sock).await {
                Ok(ws) => ws,
                Err(e) => {
                    debug!("websocket handshake with {peer} failed: {e}");
                    return;
                }
            };
            let (sink, source) = ws.split();
            let frames = source
                .take_while(|m| future::ready(!matches!(m, Ok(WsMessage::Close(_)))))
                .filter_map(|m| {
                    future::ready(match m {
                        Ok(WsMessage::Text(t)) => Some(Ok(t.as_bytes().to_vec())),
                        Ok(WsMessage::Binary(b)) => Some(Ok(b.to_vec())),
                        Ok(_) => None,
                        Err(e) => Some(Err(io::Error::other(e))),
                    })
                });
            let sink = sink
                .sink_map_err(io::Error::other)
                .with(|line: String| future::ready(Ok::<_, io::Error>(WsMessage::Text(line.trim_end().to_owned().into()))));
            let stats = run_connection(Box::pin(frames), Box::pin(sink), shared).await;
            debug!("websocket connection {peer} closed: {stats:?}");
        });
    }
}

#[derive(Debug, Default)]
struct ConnStats {
    lines: LineStats,
    seq: SeqTracker,
    wrong_participant: u64,
}

fn reply_line(seq: &mut u64, t: f64, body: Message) -> String {
    *seq += 1;
    encode(&Envelope::new(*seq, t, body))
}

/// Drives one connection of any transport until either side closes.
async fn run_connection<S, K>(
    mut frames: S,
    mut sink: K,
    shared: Shared,
) -> ConnStats
where
    S: Stream<Item = io::Result<Vec<u8>>> + Unpin,
    K: Sink<String, Error = io::Error> + Unpin,
{
    let Shared { tx, btx, clock, mut stop } = shared;
    let mut stats = ConnStats::default();
    let mut role: Option<(Role, Option<ParticipantId>)> = None;
    let mut out_seq = 0u64;
    let mut broadcasts: Option<broadcast::Receiver<Arc<str>>> = None;

    loop {
        let next_broadcast = async {
            match broadcasts.as_mut() {
                Some(rx) => loop {
                    match rx.recv().await {
                        Ok(frame) => return Some(frame),
                        Err(broadcast::error::RecvError::Lagged(_)) => continue,
                        Err(broadcast::error::RecvError::Closed) => return None,
                    }
                },
                None => future::pending().await,
            }
        };
        let raw = tokio::select! {
            _ = async { stop.wait_for(|&s| s).await.map(|_| ()) } => break,
            frame = next_broadcast => {
                match frame {
                    Some(frame) => {
                        if sink.send(frame.to_string()).await.is_err() {
                            break;
                        }
                        continue;
                    }
                    None => break,
                }
            }
            line = frames.next() => match line {
                Some(Ok(raw)) => raw,
                _ => break,
            },
        };
        let receipt_t = clock.now();
        if raw.iter().all(u8::is_ascii_whitespace) {
            stats.lines.blank += 1;
            continue;
        }
        if raw.len() > MAX_LINE_BYTES {
            stats.lines.malformed += 1;
            continue;
        }
        let env = match decode(&raw) {
            Ok(Decoded::Message(env)) => env,
            Ok(Decoded::Unknown { .. }) => {
                stats.lines.unknown += 1;
                continue;
            }
            Err(ProtocolError::MalformedLine(_)) => {
                stats.lines.malformed += 1;
                continue;
            }
            Err(e @ ProtocolError::VersionUnsupported { .. }) => {
                let reject = Reject { reason: RejectReason::VersionUnsupported, detail: e.to_string() };
                let _ = sink.send(reply_line(&mut out_seq, receipt_t, Message::Reject(reject))).await;
                break;
            }
        };
        stats.lines.decoded += 1;
        stats.seq.observe(env.seq);
        let text = String::from_utf8_lossy(&raw).trim_end().to_owned();

        match (&role, &env.body) {
            (None, Message::Hello(Hello { role: r, participant_id })) => {
                let (r, pid) = (*r, participant_id.clone());
                let (reply_tx, reply_rx) = oneshot::channel();
                if tx.send(Inbound::Hello { receipt_t, raw: text, env, reply: reply_tx }).await.is_err() {
                    break;
                }
                match reply_rx.await {
                    Ok(Ok(grant)) => {
                        if sink.send(reply_line(&mut out_seq, receipt_t, Message::Grant(grant))).await.is_err() {
                            break;
                        }
                        if r == Role::Renderer {
                            broadcasts = Some(btx.subscribe());
                        }
                        role = Some((r, pid));
                    }
                    Ok(Err(reject)) => {
                        let _ = sink.send(reply_line(&mut out_seq, receipt_t, Message::Reject(reject))).await;
                        break;
                    }
                    Err(_) => break,
                }
            }
            (None, _) => {}
            (Some(_), Message::Hello(_)) => {}
            (Some((Role::GazeSource, Some(pid))), Message::Gaze(g)) => {
                if &g.participant_id != pid {
                    stats.wrong_participant += 1;
                    continue;
                }
                if tx.send(Inbound::Frame { receipt_t, raw: text, env }).await.is_err() {
                    break;
                }
            }
            (Some((Role::GazeSource, _)), Message::Bye(_)) => break,
            (Some((Role::Detector, _)), Message::Detection(_)) => {
                if tx.send(Inbound::Frame { receipt_t, raw: text, env }).await.is_err() {
                    break;
                }
            }
            (Some(_), Message::Bye(_)) => break,
            _ => {}
        }
    }

    if let Some((Role::GazeSource, Some(pid))) = role {
        let _ = tx.send(Inbound::Closed { receipt_t: clock.now(), participant: pid }).await;
    }
    let _ = sink.close().await;
    stats
}
