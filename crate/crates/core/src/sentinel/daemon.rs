use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use super::alert::{dispatch_alert, AlertEvent, AlertStatus, Debouncer, Endpoint, RetryPolicy};
use super::source::AudioSource;
use super::{checkpoint_extractor, score_window, WindowConfig, WindowScore};
use crate::audio_io::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::transformer::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaptureMode {
    /// Capture never waits: when the queue is full the oldest chunk is
    /// dropped and counted.
    Live,
    /// Lossless: capture waits for inference. For replaying files.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaemonConfig {
    pub windows: WindowConfig,
    pub threshold: f64,
    pub refractory_s: f64,
    pub device_id: String,
    pub endpoint: Endpoint,
    pub retry: RetryPolicy,
    pub capture: CaptureMode,
    /// Samples per captured chunk.
    pub chunk_samples: usize,
    /// Chunks buffered between capture and inference.
    pub queue_chunks: usize,
    /// Alerts buffered between inference and dispatch.
    pub alert_queue: usize,
}

impl DaemonConfig {
    pub fn new(windows: WindowConfig, endpoint: Endpoint) -> Self {
        Self {
            windows,
            threshold: 0.5,
            refractory_s: 30.0,
            device_id: "sentinel".into(),
            endpoint,
            retry: RetryPolicy::default(),
            capture: CaptureMode::Live,
            chunk_samples: 1600,
            queue_chunks: 256,
            alert_queue: 16,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DaemonReport {
    pub windows: Vec<WindowScore>,
    pub alerts: Vec<AlertEvent>,
    pub dropped_chunks: u64,
    pub underruns: u64,
}

struct Chunk {
    /// Stream position of the first sample.
    start: u64,
    samples: Vec<f32>,
}

type SharedLog<'a> = Mutex<Option<&'a mut (dyn Write + Send)>>;

fn emit(log: &SharedLog<'_>, record: serde_json::Value) {
    if let Some(w) = log.lock().expect("event log lock").as_mut() {
        if let Err(e) = writeln!(w, "{record}").and_then(|_| w.flush()) {
            log::warn!("event log write failed: {e}");
        }
    }
}

fn capture(
    mut source: Box<dyn AudioSource + '_>,
    mode: CaptureMode,
    chunk_samples: usize,
    tx: Sender<Chunk>,
    drain: Option<Receiver<Chunk>>,
    dropped: &AtomicU64,
    stop: &AtomicBool,
) -> Result<()> {
    let mut pos = 0u64;
    while !stop.load(Ordering::Relaxed) {
        let mut buf = vec![0f32; chunk_samples.max(1)];
        let n = source.read(&mut buf)?;
        if n == 0 {
            break;
        }
        buf.truncate(n);
        let mut chunk = Chunk {
            start: pos,
            samples: buf,
        };
        pos += n as u64;
        match mode {
            CaptureMode::Replay => {
                if tx.send(chunk).is_err() {
                    break;
                }
            }
            CaptureMode::Live => loop {
                match tx.try_send(chunk) {
                    Ok(()) => break,
                    Err(TrySendError::Full(c)) => {
                        if drain.as_ref().is_some_and(|d| d.try_recv().is_ok()) {
                            dropped.fetch_add(1, Ordering::Relaxed);
                        }
                        chunk = c;
                    }
                    Err(TrySendError::Disconnected(_)) => return Ok(()),
                }
            },
        }
    }
    Ok(())
}

fn dispatcher(
    rx: Receiver<AlertEvent>,
    endpoint: &Endpoint,
    retry: &RetryPolicy,
    log: &SharedLog<'_>,
) -> Vec<AlertEvent> {
    let mut done = Vec::new();
    for mut event in rx {
        let (status, attempts) = dispatch_alert(&event, endpoint, retry);
        event.status = status;
        event.attempts = attempts;
        emit(log, serde_json::json!({"event": "alert", "alert": &event}));
        done.push(event);
    }
    done
}

/// Runs capture, inference and dispatch on three threads joined by bounded
/// queues until the source ends. Window scores and alerts are written to
/// `event_log` as JSON lines.
pub fn run_daemon(
    model: &Model<f32>,
    source: Box<dyn AudioSource + '_>,
    cfg: &DaemonConfig,
    event_log: Option<&mut (dyn Write + Send)>,
) -> Result<DaemonReport> {
    cfg.windows.validate(model)?;
    let extractor = checkpoint_extractor(model)?;
    let (win, stride) = cfg.windows.samples();
    let sr = SAMPLE_RATE as f64;
    let started = Instant::now();
    let log: SharedLog<'_> = Mutex::new(event_log);
    let dropped = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let (chunk_tx, chunk_rx) = bounded::<Chunk>(cfg.queue_chunks.max(1));
    let (alert_tx, alert_rx) = bounded::<AlertEvent>(cfg.alert_queue.max(1));

    thread::scope(|scope| {
        // Only live capture holds a receiver, to discard the oldest chunk.
        let drain = (cfg.capture == CaptureMode::Live).then(|| chunk_rx.clone());
        let capture_thread = scope.spawn(|| {
            let r = capture(
                source,
                cfg.capture,
                cfg.chunk_samples,
                chunk_tx,
                drain,
                &dropped,
                &stop,
            );
            if let Err(e) = &r {
                log::error!("capture stopped: {e}");
            }
            r
        });
        let dispatch_thread = scope.spawn(|| dispatcher(alert_rx, &cfg.endpoint, &cfg.retry, &log));

        let mut report = DaemonReport::default();
        let mut debounce = Debouncer::new(cfg.refractory_s);
        let mut buf: Vec<f32> = Vec::new();
        let mut buf_start = 0u64;
        let mut next_window = 0u64;
        let inference = (|| -> Result<()> {
            for chunk in chunk_rx.iter() {
                if chunk.start != buf_start + buf.len() as u64 {
                    let missing = chunk.start - (buf_start + buf.len() as u64);
                    log::warn!(
                        "{}",
                        Error::StreamUnderrun(format!(
                            "{missing} samples lost before {}",
                            chunk.start
                        ))
                    );
                    report.underruns += 1;
                    buf.clear();
                    buf_start = chunk.start;
                    next_window = chunk.start;
                }
                buf.extend_from_slice(&chunk.samples);
                while next_window + win as u64 <= buf_start + buf.len() as u64 {
                    let off = (next_window - buf_start) as usize;
                    let p = score_window(model, &extractor, buf[off..off + win].to_vec())?;
                    let score = WindowScore {
                        start_s: next_window as f64 / sr,
                        end_s: (next_window + win as u64) as f64 / sr,
                        fall_probability: p,
                    };
                    emit(
                        &log,
                        serde_json::json!({"event": "window", "window": &score}),
                    );
                    report.windows.push(score);
                    if p >= cfg.threshold {
                        let mut event = AlertEvent {
                            monotonic_s: started.elapsed().as_secs_f64(),
                            wall_clock_unix_s: SystemTime::now()
                                .duration_since(UNIX_EPOCH)
                                .map(|d| d.as_secs_f64())
                                .unwrap_or(0.0),
                            window_span: (score.start_s, score.end_s),
                            fall_probability: p,
                            device_id: cfg.device_id.clone(),
                            dispatched_to: cfg.endpoint.describe(),
                            status: AlertStatus::Sent,
                            attempts: 0,
                        };
                        if debounce.admit(score.end_s) {
                            if alert_tx.send(event).is_err() {
                                return Err(Error::InvalidArgument(
                                    "dispatch stage stopped".into(),
                                ));
                            }
                        } else {
                            event.status = AlertStatus::Suppressed;
                            emit(&log, serde_json::json!({"event": "alert", "alert": &event}));
                            report.alerts.push(event);
                        }
                    }
                    next_window += stride as u64;
                }
                let keep_from = next_window.min(buf_start + buf.len() as u64);
                buf.drain(..(keep_from - buf_start) as usize);
                buf_start = keep_from;
            }
            Ok(())
        })();
        stop.store(true, Ordering::Relaxed);
        drop(chunk_rx);
        drop(alert_tx);
        let sent = dispatch_thread.join().expect("dispatch thread panicked");
        let captured = capture_thread.join().expect("capture thread panicked");
        inference?;
        captured?;
        report.alerts.extend(sent);
        report
            .alerts
            .sort_by(|a, b| a.window_span.0.total_cmp(&b.window_span.0));
        report.dropped_chunks = dropped.load(Ordering::Relaxed);
        Ok(report)
    })
}
