use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tempfile::TempDir;

use super::*;
use crate::audio_io::{build_manifest, read_wav_mono, write_wav, Split};
use crate::experiments::evaluate;
use crate::features::{FeatureSpec, MelParams};
use crate::transformer::ModelConfig;

const TARGET: usize = 139_760;

fn model(seed: u64) -> Model<f32> {
    let spec = FeatureSpec::LogMel(MelParams {
        n_mels: 16,
        ..MelParams::default()
    });
    let mut cfg = ModelConfig::for_features(spec, TARGET);
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.ff_dim = 32;
    Model::init(cfg, seed).unwrap()
}

fn default_windows() -> WindowConfig {
    WindowConfig {
        window_s: 8.735,
        stride_s: 4.0,
    }
}

/// A 16-bit-exact test signal: tones and bursts over a noise floor.
fn signal(seconds: f64, seed: u64) -> Vec<f32> {
    let n = (seconds * 16_000.0) as usize;
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..n)
        .map(|i| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let noise = ((state >> 40) as f64 / (1u64 << 24) as f64 - 0.5) * 0.02;
            let t = i as f64 / 16_000.0;
            let burst = if (t % 7.0) < 0.3 {
                0.5 * (t * 2300.0).sin()
            } else {
                0.0
            };
            let x = noise + 0.1 * (t * 440.0 * std::f64::consts::TAU).sin() + burst;
            ((x * 32768.0).round() / 32768.0) as f32
        })
        .collect()
}

#[test]
fn thirty_seconds_give_six_windows_in_order() {
    let w = default_windows();
    assert_eq!(w.samples(), (139_760, 64_000));
    assert_eq!(w.count(480_000), 6);
    let scores = stream_classify(&model(1), &signal(30.0, 1), w).unwrap();
    assert_eq!(scores.len(), 6);
    for (k, s) in scores.iter().enumerate() {
        assert_eq!(s.start_s, 4.0 * k as f64);
        assert!((s.end_s - s.start_s - 8.735).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&s.fall_probability));
    }
}

#[test]
fn replay_is_deterministic() {
    let m = model(2);
    let x = signal(20.0, 2);
    assert_eq!(
        stream_classify(&m, &x, default_windows()).unwrap(),
        stream_classify(&m, &x, default_windows()).unwrap()
    );
}

#[test]
fn window_limits_are_enforced() {
    let m = model(3);
    let too_long = WindowConfig {
        window_s: 9.0,
        stride_s: 1.0,
    };
    assert!(matches!(
        stream_classify(&m, &[0.0; 10], too_long),
        Err(Error::InvalidArgument(_))
    ));
    let bad_stride = WindowConfig {
        window_s: 2.0,
        stride_s: 3.0,
    };
    assert!(stream_classify(&m, &[0.0; 10], bad_stride).is_err());
    let mut bare = m.clone();
    bare.cfg.features = None;
    assert!(matches!(
        stream_classify(&bare, &[0.0; 10], default_windows()),
        Err(Error::CheckpointMismatch(_))
    ));
    assert!(stream_classify(&m, &[0.0; 1000], default_windows())
        .unwrap()
        .is_empty());
}

#[test]
fn windows_match_offline_evaluation_bitwise() {
    let m = model(4);
    let x = signal(24.0, 4);
    let short = WindowConfig {
        window_s: 5.0,
        stride_s: 2.5,
    };
    let scores = stream_classify(&m, &x, short).unwrap();
    // The same windows written as a corpus and evaluated offline.
    let dir = TempDir::new().unwrap();
    let (w, s) = short.samples();
    std::fs::create_dir_all(dir.path().join("6")).unwrap();
    for k in 0..scores.len() {
        write_wav(
            &dir.path().join(format!("6/w{k:02}.wav")),
            &x[k * s..k * s + w],
        )
        .unwrap();
    }
    let mut manifest = build_manifest(dir.path(), 0).unwrap();
    for e in &mut manifest.entries {
        e.split = Split::Test;
    }
    let eval = evaluate(&m, &manifest, Split::Test).unwrap();
    assert_eq!(eval.predictions.len(), scores.len());
    for (score, pred) in scores.iter().zip(&eval.predictions) {
        assert_eq!(
            score.fall_probability.to_bits(),
            pred.p_fall.to_bits(),
            "{}",
            pred.path
        );
    }
}

fn replay_config(endpoint: Endpoint) -> DaemonConfig {
    DaemonConfig {
        capture: CaptureMode::Replay,
        retry: RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(5),
            timeout: Duration::from_secs(2),
        },
        ..DaemonConfig::new(default_windows(), endpoint)
    }
}

#[test]
fn daemon_matches_offline_stream_and_logs_events() {
    let m = model(5);
    let x = signal(30.0, 5);
    let mut log = Vec::new();
    let mut cfg = replay_config(Endpoint::LogOnly);
    cfg.chunk_samples = 1234;
    let report = run_daemon(
        &m,
        Box::new(SampleSource::new(x.clone())),
        &cfg,
        Some(&mut log),
    )
    .unwrap();
    assert_eq!(
        report.windows,
        stream_classify(&m, &x, default_windows()).unwrap()
    );
    assert_eq!((report.dropped_chunks, report.underruns), (0, 0));
    let lines: Vec<serde_json::Value> = log
        .lines()
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect();
    let windows = lines.iter().filter(|v| v["event"] == "window").count();
    assert_eq!(windows, 6);
    assert_eq!(lines.len(), 6 + report.alerts.len());
}

#[test]
fn silence_scores_every_window_without_alerting() {
    let m = model(6);
    let silence = vec![0.0f32; 30 * 16_000];
    let silent_score =
        stream_classify(&m, &silence, default_windows()).unwrap()[0].fall_probability;
    let mut cfg = replay_config(Endpoint::LogOnly);
    cfg.threshold = (silent_score + 1e-6).min(1.0);
    let report = run_daemon(&m, Box::new(SampleSource::new(silence)), &cfg, None).unwrap();
    assert_eq!(report.windows.len(), 6);
    assert!(report.alerts.is_empty());
}

#[test]
fn debounce_and_threshold_govern_alerts() {
    let m = model(7);
    let x = signal(60.0, 7);
    let mut cfg = replay_config(Endpoint::LogOnly);
    cfg.threshold = 0.0;
    let report = run_daemon(&m, Box::new(SampleSource::new(x.clone())), &cfg, None).unwrap();
    let n = report.windows.len();
    assert_eq!(n, 13);
    assert_eq!(report.alerts.len(), n);
    let sent: Vec<f64> = report
        .alerts
        .iter()
        .filter(|a| a.status == AlertStatus::Sent)
        .map(|a| a.window_span.1)
        .collect();
    // Ends at 8.735 + 4k s; a 30 s refractory period admits k = 0, 8.
    assert_eq!(sent.len(), 2);
    assert!((sent[1] - sent[0] - 32.0).abs() < 1e-9);
    for pair in report.alerts.windows(2) {
        if pair[1].status == AlertStatus::Suppressed {
            assert!(
                pair[1].window_span.1 - sent[0] < 30.0 || pair[1].window_span.1 - sent[1] < 30.0
            );
        }
    }

    cfg.threshold = 0.5;
    let report = run_daemon(&m, Box::new(SampleSource::new(x)), &cfg, None).unwrap();
    assert!(report.alerts.iter().all(|a| a.fall_probability >= 0.5));
    let above = report
        .windows
        .iter()
        .filter(|w| w.fall_probability >= 0.5)
        .count();
    assert_eq!(report.alerts.len(), above);
}

/// Accepts connections and answers each request with `status`.
fn stub_listener(status: u16) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/alert", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            counter.fetch_add(1, Ordering::SeqCst);
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
            );
        }
    });
    (url, hits)
}

fn one_alert_config(url: String) -> DaemonConfig {
    let mut cfg = replay_config(Endpoint::Http { url });
    cfg.threshold = 0.0;
    cfg
}

#[test]
fn reachable_endpoint_marks_alert_sent() {
    let (url, hits) = stub_listener(200);
    let m = model(8);
    let report = run_daemon(
        &m,
        Box::new(SampleSource::new(signal(10.0, 8))),
        &one_alert_config(url),
        None,
    )
    .unwrap();
    assert_eq!(report.alerts.len(), 1);
    assert_eq!(
        (report.alerts[0].status, report.alerts[0].attempts),
        (AlertStatus::Sent, 1)
    );
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn failing_endpoint_is_retried_three_times_then_marked_failed() {
    let (url, hits) = stub_listener(503);
    let m = model(9);
    let x = signal(45.0, 9);
    let report = run_daemon(
        &m,
        Box::new(SampleSource::new(x.clone())),
        &one_alert_config(url),
        None,
    )
    .unwrap();
    // The daemon keeps scoring after the failed dispatch.
    assert_eq!(report.windows.len(), default_windows().count(x.len()));
    let failed: Vec<_> = report
        .alerts
        .iter()
        .filter(|a| a.status == AlertStatus::Failed)
        .collect();
    assert_eq!(failed.len(), 2);
    assert!(failed.iter().all(|a| a.attempts == 3));
    assert_eq!(hits.load(Ordering::SeqCst), 6);
}

#[test]
fn unreachable_endpoint_fails_without_stopping_the_daemon() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let m = model(10);
    let cfg = one_alert_config(format!("http://127.0.0.1:{port}/alert"));
    let report = run_daemon(
        &m,
        Box::new(SampleSource::new(signal(10.0, 10))),
        &cfg,
        None,
    )
    .unwrap();
    assert_eq!(report.windows.len(), 1);
    assert_eq!(
        (report.alerts[0].status, report.alerts[0].attempts),
        (AlertStatus::Failed, 3)
    );
}

/// Produces audio far faster than inference can consume it.
struct Firehose(usize);

impl AudioSource for Firehose {
    fn read(&mut self, buf: &mut [f32]) -> crate::error::Result<usize> {
        if self.0 == 0 {
            return Ok(0);
        }
        let n = buf.len().min(self.0);
        buf[..n].iter_mut().for_each(|v| *v = 0.01);
        self.0 -= n;
        Ok(n)
    }
}

#[test]
fn live_capture_drops_oldest_instead_of_blocking() {
    let m = model(11);
    let mut cfg = DaemonConfig::new(default_windows(), Endpoint::LogOnly);
    cfg.chunk_samples = 160;
    cfg.queue_chunks = 1;
    let report = run_daemon(&m, Box::new(Firehose(600 * 16_000)), &cfg, None).unwrap();
    assert!(report.dropped_chunks > 0);
    assert!(report.underruns > 0);
    assert!(report
        .windows
        .windows(2)
        .all(|p| p[0].start_s < p[1].start_s));
}

#[test]
fn wav_replay_decodes_like_corpus_ingestion() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("stream.wav");
    let x = signal(12.0, 12);
    write_wav(&path, &x).unwrap();
    let m = model(12);
    let from_file = run_daemon(
        &m,
        Box::new(SampleSource::from_wav(&path).unwrap()),
        &replay_config(Endpoint::LogOnly),
        None,
    )
    .unwrap();
    assert_eq!(
        from_file.windows,
        stream_classify(&m, &read_wav_mono(&path).unwrap(), default_windows()).unwrap()
    );
}
