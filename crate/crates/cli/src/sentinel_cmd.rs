use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Subcommand};

use fallsense::audio_io::SAMPLE_RATE;
use fallsense::sentinel::{
    run_daemon, AudioSource, CaptureMode, DaemonConfig, Endpoint, PcmSource, SampleSource,
    WindowConfig,
};
use fallsense::transformer::load_checkpoint;

#[derive(Subcommand)]
pub enum SentinelCmd {
    /// Score a stream window by window and dispatch fall alerts. Window and
    /// alert events are written to standard output as JSON lines.
    Run(RunArgs),
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `mic` reads signed 16-bit little-endian 16 kHz mono PCM from standard
    /// input; `file:PATH` replays a WAV file.
    #[arg(long)]
    input: String,
    /// Window length in seconds; defaults to the checkpoint's training clip length.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    stride: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Seconds after an alert during which further alerts are suppressed.
    #[arg(long, default_value_t = 30.0)]
    refractory: f64,
    /// HTTP endpoint receiving alert payloads by POST.
    #[arg(long, env = "FALLSENSE_ALERT_URL", hide_env_values = true)]
    alert_url: Option<String>,
    /// Program run per alert instead of an HTTP POST; arguments follow `--`.
    #[arg(long, conflicts_with = "alert_url")]
    alert_command: Option<String>,
    #[arg(last = true)]
    alert_args: Vec<String>,
    #[arg(long, env = "FALLSENSE_DEVICE_ID", default_value = "sentinel")]
    device_id: String,
}

pub fn run(cmd: SentinelCmd) -> Result<()> {
    let SentinelCmd::Run(args) = cmd;
    let model = load_checkpoint(&args.checkpoint)?;
    let window = match args.window {
        Some(w) => w,
        None => match model.cfg.target_len {
            Some(n) => n as f64 / SAMPLE_RATE as f64,
            None => bail!("checkpoint does not record its clip length; pass --window"),
        },
    };
    let endpoint = match (args.alert_url, args.alert_command) {
        (Some(url), _) => Endpoint::Http { url },
        (None, Some(program)) => Endpoint::Command {
            program,
            args: args.alert_args,
        },
        (None, None) => Endpoint::LogOnly,
    };
    let windows = WindowConfig {
        window_s: window,
        stride_s: args.stride,
    };
    let mut cfg = DaemonConfig::new(windows, endpoint);
    cfg.threshold = args.threshold;
    cfg.refractory_s = args.refractory;
    cfg.device_id = args.device_id;
    let source: Box<dyn AudioSource> = if args.input == "mic" {
        cfg.capture = CaptureMode::Live;
        Box::new(PcmSource::new(io::stdin()))
    } else if let Some(path) = args.input.strip_prefix("file:") {
        cfg.capture = CaptureMode::Replay;
        Box::new(SampleSource::from_wav(path.as_ref())?)
    } else {
        bail!("--input must be `mic` or `file:PATH`, got `{}`", args.input);
    };
    let mut stdout = io::stdout();
    let report = run_daemon(
        &model,
        source,
        &cfg,
        Some(&mut stdout as &mut (dyn Write + Send)),
    )?;
    log::info!(
        "{} windows, {} alerts, {} dropped chunks, {} underruns",
        report.windows.len(),
        report.alerts.len(),
        report.dropped_chunks,
        report.underruns
    );
    Ok(())
}
