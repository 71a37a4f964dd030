use std::process::Command;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const ALERT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlertStatus {
    Sent,
    Failed,
    Suppressed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    /// Seconds since the daemon started.
    pub monotonic_s: f64,
    pub wall_clock_unix_s: f64,
    /// Stream time covered by the scored window.
    pub window_span: (f64, f64),
    pub fall_probability: f64,
    pub device_id: String,
    pub dispatched_to: String,
    pub status: AlertStatus,
    pub attempts: usize,
}

impl AlertEvent {
    /// The versioned key-value body sent to endpoints.
    pub fn payload(&self) -> String {
        format!(
            "fallsense-alert/{ALERT_FORMAT_VERSION}\n\
             device_id={}\n\
             timestamp_unix_s={:.3}\n\
             monotonic_s={:.3}\n\
             window_start_s={:.3}\n\
             window_end_s={:.3}\n\
             fall_probability={:.6}\n",
            self.device_id,
            self.wall_clock_unix_s,
            self.monotonic_s,
            self.window_span.0,
            self.window_span.1,
            self.fall_probability
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Endpoint {
    /// POST the payload; any 2xx response counts as delivered.
    Http { url: String },
    /// Run a program. `{probability}`, `{start}`, `{end}`, `{device}` and
    /// `{timestamp}` in its arguments are substituted and the payload is
    /// written to its standard input; exit status 0 counts as delivered.
    Command { program: String, args: Vec<String> },
    /// Only write the event log.
    LogOnly,
}

impl Endpoint {
    /// Printable form without query strings or credentials.
    pub fn describe(&self) -> String {
        match self {
            Endpoint::Http { url } => {
                let no_query = url.split(['?', '#']).next().unwrap_or_default();
                match no_query.split_once("://") {
                    Some((scheme, rest)) => {
                        let host = rest.rsplit_once('@').map_or(rest, |(_, h)| h);
                        format!("{scheme}://{host}")
                    }
                    None => no_query.to_string(),
                }
            }
            Endpoint::Command { program, .. } => format!("command:{program}"),
            Endpoint::LogOnly => "log".into(),
        }
    }

    fn deliver_once(
        &self,
        event: &AlertEvent,
        timeout: Duration,
    ) -> std::result::Result<(), String> {
        match self {
            Endpoint::Http { url } => {
                let agent: ureq::Agent = ureq::Agent::config_builder()
                    .timeout_global(Some(timeout))
                    .build()
                    .into();
                agent
                    .post(url)
                    .header("Content-Type", "text/plain; charset=utf-8")
                    .send(event.payload())
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
            Endpoint::Command { program, args } => {
                use std::io::Write;
                let fill = |a: &String| {
                    a.replace("{probability}", &format!("{:.6}", event.fall_probability))
                        .replace("{start}", &format!("{:.3}", event.window_span.0))
                        .replace("{end}", &format!("{:.3}", event.window_span.1))
                        .replace("{device}", &event.device_id)
                        .replace("{timestamp}", &format!("{:.3}", event.wall_clock_unix_s))
                };
                let mut child = Command::new(program)
                    .args(args.iter().map(fill))
                    .stdin(std::process::Stdio::piped())
                    .spawn()
                    .map_err(|e| e.to_string())?;
                if let Some(mut stdin) = child.stdin.take() {
                    // A command that ignores its input may close the pipe early.
                    let _ = stdin.write_all(event.payload().as_bytes());
                }
                let status = child.wait().map_err(|e| e.to_string())?;
                if status.success() {
                    Ok(())
                } else {
                    Err(format!("{program} exited with {status}"))
                }
            }
            Endpoint::LogOnly => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(5),
        }
    }
}

/// Delivers `event`, doubling the pause between attempts. Returns the final
/// status and the number of attempts made; exhausting the attempts is
/// logged as a dispatch failure.
pub fn dispatch_alert(
    event: &AlertEvent,
    endpoint: &Endpoint,
    policy: &RetryPolicy,
) -> (AlertStatus, usize) {
    let mut backoff = policy.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=policy.attempts.max(1) {
        match endpoint.deliver_once(event, policy.timeout) {
            Ok(()) => return (AlertStatus::Sent, attempt),
            Err(e) => {
                log::warn!(
                    "alert attempt {attempt} to {} failed: {e}",
                    endpoint.describe()
                );
                last = e;
            }
        }
        if attempt < policy.attempts {
            thread::sleep(backoff);
            backoff *= 2;
        }
    }
    let err = Error::DispatchFailed {
        attempts: policy.attempts.max(1),
        reason: last,
    };
    log::error!("{err}");
    (AlertStatus::Failed, policy.attempts.max(1))
}

/// Refractory-period gate on stream time: an alert within `refractory_s`
/// of the last one let through is suppressed.
#[derive(Debug, Clone)]
pub struct Debouncer {
    refractory_s: f64,
    last: Option<f64>,
}

impl Debouncer {
    pub fn new(refractory_s: f64) -> Self {
        Self {
            refractory_s,
            last: None,
        }
    }

    /// True when an alert at time `t_s` may be dispatched.
    pub fn admit(&mut self, t_s: f64) -> bool {
        if self.last.is_some_and(|l| t_s - l < self.refractory_s) {
            return false;
        }
        self.last = Some(t_s);
        true
    }
}
