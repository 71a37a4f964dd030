//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

/// Kernel length in input samples.
const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;

/// Polyphase resampler for a fixed `from_hz -> to_hz` conversion.
///
/// Output sample `n` sits at input position `n * down / up`; its `up`
/// possible fractional offsets each get a precomputed 64-tap filter.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    phases: Vec<[f32; TAPS]>,
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        assert!(from_hz > 0 && to_hz > 0, "sample rates must be positive");
        let g = gcd(from_hz as usize, to_hz as usize);
        let up = to_hz as usize / g;
        let down = from_hz as usize / g;
        // Cutoff relative to the input Nyquist; lowered when decimating.
        let cutoff = (up as f64 / down as f64).min(1.0);
        let half = (TAPS / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                let mut taps = [0.0f64; TAPS];
                for (j, tap) in taps.iter_mut().enumerate() {
                    // distance from the output instant to input sample (base - 31 + j)
                    let t = j as f64 - (half - 1.0) - frac;
                    let r = t / half;
                    let w = if r.abs() >= 1.0 {
                        0.0
                    } else {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                    };
                    *tap = cutoff * sinc(cutoff * t) * w;
                }
                let sum: f64 = taps.iter().sum();
                let mut out = [0.0f32; TAPS];
                for (o, t) in out.iter_mut().zip(taps.iter()) {
                    *o = (t / sum) as f32;
                }
                out
            })
            .collect();
        Self { up, down, phases }
    }

    pub fn is_identity(&self) -> bool {
        self.up == self.down
    }

    /// Number of output samples produced for `input_len` input samples.
    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.is_identity() {
            return input.to_vec();
        }
        let out_len = self.output_len(input.len());
        let n_in = input.len() as isize;
        let mut out = Vec::with_capacity(out_len);
        for n in 0..out_len {
            let pos = n * self.down;
            let base = (pos / self.up) as isize;
            let taps = &self.phases[pos % self.up];
            let start = base - (TAPS as isize / 2 - 1);
            let mut acc = 0.0f32;
            if start >= 0 && start + TAPS as isize <= n_in {
                let window = &input[start as usize..start as usize + TAPS];
                for (x, h) in window.iter().zip(taps.iter()) {
                    acc += x * h;
                }
            } else {
                for (j, h) in taps.iter().enumerate() {
                    let idx = start + j as isize;
                    if (0..n_in).contains(&idx) {
                        acc += input[idx as usize] * h;
                    }
                }
            }
            out.push(acc);
        }
        out
    }
}

/// One-shot convenience wrapper around [`Resampler`].
pub fn resample(input: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    Resampler::new(from_hz, to_hz).process(input)
}
