use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use super::{FeatureKind, FeatureMatrix, FeatureMeta, MelParams};
use crate::audio_io::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Floor applied to mel power before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peaks, spaced evenly on the mel scale
/// between `f_min` and `f_max`. Returns `n_mels` rows of `n_fft / 2 + 1` weights.
pub fn mel_filterbank(
    n_fft: usize,
    n_mels: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / n_fft as f64;
                    let up = (f - left) / (centre - left);
                    let down = (right - f) / (right - centre);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn reflect(j: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let r = j.rem_euclid(period);
    if r < len as isize {
        r as usize
    } else {
        (period - r) as usize
    }
}

/// Short-time log mel analysis with a cached FFT plan and filterbank.
pub struct MelExtractor {
    params: MelParams,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    // sparse rows: first nonzero bin and the weights from there on
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelExtractor {
    pub fn new(params: MelParams) -> Result<Self> {
        let MelParams { n_fft, hop, n_mels } = params;
        if !n_fft.is_power_of_two() || n_fft > 65_536 || n_fft < 2 {
            return Err(Error::InvalidFftSize(n_fft));
        }
        if hop == 0 || n_mels == 0 {
            return Err(Error::InvalidArgument(format!(
                "hop {hop} and n_mels {n_mels} must be positive"
            )));
        }
        let sr = SAMPLE_RATE as f64;
        let filters = mel_filterbank(n_fft, n_mels, sr, 0.0, sr / 2.0)
            .into_iter()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(row.len());
                let last = row.iter().rposition(|&w| w > 0.0).map_or(first, |l| l + 1);
                (first, row[first..last].to_vec())
            })
            .collect();
        Ok(Self {
            params,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            window: (0..n_fft)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n_fft as f64).cos())
                .collect(),
            filters,
        })
    }

    pub fn params(&self) -> MelParams {
        self.params
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        let MelParams { n_fft, hop, n_mels } = self.params;
        let x = &clip.samples;
        if x.is_empty() {
            return Err(Error::TooFewFrames(0));
        }
        let half = (n_fft / 2) as isize;
        let frames = 1 + x.len() / hop;
        let mut data = Vec::with_capacity(frames * n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0f64; n_fft / 2 + 1];
        for t in 0..frames {
            let start = (t * hop) as isize - half;
            for (i, b) in buf.iter_mut().enumerate() {
                let j = start + i as isize;
                let v = if (0..x.len() as isize).contains(&j) {
                    x[j as usize]
                } else {
                    x[reflect(j, x.len())]
                };
                *b = Complex::new(v as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (first, w) in &self.filters {
                let e: f64 = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
                data.push(e.max(LOG_FLOOR).ln() as f32);
            }
        }
        let signal = clip.original_len.min(x.len()) as isize;
        let mask = (0..frames)
            .map(|t| signal > 0 && (t * hop) as isize - half < signal)
            .collect();
        Ok(FeatureMatrix {
            data,
            rows: frames,
            cols: n_mels,
            mask,
            kind: FeatureKind::LogMel,
            meta: FeatureMeta {
                t_seg_ms: None,
                mel: Some(self.params),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::pad_to_length;
    use crate::features::log_mel;
    use proptest::prelude::*;

    fn tone(freq: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / 16_000.0).sin()) as f32)
            .collect()
    }

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, 2, "2/x").unwrap()
    }

    #[test]
    fn frame_counts() {
        let c = pad_to_length(clip(tone(440.0, 20_000)), 139_760).unwrap();
        assert_eq!(log_mel(&c, 2048, 1600, 64).unwrap().shape(), (88, 64));
        assert_eq!(log_mel(&c, 2048, 500, 64).unwrap().shape(), (280, 64));
        assert_eq!(log_mel(&c, 2048, 1000, 64).unwrap().shape(), (140, 64));
        assert!(matches!(
            log_mel(&c, 1000, 500, 64),
            Err(Error::InvalidFftSize(1000))
        ));
        assert!(matches!(
            log_mel(&c, 131_072, 500, 64),
            Err(Error::InvalidFftSize(_))
        ));
    }

    #[test]
    fn silence_hits_the_floor() {
        let c = clip(vec![0.0; 16_000]);
        let m = log_mel(&c, 2048, 1600, 64).unwrap();
        let floor = LOG_FLOOR.ln() as f32;
        assert!(m.data.iter().all(|&v| v == floor));
    }

    #[test]
    fn mask_follows_window_overlap() {
        let c = pad_to_length(clip(tone(440.0, 16_000)), 139_760).unwrap();
        let m = log_mel(&c, 2048, 1600, 64).unwrap();
        // frame t is valid while t*1600 - 1024 < 16000
        assert_eq!(m.valid_rows(), 11);
        let empty = pad_to_length(clip(Vec::new()), 139_760).unwrap();
        assert!(log_mel(&empty, 2048, 1600, 64)
            .unwrap()
            .mask
            .iter()
            .all(|m| !m));
    }

    #[test]
    fn filterbank_is_nonnegative_unimodal_and_covering() {
        for (n_fft, n_mels) in [(2048, 64), (1024, 40), (4096, 128)] {
            let fb = mel_filterbank(n_fft, n_mels, 16_000.0, 0.0, 8000.0);
            for row in &fb {
                assert!(row.iter().all(|&w| w >= 0.0));
                let peak = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
                assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
            }
            for k in 1..n_fft / 2 {
                assert!(
                    fb.iter().map(|r| r[k]).sum::<f64>() > 0.0,
                    "bin {k} uncovered"
                );
            }
        }
    }

    #[test]
    fn reflect_matches_numpy_convention() {
        // numpy.pad([0,1,2,3], 3, 'reflect') == [3,2,1,0,1,2,3,2,1,0]
        let idx: Vec<usize> = (-3..7).map(|j| reflect(j, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    proptest! {
        #[test]
        fn tone_lands_in_its_mel_band(freq in 200.0f64..7000.0) {
            let m = log_mel(&clip(tone(freq, 16_000)), 2048, 1600, 64).unwrap();
            let row = m.row(5);
            let best = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(8000.0));
            let centre = |b: usize| mel_to_hz(lo + (hi - lo) * (b + 1) as f64 / 65.0);
            // the nearest centre is within one band of the argmax
            let nearest = (0..64).min_by(|&a, &b| (centre(a) - freq).abs().total_cmp(&(centre(b) - freq).abs())).unwrap();
            prop_assert!(best.abs_diff(nearest) <= 1, "{} Hz: best {} nearest {}", freq, best, nearest);
        }

        #[test]
        fn extra_padding_changes_only_masked_frames(signal in 4000usize..20_000, extra in 1usize..20_000) {
            let base_len = signal + 2048;
            let a = pad_to_length(clip(tone(523.0, signal)), base_len).unwrap();
            let b = pad_to_length(clip(tone(523.0, signal)), base_len + extra).unwrap();
            let ma = log_mel(&a, 2048, 500, 64).unwrap();
            let mb = log_mel(&b, 2048, 500, 64).unwrap();
            for t in 0..ma.rows {
                prop_assert_eq!(ma.mask[t], mb.mask[t]);
                if ma.mask[t] {
                    prop_assert_eq!(ma.row(t), mb.row(t));
                }
            }
        }
    }
}
