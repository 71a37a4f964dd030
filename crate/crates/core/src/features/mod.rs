//! Model input features: segmented raw audio, frame differences ("Diff"),
//! log mel spectrograms, and the mel + raw concatenation. Every matrix
//! carries a per-frame validity mask marking frames that touch real signal
//! rather than zero padding.

mod cache;
mod mel;

pub use cache::{read_cache, write_cache, CACHE_HEADER_LEN};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, MelExtractor, LOG_FLOOR};

use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    SegmentedRaw,
    Diff,
    LogMel,
    Combined,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::SegmentedRaw => 0,
            FeatureKind::Diff => 1,
            FeatureKind::LogMel => 2,
            FeatureKind::Combined => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => FeatureKind::SegmentedRaw,
            1 => FeatureKind::Diff,
            2 => FeatureKind::LogMel,
            3 => FeatureKind::Combined,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MelParams {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
}

impl Default for MelParams {
    fn default() -> Self {
        Self {
            n_fft: 2048,
            hop: 1600,
            n_mels: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub t_seg_ms: Option<u32>,
    pub mel: Option<MelParams>,
}

/// Frames x dims feature tensor, row-major, with a validity flag per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
    pub kind: FeatureKind,
    pub meta: FeatureMeta,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn valid_rows(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Row-major copy with masked frames set to zero.
    pub fn masked_flat(&self) -> Vec<f32> {
        let mut out = self.data.clone();
        for (i, &m) in self.mask.iter().enumerate() {
            if !m {
                out[i * self.cols..(i + 1) * self.cols]
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        out
    }
}

/// Splits the clip into consecutive `t_seg_ms` frames stacked as rows.
/// Trailing samples that do not fill a whole frame are dropped.
pub fn segment_raw(clip: &AudioClip, t_seg_ms: u32) -> Result<FeatureMatrix> {
    let d = t_seg_ms as usize * (SAMPLE_RATE as usize / 1000);
    if d == 0 {
        return Err(Error::InvalidArgument("t_seg must be at least 1 ms".into()));
    }
    let len = clip.samples.len();
    if d > len {
        return Err(Error::SegmentTooLong { segment: d, len });
    }
    let n = len / d;
    Ok(FeatureMatrix {
        data: clip.samples[..n * d].to_vec(),
        rows: n,
        cols: d,
        mask: (0..n).map(|i| i * d < clip.original_len).collect(),
        kind: FeatureKind::SegmentedRaw,
        meta: FeatureMeta {
            t_seg_ms: Some(t_seg_ms),
            mel: None,
        },
    })
}

/// Row-wise differences of consecutive segmented frames.
pub fn diff_features(seg: &FeatureMatrix) -> Result<FeatureMatrix> {
    if seg.kind != FeatureKind::SegmentedRaw {
        return Err(Error::InvalidArgument(format!(
            "diff needs segmented raw input, got {:?}",
            seg.kind
        )));
    }
    if seg.rows < 2 {
        return Err(Error::TooFewFrames(seg.rows));
    }
    let d = seg.cols;
    let data = seg.data[d..]
        .iter()
        .zip(&seg.data[..seg.data.len() - d])
        .map(|(next, prev)| next - prev)
        .collect();
    Ok(FeatureMatrix {
        data,
        rows: seg.rows - 1,
        cols: d,
        mask: seg.mask.windows(2).map(|w| w[0] && w[1]).collect(),
        kind: FeatureKind::Diff,
        meta: seg.meta,
    })
}

/// Log mel spectrogram with a Hann window and centered (reflect-padded) frames.
pub fn log_mel(clip: &AudioClip, n_fft: usize, hop: usize, n_mels: usize) -> Result<FeatureMatrix> {
    MelExtractor::new(MelParams { n_fft, hop, n_mels })?.extract(clip)
}

/// Concatenates log mel and segmented raw rows after truncating both to the
/// shorter frame count.
pub fn combine(logmel: &FeatureMatrix, seg: &FeatureMatrix) -> Result<FeatureMatrix> {
    if logmel.kind != FeatureKind::LogMel || seg.kind != FeatureKind::SegmentedRaw {
        return Err(Error::ClipMismatch(format!(
            "expected (log mel, segmented raw), got ({:?}, {:?})",
            logmel.kind, seg.kind
        )));
    }
    if logmel.rows.abs_diff(seg.rows) > 1 {
        return Err(Error::ClipMismatch(format!(
            "frame counts {} and {} differ by more than one",
            logmel.rows, seg.rows
        )));
    }
    let rows = logmel.rows.min(seg.rows);
    let cols = logmel.cols + seg.cols;
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        data.extend_from_slice(logmel.row(i));
        data.extend_from_slice(seg.row(i));
    }
    Ok(FeatureMatrix {
        data,
        rows,
        cols,
        mask: (0..rows).map(|i| logmel.mask[i] && seg.mask[i]).collect(),
        kind: FeatureKind::Combined,
        meta: FeatureMeta {
            t_seg_ms: seg.meta.t_seg_ms,
            mel: logmel.meta.mel,
        },
    })
}

/// Feature family plus its extraction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    Raw { t_seg_ms: u32 },
    Diff { t_seg_ms: u32 },
    LogMel(MelParams),
    Combined { t_seg_ms: u32, mel: MelParams },
}

impl FeatureSpec {
    pub fn raw() -> Self {
        FeatureSpec::Raw { t_seg_ms: 100 }
    }

    pub fn diff() -> Self {
        FeatureSpec::Diff { t_seg_ms: 100 }
    }

    pub fn log_mel() -> Self {
        FeatureSpec::LogMel(MelParams::default())
    }

    pub fn combined() -> Self {
        FeatureSpec::Combined {
            t_seg_ms: 100,
            mel: MelParams::default(),
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureSpec::Raw { .. } => FeatureKind::SegmentedRaw,
            FeatureSpec::Diff { .. } => FeatureKind::Diff,
            FeatureSpec::LogMel(_) => FeatureKind::LogMel,
            FeatureSpec::Combined { .. } => FeatureKind::Combined,
        }
    }

    /// Output shape for a clip padded to `len` samples.
    pub fn shape(&self, len: usize) -> (usize, usize) {
        let seg = |t: u32| {
            let d = t as usize * (SAMPLE_RATE as usize / 1000);
            (len / d, d)
        };
        let mel = |m: &MelParams| (1 + len / m.hop, m.n_mels);
        match self {
            FeatureSpec::Raw { t_seg_ms } => seg(*t_seg_ms),
            FeatureSpec::Diff { t_seg_ms } => {
                let (n, d) = seg(*t_seg_ms);
                (n.saturating_sub(1), d)
            }
            FeatureSpec::LogMel(m) => mel(m),
            FeatureSpec::Combined { t_seg_ms, mel: m } => {
                let (n, d) = seg(*t_seg_ms);
                let (t, k) = mel(m);
                (n.min(t), d + k)
            }
        }
    }

    pub fn extractor(&self) -> Result<Extractor> {
        let mel = match self {
            FeatureSpec::LogMel(m) | FeatureSpec::Combined { mel: m, .. } => {
                Some(MelExtractor::new(*m)?)
            }
            _ => None,
        };
        Ok(Extractor { spec: *self, mel })
    }
}

/// Reusable extractor for one [`FeatureSpec`]; holds the FFT plan and
/// filterbank so repeated calls do not rebuild them.
pub struct Extractor {
    spec: FeatureSpec,
    mel: Option<MelExtractor>,
}

impl Extractor {
    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMatrix> {
        match self.spec {
            FeatureSpec::Raw { t_seg_ms } => segment_raw(clip, t_seg_ms),
            FeatureSpec::Diff { t_seg_ms } => diff_features(&segment_raw(clip, t_seg_ms)?),
            FeatureSpec::LogMel(_) => self.mel.as_ref().expect("mel extractor").extract(clip),
            FeatureSpec::Combined { t_seg_ms, .. } => {
                let lm = self.mel.as_ref().expect("mel extractor").extract(clip)?;
                combine(&lm, &segment_raw(clip, t_seg_ms)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_io::pad_to_length;
    use proptest::prelude::*;

    fn padded(len: usize, signal: usize) -> AudioClip {
        let samples = (0..signal)
            .map(|i| ((i % 97) as f32 / 97.0) - 0.5)
            .collect();
        pad_to_length(AudioClip::new(samples, 2, "2/t").unwrap(), len).unwrap()
    }

    #[test]
    fn segment_shapes() {
        let clip = padded(139_760, 50_000);
        let seg = segment_raw(&clip, 100).unwrap();
        assert_eq!(seg.shape(), (87, 1600));
        assert_eq!(139_760 - 87 * 1600, 560);
        assert_eq!(segment_raw(&clip, 500).unwrap().shape(), (17, 8000));
        assert_eq!(seg.valid_rows(), 32); // ceil(50000 / 1600)
        assert!(matches!(
            segment_raw(&padded(1000, 10), 100),
            Err(Error::SegmentTooLong { .. })
        ));
    }

    #[test]
    fn all_padding_masks_everything() {
        let clip = padded(16_000, 0);
        assert!(segment_raw(&clip, 100).unwrap().mask.iter().all(|m| !m));
    }

    #[test]
    fn diff_examples() {
        let clip = padded(139_760, 139_760);
        for (t_seg, shape) in [
            (50, (173, 800)),
            (100, (86, 1600)),
            (300, (28, 4800)),
            (500, (16, 8000)),
        ] {
            assert_eq!(
                diff_features(&segment_raw(&clip, t_seg).unwrap())
                    .unwrap()
                    .shape(),
                shape
            );
        }

        let constant = AudioClip::new(vec![0.3; 3200 * 4], 5, "5/c").unwrap();
        let d = diff_features(&segment_raw(&constant, 200).unwrap()).unwrap();
        assert!(d.data.iter().all(|&v| v == 0.0));

        let one = segment_raw(&padded(1600, 1600), 100).unwrap();
        assert!(matches!(diff_features(&one), Err(Error::TooFewFrames(1))));
    }

    #[test]
    fn diff_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seg = FeatureMatrix {
            data: data.clone(),
            rows: 5,
            cols: 4,
            mask: vec![true, true, true, false, false],
            kind: FeatureKind::SegmentedRaw,
            meta: FeatureMeta::default(),
        };
        let d = diff_features(&seg).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d.data[i * 4 + j], data[(i + 1) * 4 + j] - data[i * 4 + j]);
            }
        }
        assert_eq!(d.mask, vec![true, true, false, false]);
    }

    #[test]
    fn combine_examples() {
        let clip = padded(139_760, 70_000);
        let lm = log_mel(&clip, 2048, 1600, 64).unwrap();
        let seg = segment_raw(&clip, 100).unwrap();
        let c = combine(&lm, &seg).unwrap();
        assert_eq!(c.shape(), (87, 1664));
        let mut row0 = lm.row(0).to_vec();
        row0.extend_from_slice(seg.row(0));
        assert_eq!(c.row(0), &row0[..]);
        assert!(matches!(combine(&seg, &lm), Err(Error::ClipMismatch(_))));

        let empty = padded(139_760, 0);
        let c = combine(
            &log_mel(&empty, 2048, 1600, 64).unwrap(),
            &segment_raw(&empty, 100).unwrap(),
        )
        .unwrap();
        assert!(c.mask.iter().all(|m| !m));
    }

    #[test]
    fn spec_shapes_agree_with_extraction() {
        let clip = padded(139_760, 90_000);
        for spec in [
            FeatureSpec::raw(),
            FeatureSpec::diff(),
            FeatureSpec::log_mel(),
            FeatureSpec::combined(),
            FeatureSpec::Diff { t_seg_ms: 50 },
            FeatureSpec::LogMel(MelParams {
                n_fft: 2048,
                hop: 500,
                n_mels: 64,
            }),
        ] {
            let fm = spec.extractor().unwrap().extract(&clip).unwrap();
            assert_eq!(fm.shape(), spec.shape(139_760), "{spec:?}");
            assert_eq!(fm.kind, spec.kind());
        }
    }

    proptest! {
        #[test]
        fn shape_law_and_suffix_masks(len in 3200usize..40_000, frac in 0.0f64..1.0, t_seg in prop::sample::select(vec![50u32, 100, 200])) {
            let clip = padded(len, (len as f64 * frac) as usize);
            let seg = segment_raw(&clip, t_seg).unwrap();
            prop_assume!(seg.rows >= 2);
            let diff = diff_features(&seg).unwrap();
            prop_assert_eq!(diff.rows, seg.rows - 1);
            prop_assert_eq!(diff.cols, seg.cols);
            for m in [&seg.mask, &diff.mask] {
                let first_false = m.iter().position(|v| !v).unwrap_or(m.len());
                prop_assert!(m[first_false..].iter().all(|v| !v));
            }
        }
    }
}
