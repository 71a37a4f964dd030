use std::io::{Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{label_for_category, resample, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::Unsupported => Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            reason: "unsupported WAV format".into(),
        },
        hound::Error::IoError(e)
            if matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ) =>
        {
            Error::Io(e)
        }
        other => Error::MalformedWav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn decode_reader<R: Read>(path: &Path, reader: WavReader<R>) -> Result<Vec<f32>> {
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            reason: "floating-point samples (integer PCM required)".into(),
        });
    }
    if !matches!(spec.bits_per_sample, 8 | 16 | 24 | 32) {
        return Err(Error::UnsupportedEncoding {
            path: path.to_path_buf(),
            reason: format!("{}-bit samples", spec.bits_per_sample),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
    let expected = reader.duration() as usize;

    let mut mono = Vec::with_capacity(expected);
    let mut acc = 0.0f64;
    let mut seen = 0usize;
    for sample in reader.into_samples::<i32>() {
        let s = sample.map_err(|e| map_hound(path, e))?;
        acc += s as f64 * scale;
        seen += 1;
        if seen == channels {
            mono.push((acc / channels as f64).clamp(-1.0, 1.0) as f32);
            acc = 0.0;
            seen = 0;
        }
    }
    if seen != 0 || mono.len() != expected {
        return Err(Error::MalformedWav {
            path: path.to_path_buf(),
            reason: format!("truncated data: {} of {expected} frames", mono.len()),
        });
    }
    if spec.sample_rate == SAMPLE_RATE {
        Ok(mono)
    } else {
        Ok(resample(&mono, spec.sample_rate, SAMPLE_RATE))
    }
}

/// Decodes a PCM WAV file to mono 16 kHz samples in [-1, 1].
pub fn read_wav_mono(path: &Path) -> Result<Vec<f32>> {
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    decode_reader(path, reader)
}

/// Decodes an in-memory WAV image.
pub fn decode_wav_bytes<R: Read + Seek>(source: R) -> Result<Vec<f32>> {
    let path = Path::new("<memory>");
    let reader = WavReader::new(source).map_err(|e| map_hound(path, e))?;
    decode_reader(path, reader)
}

/// Decodes a corpus file laid out as `<corpus>/<category_id>/<name>.wav`.
///
/// The category comes from the parent directory name and the augmentation
/// lineage from a `<source>__<tag>` file stem.
pub fn decode_wav(path: &Path) -> Result<AudioClip> {
    let category_id = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse::<u8>().ok())
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} is not inside a numeric category directory",
                path.display()
            ))
        })?;
    let label = label_for_category(category_id)?;
    let samples = read_wav_mono(path)?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let (source, tag) = match stem.split_once("__") {
        Some((s, t)) => (s, Some(t.to_string())),
        None => (stem, None),
    };
    Ok(AudioClip {
        original_len: samples.len(),
        samples,
        sample_rate_hz: SAMPLE_RATE,
        category_id,
        label,
        source_id: format!("{category_id}/{source}"),
        augment_tag: tag,
    })
}

fn to_i16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes 16 kHz mono samples as a 16-bit PCM WAV image.
pub fn encode_wav(samples: &[f32]) -> Vec<u8> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::with_capacity(44 + samples.len() * 2));
    {
        let mut writer = WavWriter::new(&mut cursor, spec).expect("in-memory WAV writer");
        let mut w16 = writer.get_i16_writer(samples.len() as u32);
        for &s in samples {
            w16.write_sample(to_i16(s));
        }
        w16.flush().expect("in-memory WAV flush");
        writer.finalize().expect("in-memory WAV finalize");
    }
    cursor.into_inner()
}

pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    std::fs::write(path, encode_wav(samples))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn wav_image(spec: WavSpec, frames: &[i32]) -> Vec<u8> {
        let mut cursor = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut cursor, spec).unwrap();
        for &f in frames {
            w.write_sample(f).unwrap();
        }
        w.finalize().unwrap();
        cursor.into_inner()
    }

    fn spec(channels: u16, rate: u32, bits: u16) -> WavSpec {
        WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: bits,
            sample_format: SampleFormat::Int,
        }
    }

    #[test]
    fn silence_16k() {
        let img = wav_image(spec(1, 16_000, 16), &vec![0; 16_000]);
        let out = decode_wav_bytes(Cursor::new(img)).unwrap();
        assert_eq!(out.len(), 16_000);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn eight_khz_is_upsampled() {
        let img = wav_image(spec(1, 8000, 16), &vec![0; 8000]);
        assert_eq!(decode_wav_bytes(Cursor::new(img)).unwrap().len(), 16_000);
    }

    #[test]
    fn stereo_is_channel_mean() {
        let frames: Vec<i32> = (0..100).flat_map(|_| [16_384, -8192]).collect();
        let img = wav_image(spec(2, 16_000, 16), &frames);
        let out = decode_wav_bytes(Cursor::new(img)).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|&x| (x - 0.125).abs() < 1e-6));
    }

    #[test]
    fn bit_depths_scale_to_unit_range() {
        for (bits, full) in [(8u16, 127), (16, 32_767), (24, 8_388_607)] {
            let img = wav_image(spec(1, 16_000, bits), &[full, -full - 1, 0]);
            let out = decode_wav_bytes(Cursor::new(img)).unwrap();
            assert!((out[0] - 1.0).abs() < 0.01, "{bits}-bit max {}", out[0]);
            assert_eq!(out[1], -1.0);
            assert_eq!(out[2], 0.0);
        }
    }

    #[test]
    fn float_wav_is_unsupported() {
        let s = WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut cursor = Cursor::new(Vec::new());
        let mut w = WavWriter::new(&mut cursor, s).unwrap();
        w.write_sample(0.5f32).unwrap();
        w.finalize().unwrap();
        let err = decode_wav_bytes(Cursor::new(cursor.into_inner())).unwrap_err();
        assert!(matches!(err, Error::UnsupportedEncoding { .. }), "{err}");
    }

    #[test]
    fn garbage_and_truncation_are_malformed() {
        let err =
            decode_wav_bytes(Cursor::new(b"RIFF\x10\x00\x00\x00WAVEjunk".to_vec())).unwrap_err();
        assert!(matches!(err, Error::MalformedWav { .. }), "{err}");

        let mut img = wav_image(spec(1, 16_000, 16), &vec![1000; 400]);
        img.truncate(img.len() - 101);
        let err = decode_wav_bytes(Cursor::new(img)).unwrap_err();
        assert!(matches!(err, Error::MalformedWav { .. }), "{err}");
    }

    #[test]
    fn corpus_path_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let cat = dir.path().join("6");
        std::fs::create_dir(&cat).unwrap();
        let path = cat.join("clip_003__gain-7.wav");
        write_wav(&path, &[0.1, -0.1]).unwrap();
        let clip = decode_wav(&path).unwrap();
        assert_eq!(clip.category_id, 6);
        assert_eq!(clip.label, super::super::Label::Fall);
        assert_eq!(clip.source_id, "6/clip_003");
        assert_eq!(clip.augment_tag.as_deref(), Some("gain-7"));
    }

    proptest! {
        #[test]
        fn round_trip_within_one_lsb(samples in proptest::collection::vec(-1.0f32..=1.0, 1..512)) {
            let out = decode_wav_bytes(Cursor::new(encode_wav(&samples))).unwrap();
            prop_assert_eq!(out.len(), samples.len());
            for (a, b) in samples.iter().zip(out.iter()) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0 + 1e-7);
            }
        }
    }
}
