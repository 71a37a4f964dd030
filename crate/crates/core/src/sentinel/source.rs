use std::io::{ErrorKind, Read};
use std::path::Path;

use crate::audio_io::read_wav_mono;
use crate::error::Result;

/// A mono 16 kHz sample stream.
pub trait AudioSource: Send {
    /// Fills a prefix of `buf` and returns its length; 0 means end of stream.
    fn read(&mut self, buf: &mut [f32]) -> Result<usize>;
}

/// Replays samples held in memory.
pub struct SampleSource {
    samples: Vec<f32>,
    pos: usize,
}

impl SampleSource {
    pub fn new(samples: Vec<f32>) -> Self {
        Self { samples, pos: 0 }
    }

    /// Decodes (and resamples) a WAV file the same way corpus clips are read.
    pub fn from_wav(path: &Path) -> Result<Self> {
        Ok(Self::new(read_wav_mono(path)?))
    }
}

impl AudioSource for SampleSource {
    fn read(&mut self, buf: &mut [f32]) -> Result<usize> {
        let n = buf.len().min(self.samples.len() - self.pos);
        buf[..n].copy_from_slice(&self.samples[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Raw signed 16-bit little-endian mono PCM at 16 kHz, such as a capture
/// tool writing to a pipe.
pub struct PcmSource<R> {
    reader: R,
    bytes: Vec<u8>,
}

impl<R: Read + Send> PcmSource<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            bytes: Vec::new(),
        }
    }
}

impl<R: Read + Send> AudioSource for PcmSource<R> {
    fn read(&mut self, buf: &mut [f32]) -> Result<usize> {
        self.bytes.resize(buf.len() * 2, 0);
        let mut filled = 0;
        // A read may end mid-sample; keep going until whole samples arrive.
        while filled == 0 || filled % 2 == 1 {
            match self.reader.read(&mut self.bytes[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let n = filled / 2;
        for (out, pair) in buf.iter_mut().zip(self.bytes[..n * 2].chunks_exact(2)) {
            *out = i16::from_le_bytes([pair[0], pair[1]]) as f32 / 32768.0;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hands out at most three bytes per read.
    struct Trickle(Vec<u8>, usize);

    impl Read for Trickle {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            let n = buf.len().min(3).min(self.0.len() - self.1);
            buf[..n].copy_from_slice(&self.0[self.1..self.1 + n]);
            self.1 += n;
            Ok(n)
        }
    }

    #[test]
    fn pcm_reassembles_split_samples() {
        let values: [i16; 5] = [0, 16384, -32768, 32767, -1];
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut src = PcmSource::new(Trickle(bytes, 0));
        let mut got = Vec::new();
        let mut buf = [0f32; 4];
        loop {
            let n = src.read(&mut buf).unwrap();
            if n == 0 {
                break;
            }
            got.extend_from_slice(&buf[..n]);
        }
        assert_eq!(got, [0.0, 0.5, -1.0, 32767.0 / 32768.0, -1.0 / 32768.0]);
    }

    #[test]
    fn sample_source_drains_then_ends() {
        let mut src = SampleSource::new(vec![1.0; 10]);
        let mut buf = [0f32; 4];
        let reads: Vec<usize> = (0..4).map(|_| src.read(&mut buf).unwrap()).collect();
        assert_eq!(reads, [4, 4, 2, 0]);
    }
}
