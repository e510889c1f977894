//! Waveform I/O and the spectrogram front-end.
//!
//! Features are log-power STFT frames (Hamming window, zero-padded FFT,
//! `ln(power + 1e-10)`), cropped or tiled to a fixed frame count and then
//! mean-normalized per frequency bin over the utterance.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;
const FEATURE_MAGIC: &[u8; 4] = b"SPEC";

/// Mono audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("waveform has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Rescales so that the largest absolute sample equals `target`.
    /// A silent waveform is returned unchanged.
    pub fn peak_normalized(mut self, target: f64) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            let gain = target / peak;
            self.samples.iter_mut().for_each(|s| *s *= gain);
        }
        self
    }
}

/// Row-major `frames x bins` log-power matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl Spectrogram {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::shape(
                "spectrogram",
                format!("{} values for {frames}x{bins}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(Spectrogram {
            frames,
            bins,
            values,
        })
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.bins];
        for f in 0..self.frames {
            for (m, v) in means.iter_mut().zip(self.row(f)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= self.frames as f64);
        means
    }
}

/// Framing parameters of the STFT front-end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub frame_shift: usize,
    pub n_fft: usize,
}

impl Default for StftConfig {
    /// 25 ms Hamming window, 10 ms shift, 512-point FFT at 16 kHz (257 bins).
    fn default() -> Self {
        StftConfig {
            frame_len: 400,
            frame_shift: 160,
            n_fft: 512,
        }
    }
}

impl StftConfig {
    /// 16 ms window with a 256-point FFT (129 bins), used by the reduced model.
    pub fn reduced() -> Self {
        StftConfig {
            frame_len: 256,
            frame_shift: 160,
            n_fft: 256,
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.frame_shift
        }
    }
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format {
            field: "sample_format",
            found: "float".into(),
            expected: "PCM integer",
        });
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::Format {
            field: "bits_per_sample",
            found: spec.bits_per_sample.to_string(),
            expected: "16",
        });
    }
    if spec.channels != 1 {
        return Err(Error::Format {
            field: "channels",
            found: spec.channels.to_string(),
            expected: "1 (mono)",
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Samples are clipped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in &wave.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Malformed {
            kind: "wav",
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Log-power short-time Fourier transform.
pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    if cfg.frame_len == 0 || cfg.frame_shift == 0 || cfg.n_fft < cfg.frame_len {
        return Err(Error::invalid(format!("bad STFT configuration {cfg:?}")));
    }
    let len = wave.len();
    if len < cfg.frame_len {
        return Err(Error::InputTooShort {
            len,
            needed: cfg.frame_len,
        });
    }
    let frames = cfg.frame_count(len);
    let bins = cfg.bins();
    let window = hamming(cfg.frame_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * cfg.frame_shift;
        let frame = &wave.samples[start..start + cfg.frame_len];
        for (slot, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(s * w, 0.0);
        }
        buf[cfg.frame_len..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..bins].iter().map(|c| (c.norm_sqr() + LOG_FLOOR).ln()));
    }
    Spectrogram::new(frames, bins, values)
}

/// Crops a random contiguous window (longer input) or tiles the frame
/// sequence end to end (shorter input) to exactly `target_frames` rows.
pub fn fix_length<R: Rng + ?Sized>(
    spec: &Spectrogram,
    target_frames: usize,
    rng: &mut R,
) -> Result<Spectrogram> {
    if spec.frames == 0 || target_frames == 0 {
        return Err(Error::invalid("fix_length needs at least one frame"));
    }
    let bins = spec.bins;
    let values = match spec.frames.cmp(&target_frames) {
        std::cmp::Ordering::Equal => spec.values.clone(),
        std::cmp::Ordering::Greater => {
            let offset = rng.gen_range(0..=spec.frames - target_frames);
            spec.values[offset * bins..(offset + target_frames) * bins].to_vec()
        }
        std::cmp::Ordering::Less => (0..target_frames)
            .flat_map(|f| spec.row(f % spec.frames).iter().copied())
            .collect(),
    };
    Ok(Spectrogram {
        frames: target_frames,
        bins,
        values,
    })
}

/// Subtracts each frequency bin's mean over all frames.
pub fn mean_normalize(spec: &Spectrogram) -> Spectrogram {
    let means = spec.column_means();
    let mut values = spec.values.clone();
    for row in values.chunks_mut(spec.bins) {
        for (v, m) in row.iter_mut().zip(&means) {
            *v -= m;
        }
    }
    Spectrogram {
        frames: spec.frames,
        bins: spec.bins,
        values,
    }
}

pub fn write_features(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut bytes = Vec::with_capacity(12 + 4 * spec.values.len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(spec.bins as u32).to_le_bytes());
    for v in &spec.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        kind: "feature",
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(malformed("missing SPEC header".into()));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    if payload.len() != 4 * frames * bins {
        return Err(malformed(format!(
            "payload is {} bytes, header says {frames}x{bins}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Spectrogram::new(frames, bins, values)
}
