//! WAV decoding and log-mel filterbank (FBank) feature extraction.
//!
//! Front end fixed at 16 kHz mono PCM-16 input, 25 ms Hamming frames with a
//! 10 ms shift, 512-point FFT, 40 HTK-mel triangular filters, natural log
//! with a 1e-10 power floor. No dither, no CMVN, no resampling: identical
//! bytes always produce bit-identical features.

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use std::io::Write;

/// Decoded mono PCM audio.
#[derive(Debug, Clone)]
pub struct PcmAudio {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

/// Filterbank configuration. Defaults are the common keyword-spotting front
/// end; every field is overridable but tests pin the defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    /// Frame length in samples (400 = 25 ms at 16 kHz).
    pub frame_len: usize,
    /// Frame shift in samples (160 = 10 ms at 16 kHz).
    pub frame_shift: usize,
    /// FFT size; must be a power of two and >= frame_len.
    pub n_fft: usize,
    pub n_mels: usize,
    pub preemphasis: f32,
    pub mel_low_hz: f32,
    pub mel_high_hz: f32,
    pub log_floor: f32,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            frame_len: 400,
            frame_shift: 160,
            n_fft: 512,
            n_mels: 40,
            preemphasis: 0.97,
            mel_low_hz: 20.0,
            mel_high_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.frame_shift == 0 || self.frame_shift > self.frame_len {
            return Err(Error::InvalidConfig("frame_shift must be in [1, frame_len]".into()));
        }
        if self.frame_len > self.n_fft {
            return Err(Error::InvalidConfig("frame_len must not exceed n_fft".into()));
        }
        if !self.n_fft.is_power_of_two() {
            return Err(Error::InvalidConfig("n_fft must be a power of two".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be >= 1".into()));
        }
        if self.mel_low_hz >= self.mel_high_hz || self.mel_high_hz > sample_rate as f32 / 2.0 {
            return Err(Error::InvalidConfig("require mel_low < mel_high <= sample_rate/2".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// A sequence of log-mel frames, row-major (n_frames x n_mels).
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub values: Matrix<f32>,
}

impl FeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols()
    }
}

const REQUIRED_SAMPLE_RATE: u32 = 16_000;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or_else(|| Error::Format("short read in WAV header".into()))?;
    Ok(u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    let chunk = bytes.get(at..at + 2).ok_or_else(|| Error::Format("short read in WAV header".into()))?;
    Ok(u16::from_le_bytes([chunk[0], chunk[1]]))
}

/// Decode a RIFF/WAVE byte stream. Only PCM-16, mono, 16 kHz is accepted;
/// anything else is rejected rather than resampled.
pub fn decode_wav(bytes: &[u8]) -> Result<PcmAudio> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("bad magic: not a RIFF/WAVE stream".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (audio_format, channels, rate, bits)
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::Format(format!(
                "short read: chunk {:?} declares {} bytes past end of stream",
                String::from_utf8_lossy(id),
                size
            )));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("fmt chunk too small".into()));
                }
                fmt = Some((
                    read_u16(bytes, body_start)?,
                    read_u16(bytes, body_start + 2)?,
                    read_u32(bytes, body_start + 4)?,
                    read_u16(bytes, body_start + 14)?,
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_start + size + (size & 1);
    }
    let (audio_format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    if audio_format != 1 {
        return Err(Error::Format(format!("unsupported audio format {audio_format}, want PCM (1)")));
    }
    if channels != 1 {
        return Err(Error::Format(format!("unsupported channel count {channels}, want mono")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("unsupported bit depth {bits}, want 16")));
    }
    if rate != REQUIRED_SAMPLE_RATE {
        return Err(Error::Format(format!("unsupported sample rate {rate}, want {REQUIRED_SAMPLE_RATE}")));
    }
    let data = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::Format("short read: data chunk has a dangling byte".into()));
    }
    let samples = data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    Ok(PcmAudio { sample_rate: rate, samples })
}

/// Encode mono PCM-16 samples as a minimal WAV byte stream.
pub fn encode_wav(audio: &PcmAudio) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &audio.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// HTK mel scale.
fn hz_to_mel(hz: f32) -> f32 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f32) -> f32 {
    700.0 * (10.0f32.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT power bins: (n_mels x n_fft/2+1).
pub fn mel_filterbank(cfg: &FbankConfig, sample_rate: u32) -> Matrix<f32> {
    let n_bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.mel_low_hz);
    let mel_hi = hz_to_mel(cfg.mel_high_hz);
    // n_mels + 2 equally spaced mel points: left edge, centers, right edge.
    let points: Vec<f32> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f32 / (cfg.n_mels + 1) as f32))
        .collect();
    let mut bank = Matrix::zeros(cfg.n_mels, n_bins);
    let bin_hz = sample_rate as f32 / cfg.n_fft as f32;
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..n_bins {
            let f = k as f32 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if f >= center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            bank.set(m, k, w);
        }
    }
    bank
}

/// Center frequencies (Hz) of the mel filters for `cfg`.
pub fn mel_center_frequencies(cfg: &FbankConfig) -> Vec<f32> {
    let mel_lo = hz_to_mel(cfg.mel_low_hz);
    let mel_hi = hz_to_mel(cfg.mel_high_hz);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f32 / (cfg.n_mels + 1) as f32))
        .collect()
}

/// Iterative radix-2 FFT over interleaved complex data (re, im pairs).
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cur_re, mut cur_im) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (a, b) = (i + k, i + k + len / 2);
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Compute log-mel filterbank features.
///
/// Per frame: per-frame pre-emphasis, Hamming window, zero-padded FFT power
/// spectrum, mel filterbank, natural log with floor.
pub fn fbank(audio: &PcmAudio, cfg: &FbankConfig) -> Result<FeatureSequence> {
    cfg.validate(audio.sample_rate)?;
    if audio.samples.len() < cfg.frame_len {
        return Err(Error::InvalidInput(format!(
            "audio too short: {} samples, need at least {}",
            audio.samples.len(),
            cfg.frame_len
        )));
    }
    let n_frames = 1 + (audio.samples.len() - cfg.frame_len) / cfg.frame_shift;
    let bank = mel_filterbank(cfg, audio.sample_rate);
    let hamming: Vec<f64> = (0..cfg.frame_len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (cfg.frame_len - 1) as f64).cos())
        .collect();
    let n_bins = cfg.n_fft / 2 + 1;
    let mut out = Matrix::zeros(n_frames, cfg.n_mels);
    let mut re = vec![0.0f64; cfg.n_fft];
    let mut im = vec![0.0f64; cfg.n_fft];
    let mut power = vec![0.0f64; n_bins];
    for t in 0..n_frames {
        let start = t * cfg.frame_shift;
        let frame = &audio.samples[start..start + cfg.frame_len];
        re.iter_mut().for_each(|v| *v = 0.0);
        im.iter_mut().for_each(|v| *v = 0.0);
        // Pre-emphasis within the frame; the first sample is emphasized
        // against itself so every frame is self-contained.
        for i in 0..cfg.frame_len {
            let cur = frame[i] as f64 / 32768.0;
            let prev = frame[i.saturating_sub(1)] as f64 / 32768.0;
            re[i] = (cur - cfg.preemphasis as f64 * prev) * hamming[i];
        }
        fft_in_place(&mut re, &mut im);
        for k in 0..n_bins {
            power[k] = re[k] * re[k] + im[k] * im[k];
        }
        for m in 0..cfg.n_mels {
            let mut energy = 0.0f64;
            for (k, &p) in power.iter().enumerate() {
                let w = bank.get(m, k) as f64;
                if w != 0.0 {
                    energy += w * p;
                }
            }
            let floored = energy.max(cfg.log_floor as f64);
            out.set(t, m, floored.ln() as f32);
        }
    }
    Ok(FeatureSequence { values: out })
}

/// Write features as CSV: one frame per line, 6 decimal places.
pub fn write_feature_csv<W: Write>(w: &mut W, feats: &FeatureSequence) -> Result<()> {
    for t in 0..feats.n_frames() {
        let row: Vec<String> = feats.values.row(t).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parse a feature CSV produced by [`write_feature_csv`].
pub fn read_feature_csv(text: &str) -> Result<FeatureSequence> {
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::Format(format!("feature CSV line {}: bad float {tok:?}", ln + 1)))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "feature CSV line {}: expected {} columns, got {}",
                    ln + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("feature CSV is empty".into()));
    }
    let cols = rows[0].len();
    let data: Vec<f32> = rows.into_iter().flatten().collect();
    let n = data.len() / cols;
    Ok(FeatureSequence { values: Matrix::from_vec(n, cols, data)? })
}
