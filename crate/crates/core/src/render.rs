//! Audio and table export: PCM WAV rendering of the readout signal, an STFT
//! for spectrogram views, and small CSV helpers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Peak level after normalisation, in dBFS (must be <= 0).
    pub normalize_dbfs: f64,
    /// 16 or 24 bits per sample.
    pub bit_depth: u16,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { normalize_dbfs: -1.0, bit_depth: 16 }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if self.bit_depth != 16 && self.bit_depth != 24 {
            return Err(Error::InvalidParameter(format!("bit depth {} unsupported (16 or 24)", self.bit_depth)));
        }
        if !(self.normalize_dbfs <= 0.0) || !self.normalize_dbfs.is_finite() {
            return Err(Error::InvalidParameter("normalisation peak must be <= 0 dBFS".into()));
        }
        Ok(())
    }
}

/// Write a mono PCM WAV file, peak-normalised to `normalize_dbfs`. A silent
/// input is written as-is with a warning. Returns the applied gain.
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: f64, opts: &RenderOptions) -> Result<f64> {
    opts.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no samples to render".into()));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::InvalidParameter("sample rate must be > 0".into()));
    }
    if !samples.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample in render input".into()));
    }
    let peak = samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let gain = if peak == 0.0 {
        log::warn!("rendering silent signal to {}", path.display());
        1.0
    } else {
        10.0f64.powf(opts.normalize_dbfs / 20.0) / peak
    };

    let bytes_per_sample = (opts.bit_depth / 8) as u32;
    let data_len = samples.len() as u32 * bytes_per_sample;
    let sr = sample_rate.round() as u32;
    let byte_rate = sr * bytes_per_sample;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sr.to_le_bytes())?;
    w.write_all(&byte_rate.to_le_bytes())?;
    w.write_all(&(bytes_per_sample as u16).to_le_bytes())?; // block align
    w.write_all(&opts.bit_depth.to_le_bytes())?;
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;

    let full_scale = match opts.bit_depth {
        16 => 32767.0,
        _ => 8_388_607.0,
    };
    for &s in samples {
        let v = (s * gain * full_scale).round().clamp(-full_scale - 1.0, full_scale) as i32;
        match opts.bit_depth {
            16 => w.write_all(&(v as i16).to_le_bytes())?,
            _ => w.write_all(&v.to_le_bytes()[..3])?,
        }
    }
    w.flush()?;
    Ok(gain)
}

/// Hann-windowed STFT magnitudes. Returns `floor((len - window) / hop) + 1`
/// frames of `window / 2 + 1` bins each.
pub fn stft_magnitudes(samples: &[f64], window: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if window < 2 || hop == 0 {
        return Err(Error::InvalidParameter("need window >= 2 and hop >= 1".into()));
    }
    if samples.len() < window {
        return Err(Error::InvalidParameter(format!(
            "signal of {} samples shorter than window {window}",
            samples.len()
        )));
    }
    let hann: Vec<f64> = (0..window)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / window as f64).cos()))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(window);
    let frames = (samples.len() - window) / hop + 1;
    let bins = window / 2 + 1;
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for fidx in 0..frames {
        let start = fidx * hop;
        for (b, (&s, &h)) in buf.iter_mut().zip(samples[start..start + window].iter().zip(&hann)) {
            *b = Complex::new(s * h, 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

/// Write a CSV file with a header row and one row per record.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch { expected: header.len(), got: row.len() });
        }
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Time/value CSV of a sampled signal.
pub fn write_signal_csv(path: &Path, samples: &[f64], sample_rate: f64) -> Result<()> {
    write_csv(
        path,
        &["time_s", "value"],
        samples.iter().enumerate().map(|(n, &v)| vec![n as f64 / sample_rate, v]),
    )
}

/// Frame-major STFT magnitude CSV: `time_s, bin_hz, magnitude`.
pub fn write_stft_csv(path: &Path, frames: &[Vec<f64>], sample_rate: f64, window: usize, hop: usize) -> Result<()> {
    let rows = frames.iter().enumerate().flat_map(|(f, bins)| {
        let t = (f * hop) as f64 / sample_rate;
        bins.iter().enumerate().map(move |(b, &mag)| {
            vec![t, b as f64 * sample_rate / window as f64, mag]
        }).collect::<Vec<_>>()
    });
    write_csv(path, &["time_s", "bin_hz", "magnitude"], rows)
}
