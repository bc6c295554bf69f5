//! Short-time spectral analysis/synthesis and long-term second-order statistics.
//!
//! All per-bin math in this crate operates on the one-sided spectrum,
//! bins `0..=frame_len/2`; real-signal conjugate symmetry is implied and
//! restored on synthesis.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis/synthesis tapering function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    /// Window coefficients of the given length (periodic definition).
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
                .collect(),
            Window::Rect => vec![1.0; len],
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "rect" => Ok(Window::Rect),
            other => Err(Error::InvalidFrameParams(format!(
                "unknown window '{other}' (expected 'hann' or 'rect')"
            ))),
        }
    }
}

/// Framing parameters for short-time analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl FrameParams {
    /// 512-sample (32 ms) Hann frames with 50% overlap at 16 kHz.
    pub fn default_16k() -> Self {
        FrameParams {
            sample_rate: 16_000,
            frame_len: 512,
            hop: 256,
            window: Window::Hann,
        }
    }

    pub fn new(sample_rate: u32, frame_len: usize, hop: usize, window: Window) -> Result<Self> {
        let p = FrameParams {
            sample_rate,
            frame_len,
            hop,
            window,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidFrameParams(
                "sample_rate must be positive".into(),
            ));
        }
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return Err(Error::InvalidFrameParams(format!(
                "frame_len {} must be even and >= 2",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.frame_len % self.hop != 0 {
            return Err(Error::InvalidFrameParams(format!(
                "hop {} must divide frame_len {}",
                self.hop, self.frame_len
            )));
        }
        if self.frame_len < 2 * self.hop {
            return Err(Error::InvalidFrameParams(format!(
                "frame_len {} must be >= 2*hop = {}",
                self.frame_len,
                2 * self.hop
            )));
        }
        // Overlap-add invertibility: the squared-window sum over interior
        // samples must stay bounded away from zero for the chosen hop.
        let q = wola_period_norm(self.window, self.frame_len, self.hop);
        let q_min = q.iter().cloned().fold(f64::INFINITY, f64::min);
        if q_min < 1e-6 {
            return Err(Error::InvalidFrameParams(format!(
                "window/hop combination is not invertible (min overlap weight {q_min:.3e})"
            )));
        }
        Ok(())
    }

    /// Number of one-sided spectrum bins.
    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_hz(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len as f64
    }

    /// Frames needed so every sample is covered (tail zero-padded).
    pub fn frame_count(&self, signal_len: usize) -> usize {
        if signal_len <= self.frame_len {
            1
        } else {
            (signal_len - self.frame_len + self.hop - 1) / self.hop + 1
        }
    }

    /// Frames fully inside the signal (no padded samples).
    pub fn interior_frame_count(&self, signal_len: usize) -> usize {
        if signal_len < self.frame_len {
            0
        } else {
            (signal_len - self.frame_len) / self.hop + 1
        }
    }
}

/// Squared-window overlap sum over one hop period (interior samples).
fn wola_period_norm(window: Window, frame_len: usize, hop: usize) -> Vec<f64> {
    let w = window.coefficients(frame_len);
    let shifts = frame_len / hop;
    (0..hop)
        .map(|p| (0..shifts).map(|j| w[p + j * hop] * w[p + j * hop]).sum())
        .collect()
}

/// Complex time-frequency coefficients indexed `[channel][frame][bin]`.
#[derive(Debug, Clone)]
pub struct StftTensor {
    params: FrameParams,
    channels: usize,
    frames: usize,
    interior_frames: usize,
    signal_len: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl StftTensor {
    pub fn zeros(params: FrameParams, channels: usize, frames: usize, signal_len: usize) -> Self {
        let bins = params.bins();
        StftTensor {
            params,
            channels,
            frames,
            interior_frames: params.interior_frame_count(signal_len).min(frames),
            signal_len,
            bins,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    /// Frames free of tail zero-padding; long-term statistics average over these.
    pub fn interior_frames(&self) -> usize {
        self.interior_frames
    }
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    fn index(&self, channel: usize, frame: usize, bin: usize) -> usize {
        (channel * self.frames + frame) * self.bins + bin
    }

    pub fn coeff(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.data[self.index(channel, frame, bin)]
    }

    pub fn frame(&self, channel: usize, frame: usize) -> &[Complex64] {
        let i = self.index(channel, frame, 0);
        &self.data[i..i + self.bins]
    }

    pub fn frame_mut(&mut self, channel: usize, frame: usize) -> &mut [Complex64] {
        let i = self.index(channel, frame, 0);
        &mut self.data[i..i + self.bins]
    }

    /// Copy of a single channel as a one-channel tensor.
    pub fn select_channel(&self, channel: usize) -> Result<StftTensor> {
        self.check_channel(channel)?;
        let mut out = StftTensor::zeros(self.params, 1, self.frames, self.signal_len);
        for i in 0..self.frames {
            out.frame_mut(0, i).copy_from_slice(self.frame(channel, i));
        }
        Ok(out)
    }

    /// New tensor with every coefficient multiplied by a per-bin complex factor.
    pub fn scale_bins(&self, factor: &[Complex64]) -> Result<StftTensor> {
        if factor.len() != self.bins {
            return Err(Error::LengthMismatch(format!(
                "per-bin factor has {} entries, tensor has {} bins",
                factor.len(),
                self.bins
            )));
        }
        let mut out = self.clone();
        for ch in 0..self.channels {
            for fr in 0..self.frames {
                let frame = out.frame_mut(ch, fr);
                for (k, c) in frame.iter_mut().enumerate() {
                    *c *= factor[k];
                }
            }
        }
        Ok(out)
    }

    /// Same as [`scale_bins`](Self::scale_bins) for real per-bin gains.
    pub fn scale_bins_real(&self, factor: &[f64]) -> Result<StftTensor> {
        let complex: Vec<Complex64> = factor.iter().map(|&g| Complex64::new(g, 0.0)).collect();
        self.scale_bins(&complex)
    }

    /// Element-wise sum of two tensors with identical shape.
    pub fn add(&self, other: &StftTensor) -> Result<StftTensor> {
        if self.channels != other.channels || self.frames != other.frames || self.bins != other.bins
        {
            return Err(Error::LengthMismatch(
                "tensor shapes differ in add".to_string(),
            ));
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(out)
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.channels {
            return Err(Error::ChannelOutOfRange {
                index: channel,
                channels: self.channels,
            });
        }
        Ok(())
    }

    /// Frame range used for long-term statistics: interior frames when any
    /// exist (steady-state only), otherwise all frames.
    fn stat_frames(&self) -> usize {
        if self.interior_frames > 0 {
            self.interior_frames
        } else {
            self.frames
        }
    }
}

/// Short-time Fourier transform of a multichannel signal.
///
/// The tail is zero-padded so every sample is covered by an integral number
/// of frames; no leading padding is applied.
pub fn analyze(channels: &[Vec<f64>], params: &FrameParams) -> Result<StftTensor> {
    params.validate()?;
    if channels.is_empty() || channels[0].is_empty() {
        return Err(Error::EmptySignal);
    }
    let len = channels[0].len();
    for (i, ch) in channels.iter().enumerate() {
        if ch.len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel: i,
                got: ch.len(),
                expected: len,
            });
        }
    }

    let n = params.frame_len;
    let frames = params.frame_count(len);
    let window = params.window.coefficients(n);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    let mut tensor = StftTensor::zeros(*params, channels.len(), frames, len);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (ch, samples) in channels.iter().enumerate() {
        for fr in 0..frames {
            let start = fr * params.hop;
            for (j, b) in buf.iter_mut().enumerate() {
                let x = samples.get(start + j).copied().unwrap_or(0.0);
                *b = Complex64::new(x * window[j], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            tensor.frame_mut(ch, fr).copy_from_slice(&buf[..n / 2 + 1]);
        }
    }
    Ok(tensor)
}

/// Convenience wrapper for a mono signal.
pub fn analyze_mono(signal: &[f64], params: &FrameParams) -> Result<StftTensor> {
    analyze(std::slice::from_ref(&signal.to_vec()), params)
}

/// Weighted overlap-add synthesis, inverse of [`analyze`].
///
/// The analysis window is reused for synthesis and the output is divided by
/// the accumulated squared-window sequence; samples whose accumulated weight
/// is negligible (the very first taper-in) are emitted as zero. Output is
/// trimmed to the original signal length.
pub fn synthesize(tensor: &StftTensor) -> Result<Vec<Vec<f64>>> {
    let params = tensor.params();
    params.validate()?;
    let n = params.frame_len;
    if tensor.bins() != n / 2 + 1 {
        return Err(Error::InvalidFrameParams(format!(
            "tensor has {} bins, frame_len {} implies {}",
            tensor.bins(),
            n,
            n / 2 + 1
        )));
    }
    let window = params.window.coefficients(n);
    let padded_len = (tensor.frames() - 1) * params.hop + n;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];

    let mut out = Vec::with_capacity(tensor.channels());
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for ch in 0..tensor.channels() {
        let mut acc = vec![0.0f64; padded_len];
        let mut norm = vec![0.0f64; padded_len];
        for fr in 0..tensor.frames() {
            let frame = tensor.frame(ch, fr);
            // Rebuild the full conjugate-symmetric spectrum; DC and Nyquist
            // must be real for a real signal.
            spec[0] = Complex64::new(frame[0].re, 0.0);
            spec[n / 2] = Complex64::new(frame[n / 2].re, 0.0);
            for k in 1..n / 2 {
                spec[k] = frame[k];
                spec[n - k] = frame[k].conj();
            }
            ifft.process_with_scratch(&mut spec, &mut scratch);
            let start = fr * params.hop;
            let inv_n = 1.0 / n as f64;
            for j in 0..n {
                acc[start + j] += spec[j].re * inv_n * window[j];
                norm[start + j] += window[j] * window[j];
            }
        }
        let mut samples = vec![0.0f64; tensor.signal_len().min(padded_len)];
        for (i, s) in samples.iter_mut().enumerate() {
            if norm[i] > 1e-8 {
                *s = acc[i] / norm[i];
            }
        }
        out.push(samples);
    }
    Ok(out)
}

/// Long-term power per bin: `(1/I) sum_i |X_{k,i}|^2`.
///
/// Averages over interior (steady-state) frames; tail frames that include
/// zero-padding are excluded so ramp artifacts do not bias the statistics.
pub fn long_term_psd(tensor: &StftTensor, channel: usize) -> Result<Vec<f64>> {
    tensor.check_channel(channel)?;
    if tensor.frames() == 0 {
        return Err(Error::EmptySignal);
    }
    let frames = tensor.stat_frames();
    let mut psd = vec![0.0f64; tensor.bins()];
    for fr in 0..frames {
        for (k, c) in tensor.frame(channel, fr).iter().enumerate() {
            psd[k] += c.norm_sqr();
        }
    }
    let inv = 1.0 / frames as f64;
    for p in psd.iter_mut() {
        *p *= inv;
    }
    Ok(psd)
}

/// Hermitian matrix stored dense row-major; construction keeps the conjugate
/// symmetry exact (diagonal real, lower triangle mirrored from the upper).
#[derive(Debug, Clone, PartialEq)]
pub struct HermMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl HermMatrix {
    pub fn zeros(dim: usize) -> Self {
        HermMatrix {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    /// Build from the upper triangle (row <= col); the rest is mirrored.
    pub fn from_upper(dim: usize, upper: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut m = HermMatrix::zeros(dim);
        for r in 0..dim {
            for c in r..dim {
                let v = if r == c {
                    Complex64::new(upper(r, c).re, 0.0)
                } else {
                    upper(r, c)
                };
                m.data[r * dim + c] = v;
                m.data[c * dim + r] = v.conj();
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.at(i, i).re).sum()
    }

    /// `x^H A x`, real for Hermitian `A` (imaginary part discarded).
    pub fn quadratic_form(&self, x: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..self.dim {
            for c in 0..self.dim {
                acc += x[r].conj() * self.at(r, c) * x[c];
            }
        }
        acc.re
    }

    pub fn scaled(&self, factor: f64) -> HermMatrix {
        HermMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add_diagonal(&self, loading: f64) -> HermMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += Complex64::new(loading, 0.0);
        }
        out
    }

    /// `max |A - A^H|` entry-wise; zero by construction.
    pub fn hermitian_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for r in 0..self.dim {
            for c in 0..self.dim {
                err = err.max((self.at(r, c) - self.at(c, r).conj()).norm());
            }
        }
        err
    }
}

/// Per-bin noise covariance estimates.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    /// One Hermitian M x M matrix per bin.
    pub per_bin: Vec<HermMatrix>,
    /// Set when fewer frames than channels were averaged; the caller must
    /// diagonally load before inverting.
    pub rank_deficient: bool,
    /// Frames actually averaged.
    pub frames_used: usize,
}

/// Per-bin sample covariance `(1/I) sum_i u_{k,i} u_{k,i}^H` of a
/// multichannel noise-only tensor, averaged over interior frames.
pub fn estimate_noise_covariance(tensor: &StftTensor) -> Result<CovarianceEstimate> {
    if tensor.frames() == 0 {
        return Err(Error::EmptySignal);
    }
    let m = tensor.channels();
    let frames = tensor.stat_frames();
    let inv = 1.0 / frames as f64;
    let mut per_bin = Vec::with_capacity(tensor.bins());
    for k in 0..tensor.bins() {
        let mut sums = vec![Complex64::new(0.0, 0.0); m * m];
        for fr in 0..frames {
            for r in 0..m {
                let ur = tensor.coeff(r, fr, k);
                for c in r..m {
                    sums[r * m + c] += ur * tensor.coeff(c, fr, k).conj();
                }
            }
        }
        per_bin.push(HermMatrix::from_upper(m, |r, c| sums[r * m + c] * inv));
    }
    Ok(CovarianceEstimate {
        per_bin,
        rank_deficient: frames < m,
        frames_used: frames,
    })
}

/// Per-bin long-term second-order statistics of the acoustic scene, the
/// inputs of beamformer and gain design.
#[derive(Debug, Clone)]
pub struct BinStatistics {
    /// Clean (dry) speech power per bin.
    pub sigma_s2: Vec<f64>,
    /// Far-end noise covariance per bin (environmental noise plus microphone
    /// self-noise, as seen by the array).
    pub cov_u: Vec<HermMatrix>,
    /// Near-end noise power per bin.
    pub sigma_n2: Vec<f64>,
    /// Source-to-array steering vector per bin, `steering[k][m]`.
    pub steering: Vec<Vec<Complex64>>,
}

impl BinStatistics {
    pub fn bins(&self) -> usize {
        self.sigma_s2.len()
    }

    pub fn mics(&self) -> usize {
        self.steering.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.bins();
        if self.cov_u.len() != k || self.sigma_n2.len() != k || self.steering.len() != k {
            return Err(Error::LengthMismatch(
                "statistics sequences disagree on bin count".to_string(),
            ));
        }
        let m = self.mics();
        for (bin, d) in self.steering.iter().enumerate() {
            if d.len() != m {
                return Err(Error::LengthMismatch(format!(
                    "steering vector at bin {bin} has wrong length"
                )));
            }
            if d.iter().all(|c| c.norm_sqr() == 0.0) {
                return Err(Error::ZeroSteering { bin });
            }
        }
        for (bin, c) in self.cov_u.iter().enumerate() {
            if c.dim() != m {
                return Err(Error::LengthMismatch(format!(
                    "covariance at bin {bin} has dim {} != {m}",
                    c.dim()
                )));
            }
        }
        if self
            .sigma_s2
            .iter()
            .chain(self.sigma_n2.iter())
            .any(|&v| v < 0.0)
        {
            return Err(Error::InvalidProblem("negative power".to_string()));
        }
        Ok(())
    }
}
