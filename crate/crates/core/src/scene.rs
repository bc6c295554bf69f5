//! Acoustic scene synthesis: free-field transfer functions, noise sources,
//! SNR-controlled mixing, and assembly of the microphone and listener
//! signals.
//!
//! Sources propagate to the microphones through direct-path transfer
//! functions applied per STFT bin, so the multichannel tensors obey the
//! multiplicative model exactly; the matching time-domain signals are their
//! overlap-add syntheses. The bulk propagation delay common to the array
//! (the delay to the first microphone) is removed from each source's
//! transfer functions, keeping inter-microphone phase differences and all
//! amplitudes exact while avoiding framing artifacts from long delays.

use std::path::PathBuf;

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::resample;
use crate::spectral::{analyze_mono, synthesize, FrameParams, StftTensor};
use crate::wav;

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Sentinel for "noise disabled" in SNR fields.
pub const SNR_DISABLED: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    SpeechShaped,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "speech_shaped" => Ok(NoiseKind::SpeechShaped),
            other => Err(Error::UnknownNoiseKind(other.to_string())),
        }
    }
}

/// Where the dry speech signal comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeechSource {
    /// Self-contained synthetic source: speech-shaped carrier with slow
    /// temporal envelope modulation.
    SyntheticSpeechShaped,
    /// User-supplied mono WAV (PCM16 or float32), resampled if needed.
    Wav(PathBuf),
}

/// Full description of the simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Room dimensions in meters (positions must lie strictly inside).
    pub room_dims: [f64; 3],
    pub source_pos: [f64; 3],
    pub mic_pos: Vec<[f64; 3]>,
    pub noise_pos: Vec<[f64; 3]>,
    pub sample_rate: u32,
    pub frame: FrameParams,
    /// Far-end environmental noise level at the first microphone, dB
    /// relative to the speech component there. `inf` disables the noise.
    pub far_snr_db: f64,
    /// Near-end noise level relative to the played-back speech power
    /// (which the equal-power constraint ties to the dry speech power).
    pub near_snr_db: f64,
    /// Microphone self-noise level per mic, relative to the speech
    /// component at that mic.
    pub mic_snr_db: f64,
    pub far_noise_kind: NoiseKind,
    pub near_noise_kind: NoiseKind,
    pub speech_source: SpeechSource,
    pub seed: u64,
    pub duration_s: f64,
}

impl ScenarioConfig {
    /// The default desk-scale scenario: 3 x 4 x 3 m room, speaker at
    /// [1.5, 3, 1], two mics 2 cm apart at [1.5, 2, 1] / [1.5, 2.02, 1],
    /// three speech-shaped noise sources, pink near-end noise, 60 dB mic
    /// self-noise, 16 kHz, 32 ms Hann frames at 50% overlap.
    pub fn default_scenario() -> Self {
        ScenarioConfig {
            room_dims: [3.0, 4.0, 3.0],
            source_pos: [1.50, 3.00, 1.0],
            mic_pos: vec![[1.50, 2.00, 1.0], [1.50, 2.02, 1.0]],
            noise_pos: vec![[0.50, 1.00, 1.0], [0.75, 3.00, 1.0], [3.00, 1.60, 1.0]],
            sample_rate: 16_000,
            frame: FrameParams::default_16k(),
            far_snr_db: 10.0,
            near_snr_db: -10.0,
            mic_snr_db: 60.0,
            far_noise_kind: NoiseKind::SpeechShaped,
            near_noise_kind: NoiseKind::Pink,
            speech_source: SpeechSource::SyntheticSpeechShaped,
            seed: 1,
            duration_s: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Closed-room containment: the reference scenario places one noise
        // source exactly on a wall, which is harmless without reflections.
        let inside = |p: &[f64; 3]| -> bool {
            p.iter()
                .zip(self.room_dims.iter())
                .all(|(&x, &d)| x >= 0.0 && x <= d)
        };
        if self.room_dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidScenario("non-positive room dimension".into()));
        }
        if !inside(&self.source_pos) {
            return Err(Error::InvalidScenario("source outside the room".into()));
        }
        if self.mic_pos.is_empty() {
            return Err(Error::InvalidScenario("need at least one microphone".into()));
        }
        for (i, p) in self.mic_pos.iter().enumerate() {
            if !inside(p) {
                return Err(Error::InvalidScenario(format!("microphone {i} outside the room")));
            }
        }
        for (i, p) in self.noise_pos.iter().enumerate() {
            if !inside(p) {
                return Err(Error::InvalidScenario(format!("noise source {i} outside the room")));
            }
        }
        for (label, v) in [
            ("far_snr_db", self.far_snr_db),
            ("near_snr_db", self.near_snr_db),
            ("mic_snr_db", self.mic_snr_db),
        ] {
            if v.is_nan() || v == f64::NEG_INFINITY {
                return Err(Error::InvalidScenario(format!("{label} must be finite or +inf")));
            }
        }
        if !(self.duration_s >= 1.0) {
            return Err(Error::InvalidScenario(format!(
                "duration {} s too short (>= 1 s)",
                self.duration_s
            )));
        }
        if self.frame.sample_rate != self.sample_rate {
            return Err(Error::InvalidScenario(
                "frame parameters disagree with scenario sample rate".into(),
            ));
        }
        self.frame.validate()?;
        Ok(())
    }
}

/// All simulated components, each as a time signal with its matching STFT
/// tensor. Mixtures are exact sums of their components in both domains.
#[derive(Debug, Clone)]
pub struct SceneSignals {
    /// Dry source signal, unit mean power.
    pub source: Vec<f64>,
    pub source_tensor: StftTensor,
    /// Speech component at the microphones.
    pub clean_at_mics: Vec<Vec<f64>>,
    pub clean_tensor: StftTensor,
    /// Environmental far-end noise at the microphones (all sources summed).
    pub farend_noise_at_mics: Vec<Vec<f64>>,
    pub farend_tensor: StftTensor,
    /// Microphone self-noise.
    pub mic_noise: Vec<Vec<f64>>,
    pub mic_noise_tensor: StftTensor,
    /// Observed microphone signals: clean + far-end noise + self-noise.
    pub mixed_mics: Vec<Vec<f64>>,
    pub mixed_tensor: StftTensor,
    /// Near-end noise at the listener.
    pub near_noise: Vec<f64>,
    pub near_tensor: StftTensor,
    /// Speech-source steering vectors per bin and mic, `atf[k][m]`.
    pub atf: Vec<Vec<Complex64>>,
    /// Realized levels for auditing (None when the noise is disabled).
    pub realized_far_snr_db: Option<f64>,
    pub realized_near_snr_db: Option<f64>,
    pub realized_mic_snr_db: Vec<Option<f64>>,
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Direct-path free-field transfer function sampled at the STFT bin
/// frequencies: `d_k = exp(-i 2 pi f_k dist / c) / (4 pi dist)`.
pub fn freefield_atf(src: &[f64; 3], mic: &[f64; 3], params: &FrameParams) -> Result<Vec<Complex64>> {
    let dist = distance(src, mic);
    if dist < 1e-9 {
        return Err(Error::InvalidScenario(
            "source and microphone positions coincide".to_string(),
        ));
    }
    let amplitude = 1.0 / (4.0 * std::f64::consts::PI * dist);
    let delay = dist / SPEED_OF_SOUND;
    Ok((0..params.bins())
        .map(|k| {
            let phase = -2.0 * std::f64::consts::PI * params.bin_hz(k) * delay;
            Complex64::from_polar(amplitude, phase)
        })
        .collect())
}

fn sub_seed(master: u64, role: u64) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(role.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

fn normalize_rms(x: &mut [f64]) -> Result<()> {
    let p = mean_power(x);
    if p <= 0.0 {
        return Err(Error::InvalidScenario("silent signal".to_string()));
    }
    let g = 1.0 / p.sqrt();
    for v in x.iter_mut() {
        *v *= g;
    }
    Ok(())
}

/// White noise, uniform in [-1, 1), zero-mean by symmetry.
fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Color white noise by a real magnitude response over the full-signal DFT.
fn shape_noise(x: &[f64], sample_rate: u32, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let len = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (i, c) in buf.iter_mut().enumerate() {
        let f = i.min(len - i) as f64 * sample_rate as f64 / len as f64;
        *c *= gain(f);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let scale = 1.0 / len as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Interpolate a (frequency, dB) table linearly in log-frequency; flat
/// extension beyond the table ends.
fn interp_db(table: &[(f64, f64)], f: f64) -> f64 {
    if f <= table[0].0 {
        return table[0].1;
    }
    if f >= table[table.len() - 1].0 {
        return table[table.len() - 1].1;
    }
    for w in table.windows(2) {
        let (f0, d0) = w[0];
        let (f1, d1) = w[1];
        if f >= f0 && f <= f1 {
            let t = (f.ln() - f0.ln()) / (f1.ln() - f0.ln());
            return d0 + t * (d1 - d0);
        }
    }
    table[table.len() - 1].1
}

/// Bundled long-term average speech spectrum (third-octave levels in dB).
pub const LTASS_TABLE: &str = include_str!("../data/ltass.txt");

fn ltass_points() -> Vec<(f64, f64)> {
    LTASS_TABLE
        .lines()
        .filter_map(|raw| {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                return None;
            }
            let mut it = line.split_whitespace();
            let f = it.next()?.parse().ok()?;
            let d = it.next()?.parse().ok()?;
            Some((f, d))
        })
        .collect()
}

/// Deterministic noise of the requested kind, unit mean power.
///
/// Pink noise has a -3 dB/octave long-term slope (flat below 10 Hz);
/// speech-shaped noise follows the bundled long-term average speech
/// spectrum.
pub fn generate_noise(kind: NoiseKind, samples: usize, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::InvalidScenario("zero-length noise requested".into()));
    }
    let base = white_noise(samples, seed);
    let mut out = match kind {
        NoiseKind::White => base,
        NoiseKind::Pink => shape_noise(&base, sample_rate, |f| {
            if f <= 0.0 {
                0.0
            } else {
                1.0 / f.max(10.0).sqrt()
            }
        }),
        NoiseKind::SpeechShaped => {
            let table = ltass_points();
            shape_noise(&base, sample_rate, move |f| {
                if f <= 0.0 {
                    0.0
                } else {
                    10f64.powf(interp_db(&table, f) / 20.0)
                }
            })
        }
    };
    normalize_rms(&mut out)?;
    Ok(out)
}

/// Synthetic speech stand-in: speech-shaped carrier modulated by a slow
/// (4 Hz-centered) random envelope, unit mean power.
pub fn synthetic_speech(samples: usize, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    let carrier = generate_noise(NoiseKind::SpeechShaped, samples, sample_rate, seed)?;
    let env_raw = shape_noise(
        &white_noise(samples, seed.wrapping_add(1)),
        sample_rate,
        |f| {
            if f <= 0.0 {
                0.0
            } else {
                // Gaussian bump centered at 4 Hz, ~2-8 Hz support.
                (-0.5 * ((f - 4.0) / 2.0) * ((f - 4.0) / 2.0)).exp()
            }
        },
    );
    let env_power = mean_power(&env_raw).max(1e-300);
    let env_gain = 0.5 / env_power.sqrt();
    let mut out: Vec<f64> = carrier
        .iter()
        .zip(env_raw.iter())
        .map(|(c, e)| c * (1.0 + env_gain * e).max(0.05))
        .collect();
    normalize_rms(&mut out)?;
    Ok(out)
}

/// Scale `noise` so that `10 log10(P_ref / P_noise) = snr_db` over the full
/// duration; the reference is untouched.
pub fn mix_at_snr(reference: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    let p_ref = mean_power(reference);
    let p_noise = mean_power(noise);
    if p_ref <= 0.0 {
        return Err(Error::InvalidScenario("silent reference in mix_at_snr".into()));
    }
    if p_noise <= 0.0 {
        return Err(Error::InvalidScenario("silent noise in mix_at_snr".into()));
    }
    let target = p_ref / 10f64.powf(snr_db / 10.0);
    let g = (target / p_noise).sqrt();
    Ok(noise.iter().map(|&v| v * g).collect())
}

fn realized_snr_db(reference: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_power(reference) / mean_power(noise)).log10()
}

/// Steering vectors for one source, bulk delay referenced to the first
/// microphone.
fn referenced_atf(
    src: &[f64; 3],
    mics: &[[f64; 3]],
    params: &FrameParams,
) -> Result<Vec<Vec<Complex64>>> {
    let ref_delay = distance(src, &mics[0]) / SPEED_OF_SOUND;
    let mut per_mic = Vec::with_capacity(mics.len());
    for mic in mics {
        let absolute = freefield_atf(src, mic, params)?;
        let referenced: Vec<Complex64> = absolute
            .iter()
            .enumerate()
            .map(|(k, d)| {
                let back = 2.0 * std::f64::consts::PI * params.bin_hz(k) * ref_delay;
                d * Complex64::from_polar(1.0, back)
            })
            .collect();
        per_mic.push(referenced);
    }
    // Transpose to [bin][mic].
    let bins = params.bins();
    Ok((0..bins)
        .map(|k| per_mic.iter().map(|m| m[k]).collect())
        .collect())
}

/// Propagate a mono tensor through per-bin transfer functions to an
/// M-channel tensor.
fn propagate(tensor: &StftTensor, atf: &[Vec<Complex64>], mics: usize) -> Result<StftTensor> {
    let mut out = StftTensor::zeros(*tensor.params(), mics, tensor.frames(), tensor.signal_len());
    for m in 0..mics {
        let gains: Vec<Complex64> = atf.iter().map(|bin| bin[m]).collect();
        let scaled = tensor.scale_bins(&gains)?;
        for fr in 0..tensor.frames() {
            out.frame_mut(m, fr).copy_from_slice(scaled.frame(0, fr));
        }
    }
    Ok(out)
}

fn scale_tensor(tensor: &StftTensor, g: f64) -> StftTensor {
    let gains = vec![Complex64::new(g, 0.0); tensor.bins()];
    tensor.scale_bins(&gains).expect("length matches")
}

fn scale_signals(signals: &mut [Vec<f64>], g: f64) {
    for ch in signals.iter_mut() {
        for v in ch.iter_mut() {
            *v *= g;
        }
    }
}

/// Build the full scene: dry source, propagated speech and noise components,
/// SNR-scaled mixtures, and the near-end noise. Deterministic in
/// `(config, seed)`.
pub fn simulate_scenario(config: &ScenarioConfig) -> Result<SceneSignals> {
    config.validate()?;
    let params = config.frame;
    let len = (config.duration_s * config.sample_rate as f64).round() as usize;
    let mics = config.mic_pos.len();

    // Dry source, unit mean power.
    let mut source = match &config.speech_source {
        SpeechSource::SyntheticSpeechShaped => {
            synthetic_speech(len, config.sample_rate, sub_seed(config.seed, 1))?
        }
        SpeechSource::Wav(path) => {
            let (samples, rate) = wav::read_mono(path)?;
            let mut samples = if rate != config.sample_rate {
                resample(&samples, rate, config.sample_rate)?
            } else {
                samples
            };
            // Tile short recordings to the requested duration.
            if samples.len() < len {
                let mut tiled = Vec::with_capacity(len);
                while tiled.len() < len {
                    let take = (len - tiled.len()).min(samples.len());
                    tiled.extend_from_slice(&samples[..take]);
                }
                samples = tiled;
            } else {
                samples.truncate(len);
            }
            samples
        }
    };
    normalize_rms(&mut source)?;
    let source_tensor = analyze_mono(&source, &params)?;

    // Speech at the microphones.
    let atf = referenced_atf(&config.source_pos, &config.mic_pos, &params)?;
    let clean_tensor = propagate(&source_tensor, &atf, mics)?;
    let clean_at_mics = synthesize(&clean_tensor)?;

    // Environmental far-end noise: unit-power sources, propagated, summed,
    // then scaled by one common factor to the configured SNR at mic 0.
    let mut farend_tensor = StftTensor::zeros(params, mics, source_tensor.frames(), len);
    let mut farend_noise_at_mics = vec![vec![0.0f64; len]; mics];
    let mut realized_far_snr_db_v = None;
    if config.far_snr_db.is_finite() && !config.noise_pos.is_empty() {
        for (q, pos) in config.noise_pos.iter().enumerate() {
            let n = generate_noise(
                config.far_noise_kind,
                len,
                config.sample_rate,
                sub_seed(config.seed, 10 + q as u64),
            )?;
            let n_tensor = analyze_mono(&n, &params)?;
            let n_atf = referenced_atf(pos, &config.mic_pos, &params)?;
            let at_mics = propagate(&n_tensor, &n_atf, mics)?;
            farend_tensor = farend_tensor.add(&at_mics)?;
        }
        let unscaled = synthesize(&farend_tensor)?;
        let scaled_once = mix_at_snr(&clean_at_mics[0], &unscaled[0], config.far_snr_db)?;
        let g = (mean_power(&scaled_once) / mean_power(&unscaled[0])).sqrt();
        farend_tensor = scale_tensor(&farend_tensor, g);
        farend_noise_at_mics = unscaled;
        scale_signals(&mut farend_noise_at_mics, g);
        realized_far_snr_db_v = Some(realized_snr_db(
            &clean_at_mics[0],
            &farend_noise_at_mics[0],
        ));
    }

    // Microphone self-noise, per-mic level against the speech at that mic.
    let mut mic_noise_tensor = StftTensor::zeros(params, mics, source_tensor.frames(), len);
    let mut mic_noise = vec![vec![0.0f64; len]; mics];
    let mut realized_mic_snr_db = vec![None; mics];
    if config.mic_snr_db.is_finite() {
        for m in 0..mics {
            let raw = {
                let mut w = white_noise(len, sub_seed(config.seed, 100 + m as u64));
                normalize_rms(&mut w)?;
                w
            };
            let scaled = mix_at_snr(&clean_at_mics[m], &raw, config.mic_snr_db)?;
            let t = analyze_mono(&scaled, &params)?;
            for fr in 0..t.frames() {
                mic_noise_tensor.frame_mut(m, fr).copy_from_slice(t.frame(0, fr));
            }
            realized_mic_snr_db[m] = Some(realized_snr_db(&clean_at_mics[m], &scaled));
            mic_noise[m] = scaled;
        }
    }

    // Observed microphone signals: exact sums in both domains.
    let mixed_tensor = clean_tensor.add(&farend_tensor)?.add(&mic_noise_tensor)?;
    let mixed_mics: Vec<Vec<f64>> = (0..mics)
        .map(|m| {
            (0..len)
                .map(|i| clean_at_mics[m][i] + farend_noise_at_mics[m][i] + mic_noise[m][i])
                .collect()
        })
        .collect();

    // Near-end noise against the dry (= played-back) speech power.
    let mut near_noise = vec![0.0f64; len];
    let mut realized_near_snr_db_v = None;
    if config.near_snr_db.is_finite() {
        let raw = generate_noise(
            config.near_noise_kind,
            len,
            config.sample_rate,
            sub_seed(config.seed, 200),
        )?;
        near_noise = mix_at_snr(&source, &raw, config.near_snr_db)?;
        realized_near_snr_db_v = Some(realized_snr_db(&source, &near_noise));
    }
    let near_tensor = analyze_mono(&near_noise, &params)?;

    Ok(SceneSignals {
        source,
        source_tensor,
        clean_at_mics,
        clean_tensor,
        farend_noise_at_mics,
        farend_tensor,
        mic_noise,
        mic_noise_tensor,
        mixed_mics,
        mixed_tensor,
        near_noise,
        near_tensor,
        atf,
        realized_far_snr_db: realized_far_snr_db_v,
        realized_near_snr_db: realized_near_snr_db_v,
        realized_mic_snr_db,
    })
}
