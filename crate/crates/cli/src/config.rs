//! Strict flat key-value scenario configuration.
//!
//! One `key = value` pair per line, `#` comments, repeated keys build lists
//! (microphone and noise positions). Keys mirror the scenario fields
//! exactly; unknown or missing keys are errors, every value is typed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use sie_core::scene::{NoiseKind, ScenarioConfig, SpeechSource};
use sie_core::spectral::{FrameParams, Window};

pub const KNOWN_KEYS: &[&str] = &[
    "room_dims",
    "source_pos",
    "mic_pos",
    "noise_pos",
    "sample_rate",
    "frame_len",
    "hop",
    "window",
    "far_snr_db",
    "near_snr_db",
    "mic_snr_db",
    "far_noise_kind",
    "near_noise_kind",
    "speech_source",
    "seed",
    "duration_s",
];

/// Keys that may repeat to build a list.
const LIST_KEYS: &[&str] = &["mic_pos", "noise_pos"];

fn parse_vec3(value: &str, key: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>().with_context(|| format!("{key}: bad number '{t}'")))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        bail!("{key}: expected 3 numbers, got {}", parts.len());
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_snr(value: &str, key: &str) -> Result<f64> {
    if value == "inf" || value == "+inf" {
        return Ok(f64::INFINITY);
    }
    let v: f64 = value
        .parse()
        .with_context(|| format!("{key}: bad value '{value}' (number or 'inf')"))?;
    if v.is_nan() {
        bail!("{key}: NaN is not a level");
    }
    Ok(v)
}

/// Parse configuration text into a validated scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut scalars: BTreeMap<String, String> = BTreeMap::new();
    let mut mic_pos: Vec<[f64; 3]> = Vec::new();
    let mut noise_pos: Vec<[f64; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("line {}: expected 'key = value'", lineno + 1))?;
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            bail!("line {}: unknown key '{key}'", lineno + 1);
        }
        match key {
            "mic_pos" => mic_pos.push(parse_vec3(value, key)?),
            "noise_pos" => noise_pos.push(parse_vec3(value, key)?),
            _ => {
                if scalars.insert(key.to_string(), value.to_string()).is_some() {
                    bail!("line {}: duplicate key '{key}'", lineno + 1);
                }
            }
        }
    }

    let get = |key: &str| -> Result<&str> {
        scalars
            .get(key)
            .map(String::as_str)
            .with_context(|| format!("missing key '{key}'"))
    };
    for key in KNOWN_KEYS {
        if LIST_KEYS.contains(key) {
            continue;
        }
        get(key)?;
    }
    if mic_pos.is_empty() {
        bail!("missing key 'mic_pos' (at least one microphone)");
    }

    let sample_rate: u32 = get("sample_rate")?.parse().context("sample_rate")?;
    let frame_len: usize = get("frame_len")?.parse().context("frame_len")?;
    let hop: usize = get("hop")?.parse().context("hop")?;
    let window = Window::from_str(get("window")?)?;
    let frame = FrameParams::new(sample_rate, frame_len, hop, window)?;

    let speech_source = match get("speech_source")? {
        "synthetic_speech_shaped" => SpeechSource::SyntheticSpeechShaped,
        other => match other.strip_prefix("wav:") {
            Some(path) if !path.is_empty() => SpeechSource::Wav(PathBuf::from(path)),
            _ => bail!(
                "speech_source: expected 'synthetic_speech_shaped' or 'wav:<path>', got '{other}'"
            ),
        },
    };

    let config = ScenarioConfig {
        room_dims: parse_vec3(get("room_dims")?, "room_dims")?,
        source_pos: parse_vec3(get("source_pos")?, "source_pos")?,
        mic_pos,
        noise_pos,
        sample_rate,
        frame,
        far_snr_db: parse_snr(get("far_snr_db")?, "far_snr_db")?,
        near_snr_db: parse_snr(get("near_snr_db")?, "near_snr_db")?,
        mic_snr_db: parse_snr(get("mic_snr_db")?, "mic_snr_db")?,
        far_noise_kind: NoiseKind::from_str(get("far_noise_kind")?)?,
        near_noise_kind: NoiseKind::from_str(get("near_noise_kind")?)?,
        speech_source,
        seed: get("seed")?.parse().context("seed")?,
        duration_s: get("duration_s")?.parse().context("duration_s")?,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// The bundled default scenario file.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.cfg");

pub fn default_config() -> ScenarioConfig {
    parse_config(DEFAULT_CONFIG).expect("bundled default config is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_default_parses_to_reference_scenario() {
        let c = default_config();
        let reference = ScenarioConfig::default_scenario();
        assert_eq!(c.room_dims, reference.room_dims);
        assert_eq!(c.source_pos, reference.source_pos);
        assert_eq!(c.mic_pos, reference.mic_pos);
        assert_eq!(c.noise_pos, reference.noise_pos);
        assert_eq!(c.frame, reference.frame);
        assert_eq!(c.mic_snr_db, 60.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{DEFAULT_CONFIG}\nbogus_key = 1\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("unknown key"), "{err}");
    }

    #[test]
    fn missing_keys_are_rejected() {
        let text: String = DEFAULT_CONFIG
            .lines()
            .filter(|l| !l.trim_start().starts_with("seed"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("missing key 'seed'"), "{err}");
    }

    #[test]
    fn duplicate_scalar_keys_are_rejected() {
        let text = format!("{DEFAULT_CONFIG}\nseed = 2\n");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn inf_sentinel_disables_noise() {
        let text = DEFAULT_CONFIG.replace("far_snr_db = 10", "far_snr_db = inf");
        let c = parse_config(&text).unwrap();
        assert!(c.far_snr_db.is_infinite());
    }

    #[test]
    fn wav_source_round_trips() {
        let text = DEFAULT_CONFIG.replace(
            "speech_source = synthetic_speech_shaped",
            "speech_source = wav:/tmp/voice.wav",
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(c.speech_source, SpeechSource::Wav(PathBuf::from("/tmp/voice.wav")));
    }
}
