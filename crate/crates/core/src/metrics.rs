//! Band SNRs and the audibility score at the near-end listener.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reporting ceiling for band SNRs whose noise energy is zero (+40 dB;
/// audibility has saturated long before that).
pub const SNR_CEILING: f64 = 1e4;

/// Per-condition intelligibility summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntelligibilityReport {
    pub method_label: String,
    /// Weighted audibility sum, bounded by the weight sum.
    pub asii: f64,
    /// Band SNR in dB (f64::NEG_INFINITY for zero-speech bands).
    pub band_snr_db: Vec<f64>,
    /// Audibility per band, in [0, 1).
    pub band_audibility: Vec<f64>,
    /// Output speech power over input speech power.
    pub realized_power_ratio: f64,
    /// Slot for an externally computed score; never produced here.
    pub external_estoi: Option<f64>,
}

/// Element-wise band SNR `xi_j = speech_j / noise_j`.
///
/// Zero noise with positive speech clamps to [`SNR_CEILING`]; zero speech
/// with zero noise reports zero (audibility zero, `-inf` dB).
pub fn band_snr(speech_e: &[f64], noise_e: &[f64]) -> Result<Vec<f64>> {
    if speech_e.len() != noise_e.len() {
        return Err(Error::LengthMismatch(format!(
            "speech has {} bands, noise {}",
            speech_e.len(),
            noise_e.len()
        )));
    }
    if speech_e.iter().chain(noise_e.iter()).any(|&v| v < 0.0) {
        return Err(Error::InvalidProblem("negative band energy".to_string()));
    }
    Ok(speech_e
        .iter()
        .zip(noise_e.iter())
        .map(|(&s, &n)| {
            if n > 0.0 {
                (s / n).min(SNR_CEILING)
            } else if s > 0.0 {
                SNR_CEILING
            } else {
                0.0
            }
        })
        .collect())
}

/// Audibility of one band, `f(xi) = xi / (xi + 1)`.
pub fn audibility(xi: f64) -> f64 {
    xi / (xi + 1.0)
}

/// Weighted audibility score `sum_j gamma_j xi_j / (xi_j + 1)`.
pub fn asii_score(xi: &[f64], gamma: &[f64]) -> Result<f64> {
    if xi.len() != gamma.len() {
        return Err(Error::LengthMismatch(format!(
            "{} SNRs for {} weights",
            xi.len(),
            gamma.len()
        )));
    }
    if xi.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidProblem("negative band SNR".to_string()));
    }
    Ok(xi
        .iter()
        .zip(gamma.iter())
        .map(|(&x, &g)| g * audibility(x))
        .sum())
}

/// Assemble a report from tracked component band energies at the listener.
pub fn report_from_energies(
    method_label: &str,
    speech_e: &[f64],
    noise_e: &[f64],
    gamma: &[f64],
    realized_power_ratio: f64,
) -> Result<IntelligibilityReport> {
    let xi = band_snr(speech_e, noise_e)?;
    let asii = asii_score(&xi, gamma)?;
    let band_audibility: Vec<f64> = xi.iter().map(|&x| audibility(x)).collect();
    let band_snr_db: Vec<f64> = xi
        .iter()
        .map(|&x| if x > 0.0 { 10.0 * x.log10() } else { f64::NEG_INFINITY })
        .collect();
    Ok(IntelligibilityReport {
        method_label: method_label.to_string(),
        asii,
        band_snr_db,
        band_audibility,
        realized_power_ratio,
        external_estoi: None,
    })
}
