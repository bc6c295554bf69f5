//! End-to-end orchestration: scenario, statistics, beamformer, gains,
//! synthesis, and metrics for each processing method, plus SNR-grid sweeps.

use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sie_core::bands::{
    band_energies, build_filterbank, mi_weights_from_gamma, mi_weights_from_rho0, BandShape,
    BandSystem, BandTable,
};
use sie_core::beamformer::{
    apply_weights, mvdr_weights, residual_noise_power, BeamformerWeights, DEFAULT_LOADING_REL,
};
use sie_core::gainopt::{
    bin_gains_from_band_gains, compose_processor, optimal_band_gains, weighted_audibility,
    AllocationProblem, GainSolution,
};
use sie_core::metrics::{report_from_energies, IntelligibilityReport};
use sie_core::scene::{simulate_scenario, SceneSignals, ScenarioConfig};
use sie_core::spectral::{
    estimate_noise_covariance, long_term_psd, synthesize, BinStatistics, StftTensor,
};

/// Production-noise correlation of the fixed-rho baseline.
pub const BASELINE_RHO0: f64 = 0.75;

/// Processing method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// MVDR plus audibility-optimal gains with band-importance weights and
    /// the beamformed residual noise in the model.
    ProposedAsii,
    /// Same solver with uniform MI weights from rho0 = 0.75.
    MiBaselineRho075,
    /// Same solver with MI weights derived from the band importance; equal
    /// to the proposed gains by weight-proportionality.
    MiBaselineSii,
    /// Near-end-only optimization: the residual far-end noise is ignored
    /// when allocating gains.
    Disjoint,
    /// MVDR with unit gains.
    Passthrough,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ProposedAsii,
        Method::MiBaselineRho075,
        Method::MiBaselineSii,
        Method::Disjoint,
        Method::Passthrough,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ProposedAsii => "proposed_asii",
            Method::MiBaselineRho075 => "mi_baseline_rho075",
            Method::MiBaselineSii => "mi_baseline_sii",
            Method::Disjoint => "disjoint",
            Method::Passthrough => "passthrough",
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "proposed_asii" => Method::ProposedAsii,
            "mi_baseline_rho075" => Method::MiBaselineRho075,
            "mi_baseline_sii" => Method::MiBaselineSii,
            "disjoint" => Method::Disjoint,
            "passthrough" => Method::Passthrough,
            other => bail!(
                "unknown method '{other}' (expected proposed_asii, mi_baseline_rho075, \
                 mi_baseline_sii, disjoint, passthrough)"
            ),
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gains of one method, in both domains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainTable {
    pub method: String,
    pub alpha_band: Vec<f64>,
    pub alpha_bin: Vec<f64>,
    pub nu: f64,
    pub active_set: Vec<usize>,
    pub noise_free: bool,
    /// Objective value the solver reports for its own weights.
    pub objective_value: f64,
}

/// Everything shared by all methods at one scenario point.
pub struct PreparedScene {
    pub config: ScenarioConfig,
    pub scene: SceneSignals,
    pub stats: BinStatistics,
    pub bands: BandSystem,
    pub beamformer: BeamformerWeights,
    /// Residual far-end noise power per bin after MVDR.
    pub residual_bin: Vec<f64>,
    /// Beamformed far-side noise tensor (environment plus mic self-noise).
    pub noise_after_beamformer: StftTensor,
    /// Beamformed speech component tensor.
    pub speech_after_beamformer: StftTensor,
    pub band_s2: Vec<f64>,
    pub band_b2: Vec<f64>,
    pub band_n2: Vec<f64>,
    /// Dry speech psd and its total power over all bins.
    pub speech_psd: Vec<f64>,
    pub speech_total_power: f64,
}

/// Simulate the scenario and derive every method-independent quantity.
pub fn prepare_scene(config: &ScenarioConfig) -> Result<PreparedScene> {
    config.validate()?;
    let scene = simulate_scenario(config)?;
    let params = config.frame;

    // Long-term statistics. The far-side noise covariance comes from the
    // same frames as every psd, so quadratic forms in it are exactly the
    // psds of beamformed tensors.
    let speech_psd = long_term_psd(&scene.source_tensor, 0)?;
    let noise_tensor = scene.farend_tensor.add(&scene.mic_noise_tensor)?;
    let cov = estimate_noise_covariance(&noise_tensor)?;
    let near_psd = long_term_psd(&scene.near_tensor, 0)?;
    let stats = BinStatistics {
        sigma_s2: speech_psd.clone(),
        cov_u: cov.per_bin,
        sigma_n2: near_psd.clone(),
        steering: scene.atf.clone(),
    };

    let beamformer = mvdr_weights(&stats, DEFAULT_LOADING_REL)?;
    let residual_bin = residual_noise_power(&beamformer, &stats)?;

    let speech_after_beamformer = apply_weights(&scene.clean_tensor, &beamformer.w)?;
    let noise_after_beamformer = apply_weights(&noise_tensor, &beamformer.w)?;

    let bands = build_filterbank(&params, &BandTable::sii_critical(), BandShape::Rectangular)?;
    let band_s2 = band_energies(&speech_psd, &bands)?;
    let band_b2 = band_energies(&residual_bin, &bands)?;
    let band_n2 = band_energies(&near_psd, &bands)?;
    let speech_total_power = speech_psd.iter().sum();

    Ok(PreparedScene {
        config: config.clone(),
        scene,
        stats,
        bands,
        beamformer,
        residual_bin,
        noise_after_beamformer,
        speech_after_beamformer,
        band_s2,
        band_b2,
        band_n2,
        speech_psd,
        speech_total_power,
    })
}

/// Output of one method at one scenario point.
pub struct MethodOutcome {
    pub method: Method,
    pub report: IntelligibilityReport,
    pub gains: GainTable,
    /// Played-back signal (processed microphone mixture).
    pub playback: Vec<f64>,
    /// Signal at the listener: playback plus near-end noise.
    pub near_end: Vec<f64>,
}

/// Solve the band gains the given method prescribes.
pub fn solve_gains(prep: &PreparedScene, method: Method) -> Result<GainSolution> {
    let gamma = prep.bands.gamma().to_vec();
    let j = gamma.len();
    let zeros = vec![0.0; j];
    let (weights, b2) = match method {
        Method::ProposedAsii => (gamma, prep.band_b2.clone()),
        Method::MiBaselineSii => (
            mi_weights_from_gamma(&gamma)?.mi_weights,
            prep.band_b2.clone(),
        ),
        Method::MiBaselineRho075 => (
            mi_weights_from_rho0(BASELINE_RHO0, j)?.mi_weights,
            prep.band_b2.clone(),
        ),
        Method::Disjoint => (gamma, zeros),
        Method::Passthrough => {
            // Unit gains: feasible by construction, nothing to solve.
            let alpha_band = vec![1.0; j];
            let problem = AllocationProblem::new(
                prep.band_s2.clone(),
                prep.band_b2.clone(),
                prep.band_n2.clone(),
                prep.bands.gamma().to_vec(),
            )?;
            let objective_value = weighted_audibility(&alpha_band, &problem)?;
            return Ok(GainSolution {
                alpha_band,
                nu: 0.0,
                active_set: (0..j).collect(),
                degenerate_bands: Vec::new(),
                objective_value,
                noise_free: false,
            });
        }
    };
    let problem = AllocationProblem::new(
        prep.band_s2.clone(),
        b2,
        prep.band_n2.clone(),
        weights,
    )?;
    Ok(optimal_band_gains(&problem)?)
}

/// Run one method over a prepared scene.
pub fn run_method(prep: &PreparedScene, method: Method) -> Result<MethodOutcome> {
    let solution = solve_gains(prep, method)?;
    let alpha_bin = bin_gains_from_band_gains(&solution.alpha_band, &prep.bands)?;

    // Component tracking through the gain stage. The beamformed components
    // are already single-channel; the gains act per bin.
    let sqrt_alpha: Vec<f64> = alpha_bin.iter().map(|&a| a.sqrt()).collect();
    let speech_out = prep.speech_after_beamformer.scale_bins_real(&sqrt_alpha)?;
    let noise_out = prep.noise_after_beamformer.scale_bins_real(&sqrt_alpha)?;

    let speech_out_psd = long_term_psd(&speech_out, 0)?;
    let noise_out_psd = long_term_psd(&noise_out, 0)?;
    let near_psd = long_term_psd(&prep.scene.near_tensor, 0)?;

    let speech_e = band_energies(&speech_out_psd, &prep.bands)?;
    let far_e = band_energies(&noise_out_psd, &prep.bands)?;
    let near_e = band_energies(&near_psd, &prep.bands)?;
    let total_noise_e: Vec<f64> = far_e.iter().zip(near_e.iter()).map(|(a, b)| a + b).collect();

    let out_power: f64 = speech_out_psd.iter().sum();
    let realized_power_ratio = out_power / prep.speech_total_power;

    let report = report_from_energies(
        method.name(),
        &speech_e,
        &total_noise_e,
        prep.bands.gamma(),
        realized_power_ratio,
    )?;

    // Playback audio: the full processor applied to the observed mixture.
    let processor = compose_processor(&prep.beamformer, &alpha_bin)?;
    let playback_tensor = apply_weights(&prep.scene.mixed_tensor, &processor)?;
    let playback = synthesize(&playback_tensor)?.remove(0);
    let near_end: Vec<f64> = playback
        .iter()
        .zip(prep.scene.near_noise.iter())
        .map(|(y, n)| y + n)
        .collect();

    Ok(MethodOutcome {
        method,
        report,
        gains: GainTable {
            method: method.name().to_string(),
            alpha_band: solution.alpha_band.clone(),
            alpha_bin,
            nu: solution.nu,
            active_set: solution.active_set.clone(),
            noise_free: solution.noise_free,
            objective_value: solution.objective_value,
        },
        playback,
        near_end,
    })
}

/// Full single-scenario report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config_echo: ScenarioConfig,
    pub methods: Vec<MethodReport>,
    /// Wall-clock per stage in milliseconds (not part of determinism).
    pub timing_ms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub intelligibility: IntelligibilityReport,
    pub gains: GainTable,
}

/// Run one or more methods over a fresh simulation of `config`.
pub fn run_pipeline(config: &ScenarioConfig, methods: &[Method]) -> Result<(RunReport, Vec<MethodOutcome>)> {
    let t0 = Instant::now();
    let prep = prepare_scene(config).context("preparing scene")?;
    let prep_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut outcomes = Vec::new();
    let mut reports = Vec::new();
    let mut timing_methods_ms = 0.0;
    for &method in methods {
        let t1 = Instant::now();
        let outcome = run_method(&prep, method).with_context(|| format!("method {method}"))?;
        timing_methods_ms += t1.elapsed().as_secs_f64() * 1e3;
        reports.push(MethodReport {
            intelligibility: outcome.report.clone(),
            gains: outcome.gains.clone(),
        });
        outcomes.push(outcome);
    }
    let report = RunReport {
        config_echo: config.clone(),
        methods: reports,
        timing_ms: vec![
            ("prepare".to_string(), prep_ms),
            ("methods".to_string(), timing_methods_ms),
        ],
    };
    Ok((report, outcomes))
}

/// Sweep axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NearSnr,
    FarSnr,
}

impl FromStr for SweepAxis {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "near_snr" => SweepAxis::NearSnr,
            "far_snr" => SweepAxis::FarSnr,
            other => bail!("unknown axis '{other}' (expected near_snr or far_snr)"),
        })
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NearSnr => "near_snr",
            SweepAxis::FarSnr => "far_snr",
        }
    }
}

/// One row of the sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub axis_value: f64,
    pub method: String,
    pub asii: f64,
    pub nu: f64,
    pub active_band_count: usize,
    pub realized_power_ratio: f64,
    pub band_snr_db: Vec<f64>,
    pub band_audibility: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub config_echo: ScenarioConfig,
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

/// Run every method at every axis value; one scene per point, shared across
/// methods.
pub fn sweep(
    config: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    methods: &[Method],
) -> Result<SweepTable> {
    if values.is_empty() {
        bail!("sweep needs at least one axis value");
    }
    if methods.is_empty() {
        bail!("sweep needs at least one method");
    }
    let mut rows = Vec::new();
    for &value in values {
        let mut point = config.clone();
        match axis {
            SweepAxis::NearSnr => point.near_snr_db = value,
            SweepAxis::FarSnr => point.far_snr_db = value,
        }
        let prep = prepare_scene(&point)
            .with_context(|| format!("{} = {value} dB", axis.name()))?;
        for &method in methods {
            let outcome = run_method(&prep, method)?;
            rows.push(SweepRow {
                axis: axis.name().to_string(),
                axis_value: value,
                method: method.name().to_string(),
                asii: outcome.report.asii,
                nu: outcome.gains.nu,
                active_band_count: outcome.gains.active_set.len(),
                realized_power_ratio: outcome.report.realized_power_ratio,
                band_snr_db: outcome.report.band_snr_db.clone(),
                band_audibility: outcome.report.band_audibility.clone(),
            });
        }
    }
    Ok(SweepTable {
        config_echo: config.clone(),
        axis: axis.name().to_string(),
        rows,
    })
}
