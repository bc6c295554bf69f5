//! Critical-band filterbank, band energies, and audibility weight mappings.
//!
//! A [`BandSystem`] partitions the one-sided DFT bins into critical bands
//! with squared filter weights normalized so each covered bin's column sums
//! to one. That normalization is what makes total energy identical whether
//! it is accounted per bin or per band, and it is what lets band gains map
//! back to bin gains without touching the power budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::FrameParams;

/// The 21-band SII critical-band table (edges in Hz plus band importance).
pub const SII_CRITICAL_BAND_TABLE: &str = include_str!("../data/sii_critical_bands.txt");

/// One row of a band definition table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub low_hz: f64,
    pub high_hz: f64,
    pub gamma: f64,
}

/// Parsed band definition table.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub rows: Vec<BandRow>,
}

impl BandTable {
    /// Parse the plain-text format: three whitespace-separated columns
    /// `low_edge_hz high_edge_hz gamma`, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::InvalidBandTable(format!(
                    "line {}: expected 3 columns, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidBandTable(format!("line {}: bad number '{s}'", lineno + 1))
                })
            };
            rows.push(BandRow {
                low_hz: parse(fields[0])?,
                high_hz: parse(fields[1])?,
                gamma: parse(fields[2])?,
            });
        }
        let table = BandTable { rows };
        table.validate()?;
        Ok(table)
    }

    /// The bundled 21-band SII critical-band table.
    pub fn sii_critical() -> Self {
        BandTable::parse(SII_CRITICAL_BAND_TABLE).expect("bundled band table is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidBandTable("empty table".to_string()));
        }
        for (j, row) in self.rows.iter().enumerate() {
            if !(row.low_hz >= 0.0 && row.high_hz > row.low_hz) {
                return Err(Error::InvalidBandTable(format!(
                    "band {j}: edges [{}, {}] not strictly increasing",
                    row.low_hz, row.high_hz
                )));
            }
            if !(row.gamma > 0.0) {
                return Err(Error::InvalidBandTable(format!(
                    "band {j}: gamma {} must be positive",
                    row.gamma
                )));
            }
            if j > 0 && (row.low_hz - self.rows[j - 1].high_hz).abs() > 1e-9 {
                return Err(Error::InvalidBandTable(format!(
                    "band {j} low edge {} does not meet previous high edge {}",
                    row.low_hz,
                    self.rows[j - 1].high_hz
                )));
            }
        }
        Ok(())
    }

    /// Extra checks for SII-style importance tables: values in [0.01, 0.06]
    /// and summing to one.
    pub fn validate_sii_importance(&self) -> Result<()> {
        let sum: f64 = self.rows.iter().map(|r| r.gamma).sum();
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidBandTable(format!(
                "band importance sums to {sum}, expected 1"
            )));
        }
        for (j, row) in self.rows.iter().enumerate() {
            if row.gamma < 0.01 || row.gamma > 0.06 {
                return Err(Error::InvalidBandTable(format!(
                    "band {j} importance {} outside [0.01, 0.06]",
                    row.gamma
                )));
            }
        }
        Ok(())
    }
}

/// Band filter magnitude shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandShape {
    /// Hard-edged partition; each covered bin belongs to exactly one band.
    Rectangular,
    /// Overlapping triangles peaked at band centers, renormalized columnwise.
    Triangular,
}

/// Critical-band filterbank: squared weights `|H_j(k)|^2`, band importance
/// `gamma`, and band edges.
#[derive(Debug, Clone)]
pub struct BandSystem {
    /// Squared filter weights, `weights[j][k]`, J x K.
    weights: Vec<Vec<f64>>,
    /// Band importance per band.
    gamma: Vec<f64>,
    /// Band edges in Hz, J+1 entries (last edge clipped to Nyquist).
    edges: Vec<f64>,
    /// Bins covered by at least one band.
    covered: Vec<bool>,
    bins: usize,
}

impl BandSystem {
    pub fn band_count(&self) -> usize {
        self.gamma.len()
    }
    pub fn bin_count(&self) -> usize {
        self.bins
    }
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
    pub fn edges(&self) -> &[f64] {
        &self.edges
    }
    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.weights[band][bin]
    }
    pub fn weights_of(&self, band: usize) -> &[f64] {
        &self.weights[band]
    }
    /// True when some band has nonzero weight at the bin; uncovered bins are
    /// frozen to unit gain and excluded from the optimization and its budget.
    pub fn is_covered(&self, bin: usize) -> bool {
        self.covered[bin]
    }
    pub fn covered_bins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.bins).filter(|&k| self.covered[k])
    }
}

/// Build the critical-band filterbank on the STFT bin grid.
///
/// Weights are normalized so `sum_j |H_j(k)|^2 = 1` at every covered bin.
/// The last band is clipped at Nyquist; a band lying entirely above Nyquist
/// is an error.
pub fn build_filterbank(
    params: &FrameParams,
    table: &BandTable,
    shape: BandShape,
) -> Result<BandSystem> {
    table.validate()?;
    let nyquist = params.sample_rate as f64 / 2.0;
    if table.rows[0].low_hz >= nyquist {
        return Err(Error::InvalidBandTable(
            "table lies entirely above Nyquist".to_string(),
        ));
    }
    for (j, row) in table.rows.iter().enumerate() {
        if row.low_hz >= nyquist {
            return Err(Error::InvalidBandTable(format!(
                "band {j} starts at {} Hz, above Nyquist {nyquist} Hz",
                row.low_hz
            )));
        }
    }

    let bins = params.bins();
    let j_count = table.rows.len();
    let mut weights = vec![vec![0.0f64; bins]; j_count];

    match shape {
        BandShape::Rectangular => {
            for (j, row) in table.rows.iter().enumerate() {
                let high = row.high_hz.min(nyquist);
                for k in 0..bins {
                    let f = params.bin_hz(k);
                    // Nyquist itself belongs to the band whose range it ends.
                    let inside = (f >= row.low_hz && f < high)
                        || (f == nyquist && high == nyquist && f > row.low_hz);
                    if inside {
                        weights[j][k] = 1.0;
                    }
                }
            }
        }
        BandShape::Triangular => {
            let centers: Vec<f64> = table
                .rows
                .iter()
                .map(|r| (r.low_hz + r.high_hz.min(nyquist)) / 2.0)
                .collect();
            for j in 0..j_count {
                let left = if j == 0 {
                    table.rows[0].low_hz
                } else {
                    centers[j - 1]
                };
                let right = if j + 1 == j_count {
                    table.rows[j_count - 1].high_hz.min(nyquist)
                } else {
                    centers[j + 1]
                };
                let peak = centers[j];
                for k in 0..bins {
                    let f = params.bin_hz(k);
                    let w = if f >= left && f <= peak && peak > left {
                        (f - left) / (peak - left)
                    } else if f > peak && f <= right && right > peak {
                        (right - f) / (right - peak)
                    } else {
                        0.0
                    };
                    weights[j][k] = w;
                }
            }
        }
    }

    // Columnwise renormalization enforces the energy-preservation identity.
    let mut covered = vec![false; bins];
    for k in 0..bins {
        let col: f64 = weights.iter().map(|row| row[k]).sum();
        if col > 0.0 {
            covered[k] = true;
            for row in weights.iter_mut() {
                row[k] /= col;
            }
        }
    }
    if !covered.iter().any(|&c| c) {
        return Err(Error::InvalidBandTable(
            "no STFT bin is covered by any band".to_string(),
        ));
    }

    let mut edges: Vec<f64> = table.rows.iter().map(|r| r.low_hz).collect();
    edges.push(table.rows[j_count - 1].high_hz.min(nyquist));

    Ok(BandSystem {
        weights,
        gamma: table.rows.iter().map(|r| r.gamma).collect(),
        edges,
        covered,
        bins,
    })
}

/// Band energies `sigma_j^2 = sum_k |H_j(k)|^2 psd_k`.
pub fn band_energies(psd: &[f64], bands: &BandSystem) -> Result<Vec<f64>> {
    if psd.len() != bands.bin_count() {
        return Err(Error::LengthMismatch(format!(
            "psd has {} bins, band system expects {}",
            psd.len(),
            bands.bin_count()
        )));
    }
    Ok((0..bands.band_count())
        .map(|j| {
            bands.weights_of(j)
                .iter()
                .zip(psd.iter())
                .map(|(w, p)| w * p)
                .sum()
        })
        .collect())
}

/// Audibility weights of the approximated mutual-information objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MiWeights {
    /// Squared correlation per band.
    pub rho0_sq: Vec<f64>,
    /// First-order weights `I_j = -(1/2) log2(1 - rho0^2)`.
    pub mi_weights: Vec<f64>,
}

/// Map band importance to squared correlations `rho0^2 = 1 - 2^(-2 gamma)`
/// and on to the MI weights. With this mapping `I_j == gamma_j` exactly,
/// which is why the MI-weighted and importance-weighted problems share their
/// optimizer.
pub fn mi_weights_from_gamma(gamma: &[f64]) -> Result<MiWeights> {
    let mut rho0_sq = Vec::with_capacity(gamma.len());
    for (j, &g) in gamma.iter().enumerate() {
        if !(g > 0.0) {
            return Err(Error::InvalidBandTable(format!(
                "band {j}: gamma {g} must be positive"
            )));
        }
        // 1 - 2^(-2g), written cancellation-free so the round trip back to
        // gamma stays exact to within a couple of ulps.
        let r = -(-2.0 * g * std::f64::consts::LN_2).exp_m1();
        if r >= 1.0 {
            return Err(Error::InvalidBandTable(format!(
                "band {j}: gamma {g} produces rho0^2 >= 1"
            )));
        }
        rho0_sq.push(r);
    }
    let mi_weights = mi_weights_from_rho0_sq(&rho0_sq)?;
    Ok(MiWeights {
        rho0_sq,
        mi_weights,
    })
}

/// MI weights from a direct correlation override, e.g. `rho0 = 0.75`
/// uniformly across bands.
pub fn mi_weights_from_rho0(rho0: f64, band_count: usize) -> Result<MiWeights> {
    let rho0_sq = vec![rho0 * rho0; band_count];
    let mi_weights = mi_weights_from_rho0_sq(&rho0_sq)?;
    Ok(MiWeights {
        rho0_sq,
        mi_weights,
    })
}

fn mi_weights_from_rho0_sq(rho0_sq: &[f64]) -> Result<Vec<f64>> {
    rho0_sq
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidBandTable(format!(
                    "band {j}: rho0^2 = {r} outside [0, 1)"
                )));
            }
            // -(1/2) log2(1 - r) via ln_1p to avoid losing digits near r = 0.
            Ok(-0.5 * (-r).ln_1p() / std::f64::consts::LN_2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Window;
    use proptest::prelude::*;

    fn params_512() -> FrameParams {
        FrameParams::default_16k()
    }

    #[test]
    fn bundled_table_parses_and_validates() {
        let t = BandTable::sii_critical();
        assert_eq!(t.rows.len(), 21);
        t.validate_sii_importance().unwrap();
        assert_eq!(t.rows[0].low_hz, 100.0);
        assert_eq!(t.rows[20].high_hz, 9500.0);
    }

    #[test]
    fn sii_filterbank_columns_sum_to_one() {
        let b = build_filterbank(&params_512(), &BandTable::sii_critical(), BandShape::Rectangular)
            .unwrap();
        assert_eq!(b.band_count(), 21);
        let mut covered = 0;
        for k in 0..b.bin_count() {
            let col: f64 = (0..21).map(|j| b.weight(j, k)).sum();
            if b.is_covered(k) {
                covered += 1;
                assert!(
                    (col - 1.0).abs() <= 1e-12,
                    "bin {k}: column sum {col} != 1"
                );
            } else {
                assert_eq!(col, 0.0);
            }
        }
        // 100 Hz..Nyquist at 31.25 Hz spacing: bins 4..=256.
        assert_eq!(covered, 253);
        assert!(!b.is_covered(0), "DC must be uncovered");
        assert!(b.is_covered(256), "Nyquist bin inside the clipped last band");
    }

    #[test]
    fn single_all_covering_band_keeps_total_energy() {
        let table = BandTable {
            rows: vec![BandRow {
                low_hz: 0.0,
                high_hz: 8000.0,
                gamma: 1.0,
            }],
        };
        let b = build_filterbank(&params_512(), &table, BandShape::Rectangular).unwrap();
        let psd = vec![0.5; b.bin_count()];
        let e = band_energies(&psd, &b).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0] - 0.5 * b.bin_count() as f64).abs() <= 1e-9);
    }

    #[test]
    fn two_rectangular_bands_partition_the_bins() {
        let table = BandTable {
            rows: vec![
                BandRow {
                    low_hz: 0.0,
                    high_hz: 4000.0,
                    gamma: 0.5,
                },
                BandRow {
                    low_hz: 4000.0,
                    high_hz: 8000.0,
                    gamma: 0.5,
                },
            ],
        };
        let b = build_filterbank(&params_512(), &table, BandShape::Rectangular).unwrap();
        for k in 0..b.bin_count() {
            let w0 = b.weight(0, k);
            let w1 = b.weight(1, k);
            assert!(
                (w0 == 1.0 && w1 == 0.0) || (w0 == 0.0 && w1 == 1.0),
                "bin {k} not exclusively owned: {w0} {w1}"
            );
        }
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(BandTable::parse("").is_err());
        // gap between bands
        assert!(BandTable::parse("100 200 0.5\n300 400 0.5").is_err());
        // reversed edges
        assert!(BandTable::parse("200 100 0.5").is_err());
        // non-positive gamma
        assert!(BandTable::parse("100 200 0").is_err());
        // band above Nyquist
        let t = BandTable::parse("9000 9500 0.5").unwrap();
        assert!(build_filterbank(&params_512(), &t, BandShape::Rectangular).is_err());
    }

    #[test]
    fn band_energy_preservation_identity() {
        let b = build_filterbank(&params_512(), &BandTable::sii_critical(), BandShape::Rectangular)
            .unwrap();
        let psd: Vec<f64> = (0..b.bin_count()).map(|k| 0.1 + (k as f64).sin().abs()).collect();
        let e = band_energies(&psd, &b).unwrap();
        let band_total: f64 = e.iter().sum();
        let covered_total: f64 = b.covered_bins().map(|k| psd[k]).sum();
        assert!(
            (band_total - covered_total).abs() <= 1e-12 * covered_total,
            "band total {band_total} vs covered bin total {covered_total}"
        );
    }

    #[test]
    fn band_energies_match_double_sum_oracle() {
        let b = build_filterbank(&params_512(), &BandTable::sii_critical(), BandShape::Triangular)
            .unwrap();
        let psd: Vec<f64> = (0..b.bin_count())
            .map(|k| ((k * 2654435761) % 1000) as f64 / 1000.0)
            .collect();
        let e = band_energies(&psd, &b).unwrap();
        for j in 0..b.band_count() {
            let mut direct = 0.0;
            for k in 0..b.bin_count() {
                direct += b.weight(j, k) * psd[k];
            }
            assert_eq!(e[j], direct);
        }
    }

    #[test]
    fn triangular_columns_also_sum_to_one() {
        let b = build_filterbank(&params_512(), &BandTable::sii_critical(), BandShape::Triangular)
            .unwrap();
        for k in 0..b.bin_count() {
            if b.is_covered(k) {
                let col: f64 = (0..b.band_count()).map(|j| b.weight(j, k)).sum();
                assert!((col - 1.0).abs() <= 1e-12, "bin {k}: column sum {col}");
            }
        }
    }

    #[test]
    fn filterbank_is_deterministic() {
        let a = build_filterbank(&params_512(), &BandTable::sii_critical(), BandShape::Rectangular)
            .unwrap();
        let b = build_filterbank(&params_512(), &BandTable::sii_critical(), BandShape::Rectangular)
            .unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn mi_weights_reproduce_reported_interval() {
        let w = mi_weights_from_gamma(&[0.06, 0.01]).unwrap();
        // 1 - 2^(-0.12) and 1 - 2^(-0.02), to the four decimals quoted for
        // the interval [0.0138, 0.0798].
        assert!((w.rho0_sq[0] - 0.07981234937512492).abs() <= 1e-15);
        assert!((w.rho0_sq[1] - 0.013767295506640827).abs() <= 1e-15);
        assert!((w.rho0_sq[0] - 0.0798).abs() < 5e-5);
        assert!((w.rho0_sq[1] - 0.0138).abs() < 5e-5);
    }

    #[test]
    fn mi_weights_equal_gamma_exactly_under_sii_mapping() {
        let gamma: Vec<f64> = BandTable::sii_critical().rows.iter().map(|r| r.gamma).collect();
        let w = mi_weights_from_gamma(&gamma).unwrap();
        for (g, i) in gamma.iter().zip(w.mi_weights.iter()) {
            assert!(
                (g - i).abs() <= 1e-15 * g,
                "I_j = {i} deviates from gamma = {g}"
            );
        }
    }

    #[test]
    fn rho_override_gives_uniform_weights() {
        let w = mi_weights_from_rho0(0.75, 21).unwrap();
        for &r in &w.rho0_sq {
            assert_eq!(r, 0.5625);
        }
        for &i in &w.mi_weights {
            assert!((i - 0.5963225389711979).abs() <= 1e-15);
        }
    }

    #[test]
    fn mi_weights_reject_bad_inputs() {
        assert!(mi_weights_from_gamma(&[0.0]).is_err());
        assert!(mi_weights_from_gamma(&[-0.1]).is_err());
        assert!(mi_weights_from_rho0(1.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn energy_preservation_for_random_psd(values in proptest::collection::vec(0.0f64..10.0, 257)) {
            let p = FrameParams::new(16_000, 512, 256, Window::Hann).unwrap();
            let b = build_filterbank(&p, &BandTable::sii_critical(), BandShape::Rectangular).unwrap();
            let e = band_energies(&values, &b).unwrap();
            let band_total: f64 = e.iter().sum();
            let covered_total: f64 = b.covered_bins().map(|k| values[k]).sum();
            prop_assert!((band_total - covered_total).abs() <= 1e-12 * covered_total.max(1e-12));
        }
    }
}
