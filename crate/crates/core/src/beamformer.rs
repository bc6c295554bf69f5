//! MVDR beamforming: weight computation, residual noise, and application.
//!
//! Per bin, the weights minimize output noise power subject to unit gain
//! toward the source steering vector: `w = Sigma^-1 d / (d^H Sigma^-1 d)`.
//! The covariance is diagonally loaded relative to its trace before the
//! solve; the reported residual noise uses the unloaded covariance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{BinStatistics, HermMatrix, StftTensor};

/// Default diagonal loading relative to `trace(Sigma)/M`.
pub const DEFAULT_LOADING_REL: f64 = 1e-6;

/// Per-bin beamformer weight vectors.
#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    /// `w[k][m]`, one weight vector per bin.
    pub w: Vec<Vec<Complex64>>,
    /// Relative diagonal loading used in the solve.
    pub loading_rel: f64,
}

impl BeamformerWeights {
    pub fn bins(&self) -> usize {
        self.w.len()
    }
    pub fn mics(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }
}

/// Inner product `a^H b`.
fn dotc(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// MVDR weights per bin from the scene statistics.
///
/// `loading_rel` scales `trace(Sigma)/M` and is added to the diagonal before
/// the Hermitian Cholesky solve. The result is renormalized so the
/// distortionless response `w^H d = 1` holds to rounding.
pub fn mvdr_weights(stats: &BinStatistics, loading_rel: f64) -> Result<BeamformerWeights> {
    stats.validate()?;
    let m = stats.mics();
    let mut w = Vec::with_capacity(stats.bins());
    for bin in 0..stats.bins() {
        let cov = &stats.cov_u[bin];
        let d = &stats.steering[bin];
        let loading = loading_rel * cov.trace() / m as f64;
        let loaded = cov.add_diagonal(loading);

        let a = DMatrix::from_fn(m, m, |r, c| loaded.at(r, c));
        let chol = a
            .cholesky()
            .ok_or(Error::SingularCovariance { bin })?;
        let rhs = DVector::from_fn(m, |r, _| d[r]);
        let x = chol.solve(&rhs);

        let denom: Complex64 = (0..m).map(|r| d[r].conj() * x[r]).sum();
        if denom.norm() == 0.0 {
            return Err(Error::SingularCovariance { bin });
        }
        let mut wk: Vec<Complex64> = (0..m).map(|r| x[r] / denom).collect();
        // Snap the distortionless response to exactly one.
        let resp = dotc(&wk, d);
        if resp.norm() > 0.0 {
            let corr = resp.conj();
            for v in wk.iter_mut() {
                *v /= corr;
            }
        }
        w.push(wk);
    }
    Ok(BeamformerWeights { w, loading_rel })
}

/// Residual far-end noise after beamforming, `w^H Sigma_U w` per bin, using
/// the unloaded covariance.
pub fn residual_noise_power(weights: &BeamformerWeights, stats: &BinStatistics) -> Result<Vec<f64>> {
    if weights.bins() != stats.bins() || weights.mics() != stats.mics() {
        return Err(Error::LengthMismatch(
            "beamformer weights and statistics disagree on shape".to_string(),
        ));
    }
    Ok(weights
        .w
        .iter()
        .zip(stats.cov_u.iter())
        .map(|(wk, cov)| cov.quadratic_form(wk).max(0.0))
        .collect())
}

/// Apply per-bin weight vectors to a multichannel tensor:
/// `out[k,i] = w_k^H x_{k,i}`.
pub fn apply_weights(tensor: &StftTensor, w: &[Vec<Complex64>]) -> Result<StftTensor> {
    if w.len() != tensor.bins() {
        return Err(Error::LengthMismatch(format!(
            "weights cover {} bins, tensor has {}",
            w.len(),
            tensor.bins()
        )));
    }
    let m = tensor.channels();
    if w.iter().any(|wk| wk.len() != m) {
        return Err(Error::LengthMismatch(format!(
            "weight vectors are not all length {m}"
        )));
    }
    let mut out = StftTensor::zeros(*tensor.params(), 1, tensor.frames(), tensor.signal_len());
    for fr in 0..tensor.frames() {
        for k in 0..tensor.bins() {
            let mut acc = Complex64::new(0.0, 0.0);
            for ch in 0..m {
                acc += w[k][ch].conj() * tensor.coeff(ch, fr, k);
            }
            out.frame_mut(0, fr)[k] = acc;
        }
    }
    Ok(out)
}

/// Largest distortionless-response deviation `max_k |w_k^H d_k - 1|`.
pub fn distortion_error(weights: &BeamformerWeights, stats: &BinStatistics) -> f64 {
    weights
        .w
        .iter()
        .zip(stats.steering.iter())
        .map(|(wk, d)| (dotc(wk, d) - Complex64::new(1.0, 0.0)).norm())
        .fold(0.0, f64::max)
}

/// Helper for tests and scenario assembly: statistics with the given per-bin
/// quantities repeated verbatim.
pub fn stats_from_parts(
    sigma_s2: Vec<f64>,
    cov_u: Vec<HermMatrix>,
    sigma_n2: Vec<f64>,
    steering: Vec<Vec<Complex64>>,
) -> BinStatistics {
    BinStatistics {
        sigma_s2,
        cov_u,
        sigma_n2,
        steering,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{analyze, FrameParams};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_bin_stats(cov: HermMatrix, d: Vec<Complex64>) -> BinStatistics {
        BinStatistics {
            sigma_s2: vec![1.0],
            cov_u: vec![cov],
            sigma_n2: vec![1.0],
            steering: vec![d],
        }
    }

    fn random_psd_matrix(m: usize, rng: &mut StdRng) -> HermMatrix {
        // A A^H plus a small ridge is Hermitian positive definite.
        let a: Vec<Complex64> = (0..m * m)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        HermMatrix::from_upper(m, |r, s| {
            let mut acc = c(0.0, 0.0);
            for t in 0..m {
                acc += a[r * m + t] * a[s * m + t].conj();
            }
            if r == s {
                acc += c(0.01, 0.0);
            }
            acc
        })
    }

    fn random_unit(m: usize, rng: &mut StdRng) -> Vec<Complex64> {
        let v: Vec<Complex64> = (0..m)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }

    /// Random vector with v^H d = 1.
    fn random_distortionless(d: &[Complex64], rng: &mut StdRng) -> Vec<Complex64> {
        let m = d.len();
        let u: Vec<Complex64> = (0..m)
            .map(|_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect();
        let dd: f64 = d.iter().map(|x| x.norm_sqr()).sum();
        let du = dotc(d, &u); // d^H u
        // v = u - ((d^H u - 1)/ (d^H d)) d  => d^H v = 1  => v^H d = 1.
        let coef = (du - c(1.0, 0.0)) / dd;
        u.iter().zip(d.iter()).map(|(ui, di)| ui - coef * di).collect()
    }

    #[test]
    fn scalar_channel_reduces_to_inverse_gain() {
        let d = c(0.3, -0.4);
        let stats = single_bin_stats(
            HermMatrix::from_upper(1, |_, _| c(2.5, 0.0)),
            vec![d],
        );
        let w = mvdr_weights(&stats, 0.0).unwrap();
        let expected = d / d.norm_sqr();
        assert!((w.w[0][0] - expected).norm() <= 1e-14);
        assert!(distortion_error(&w, &stats) <= 1e-12);
        // Residual sigma^2 / |d|^2.
        let r = residual_noise_power(&w, &stats).unwrap();
        assert!((r[0] - 2.5 / d.norm_sqr()).abs() <= 1e-12);
    }

    #[test]
    fn identity_covariance_gives_matched_filter() {
        let d = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let stats = single_bin_stats(
            HermMatrix::from_upper(2, |r, s| if r == s { c(1.0, 0.0) } else { c(0.0, 0.0) }),
            d.clone(),
        );
        let w = mvdr_weights(&stats, 0.0).unwrap();
        let dd: f64 = d.iter().map(|x| x.norm_sqr()).sum();
        for m in 0..2 {
            assert!((w.w[0][m] - d[m] / dd).norm() <= 1e-14);
        }
    }

    #[test]
    fn mvdr_is_optimal_among_random_distortionless_vectors() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..20 {
            let cov = random_psd_matrix(2, &mut rng);
            let d = random_unit(2, &mut rng);
            let stats = single_bin_stats(cov.clone(), d.clone());
            let w = mvdr_weights(&stats, DEFAULT_LOADING_REL).unwrap();
            let loading = DEFAULT_LOADING_REL * cov.trace() / 2.0;
            let loaded = cov.add_diagonal(loading);
            let opt = loaded.quadratic_form(&w.w[0]);
            for _ in 0..1000 {
                let v = random_distortionless(&d, &mut rng);
                let p = loaded.quadratic_form(&v);
                assert!(
                    opt <= p + 1e-12,
                    "beamformer power {opt} exceeds perturbation power {p}"
                );
            }
        }
    }

    #[test]
    fn distortionless_response_holds_everywhere() {
        let mut rng = StdRng::seed_from_u64(5);
        let bins = 64;
        let stats = BinStatistics {
            sigma_s2: vec![1.0; bins],
            cov_u: (0..bins).map(|_| random_psd_matrix(3, &mut rng)).collect(),
            sigma_n2: vec![1.0; bins],
            steering: (0..bins).map(|_| random_unit(3, &mut rng)).collect(),
        };
        let w = mvdr_weights(&stats, DEFAULT_LOADING_REL).unwrap();
        assert!(
            distortion_error(&w, &stats) <= 1e-10,
            "distortion {} above bound",
            distortion_error(&w, &stats)
        );
    }

    #[test]
    fn covariance_scale_invariance() {
        let mut rng = StdRng::seed_from_u64(17);
        let cov = random_psd_matrix(2, &mut rng);
        let d = random_unit(2, &mut rng);
        let w1 = mvdr_weights(&single_bin_stats(cov.clone(), d.clone()), 1e-6).unwrap();
        let w2 = mvdr_weights(&single_bin_stats(cov.scaled(137.0), d), 1e-6).unwrap();
        for m in 0..2 {
            let rel = (w1.w[0][m] - w2.w[0][m]).norm() / w1.w[0][m].norm();
            assert!(rel <= 1e-12, "scale variance {rel:.3e} at element {m}");
        }
    }

    #[test]
    fn zero_covariance_residual_is_zero() {
        let stats = single_bin_stats(HermMatrix::zeros(2), vec![c(1.0, 0.0), c(1.0, 0.0)]);
        // Any weights will do; residual uses the unloaded zero matrix.
        let w = BeamformerWeights {
            w: vec![vec![c(0.5, 0.0), c(0.5, 0.0)]],
            loading_rel: 0.0,
        };
        let r = residual_noise_power(&w, &stats).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn singular_covariance_without_loading_errors() {
        let stats = single_bin_stats(HermMatrix::zeros(2), vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            mvdr_weights(&stats, 0.0),
            Err(Error::SingularCovariance { .. })
        ));
    }

    #[test]
    fn residual_matches_quadratic_form_oracle() {
        let mut rng = StdRng::seed_from_u64(23);
        let cov = random_psd_matrix(2, &mut rng);
        let d = random_unit(2, &mut rng);
        let stats = single_bin_stats(cov.clone(), d);
        let w = mvdr_weights(&stats, 1e-6).unwrap();
        let r = residual_noise_power(&w, &stats).unwrap();
        // Direct double loop.
        let mut direct = c(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                direct += w.w[0][a].conj() * cov.at(a, b) * w.w[0][b];
            }
        }
        assert!((r[0] - direct.re).abs() <= 1e-12 * direct.re.abs().max(1e-30));
    }

    #[test]
    fn apply_weights_matches_inner_product_oracle() {
        let p = FrameParams::default_16k();
        let mut rng = StdRng::seed_from_u64(3);
        let chans: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let t = analyze(&chans, &p).unwrap();
        let w: Vec<Vec<Complex64>> = (0..p.bins())
            .map(|_| vec![c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)); 2])
            .collect();
        let out = apply_weights(&t, &w).unwrap();
        for fr in 0..t.frames() {
            for k in (0..p.bins()).step_by(17) {
                let expect = w[k][0].conj() * t.coeff(0, fr, k) + w[k][1].conj() * t.coeff(1, fr, k);
                assert!((out.coeff(0, fr, k) - expect).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn noise_free_steered_input_passes_unchanged() {
        // x = d * s per bin: beamformed output must equal s exactly.
        let p = FrameParams::default_16k();
        let mut rng = StdRng::seed_from_u64(8);
        let s: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mono = analyze(&[s], &p).unwrap();
        let d: Vec<Vec<Complex64>> = (0..p.bins())
            .map(|k| {
                let phase = 0.001 * k as f64;
                vec![
                    c(phase.cos(), phase.sin()) * 0.7,
                    c((2.0 * phase).cos(), (2.0 * phase).sin()) * 0.5,
                ]
            })
            .collect();
        let mut mics = StftTensor::zeros(p, 2, mono.frames(), mono.signal_len());
        for fr in 0..mono.frames() {
            for k in 0..p.bins() {
                for m in 0..2 {
                    mics.frame_mut(m, fr)[k] = d[k][m] * mono.coeff(0, fr, k);
                }
            }
        }
        let cov: Vec<HermMatrix> = (0..p.bins())
            .map(|_| HermMatrix::from_upper(2, |r, s| if r == s { c(1.0, 0.0) } else { c(0.2, 0.1) }))
            .collect();
        let stats = BinStatistics {
            sigma_s2: vec![1.0; p.bins()],
            cov_u: cov,
            sigma_n2: vec![1.0; p.bins()],
            steering: d,
        };
        let w = mvdr_weights(&stats, 1e-6).unwrap();
        let out = apply_weights(&mics, &w.w).unwrap();
        for fr in 0..mono.frames() {
            for k in (0..p.bins()).step_by(13) {
                let err = (out.coeff(0, fr, k) - mono.coeff(0, fr, k)).norm();
                assert!(
                    err <= 1e-12 * mono.coeff(0, fr, k).norm().max(1.0),
                    "frame {fr} bin {k}: error {err:.3e}"
                );
            }
        }
    }

    #[test]
    fn single_mic_unit_weight_is_identity() {
        let p = FrameParams::default_16k();
        let mut rng = StdRng::seed_from_u64(12);
        let s: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = analyze(&[s], &p).unwrap();
        let w = vec![vec![c(1.0, 0.0)]; p.bins()];
        let out = apply_weights(&t, &w).unwrap();
        for fr in 0..t.frames() {
            for k in 0..p.bins() {
                assert_eq!(out.coeff(0, fr, k), t.coeff(0, fr, k));
            }
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = FrameParams::default_16k();
        let t = analyze(&[vec![0.1; 1000]], &p).unwrap();
        let w = vec![vec![c(1.0, 0.0); 2]; p.bins()];
        assert!(apply_weights(&t, &w).is_err());
    }
}
