//! Closed-form audibility-optimal band gains under an equal-power constraint.
//!
//! Given per-band speech energy `s2`, residual (beamformed) far-end noise
//! energy `b2`, near-end noise energy `n2`, and positive objective weights,
//! the solver maximizes
//!
//! ```text
//!   sum_j weight_j * a_j s2_j / (a_j s2_j + a_j b2_j + n2_j)
//! ```
//!
//! over gains `a_j >= 0` subject to `sum_j a_j s2_j = budget`. Each term is
//! concave in `a_j`, so the KKT system has a unique solution: per band a
//! water-filling-style closed form in the multiplier `nu`, with the active
//! set found by sweeping candidate sets in threshold order. A grid-search
//! and a projected-gradient oracle provide independent verification paths.

use num_complex::Complex64;

use crate::bands::BandSystem;
use crate::beamformer::BeamformerWeights;
use crate::error::{Error, Result};

/// Gain assigned to bands whose near-end noise is exactly zero. For those
/// bands audibility is independent of any positive gain, so they get a
/// negligible slice of the budget instead of being silenced.
pub const MIN_DEGENERATE_GAIN: f64 = 1e-8;

/// One instance of the band gain allocation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    /// Speech energy per band (post-beamformer speech equals dry speech).
    pub s2: Vec<f64>,
    /// Residual far-end noise energy per band after beamforming.
    pub b2: Vec<f64>,
    /// Near-end noise energy per band.
    pub n2: Vec<f64>,
    /// Positive objective weight per band.
    pub weights: Vec<f64>,
    /// Total speech energy the gains must reproduce, `r`.
    pub budget: f64,
}

impl AllocationProblem {
    /// Problem with the canonical equal-power budget `r = sum_j s2_j`.
    pub fn new(s2: Vec<f64>, b2: Vec<f64>, n2: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let budget = s2.iter().sum();
        Self::with_budget(s2, b2, n2, weights, budget)
    }

    pub fn with_budget(
        s2: Vec<f64>,
        b2: Vec<f64>,
        n2: Vec<f64>,
        weights: Vec<f64>,
        budget: f64,
    ) -> Result<Self> {
        let p = AllocationProblem {
            s2,
            b2,
            n2,
            weights,
            budget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn band_count(&self) -> usize {
        self.s2.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.s2.len();
        if j == 0 {
            return Err(Error::InvalidProblem("no bands".to_string()));
        }
        if self.b2.len() != j || self.n2.len() != j || self.weights.len() != j {
            return Err(Error::InvalidProblem(format!(
                "sequence lengths disagree: s2 {}, b2 {}, n2 {}, weights {}",
                j,
                self.b2.len(),
                self.n2.len(),
                self.weights.len()
            )));
        }
        if self.s2.iter().any(|v| !v.is_finite() || *v < 0.0)
            || self.b2.iter().any(|v| !v.is_finite() || *v < 0.0)
            || self.n2.iter().any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidProblem(
                "energies must be finite and non-negative".to_string(),
            ));
        }
        if self.weights.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "weights must be positive and finite".to_string(),
            ));
        }
        if !self.s2.iter().any(|&v| v > 0.0) {
            return Err(Error::InfeasibleProblem);
        }
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return Err(Error::InvalidProblem(format!(
                "budget {} must be positive and finite",
                self.budget
            )));
        }
        Ok(())
    }
}

/// Solver output: band gains, the multiplier, and the active set.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSolution {
    /// Optimal gain per band.
    pub alpha_band: Vec<f64>,
    /// Lagrange multiplier of the power constraint (0 in the noise-free case).
    pub nu: f64,
    /// Bands with strictly positive gain from the KKT system. Degenerate
    /// zero-noise bands (gain pinned to [`MIN_DEGENERATE_GAIN`]) are listed
    /// separately.
    pub active_set: Vec<usize>,
    /// Bands handled by the zero-near-end-noise policy.
    pub degenerate_bands: Vec<usize>,
    /// Achieved weighted audibility.
    pub objective_value: f64,
    /// Set when every speech-carrying band had zero near-end noise: any
    /// feasible gain is optimal and the solver returns uniform unit gains.
    pub noise_free: bool,
}

impl GainSolution {
    /// Map the band gains onto STFT bins through the filterbank.
    pub fn bin_gains(&self, bands: &BandSystem) -> Result<Vec<f64>> {
        bin_gains_from_band_gains(&self.alpha_band, bands)
    }
}

/// Weighted audibility `sum_j w_j a_j s2_j / (a_j s2_j + a_j b2_j + n2_j)`.
///
/// A band whose numerator and denominator are both zero contributes nothing.
pub fn weighted_audibility(alpha: &[f64], problem: &AllocationProblem) -> Result<f64> {
    if alpha.len() != problem.band_count() {
        return Err(Error::LengthMismatch(format!(
            "alpha has {} entries, problem has {} bands",
            alpha.len(),
            problem.band_count()
        )));
    }
    if alpha.iter().any(|&a| a < 0.0 || !a.is_finite()) {
        return Err(Error::InvalidProblem(
            "gains must be finite and non-negative".to_string(),
        ));
    }
    let mut total = 0.0;
    for j in 0..problem.band_count() {
        let num = alpha[j] * problem.s2[j];
        let den = alpha[j] * (problem.s2[j] + problem.b2[j]) + problem.n2[j];
        if den > 0.0 {
            total += problem.weights[j] * num / den;
        }
    }
    Ok(total)
}

/// Per-band closed form for a given multiplier:
/// `a_j = max( sqrt(n2_j w_j) / (sqrt(nu) (s2_j + b2_j)) - n2_j / (s2_j + b2_j), 0 )`.
///
/// Bands with `s2 + b2 = 0` get zero. Non-increasing in `nu` per band.
pub fn alpha_from_nu(nu: f64, problem: &AllocationProblem) -> Result<Vec<f64>> {
    if !(nu > 0.0) {
        return Err(Error::InvalidProblem(format!("nu {nu} must be positive")));
    }
    let inv_sqrt_nu = 1.0 / nu.sqrt();
    Ok((0..problem.band_count())
        .map(|j| {
            let d = problem.s2[j] + problem.b2[j];
            if d <= 0.0 {
                0.0
            } else {
                (((problem.n2[j] * problem.weights[j]).sqrt() * inv_sqrt_nu - problem.n2[j]) / d)
                    .max(0.0)
            }
        })
        .collect())
}

/// Multiplier closing the power budget over a fixed active set:
/// `1/sqrt(nu) = (r + sum s2 n2 / (s2+b2)) / (sum s2 sqrt(n2 w) / (s2+b2))`.
pub fn nu_for_active_set(active: &[usize], problem: &AllocationProblem) -> Result<f64> {
    if active.is_empty() {
        return Err(Error::InvalidProblem("empty active set".to_string()));
    }
    let mut num = problem.budget;
    let mut den = 0.0;
    for &j in active {
        if j >= problem.band_count() {
            return Err(Error::InvalidProblem(format!("band index {j} out of range")));
        }
        let d = problem.s2[j] + problem.b2[j];
        if d <= 0.0 {
            return Err(Error::InvalidProblem(format!(
                "band {j} has zero s2 + b2 but is in the active set"
            )));
        }
        num += problem.s2[j] * problem.n2[j] / d;
        den += problem.s2[j] * (problem.n2[j] * problem.weights[j]).sqrt() / d;
    }
    if den <= 0.0 {
        return Err(Error::InvalidProblem(
            "active set has no band with positive n2 * weight".to_string(),
        ));
    }
    let inv_sqrt_nu = num / den;
    Ok(1.0 / (inv_sqrt_nu * inv_sqrt_nu))
}

/// Globally optimal band gains.
///
/// Bands are ranked by the multiplier threshold `weight_j / n2_j` at which
/// their closed-form gain turns positive; candidate active sets are the
/// prefixes of that ranking (threshold ties enter together). The first
/// prefix whose multiplier is consistent with its own membership is the KKT
/// solution. A bisection on the multiplier serves as fallback.
pub fn optimal_band_gains(problem: &AllocationProblem) -> Result<GainSolution> {
    problem.validate()?;
    let j_count = problem.band_count();

    // Bands that can carry speech energy take part in the optimization.
    let speech: Vec<usize> = (0..j_count).filter(|&j| problem.s2[j] > 0.0).collect();

    // Zero near-end noise in every speech band: audibility does not depend
    // on the gains, any feasible point is optimal; return unit gains.
    if speech.iter().all(|&j| problem.n2[j] == 0.0) {
        let mut alpha = vec![0.0; j_count];
        for &j in &speech {
            alpha[j] = 1.0;
        }
        let objective_value = weighted_audibility(&alpha, problem)?;
        return Ok(GainSolution {
            alpha_band: alpha,
            nu: 0.0,
            active_set: speech,
            degenerate_bands: Vec::new(),
            objective_value,
            noise_free: true,
        });
    }

    // Zero-noise bands get a negligible pinned gain; their budget share is
    // deducted before the active-set algebra runs.
    let degenerate: Vec<usize> = speech
        .iter()
        .copied()
        .filter(|&j| problem.n2[j] == 0.0)
        .collect();
    let candidates: Vec<usize> = speech
        .iter()
        .copied()
        .filter(|&j| problem.n2[j] > 0.0)
        .collect();
    let reserved: f64 = degenerate
        .iter()
        .map(|&j| MIN_DEGENERATE_GAIN * problem.s2[j])
        .sum();
    let reduced_budget = problem.budget - reserved;
    if !(reduced_budget > 0.0) {
        return Err(Error::InvalidProblem(format!(
            "budget {} is exhausted by degenerate bands",
            problem.budget
        )));
    }
    let reduced = AllocationProblem {
        s2: problem.s2.clone(),
        b2: problem.b2.clone(),
        n2: problem.n2.clone(),
        weights: problem.weights.clone(),
        budget: reduced_budget,
    };

    let mut solution = solve_by_threshold_sweep(&reduced, &candidates)
        .or_else(|_| solve_by_nu_bisection(&reduced, &candidates))?;

    for &j in &degenerate {
        solution.alpha[j] = MIN_DEGENERATE_GAIN;
    }
    let objective_value = weighted_audibility(&solution.alpha, problem)?;
    Ok(GainSolution {
        alpha_band: solution.alpha,
        nu: solution.nu,
        active_set: solution.active,
        degenerate_bands: degenerate,
        objective_value,
        noise_free: false,
    })
}

struct ActiveSolution {
    alpha: Vec<f64>,
    nu: f64,
    active: Vec<usize>,
}

fn solve_by_threshold_sweep(
    problem: &AllocationProblem,
    candidates: &[usize],
) -> Result<ActiveSolution> {
    // Sort by the nu threshold at which each band activates, descending.
    let mut order: Vec<usize> = candidates.to_vec();
    let threshold = |j: usize| problem.weights[j] / problem.n2[j];
    order.sort_by(|&a, &b| {
        threshold(b)
            .partial_cmp(&threshold(a))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut end = 0;
    while end < order.len() {
        // Extend over threshold ties so tied bands enter together.
        let mut next = end + 1;
        while next < order.len() && threshold(order[next]) == threshold(order[end]) {
            next += 1;
        }
        end = next;

        let prefix = &order[..end];
        let nu = match nu_for_active_set(prefix, problem) {
            Ok(v) => v,
            Err(_) => continue,
        };
        // Membership consistency: every in-set band strictly above its
        // activation threshold, every out-of-set band at or below it.
        let min_in = threshold(prefix[end - 1]);
        if !(nu < min_in) {
            continue;
        }
        if end < order.len() && nu < threshold(order[end]) {
            continue;
        }

        let alpha_all = alpha_from_nu(nu, problem)?;
        let mut alpha = vec![0.0; problem.band_count()];
        let mut active = prefix.to_vec();
        for &j in prefix {
            alpha[j] = alpha_all[j];
        }
        active.sort_unstable();
        return Ok(ActiveSolution { alpha, nu, active });
    }
    Err(Error::InvalidProblem(
        "threshold sweep found no consistent active set".to_string(),
    ))
}

/// Fallback verifier: bisection on `nu` until the budget closes.
/// `sum_j alpha_j(nu) s2_j` is continuous and non-increasing in `nu`.
fn solve_by_nu_bisection(
    problem: &AllocationProblem,
    candidates: &[usize],
) -> Result<ActiveSolution> {
    if candidates.is_empty() {
        return Err(Error::InvalidProblem(
            "no optimizable band with positive noise".to_string(),
        ));
    }
    let spent = |nu: f64| -> Result<f64> {
        let alpha = alpha_from_nu(nu, problem)?;
        Ok(candidates.iter().map(|&j| alpha[j] * problem.s2[j]).sum())
    };
    let mut hi = candidates
        .iter()
        .map(|&j| problem.weights[j] / problem.n2[j])
        .fold(0.0f64, f64::max);
    let mut lo = hi;
    for _ in 0..4096 {
        if spent(lo)? >= problem.budget {
            break;
        }
        lo *= 0.5;
    }
    if spent(lo)? < problem.budget {
        return Err(Error::InvalidProblem(
            "bisection failed to bracket the multiplier".to_string(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if spent(mid)? >= problem.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = lo;
    let alpha_all = alpha_from_nu(nu, problem)?;
    let mut alpha = vec![0.0; problem.band_count()];
    let mut active = Vec::new();
    for &j in candidates {
        if alpha_all[j] > 0.0 {
            alpha[j] = alpha_all[j];
            active.push(j);
        }
    }
    active.sort_unstable();
    Ok(ActiveSolution { alpha, nu, active })
}

/// KKT residuals of a solution, for verification.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// Max over active bands of the stationarity defect relative to `nu s2`.
    pub stationarity_rel: f64,
    /// Budget defect relative to the budget.
    pub primal_rel: f64,
    /// Smallest implied inequality multiplier over inactive bands
    /// (non-negative at an exact solution).
    pub dual_min: f64,
}

pub fn kkt_residuals(solution: &GainSolution, problem: &AllocationProblem) -> KktResiduals {
    let mut stationarity_rel = 0.0f64;
    for &j in &solution.active_set {
        if solution.noise_free {
            break;
        }
        let d = problem.s2[j] + problem.b2[j];
        let denom = solution.alpha_band[j] * d + problem.n2[j];
        let grad = problem.weights[j] * problem.s2[j] * problem.n2[j] / (denom * denom);
        let target = solution.nu * problem.s2[j];
        if target > 0.0 {
            stationarity_rel = stationarity_rel.max((grad - target).abs() / target);
        }
    }
    let spent: f64 = solution
        .alpha_band
        .iter()
        .zip(problem.s2.iter())
        .map(|(a, s)| a * s)
        .sum();
    let primal_rel = (spent - problem.budget).abs() / problem.budget;

    let mut dual_min = f64::INFINITY;
    for j in 0..problem.band_count() {
        if problem.s2[j] == 0.0
            || problem.n2[j] == 0.0
            || solution.active_set.contains(&j)
        {
            continue;
        }
        // lambda_j = s2_j (nu - w_j / n2_j), written so the comparison that
        // excluded the band is reproduced exactly.
        let lambda = problem.s2[j] * (solution.nu - problem.weights[j] / problem.n2[j]);
        dual_min = dual_min.min(lambda);
    }
    if dual_min == f64::INFINITY {
        dual_min = 0.0;
    }
    KktResiduals {
        stationarity_rel,
        primal_rel,
        dual_min,
    }
}

/// Verification mode for [`oracle_band_gains`].
#[derive(Debug, Clone, Copy)]
pub enum OracleMode {
    /// Enumerate the constraint simplex at a fixed energy step (J <= 8).
    Grid { step: f64 },
    /// Projected gradient ascent plus a derivative-only dual polish.
    ProjectedGradient,
}

/// Independent maximizer of [`weighted_audibility`] over the constraint set,
/// used to verify [`optimal_band_gains`]. Neither mode touches the KKT
/// closed forms.
pub fn oracle_band_gains(problem: &AllocationProblem, mode: OracleMode) -> Result<Vec<f64>> {
    problem.validate()?;
    match mode {
        OracleMode::Grid { step } => grid_oracle(problem, step),
        OracleMode::ProjectedGradient => pg_oracle(problem),
    }
}

const GRID_POINT_CAP: u128 = 40_000_000;

fn grid_oracle(problem: &AllocationProblem, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || step > problem.budget / 10.0 {
        return Err(Error::GridTooCoarse {
            step,
            budget: problem.budget,
        });
    }
    let speech: Vec<usize> = (0..problem.band_count())
        .filter(|&j| problem.s2[j] > 0.0)
        .collect();
    let units = (problem.budget / step).round() as u64;
    let points = simplex_points(units, speech.len() as u64);
    if points > GRID_POINT_CAP {
        return Err(Error::GridTooLarge {
            points,
            cap: GRID_POINT_CAP,
        });
    }

    let mut best_alpha = vec![0.0; problem.band_count()];
    let mut best_value = f64::NEG_INFINITY;
    let mut assignment = vec![0u64; speech.len()];
    let mut alpha = vec![0.0; problem.band_count()];
    enumerate_compositions(units, 0, &mut assignment, &mut |units_assigned| {
        for (slot, &j) in speech.iter().enumerate() {
            alpha[j] = units_assigned[slot] as f64 / units as f64 * problem.budget
                / problem.s2[j];
        }
        let value = weighted_audibility(&alpha, problem).expect("alpha is feasible");
        if value > best_value {
            best_value = value;
            best_alpha.copy_from_slice(&alpha);
        }
    });
    Ok(best_alpha)
}

fn simplex_points(units: u64, parts: u64) -> u128 {
    // C(units + parts - 1, parts - 1), saturating.
    if parts == 0 {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..(parts - 1) as u128 {
        acc = acc.saturating_mul(units as u128 + i + 1);
        acc /= i + 1;
        if acc > GRID_POINT_CAP * 2 {
            return acc;
        }
    }
    acc
}

fn enumerate_compositions(
    remaining: u64,
    slot: usize,
    assignment: &mut Vec<u64>,
    visit: &mut impl FnMut(&[u64]),
) {
    if slot + 1 == assignment.len() {
        assignment[slot] = remaining;
        visit(assignment);
        return;
    }
    for take in 0..=remaining {
        assignment[slot] = take;
        enumerate_compositions(remaining - take, slot + 1, assignment, visit);
    }
}

/// Projected-gradient oracle in transformed coordinates `t_j = a_j s2_j`,
/// where the constraint set is the plain simplex `{t >= 0, sum t = r}`.
///
/// Phase one ascends with Barzilai-Borwein steps and exact simplex
/// projection until the objective improves by less than 1e-12 per step.
/// Phase two polishes by bisecting the constraint multiplier, inverting the
/// per-band derivative numerically (bisection plus Newton on the gradient);
/// no closed-form gain or multiplier expression is used anywhere.
fn pg_oracle(problem: &AllocationProblem) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..problem.band_count())
        .filter(|&j| problem.s2[j] > 0.0)
        .collect();
    if idx.iter().any(|&j| problem.n2[j] == 0.0) {
        return Err(Error::InvalidProblem(
            "projected-gradient oracle requires positive near-end noise in speech bands"
                .to_string(),
        ));
    }
    let r = problem.budget;
    let a: Vec<f64> = idx
        .iter()
        .map(|&j| (problem.s2[j] + problem.b2[j]) / problem.s2[j])
        .collect();
    let n: Vec<f64> = idx.iter().map(|&j| problem.n2[j]).collect();
    let w: Vec<f64> = idx.iter().map(|&j| problem.weights[j]).collect();
    let dims = idx.len();

    let value = |t: &[f64]| -> f64 {
        (0..dims)
            .map(|i| {
                let den = a[i] * t[i] + n[i];
                if den > 0.0 {
                    w[i] * t[i] / den
                } else {
                    0.0
                }
            })
            .sum()
    };
    let grad_i = |i: usize, t: f64| -> f64 {
        let den = a[i] * t + n[i];
        w[i] * n[i] / (den * den)
    };

    // Phase one: BB-stepped projected ascent from the unit-gain point.
    let total_s2: f64 = idx.iter().map(|&j| problem.s2[j]).sum();
    let mut t: Vec<f64> = idx.iter().map(|&j| problem.s2[j] * r / total_s2).collect();
    let mut f_cur = value(&t);
    let mut g: Vec<f64> = (0..dims).map(|i| grad_i(i, t[i])).collect();
    let mut step = 1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let mut prev_t = t.clone();
    let mut prev_g = g.clone();
    for iter in 0..20_000 {
        let mut accepted = false;
        let mut local = step;
        for _ in 0..60 {
            let cand: Vec<f64> = (0..dims).map(|i| t[i] + local * g[i]).collect();
            let cand = project_simplex(&cand, r);
            let f_cand = value(&cand);
            if f_cand >= f_cur - 1e-18 {
                prev_t.copy_from_slice(&t);
                prev_g.copy_from_slice(&g);
                let improvement = f_cand - f_cur;
                t = cand;
                f_cur = f_cand;
                g = (0..dims).map(|i| grad_i(i, t[i])).collect();
                // BB step from the last accepted move.
                let mut ss = 0.0;
                let mut sy = 0.0;
                for i in 0..dims {
                    let s_i = t[i] - prev_t[i];
                    let y_i = g[i] - prev_g[i];
                    ss += s_i * s_i;
                    sy += s_i * y_i;
                }
                step = if sy.abs() > 1e-300 {
                    (ss / sy.abs()).clamp(1e-16, 1e16)
                } else {
                    local * 2.0
                };
                accepted = true;
                if iter > 0 && improvement < 1e-12 * f_cur.abs().max(1.0) {
                    return finish_pg(problem, &idx, t, f_cur, &a, &n, &w, r);
                }
                break;
            }
            local *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    finish_pg(problem, &idx, t, f_cur, &a, &n, &w, r)
}

#[allow(clippy::too_many_arguments)]
fn finish_pg(
    problem: &AllocationProblem,
    idx: &[usize],
    t_pg: Vec<f64>,
    f_pg: f64,
    a: &[f64],
    n: &[f64],
    w: &[f64],
    r: f64,
) -> Result<Vec<f64>> {
    let dims = idx.len();
    let value = |t: &[f64]| -> f64 {
        (0..dims)
            .map(|i| {
                let den = a[i] * t[i] + n[i];
                if den > 0.0 {
                    w[i] * t[i] / den
                } else {
                    0.0
                }
            })
            .sum()
    };
    let grad_i = |i: usize, t: f64| -> f64 {
        let den = a[i] * t + n[i];
        w[i] * n[i] / (den * den)
    };

    // Invert grad_i(t) = mu for t >= 0 without any closed form: doubling
    // bracket, bisection, then Newton steps on the gradient.
    let invert = |i: usize, mu: f64| -> f64 {
        if grad_i(i, 0.0) <= mu {
            return 0.0;
        }
        let mut hi = n[i] / a[i].max(1e-300);
        let mut guard = 0;
        while grad_i(i, hi) > mu && guard < 400 {
            hi *= 2.0;
            guard += 1;
        }
        let mut lo = 0.0f64;
        for _ in 0..160 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if grad_i(i, mid) > mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..4 {
            let den = a[i] * t + n[i];
            let f = grad_i(i, t) - mu;
            let df = -2.0 * w[i] * n[i] * a[i] / (den * den * den);
            if df == 0.0 {
                break;
            }
            let next = t - f / df;
            if next.is_finite() && next >= 0.0 {
                t = next;
            }
        }
        t
    };
    let spent = |mu: f64| -> f64 { (0..dims).map(|i| invert(i, mu)).sum() };

    let mu_max = (0..dims).map(|i| grad_i(i, 0.0)).fold(0.0f64, f64::max);
    let mut lo = mu_max;
    let mut guard = 0;
    while spent(lo) < r && guard < 4096 {
        lo *= 0.5;
        guard += 1;
    }
    let mut hi = mu_max;
    if spent(lo) >= r {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if spent(mid) >= r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let mut t_dual: Vec<f64> = (0..dims).map(|i| invert(i, lo)).collect();
    let total: f64 = t_dual.iter().sum();
    if total > 0.0 {
        let scale = r / total;
        for v in t_dual.iter_mut() {
            *v *= scale;
        }
    }
    let f_dual = value(&t_dual);

    let best = if f_dual >= f_pg { t_dual } else { t_pg };
    let mut alpha = vec![0.0; problem.band_count()];
    for (slot, &j) in idx.iter().enumerate() {
        alpha[j] = best[slot] / problem.s2[j];
    }
    Ok(alpha)
}

/// Euclidean projection onto `{x >= 0, sum x = r}` (sort-based).
fn project_simplex(y: &[f64], r: f64) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let candidate = (cumsum - r) / (i + 1) as f64;
        if ui - candidate > 0.0 {
            rho = i + 1;
            theta = candidate;
        }
    }
    if rho == 0 {
        // All mass in one corner as a degenerate fallback.
        theta = (cumsum - r) / y.len() as f64;
    }
    y.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Map band gains to bin gains through the filterbank:
/// `a_k = sum_j |H_j(k)|^2 a_j` on covered bins; uncovered bins are frozen
/// to unit gain and take no part in the power budget.
pub fn bin_gains_from_band_gains(alpha_band: &[f64], bands: &BandSystem) -> Result<Vec<f64>> {
    if alpha_band.len() != bands.band_count() {
        return Err(Error::LengthMismatch(format!(
            "{} band gains for {} bands",
            alpha_band.len(),
            bands.band_count()
        )));
    }
    if alpha_band.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidProblem("negative band gain".to_string()));
    }
    Ok((0..bands.bin_count())
        .map(|k| {
            if bands.is_covered(k) {
                (0..bands.band_count())
                    .map(|j| bands.weight(j, k) * alpha_band[j])
                    .sum()
            } else {
                1.0
            }
        })
        .collect())
}

/// Compose the full processor `v_k = sqrt(a_k) w_k`.
pub fn compose_processor(
    weights: &BeamformerWeights,
    alpha_bin: &[f64],
) -> Result<Vec<Vec<Complex64>>> {
    if alpha_bin.len() != weights.bins() {
        return Err(Error::LengthMismatch(format!(
            "{} bin gains for {} bins",
            alpha_bin.len(),
            weights.bins()
        )));
    }
    if alpha_bin.iter().any(|&a| a < 0.0 || !a.is_finite()) {
        return Err(Error::InvalidProblem(
            "bin gains must be finite and non-negative".to_string(),
        ));
    }
    Ok(weights
        .w
        .iter()
        .zip(alpha_bin.iter())
        .map(|(wk, &a)| {
            let g = a.sqrt();
            wk.iter().map(|&c| c * g).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn problem(s2: &[f64], b2: &[f64], n2: &[f64], w: &[f64]) -> AllocationProblem {
        AllocationProblem::new(s2.to_vec(), b2.to_vec(), n2.to_vec(), w.to_vec()).unwrap()
    }

    /// Random problem with log-uniform energies spanning six orders.
    fn random_problem(rng: &mut StdRng, bands: usize) -> AllocationProblem {
        let log_uniform =
            |rng: &mut StdRng| -> f64 { 10f64.powf(rng.gen_range(-3.0..3.0)) };
        let s2: Vec<f64> = (0..bands).map(|_| log_uniform(rng)).collect();
        let b2: Vec<f64> = (0..bands).map(|_| log_uniform(rng)).collect();
        let n2: Vec<f64> = (0..bands).map(|_| log_uniform(rng)).collect();
        let w: Vec<f64> = (0..bands).map(|_| rng.gen_range(0.01..0.06)).collect();
        AllocationProblem::new(s2, b2, n2, w).unwrap()
    }

    #[test]
    fn audibility_edge_cases() {
        let p = problem(&[1.0], &[0.0], &[1.0], &[1.0]);
        assert_eq!(weighted_audibility(&[0.0], &p).unwrap(), 0.0);
        assert_eq!(weighted_audibility(&[1.0], &p).unwrap(), 0.5);
        // Zero noise everywhere saturates at the weight sum.
        let p2 = problem(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0], &[0.3, 0.7]);
        assert!((weighted_audibility(&[1.0, 1.0], &p2).unwrap() - 1.0).abs() <= 1e-15);
        assert!(weighted_audibility(&[-0.1], &p).is_err());
    }

    #[test]
    fn alpha_from_nu_closed_form_cases() {
        // Zero near-end noise everywhere: formula gives zero for any nu.
        let p = problem(&[1.0, 2.0], &[0.1, 0.2], &[0.0, 0.0], &[1.0, 1.0]);
        for nu in [1e-6, 1.0, 1e6] {
            assert!(alpha_from_nu(nu, &p).unwrap().iter().all(|&a| a == 0.0));
        }
        // Large nu drives all gains to zero.
        let p = problem(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 4.0], &[0.5, 0.5]);
        assert!(alpha_from_nu(1e12, &p).unwrap().iter().all(|&a| a == 0.0));
        assert!(alpha_from_nu(0.0, &p).is_err());
        // Pinned instance: nu = 9/98 gives (4/3, 2/3).
        let alpha = alpha_from_nu(9.0 / 98.0, &p).unwrap();
        assert!((alpha[0] - 4.0 / 3.0).abs() <= 1e-12);
        assert!((alpha[1] - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn alpha_from_nu_is_monotone_in_nu() {
        let mut rng = StdRng::seed_from_u64(2);
        let p = random_problem(&mut rng, 6);
        let mut prev = alpha_from_nu(1e-6, &p).unwrap();
        for exp in -5..=6 {
            let cur = alpha_from_nu(10f64.powi(exp), &p).unwrap();
            for (a, b) in cur.iter().zip(prev.iter()) {
                assert!(a <= b, "gain increased with nu");
            }
            prev = cur;
        }
    }

    #[test]
    fn nu_for_single_band_closes_budget() {
        let p = problem(&[1.0], &[0.0], &[1.0], &[1.0]);
        let nu = nu_for_active_set(&[0], &p).unwrap();
        // 1/sqrt(nu) = (1 + 1)/1 = 2.
        assert!((nu - 0.25).abs() <= 1e-15);
        let alpha = alpha_from_nu(nu, &p).unwrap();
        assert!((alpha[0] - 1.0).abs() <= 1e-12, "alpha {}", alpha[0]);
    }

    #[test]
    fn nu_for_pinned_two_band_instance() {
        let p = problem(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 4.0], &[0.5, 0.5]);
        let nu = nu_for_active_set(&[0, 1], &p).unwrap();
        assert!((nu - 9.0 / 98.0).abs() <= 1e-15, "nu = {nu}");
        assert!(nu_for_active_set(&[], &p).is_err());
    }

    #[test]
    fn symmetric_bands_share_the_gain() {
        let p = problem(&[2.0; 4], &[0.5; 4], &[3.0; 4], &[0.25; 4]);
        let sol = optimal_band_gains(&p).unwrap();
        for &a in &sol.alpha_band {
            assert!((a - sol.alpha_band[0]).abs() <= 1e-12);
            // Budget ratio forces unit gains for identical bands.
            assert!((a - 1.0).abs() <= 1e-9, "gain {a}");
        }
        assert_eq!(sol.active_set, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pinned_two_band_solution_is_exact() {
        let p = problem(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 4.0], &[0.5, 0.5]);
        let sol = optimal_band_gains(&p).unwrap();
        assert!((sol.alpha_band[0] - 4.0 / 3.0).abs() <= 1e-12);
        assert!((sol.alpha_band[1] - 2.0 / 3.0).abs() <= 1e-12);
        assert!((sol.nu - 9.0 / 98.0).abs() <= 1e-15);
        assert_eq!(sol.active_set, vec![0, 1]);
        // Objective value matches the audibility at the optimum (5/14).
        assert!((sol.objective_value - 5.0 / 14.0).abs() <= 1e-14);
    }

    #[test]
    fn heavily_corrupted_band_is_dropped() {
        let p = problem(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 100.0], &[0.5, 0.5]);
        let sol = optimal_band_gains(&p).unwrap();
        assert!((sol.alpha_band[0] - 2.0).abs() <= 1e-12);
        assert_eq!(sol.alpha_band[1], 0.0);
        assert_eq!(sol.active_set, vec![0]);
        assert!((sol.nu - 1.0 / 18.0).abs() <= 1e-15);
    }

    #[test]
    fn noise_free_problem_returns_unit_gains_with_flag() {
        let p = problem(&[1.0, 2.0], &[0.3, 0.1], &[0.0, 0.0], &[0.5, 0.5]);
        let sol = optimal_band_gains(&p).unwrap();
        assert!(sol.noise_free);
        assert_eq!(sol.alpha_band, vec![1.0, 1.0]);
        assert_eq!(sol.nu, 0.0);
    }

    #[test]
    fn degenerate_band_gets_minimal_gain() {
        let p = problem(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]);
        let sol = optimal_band_gains(&p).unwrap();
        assert!(!sol.noise_free);
        assert_eq!(sol.alpha_band[0], MIN_DEGENERATE_GAIN);
        assert_eq!(sol.degenerate_bands, vec![0]);
        // The noisy band absorbs the rest of the budget.
        let spent: f64 = sol.alpha_band[1];
        assert!((spent - (2.0 - MIN_DEGENERATE_GAIN)).abs() <= 1e-9);
        let res = kkt_residuals(&sol, &p);
        assert!(res.primal_rel <= 1e-9, "primal {0}", res.primal_rel);
    }

    #[test]
    fn zero_speech_band_is_excluded() {
        let p = problem(&[0.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], &[0.5, 0.5]);
        let sol = optimal_band_gains(&p).unwrap();
        assert_eq!(sol.alpha_band[0], 0.0);
        assert!(!sol.active_set.contains(&0));
        // Budget = sum s2 = 1, all spent on band 1.
        assert!((sol.alpha_band[1] - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn infeasible_problem_errors() {
        assert!(matches!(
            AllocationProblem::new(vec![0.0], vec![0.0], vec![1.0], vec![1.0]),
            Err(Error::InfeasibleProblem)
        ));
    }

    #[test]
    fn kkt_residuals_hold_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(11);
        for trial in 0..200 {
            let bands = rng.gen_range(2..=8);
            let p = random_problem(&mut rng, bands);
            let sol = optimal_band_gains(&p).unwrap();
            let res = kkt_residuals(&sol, &p);
            assert!(
                res.stationarity_rel <= 1e-8,
                "trial {trial}: stationarity {}",
                res.stationarity_rel
            );
            assert!(res.primal_rel <= 1e-9, "trial {trial}: primal {}", res.primal_rel);
            assert!(res.dual_min >= -1e-12, "trial {trial}: dual {}", res.dual_min);
            // Active set consistent with strictly positive gains.
            for (j, &a) in sol.alpha_band.iter().enumerate() {
                assert_eq!(a > 0.0, sol.active_set.contains(&j), "trial {trial} band {j}");
            }
        }
    }

    #[test]
    fn weight_scaling_leaves_gains_unchanged() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 5);
            let mut scaled = p.clone();
            for w in scaled.weights.iter_mut() {
                *w *= 137.0;
            }
            let a = optimal_band_gains(&p).unwrap();
            let b = optimal_band_gains(&scaled).unwrap();
            for (x, y) in a.alpha_band.iter().zip(b.alpha_band.iter()) {
                let scale = x.abs().max(1.0);
                assert!(
                    (x - y).abs() <= 1e-9 * scale,
                    "weight scaling moved gain {x} -> {y}"
                );
            }
        }
    }

    #[test]
    fn objective_is_concave_along_random_feasible_segments() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..100 {
            let p = random_problem(&mut rng, 6);
            // Two random feasible points via simplex projection in t-space.
            let draw = |rng: &mut StdRng| -> Vec<f64> {
                let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
                let t = project_simplex(&raw, p.budget);
                t.iter().zip(p.s2.iter()).map(|(ti, si)| ti / si).collect()
            };
            let x = draw(&mut rng);
            let y = draw(&mut rng);
            let mid: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
            let fx = weighted_audibility(&x, &p).unwrap();
            let fy = weighted_audibility(&y, &p).unwrap();
            let fm = weighted_audibility(&mid, &p).unwrap();
            assert!(
                fm >= 0.5 * (fx + fy) - 1e-12,
                "midpoint {fm} below chord {}",
                0.5 * (fx + fy)
            );
        }
    }

    #[test]
    fn grid_oracle_recovers_pinned_instance() {
        let p = problem(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 4.0], &[0.5, 0.5]);
        let step = p.budget / 200.0;
        let alpha = oracle_band_gains(&p, OracleMode::Grid { step }).unwrap();
        assert!((alpha[0] - 4.0 / 3.0).abs() <= step + 1e-12);
        assert!((alpha[1] - 2.0 / 3.0).abs() <= step + 1e-12);
        // Single band: the only feasible point.
        let p1 = problem(&[2.0], &[0.0], &[1.0], &[1.0]);
        let a1 = oracle_band_gains(&p1, OracleMode::Grid { step: 0.05 }).unwrap();
        assert!((a1[0] - 1.0).abs() <= 1e-12);
        // Too coarse a step is rejected.
        assert!(matches!(
            oracle_band_gains(&p, OracleMode::Grid { step: 1.0 }),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn pg_oracle_matches_closed_form_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(101);
        for trial in 0..100 {
            let bands = rng.gen_range(2..=8);
            let p = random_problem(&mut rng, bands);
            let sol = optimal_band_gains(&p).unwrap();
            let oracle = oracle_band_gains(&p, OracleMode::ProjectedGradient).unwrap();
            let mut max_diff = 0.0f64;
            for (x, y) in sol.alpha_band.iter().zip(oracle.iter()) {
                max_diff = max_diff.max((x - y).abs());
            }
            assert!(max_diff <= 1e-6, "trial {trial}: max gain diff {max_diff:.3e}");
            let f_closed = sol.objective_value;
            let f_oracle = weighted_audibility(&oracle, &p).unwrap();
            assert!(
                (f_closed - f_oracle).abs() <= 1e-9,
                "trial {trial}: objective gap {:.3e}",
                f_closed - f_oracle
            );
            assert!(
                f_closed >= f_oracle - 1e-9,
                "trial {trial}: closed form lost to oracle"
            );
        }
    }

    #[test]
    fn closed_form_dominates_grid_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 3);
            let sol = optimal_band_gains(&p).unwrap();
            let grid = oracle_band_gains(
                &p,
                OracleMode::Grid {
                    step: p.budget / 60.0,
                },
            )
            .unwrap();
            let f_grid = weighted_audibility(&grid, &p).unwrap();
            assert!(
                f_grid <= sol.objective_value + 1e-9,
                "grid value {f_grid} beats closed form {}",
                sol.objective_value
            );
        }
    }

    #[test]
    fn bisection_fallback_agrees_with_sweep() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 6);
            let candidates: Vec<usize> = (0..6).collect();
            let sweep = solve_by_threshold_sweep(&p, &candidates).unwrap();
            let bisect = solve_by_nu_bisection(&p, &candidates).unwrap();
            for (a, b) in sweep.alpha.iter().zip(bisect.alpha.iter()) {
                assert!(
                    (a - b).abs() <= 1e-7 * a.abs().max(1.0),
                    "sweep {a} vs bisection {b}"
                );
            }
        }
    }

    #[test]
    fn budget_is_fully_spent() {
        let mut rng = StdRng::seed_from_u64(53);
        for _ in 0..100 {
            let p = random_problem(&mut rng, 7);
            let sol = optimal_band_gains(&p).unwrap();
            let spent: f64 = sol
                .alpha_band
                .iter()
                .zip(p.s2.iter())
                .map(|(a, s)| a * s)
                .sum();
            assert!(
                (spent - p.budget).abs() <= 1e-9 * p.budget,
                "spent {spent} of {}",
                p.budget
            );
        }
    }

    #[test]
    fn bin_gain_mapping_preserves_budget_and_partitions() {
        use crate::bands::{build_filterbank, BandShape, BandTable};
        use crate::spectral::FrameParams;
        let params = FrameParams::default_16k();
        let table = BandTable::sii_critical();
        for shape in [BandShape::Rectangular, BandShape::Triangular] {
            let bands = build_filterbank(&params, &table, shape).unwrap();
            let mut rng = StdRng::seed_from_u64(3);
            let alpha_band: Vec<f64> = (0..21).map(|_| rng.gen_range(0.0..4.0)).collect();
            let alpha_bin = bin_gains_from_band_gains(&alpha_band, &bands).unwrap();
            // Direct double-sum oracle on covered bins, frozen elsewhere.
            for k in 0..bands.bin_count() {
                let expect = if bands.is_covered(k) {
                    (0..21).map(|j| bands.weight(j, k) * alpha_band[j]).sum()
                } else {
                    1.0
                };
                assert_eq!(alpha_bin[k], expect, "bin {k}");
            }
            // Budget preservation against a synthetic psd.
            let psd: Vec<f64> = (0..bands.bin_count())
                .map(|k| 0.01 + ((k * 37) % 97) as f64 / 97.0)
                .collect();
            let band_e = crate::bands::band_energies(&psd, &bands).unwrap();
            let band_side: f64 = alpha_band.iter().zip(band_e.iter()).map(|(a, e)| a * e).sum();
            let bin_side: f64 = bands.covered_bins().map(|k| alpha_bin[k] * psd[k]).sum();
            assert!(
                (band_side - bin_side).abs() <= 1e-9 * band_side.max(1e-12),
                "{shape:?}: band-side {band_side} vs bin-side {bin_side}"
            );
        }
    }

    #[test]
    fn unit_band_gains_map_to_unit_bin_gains() {
        use crate::bands::{build_filterbank, BandShape, BandTable};
        use crate::spectral::FrameParams;
        let bands = build_filterbank(
            &FrameParams::default_16k(),
            &BandTable::sii_critical(),
            BandShape::Rectangular,
        )
        .unwrap();
        let alpha_bin = bin_gains_from_band_gains(&vec![1.0; 21], &bands).unwrap();
        for (k, &a) in alpha_bin.iter().enumerate() {
            assert!((a - 1.0).abs() <= 1e-12, "bin {k}: {a}");
        }
    }

    #[test]
    fn compose_processor_squares_to_the_gain() {
        use num_complex::Complex64;
        let w = BeamformerWeights {
            w: vec![
                vec![Complex64::new(0.6, 0.1), Complex64::new(0.4, -0.1)],
                vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            ],
            loading_rel: 0.0,
        };
        let v = compose_processor(&w, &[2.0, 0.0]).unwrap();
        for m in 0..2 {
            assert!((v[0][m] - w.w[0][m] * 2.0f64.sqrt()).norm() <= 1e-15);
            assert_eq!(v[1][m], Complex64::new(0.0, 0.0));
        }
        assert!(compose_processor(&w, &[1.0]).is_err());
        assert!(compose_processor(&w, &[-1.0, 0.0]).is_err());
    }
}
