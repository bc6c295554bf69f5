//! Built-in oracle-equivalence and invariant checks behind `sie selftest`.

use anyhow::{bail, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use sie_core::beamformer::distortion_error;
use sie_core::gainopt::{
    kkt_residuals, optimal_band_gains, oracle_band_gains, weighted_audibility, AllocationProblem,
    OracleMode,
};

use crate::config::default_config;
use crate::pipeline::{prepare_scene, run_method, sweep, Method, SweepAxis};
use crate::report::sweep_csv;

fn random_problem(rng: &mut StdRng, bands: usize) -> AllocationProblem {
    let log_uniform = |rng: &mut StdRng| -> f64 { 10f64.powf(rng.gen_range(-3.0..3.0)) };
    AllocationProblem::new(
        (0..bands).map(|_| log_uniform(rng)).collect(),
        (0..bands).map(|_| log_uniform(rng)).collect(),
        (0..bands).map(|_| log_uniform(rng)).collect(),
        (0..bands).map(|_| rng.gen_range(0.01..0.06)).collect(),
    )
    .expect("generated problem is valid")
}

struct Check {
    name: &'static str,
    run: fn() -> Result<()>,
}

fn check_oracle_equivalence() -> Result<()> {
    let mut rng = StdRng::seed_from_u64(2024);
    for trial in 0..30 {
        let bands = rng.gen_range(2..=8);
        let p = random_problem(&mut rng, bands);
        let sol = optimal_band_gains(&p)?;
        let oracle = oracle_band_gains(&p, OracleMode::ProjectedGradient)?;
        let max_diff = sol
            .alpha_band
            .iter()
            .zip(oracle.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if max_diff > 1e-6 {
            bail!("trial {trial}: gain difference {max_diff:.3e} above 1e-6");
        }
        let gap = sol.objective_value - weighted_audibility(&oracle, &p)?;
        if gap.abs() > 1e-9 {
            bail!("trial {trial}: objective gap {gap:.3e} above 1e-9");
        }
    }
    Ok(())
}

fn check_kkt_residuals() -> Result<()> {
    let mut rng = StdRng::seed_from_u64(77);
    for trial in 0..50 {
        let bands = rng.gen_range(2..=8);
        let p = random_problem(&mut rng, bands);
        let sol = optimal_band_gains(&p)?;
        let res = kkt_residuals(&sol, &p);
        if res.stationarity_rel > 1e-8 || res.primal_rel > 1e-9 || res.dual_min < -1e-12 {
            bail!(
                "trial {trial}: stationarity {:.2e}, primal {:.2e}, dual {:.2e}",
                res.stationarity_rel,
                res.primal_rel,
                res.dual_min
            );
        }
    }
    Ok(())
}

fn check_default_scene_invariants() -> Result<()> {
    let mut config = default_config();
    config.duration_s = 2.0;
    let prep = prepare_scene(&config)?;
    let distortion = distortion_error(&prep.beamformer, &prep.stats);
    if distortion > 1e-10 {
        bail!("distortionless response violated: {distortion:.3e}");
    }
    for method in Method::ALL {
        let outcome = run_method(&prep, method)?;
        let ratio = outcome.report.realized_power_ratio;
        if (ratio - 1.0).abs() > 1e-6 {
            bail!("{method}: power ratio {ratio} outside 1 +/- 1e-6");
        }
    }
    Ok(())
}

fn check_method_relations() -> Result<()> {
    let mut config = default_config();
    config.duration_s = 2.0;
    let prep = prepare_scene(&config)?;
    let proposed = run_method(&prep, Method::ProposedAsii)?;
    let mi_sii = run_method(&prep, Method::MiBaselineSii)?;
    let passthrough = run_method(&prep, Method::Passthrough)?;
    for (a, b) in proposed
        .gains
        .alpha_band
        .iter()
        .zip(mi_sii.gains.alpha_band.iter())
    {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            bail!("weight-proportional methods disagree: {a} vs {b}");
        }
    }
    if proposed.report.asii + 1e-12 < passthrough.report.asii {
        bail!(
            "optimizer lost to unit gains: {} < {}",
            proposed.report.asii,
            passthrough.report.asii
        );
    }
    Ok(())
}

fn check_sweep_determinism() -> Result<()> {
    let mut config = default_config();
    config.duration_s = 1.0;
    let methods = [Method::ProposedAsii, Method::Passthrough];
    let values = [-10.0, 0.0];
    let a = sweep(&config, SweepAxis::NearSnr, &values, &methods)?;
    let b = sweep(&config, SweepAxis::NearSnr, &values, &methods)?;
    if sweep_csv(&a) != sweep_csv(&b) {
        bail!("identical sweeps produced different CSV bytes");
    }
    Ok(())
}

/// Run every check, printing one line per check. Returns an error if any
/// check failed.
pub fn run_selftest() -> Result<()> {
    let checks = [
        Check {
            name: "gain optimizer vs projected-gradient oracle",
            run: check_oracle_equivalence,
        },
        Check {
            name: "KKT residuals on random problems",
            run: check_kkt_residuals,
        },
        Check {
            name: "default scene: distortionless response and power audit",
            run: check_default_scene_invariants,
        },
        Check {
            name: "method relations (weight proportionality, dominance)",
            run: check_method_relations,
        },
        Check {
            name: "sweep determinism",
            run: check_sweep_determinism,
        },
    ];
    let mut failures = 0;
    for check in &checks {
        match (check.run)() {
            Ok(()) => println!("PASS  {}", check.name),
            Err(e) => {
                println!("FAIL  {}: {e}", check.name);
                failures += 1;
            }
        }
    }
    if failures > 0 {
        bail!("{failures} selftest check(s) failed");
    }
    Ok(())
}
