//! Polyphase windowed-sinc sample rate conversion.
//!
//! The rate pair is reduced to `up/down`; a Kaiser-windowed sinc lowpass at
//! the narrower Nyquist is sampled into one filter phase per output offset,
//! each phase normalized to unit DC gain.

use crate::error::{Error, Result};

/// Half-width of the interpolation kernel in input samples.
const KERNEL_HALF_WIDTH: usize = 32;
/// Kaiser shape parameter (about 80 dB stopband).
const KAISER_BETA: f64 = 10.0;
/// Transition-band headroom below the target Nyquist.
const CUTOFF_SCALE: f64 = 0.92;
const MAX_PHASES: usize = 1 << 16;

fn bessel_i0(x: f64) -> f64 {
    // Power series; converges quickly for the argument range used here.
    let mut term = 1.0;
    let mut sum = 1.0;
    let half_x2 = x * x / 4.0;
    for k in 1..64 {
        term *= half_x2 / (k as f64 * k as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Resample `input` from `from_hz` to `to_hz`.
pub fn resample(input: &[f64], from_hz: u32, to_hz: u32) -> Result<Vec<f64>> {
    if from_hz == 0 || to_hz == 0 {
        return Err(Error::InvalidScenario("zero sample rate".to_string()));
    }
    if from_hz == to_hz {
        return Ok(input.to_vec());
    }
    if input.is_empty() {
        return Ok(Vec::new());
    }
    let g = gcd(from_hz, to_hz);
    let up = (to_hz / g) as usize;
    let down = (from_hz / g) as usize;
    if up > MAX_PHASES {
        return Err(Error::InvalidScenario(format!(
            "rate pair {from_hz}->{to_hz} needs {up} filter phases (cap {MAX_PHASES})"
        )));
    }

    // Cut at the narrower of the two Nyquists, in input-sample units.
    let cutoff = CUTOFF_SCALE * (up as f64 / down as f64).min(1.0);
    let i0_beta = bessel_i0(KAISER_BETA);
    let h = KERNEL_HALF_WIDTH as f64;

    // Phase p interpolates at fractional input offset p/up; taps run over
    // t in [-H+1, H] relative to the integer input index.
    let taps = 2 * KERNEL_HALF_WIDTH;
    let mut phases = vec![0.0f64; up * taps];
    for p in 0..up {
        let frac = p as f64 / up as f64;
        let mut sum = 0.0;
        for (ti, tap) in (1 - KERNEL_HALF_WIDTH as isize..=KERNEL_HALF_WIDTH as isize).enumerate() {
            let t = tap as f64 - frac;
            let win = if t.abs() <= h {
                bessel_i0(KAISER_BETA * (1.0 - (t / h) * (t / h)).max(0.0).sqrt()) / i0_beta
            } else {
                0.0
            };
            let v = cutoff * sinc(cutoff * t) * win;
            phases[p * taps + ti] = v;
            sum += v;
        }
        // Unit DC gain per phase.
        for ti in 0..taps {
            phases[p * taps + ti] /= sum;
        }
    }

    let out_len = (input.len() * up + down - 1) / down;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let num = n * down;
        let i0 = num / up;
        let p = num % up;
        let row = &phases[p * taps..(p + 1) * taps];
        let mut acc = 0.0;
        for (ti, &hv) in row.iter().enumerate() {
            let idx = i0 as isize + (1 - KERNEL_HALF_WIDTH as isize) + ti as isize;
            if idx >= 0 && (idx as usize) < input.len() {
                acc += input[idx as usize] * hv;
            }
        }
        out.push(acc);
    }
    Ok(out)
}
