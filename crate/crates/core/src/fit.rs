//! Device-parameter fitting against measured I–V traces.
//!
//! The search runs over `[ln g_on, ln g_off, v_on, v_off, ln t_c]`; every
//! other parameter is held at its initial value. The objective is the mean
//! squared current error of an expectation-mode simulation that starts
//! from the balanced state and follows the measured voltage samples.

use crate::device::{self, DeviceState, MssParams, StepMode};
use crate::error::{Error, Result};
use crate::sweep::IvSample;

pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: MssParams,
    /// Root-mean-square current error of `params` (A).
    pub residual: f64,
    /// Root-mean-square of the measured current (A).
    pub signal_rms: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Simulated current at every sample time.
pub fn simulate(p: &MssParams, samples: &[IvSample]) -> Result<Vec<f64>> {
    p.validate()?;
    let mut state = DeviceState::balanced(p);
    let mut out = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        out.push(device::total_current(p, state, s.v));
        if let Some(next) = samples.get(k + 1) {
            state = device::step(p, state, s.v, next.t - s.t, &mut StepMode::Expectation)?;
        }
    }
    Ok(out)
}

pub fn mse(p: &MssParams, samples: &[IvSample]) -> Result<f64> {
    let sim = simulate(p, samples)?;
    Ok(sim
        .iter()
        .zip(samples)
        .map(|(a, s)| (a - s.i).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
}

fn check_samples(samples: &[IvSample]) -> Result<()> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Domain("sample times must strictly increase".into()));
    }
    let v0 = samples[0].v;
    if samples.iter().all(|s| s.v == v0) {
        return Err(Error::Domain("degenerate data: voltage is constant".into()));
    }
    Ok(())
}

fn encode(p: &MssParams) -> [f64; 5] {
    [p.g_on.ln(), p.g_off.ln(), p.v_on, p.v_off, p.t_c.ln()]
}

fn decode(base: &MssParams, x: &[f64; 5]) -> MssParams {
    MssParams {
        g_on: x[0].exp(),
        g_off: x[1].exp(),
        v_on: x[2],
        v_off: x[3],
        t_c: x[4].exp(),
        ..*base
    }
}

pub fn fit(samples: &[IvSample], initial: &MssParams, max_iter: usize) -> Result<FitReport> {
    check_samples(samples)?;
    initial.validate()?;
    let signal_rms =
        (samples.iter().map(|s| s.i * s.i).sum::<f64>() / samples.len() as f64).sqrt();
    let objective = |x: &[f64; 5]| -> f64 {
        let p = decode(initial, x);
        // Thresholds below zero have no physical reading.
        if p.v_on < 0.0 || p.v_off < 0.0 {
            return f64::INFINITY;
        }
        mse(&p, samples).unwrap_or(f64::INFINITY)
    };
    let start = encode(initial);
    let result = nelder_mead(objective, start, max_iter);
    // With no iterations skip the log-space round trip so the caller gets
    // back exactly what it passed in.
    let (params, mse_final) = if max_iter == 0 {
        (*initial, mse(initial, samples)?)
    } else {
        (decode(initial, &result.x), result.f)
    };
    Ok(FitReport {
        params,
        residual: mse_final.sqrt(),
        signal_rms,
        iterations: result.iterations,
        evaluations: result.evaluations,
    })
}

struct Minimum<const N: usize> {
    x: [f64; N],
    f: f64,
    iterations: usize,
    evaluations: usize,
}

/// Standard Nelder–Mead with the initial simplex built from 5 % steps
/// (0.00025 for zero coordinates). Stops after `max_iter` iterations or
/// when the simplex has collapsed in both spread and value.
fn nelder_mead<const N: usize, F: FnMut(&[f64; N]) -> f64>(
    mut f: F,
    start: [f64; N],
    max_iter: usize,
) -> Minimum<N> {
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64; N]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    let f0 = eval(&start);
    simplex.push((start, f0));
    if max_iter == 0 {
        return Minimum {
            x: start,
            f: f0,
            iterations: 0,
            evaluations,
        };
    }
    for k in 0..N {
        let mut x = start;
        x[k] = if x[k] != 0.0 { x[k] * 1.05 } else { 0.00025 };
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[N].1;
        let spread = simplex
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread < 1e-12 && (worst - best).abs() <= 1e-15 * best.abs().max(f64::MIN_POSITIVE) {
            break;
        }

        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for d in 0..N {
                centroid[d] += x[d] / N as f64;
            }
        }
        let along = |t: f64| {
            let mut out = [0.0; N];
            for d in 0..N {
                out[d] = centroid[d] + t * (simplex[N].0[d] - centroid[d]);
            }
            out
        };

        let xr = along(-alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-alpha * gamma);
            let fe = eval(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[N].1 {
            let xc = along(-rho);
            (xc, eval(&xc))
        } else {
            let xc = along(rho);
            (xc, eval(&xc))
        };
        if fc < fr.min(simplex[N].1) {
            simplex[N] = (xc, fc);
            continue;
        }
        let x0 = simplex[0].0;
        for entry in simplex.iter_mut().skip(1) {
            let mut x = [0.0; N];
            for d in 0..N {
                x[d] = x0[d] + sigma * (entry.0[d] - x0[d]);
            }
            *entry = (x, eval(&x));
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Minimum {
        x: simplex[0].0,
        f: simplex[0].1,
        iterations,
        evaluations,
    }
}
