//! Dormand–Prince 5(4) integrator with adaptive step size.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub absolute: f64,
    pub relative: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { absolute: 1e-10, relative: 1e-10, max_steps: 1_000_000 }
    }
}

/// Integrates dy/dt = f(t, y) from `(t0, y0)` and returns y at each of `times`.
///
/// `times` must be non-decreasing and not precede `t0`.
pub fn solve<const N: usize, F>(f: F, t0: f64, y0: [f64; N], times: &[f64], tol: Tolerances) -> Result<Vec<[f64; N]>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut out = Vec::with_capacity(times.len());
    let mut t = t0;
    let mut y = y0;
    let mut k0 = f(t, &y);
    let mut h = 0.0;
    let mut steps = 0usize;
    for &target in times {
        if target < t {
            return Err(Error::Integration { t, reason: format!("output time {target} precedes current time") });
        }
        while t < target {
            if h == 0.0 {
                h = initial_step(&f, t, &y, &k0, target - t, tol);
            }
            let span = target - t;
            let last = h >= span;
            let step = if last { span } else { h };
            let (y_new, k_new, err) = dopri_step(&f, t, &y, &k0, step, tol);
            steps += 1;
            if steps > tol.max_steps {
                return Err(Error::Integration { t, reason: format!("exceeded {} steps", tol.max_steps) });
            }
            if !err.is_finite() {
                return Err(Error::Integration { t, reason: "non-finite error estimate".into() });
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                k0 = k_new;
                // Keep the proposed size when the step was truncated to hit `target`.
                if !last || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                h = step * factor.min(1.0);
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Integration { t, reason: format!("step size underflow (h = {h:e})") });
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}

fn error_norm<const N: usize>(err: &[f64; N], y: &[f64; N], y_new: &[f64; N], tol: Tolerances) -> f64 {
    let sum: f64 = (0..N)
        .map(|i| {
            let scale = tol.absolute + tol.relative * y[i].abs().max(y_new[i].abs());
            (err[i] / scale).powi(2)
        })
        .sum();
    (sum / N as f64).sqrt()
}

fn dopri_step<const N: usize, F>(
    f: &F,
    t: f64,
    y: &[f64; N],
    k0: &[f64; N],
    h: f64,
    tol: Tolerances,
) -> ([f64; N], [f64; N], f64)
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut k = [[0.0; N]; 7];
    k[0] = *k0;
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }
    // Stage 7 is evaluated at the 5th-order solution (FSAL).
    let mut y_new = *y;
    for (j, kj) in k.iter().enumerate().take(6) {
        for i in 0..N {
            y_new[i] += h * A[6][j] * kj[i];
        }
    }
    let mut err = [0.0; N];
    for (j, kj) in k.iter().enumerate() {
        for i in 0..N {
            err[i] += h * E[j] * kj[i];
        }
    }
    let norm = error_norm(&err, y, &y_new, tol);
    (y_new, k[6], norm)
}

fn initial_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], k0: &[f64; N], span: f64, tol: Tolerances) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let scale = |i: usize| tol.absolute + tol.relative * y[i].abs();
    let d0 = (0..N).map(|i| (y[i] / scale(i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..N).map(|i| (k0[i] / scale(i)).powi(2)).sum::<f64>().sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let mut y1 = *y;
    for i in 0..N {
        y1[i] += h0 * k0[i];
    }
    let k1 = f(t + h0, &y1);
    let d2 = (0..N).map(|i| ((k1[i] - k0[i]) / scale(i)).powi(2)).sum::<f64>().sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
}
