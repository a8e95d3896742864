//! Embedded Dormand-Prince 5(4) integrator for matrix-valued ODEs.
//!
//! One integrator drives everything in the crate that solves an initial
//! value problem: transition matrices, Riccati sweeps and trajectory
//! simulation. Steps are controlled by a PI controller on the embedded
//! error estimate; output points are hit exactly by clipping the step, so
//! recorded values carry no interpolation error.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Butcher tableau of the Dormand-Prince 5(4) pair.
mod dp {
    pub const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 6] = [
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    /// 5th order weights (identical to the last `A` row: first-same-as-last).
    pub const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    /// Embedded 4th order weights.
    pub const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Relative error target per step.
    pub rtol: f64,
    /// Absolute error floor per step.
    pub atol: f64,
    /// Any entry above this magnitude aborts with a divergence report.
    pub divergence: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-12,
            divergence: 1e300,
            max_steps: 50_000_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        OdeOptions {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

fn error_norm(err: &DMatrix<f64>, y0: &DMatrix<f64>, y1: &DMatrix<f64>, opts: &OdeOptions) -> f64 {
    let mut sum = 0.0;
    for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
        let scale = opts.atol + opts.rtol * a.abs().max(b.abs());
        let q = e / scale;
        sum += q * q;
    }
    (sum / err.len() as f64).sqrt()
}

/// Initial step size heuristic (two-probe).
fn initial_step(
    rhs: &mut impl FnMut(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    t0: f64,
    y0: &DMatrix<f64>,
    f0: &DMatrix<f64>,
    dir: f64,
    span: f64,
    opts: &OdeOptions,
) -> Result<f64> {
    let sk = |m: &DMatrix<f64>| {
        let mut sum = 0.0;
        for (v, y) in m.iter().zip(y0.iter()) {
            let scale = opts.atol + opts.rtol * y.abs();
            sum += (v / scale) * (v / scale);
        }
        (sum / m.len() as f64).sqrt()
    };
    let d0 = sk(y0);
    let d1 = sk(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(span);
    let y1 = y0 + f0 * (h0 * dir);
    let f1 = rhs(t0 + h0 * dir, &y1)?;
    let d2 = sk(&(&f1 - f0)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok(h1.min(100.0 * h0).min(span).max(1e-12))
}

/// Integrates `y' = rhs(t, y)` from `t0` through every time in `stops`
/// (strictly monotone, ending at the final time), invoking `on_stop` with the
/// exact solution value at each stop. Returns the value at the last stop.
pub fn integrate_with_stops(
    mut rhs: impl FnMut(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    t0: f64,
    y0: DMatrix<f64>,
    stops: &[f64],
    opts: &OdeOptions,
    mut on_stop: impl FnMut(f64, &DMatrix<f64>) -> Result<()>,
) -> Result<DMatrix<f64>> {
    assert!(!stops.is_empty(), "at least one stop time is required");
    let t_end = *stops.last().unwrap();
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    for w in stops.windows(2) {
        assert!(
            (w[1] - w[0]) * dir > 0.0,
            "stop times must be strictly monotone toward the end time"
        );
    }
    assert!(
        (stops[0] - t0) * dir > 0.0 || stops.len() == 1,
        "stops must lie strictly beyond the start time"
    );

    let mut t = t0;
    let mut y = y0;
    let mut stop_idx = 0;

    if t_end == t0 {
        on_stop(t0, &y)?;
        return Ok(y);
    }

    let mut f = rhs(t, &y)?;
    let span = (t_end - t0).abs();
    let mut h = initial_step(&mut rhs, t0, &y, &f, dir, span, opts)?;
    let mut err_old: f64 = 1e-4;
    let mut k: [DMatrix<f64>; 7] = core::array::from_fn(|_| DMatrix::zeros(y.nrows(), y.ncols()));

    let mut steps = 0usize;
    while stop_idx < stops.len() {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::StepUnderflow { at_time: t });
        }
        let next_stop = stops[stop_idx];
        let mut hitting_stop = false;
        let remaining = (next_stop - t) * dir;
        if h >= remaining {
            h = remaining;
            hitting_stop = true;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            if hitting_stop {
                // the stop coincides with the current time up to rounding
                on_stop(next_stop, &y)?;
                t = next_stop;
                stop_idx += 1;
                h = 1e-14 * t.abs().max(1.0);
                continue;
            }
            return Err(Error::StepUnderflow { at_time: t });
        }

        let hs = h * dir;
        k[0] = f.clone();
        for stage in 1..7 {
            let mut yi = y.clone();
            for (j, kj) in k.iter().enumerate().take(stage) {
                let a = dp::A[stage - 1][j];
                if a != 0.0 {
                    yi += kj * (a * hs);
                }
            }
            k[stage] = rhs(t + dp::C[stage] * hs, &yi)?;
        }
        let mut y5 = y.clone();
        let mut err = DMatrix::zeros(y.nrows(), y.ncols());
        for (i, ki) in k.iter().enumerate() {
            if dp::B5[i] != 0.0 {
                y5 += ki * (dp::B5[i] * hs);
            }
            let db = dp::B5[i] - dp::B4[i];
            if db != 0.0 {
                err += ki * (db * hs);
            }
        }
        let err_norm = error_norm(&err, &y, &y5, opts);

        if err_norm <= 1.0 {
            t = if hitting_stop { next_stop } else { t + hs };
            y = y5;
            if y.amax() > opts.divergence {
                return Err(Error::Divergence {
                    at_time: t,
                    threshold: opts.divergence,
                });
            }
            f = k[6].clone(); // first-same-as-last
            if hitting_stop {
                on_stop(t, &y)?;
                stop_idx += 1;
            }
            let e = err_norm.max(1e-10);
            let factor = (0.9 * e.powf(-0.14) * err_old.powf(0.08)).clamp(0.2, 6.0);
            err_old = e;
            h *= factor;
        } else {
            h *= (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0);
        }
    }
    Ok(y)
}

/// Integrates to a single end time and returns the final value.
pub fn integrate(
    rhs: impl FnMut(f64, &DMatrix<f64>) -> Result<DMatrix<f64>>,
    t0: f64,
    y0: DMatrix<f64>,
    t1: f64,
    opts: &OdeOptions,
) -> Result<DMatrix<f64>> {
    if t1 == t0 {
        return Ok(y0);
    }
    integrate_with_stops(rhs, t0, y0, &[t1], opts, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_exponential() {
        let opts = OdeOptions::default();
        let y = integrate(
            |_, y| Ok(y * -1.0),
            0.0,
            dmatrix![1.0],
            3.0,
            &opts,
        )
        .unwrap();
        assert_relative_eq!(y[(0, 0)], (-3.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn backward_integration_matches_inverse_flow() {
        let opts = OdeOptions::default();
        let y = integrate(|_, y| Ok(y * 0.7), 2.0, dmatrix![1.0], -1.0, &opts).unwrap();
        assert_relative_eq!(y[(0, 0)], (0.7f64 * -3.0).exp(), max_relative = 1e-9);
    }

    #[test]
    fn rotation_matrix_flow() {
        let opts = OdeOptions::with_tol(1e-10, 1e-13);
        let a = dmatrix![0.0, -1.0; 1.0, 0.0];
        let phi = integrate(
            |_, y| Ok(&a * y),
            0.0,
            DMatrix::identity(2, 2),
            std::f64::consts::PI / 3.0,
            &opts,
        )
        .unwrap();
        let c = 0.5;
        let s = (3.0f64).sqrt() / 2.0;
        assert_relative_eq!(phi[(0, 0)], c, epsilon = 1e-9);
        assert_relative_eq!(phi[(0, 1)], -s, epsilon = 1e-9);
        assert_relative_eq!(phi[(1, 0)], s, epsilon = 1e-9);
        assert_relative_eq!(phi[(1, 1)], c, epsilon = 1e-9);
    }

    #[test]
    fn stops_are_hit_exactly() {
        let opts = OdeOptions::default();
        let mut seen = Vec::new();
        integrate_with_stops(
            |t, _| Ok(dmatrix![2.0 * t]),
            0.0,
            dmatrix![0.0],
            &[0.5, 1.25, 2.0],
            &opts,
            |t, y| {
                seen.push((t, y[(0, 0)]));
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(seen.len(), 3);
        for (t, v) in seen {
            assert_relative_eq!(v, t * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn divergence_is_reported_with_the_time_reached() {
        let opts = OdeOptions {
            divergence: 1e6,
            ..Default::default()
        };
        let err = integrate(|_, y| Ok(y * 3.0), 0.0, dmatrix![1.0], 10.0, &opts).unwrap_err();
        match err {
            Error::Divergence { at_time, .. } => {
                assert!(at_time > 4.0 && at_time < 6.0, "at_time = {at_time}")
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
