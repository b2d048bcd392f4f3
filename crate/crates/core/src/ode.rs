//! Fixed-step RK4 for linear matrix ODEs `Ṁ = -K(τ) M`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::path::Side;

/// Default absolute RK4 step in path-parameter units.
pub const DEFAULT_STEP: f64 = 1e-3;

const MAX_STEPS: f64 = 1e8;

/// Number of RK4 steps used to cover `[a, b]` with steps no longer than `h`.
pub fn step_count(a: f64, b: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Model(format!("RK4 step must be positive and finite, got {h}")));
    }
    let n = ((b - a).abs() / h * (1.0 - 1e-12)).ceil();
    if n > MAX_STEPS {
        return Err(Error::Degenerate(format!("step {h} underflows: {n} steps needed")));
    }
    Ok((n as usize).max(1))
}

/// Propagator of `Ṁ = -K(τ) M`, `M(a) = I`, from `a` to `b` (either order).
///
/// `k` is evaluated with the one-sided velocity facing into `[a, b]` at the
/// endpoints, so `a` and `b` may be kinks of the path. `project` is applied
/// after every step (e.g. renormalization onto a matrix group).
pub fn propagate<K, P>(a: f64, b: f64, h: f64, dim: usize, k: K, project: P) -> Result<DMatrix<f64>>
where
    K: Fn(f64, Side) -> Result<DMatrix<f64>>,
    P: Fn(DMatrix<f64>) -> DMatrix<f64>,
{
    let mut m = DMatrix::identity(dim, dim);
    if a == b {
        return Ok(m);
    }
    let n = step_count(a, b, h)?;
    let (start_side, end_side) = if b > a { (Side::Right, Side::Left) } else { (Side::Left, Side::Right) };
    let at = |i: usize| if i == n { b } else { a + (b - a) * (i as f64 / n as f64) };
    let mut k0 = k(a, start_side)?;
    for i in 0..n {
        let (t0, t1) = (at(i), at(i + 1));
        let dt = t1 - t0;
        let mid = 0.5 * (t0 + t1);
        let km = k(mid, start_side)?;
        let k1 = if i + 1 == n { k(t1, end_side)? } else { k(t1, start_side)? };
        let d1 = -(&k0 * &m);
        let y2 = &m + &d1 * (0.5 * dt);
        let d2 = -(&km * &y2);
        let y3 = &m + &d2 * (0.5 * dt);
        let d3 = -(&km * &y3);
        let y4 = &m + &d3 * dt;
        let d4 = -(&k1 * &y4);
        m += (d1 + (d2 + d3) * 2.0 + d4) * (dt / 6.0);
        m = project(m);
        k0 = k1;
    }
    Ok(m)
}
