//! Poincaré-ball primitives.

use super::{dot, norm};
use crate::error::{Error, Result};

/// Conformal factor `λ_x = 2 / (1 - ‖x‖²)`.
pub fn lambda(x: &[f64]) -> f64 {
    2.0 / (1.0 - dot(x, x))
}

fn check_in_ball(x: &[f64], what: &str) -> Result<f64> {
    let n = norm(x);
    if !(n < 1.0) {
        return Err(Error::domain(format!("{what} has norm {n}, outside the open unit ball")));
    }
    Ok(n)
}

/// Hyperbolic distance `arccosh(1 + 2‖x−y‖² / ((1−‖x‖²)(1−‖y‖²)))`.
pub fn poincare_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::arg("dimension mismatch"));
    }
    let nx = check_in_ball(x, "x")?;
    let ny = check_in_ball(y, "y")?;
    let diff2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let z = 2.0 * diff2 / ((1.0 - nx * nx) * (1.0 - ny * ny));
    // arccosh(1 + z) without cancellation for small z
    Ok((z + (z * (z + 2.0)).sqrt()).ln_1p())
}

/// Poincaré norm `d(0, x) = 2 artanh(‖x‖)`.
pub fn poincare_norm(x: &[f64]) -> Result<f64> {
    let n = check_in_ball(x, "x")?;
    Ok(2.0 * n.atanh())
}

/// Rescales `x` in place so that `‖x‖ <= max_norm`. Returns whether it moved.
pub fn project_to_ball(x: &mut [f64], max_norm: f64) -> bool {
    let n = norm(x);
    if n > max_norm {
        let s = max_norm / n;
        x.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// Exponential map `exp_x(v)` on the Poincaré ball, re-projected to
/// `‖·‖ <= 1 - eps_ball`.
///
/// Numerator and denominator of both coefficients are divided by
/// `cosh(λ‖v‖)` so that large tangent vectors do not overflow.
pub fn exp_map(x: &[f64], v: &[f64], eps_ball: f64) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::arg("dimension mismatch"));
    }
    check_in_ball(x, "base point")?;
    let nv = norm(v);
    if !nv.is_finite() {
        return Err(Error::Numeric(format!("tangent vector has non-finite norm at base point {x:?}")));
    }
    if nv == 0.0 {
        return Ok(x.to_vec());
    }
    let lam = lambda(x);
    let t = lam * nv;
    let th = t.tanh();
    let sech = 1.0 / t.cosh();
    let xv = dot(x, v) / nv;
    let denom = sech + (lam - 1.0) + lam * xv * th;
    let cx = lam * (1.0 + xv * th) / denom;
    let cv = th / (nv * denom);
    let mut out: Vec<f64> = x.iter().zip(v).map(|(a, b)| a * cx + b * cv).collect();
    if out.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric(format!("exp map produced non-finite output for x={x:?}, v={v:?}")));
    }
    project_to_ball(&mut out, 1.0 - eps_ball);
    Ok(out)
}

/// `exp_0(v) = tanh(‖v‖) v / ‖v‖`, re-projected into the ball.
pub fn exp0(v: &[f64], eps_ball: f64) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        return v.to_vec();
    }
    let s = n.tanh() / n;
    let mut out: Vec<f64> = v.iter().map(|c| c * s).collect();
    project_to_ball(&mut out, 1.0 - eps_ball);
    out
}

/// Inverse of [`exp0`]: `artanh(‖x‖) x / ‖x‖`.
pub fn log0(x: &[f64]) -> Result<Vec<f64>> {
    let n = check_in_ball(x, "x")?;
    if n == 0.0 {
        return Ok(x.to_vec());
    }
    let s = n.atanh() / n;
    Ok(x.iter().map(|c| c * s).collect())
}

/// Vector-Jacobian product of the unclamped `exp0` at `v`: returns
/// `Jᵀ g` where `J = ∂ exp0(v) / ∂v`.
pub fn exp0_vjp(v: &[f64], g: &[f64]) -> Vec<f64> {
    let n = norm(v);
    // exp0(v) = f(n) v with f(n) = tanh(n)/n; J = f I + (f'(n)/n) v vᵀ
    let (f, fp_over_n) = if n < 1e-3 {
        let n2 = n * n;
        (1.0 - n2 / 3.0 + 2.0 * n2 * n2 / 15.0, -2.0 / 3.0 + 8.0 * n2 / 15.0)
    } else {
        let th = n.tanh();
        let sech2 = 1.0 - th * th;
        (th / n, (n * sech2 - th) / (n * n * n))
    };
    let vg = dot(v, g);
    v.iter().zip(g).map(|(vi, gi)| f * gi + fp_over_n * vg * vi).collect()
}

/// Riemannian gradient `(1/λ_u)² g`.
pub fn riemannian_rescale(u: &[f64], g: &[f64]) -> Vec<f64> {
    let s = (1.0 - dot(u, u)) / 2.0;
    let s2 = s * s;
    g.iter().map(|c| c * s2).collect()
}
