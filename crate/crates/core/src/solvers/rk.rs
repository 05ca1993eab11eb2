use crate::error::{invalid, Error, Result};

/// One TVD Runge-Kutta step of order three. `rhs(t, u)` is evaluated at
/// `t`, `t + dt` and `t + dt/2`.
pub fn rk3_tvd_step<F>(u: &[f64], t: f64, dt: f64, rhs: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return invalid(format!("time step must be positive, got {dt}"));
    }
    rk3_tvd_step_signed(u, t, dt, rhs)
}

/// [`rk3_tvd_step`] that also accepts negative `dt` (backward integration).
pub fn rk3_tvd_step_signed<F>(u: &[f64], t: f64, dt: f64, mut rhs: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if dt == 0.0 || !dt.is_finite() {
        return invalid(format!("time step must be finite and non-zero, got {dt}"));
    }
    let check = |v: &[f64], stage: usize| -> Result<()> {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical(format!("non-finite state in RK3 stage {stage}")))
        }
    };
    // increment form: a zero right-hand side leaves u bit-for-bit unchanged
    let k1 = rhs(t, u)?;
    let u1 = combine(u, &[(dt, &k1)]);
    check(&u1, 1)?;
    let k2 = rhs(t + dt, &u1)?;
    let u2 = combine(u, &[(0.25 * dt, &k1), (0.25 * dt, &k2)]);
    check(&u2, 2)?;
    let k3 = rhs(t + 0.5 * dt, &u2)?;
    let out = combine(u, &[(dt / 6.0, &k1), (dt / 6.0, &k2), (2.0 * dt / 3.0, &k3)]);
    check(&out, 3)?;
    Ok(out)
}

/// `u + sum c_j k_j`, accumulated left to right.
pub fn combine(u: &[f64], terms: &[(f64, &Vec<f64>)]) -> Vec<f64> {
    let mut out = u.to_vec();
    for (c, k) in terms {
        for (o, v) in out.iter_mut().zip(k.iter()) {
            *o += c * v;
        }
    }
    out
}

/// `safety * min(dx^2 / (2D), dx / u_max)`, ignoring bounds whose coefficient is zero.
pub fn cfl_dt(dx: f64, diffusion: f64, u_max: f64, safety: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return invalid(format!("dx must be positive, got {dx}"));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return invalid(format!("CFL safety must lie in (0, 1], got {safety}"));
    }
    if diffusion < 0.0 || u_max < 0.0 {
        return invalid("diffusion and speed bounds must be non-negative");
    }
    let diff = if diffusion > 0.0 { dx * dx / (2.0 * diffusion) } else { f64::INFINITY };
    let adv = if u_max > 0.0 { dx / u_max } else { f64::INFINITY };
    let dt = diff.min(adv);
    if !dt.is_finite() {
        return invalid("CFL bound is unbounded: both diffusion and speed are zero");
    }
    Ok(safety * dt)
}
