//! Generalized extreme value distribution.
//!
//! `F(x) = exp(-t(x))` with `t(x) = (1 + ξ (x-μ)/σ)^(-1/ξ)`, and the Gumbel
//! limit `t(x) = exp(-(x-μ)/σ)` as ξ → 0.

use statrs::function::gamma::gamma;

use super::optim::nelder_mead;
use crate::error::{Error, Result};

/// |ξ| below this uses the Gumbel formulas.
pub const GUMBEL_EPS: f64 = 1e-6;
/// Shape bounds during maximum likelihood.
pub const SHAPE_BOUND: f64 = 0.5;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `ln t(x)`, or `None` outside the support.
fn log_t(x: f64, loc: f64, scale: f64, shape: f64) -> Option<f64> {
    let z = (x - loc) / scale;
    if shape.abs() < GUMBEL_EPS {
        return Some(-z);
    }
    let u = shape * z;
    if u <= -1.0 {
        return None;
    }
    Some(-u.ln_1p() / shape)
}

pub fn survival(x: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    match log_t(x, loc, scale, shape) {
        Some(lt) => -(-lt.exp()).exp_m1(),
        // below the lower endpoint (ξ > 0) everything is above; past the
        // upper endpoint (ξ < 0) nothing is
        None if shape > 0.0 => 1.0,
        None => 0.0,
    }
}

pub fn ln_pdf(x: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    match log_t(x, loc, scale, shape) {
        // f = t^(ξ+1) e^(-t) / σ
        Some(lt) => -scale.ln() + (shape + 1.0) * lt - lt.exp(),
        None => f64::NEG_INFINITY,
    }
}

/// Probability-weighted-moment estimates (Hosking, Wallis & Wood), with
/// the shape clamped to the MLE bounds.
pub fn pwm_estimate(sorted: &[f64]) -> (f64, f64, f64) {
    let n = sorted.len() as f64;
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let i = i as f64;
        b0 += x;
        b1 += x * i / (n - 1.0);
        b2 += x * i * (i - 1.0) / ((n - 1.0) * (n - 2.0));
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;

    let c = (2.0 * b1 - b0) / (3.0 * b2 - b0) - 2f64.ln() / 3f64.ln();
    // Hosking's k is -ξ
    let k = (7.8590 * c + 2.9554 * c * c).clamp(-SHAPE_BOUND, SHAPE_BOUND);
    let l2 = 2.0 * b1 - b0;
    if k.abs() < GUMBEL_EPS {
        let scale = l2 / 2f64.ln();
        return (b0 - EULER_GAMMA * scale, scale, 0.0);
    }
    let g = gamma(1.0 + k);
    let scale = l2 * k / (g * (1.0 - 2f64.powf(-k)));
    let loc = b0 + scale * (g - 1.0) / k;
    (loc, scale, -k)
}

fn mean_nll(data: &[f64], loc: f64, scale: f64, shape: f64) -> f64 {
    if !(scale > 0.0) || shape.abs() > SHAPE_BOUND {
        return f64::INFINITY;
    }
    let mut total = 0.0;
    for &x in data {
        let l = ln_pdf(x, loc, scale, shape);
        if !l.is_finite() {
            return f64::INFINITY;
        }
        total -= l;
    }
    total / data.len() as f64
}

/// Maximum likelihood (location, scale, shape), started from the PWM estimate.
pub fn fit(data: &[f64]) -> Result<(f64, f64, f64)> {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut loc, mut scale, shape) = pwm_estimate(&sorted);
    if !(scale > 0.0) || !loc.is_finite() {
        return Err(Error::Numerical(format!(
            "GEV moment initialization failed (location {loc}, scale {scale})"
        )));
    }
    // the PWM start may leave samples outside the support; widen until feasible
    let mut tries = 0;
    while mean_nll(data, loc, scale, shape).is_infinite() {
        scale *= 2.0;
        loc = sorted[sorted.len() / 2];
        tries += 1;
        if tries > 60 {
            return Err(Error::Numerical("no feasible GEV starting point".into()));
        }
    }

    let objective = |p: &[f64]| mean_nll(data, p[0], p[1].exp(), p[2]);
    let mut x = vec![loc, scale.ln(), shape];
    let mut steps = vec![0.1 * scale, 0.1, 0.05];
    let mut last = f64::INFINITY;
    let mut report = None;
    // restarts guard against a collapsed simplex
    for _ in 0..4 {
        let m = nelder_mead(objective, &x, &steps, 1e-13, 4000);
        let improved = last - m.fx;
        x = m.x.clone();
        last = m.fx;
        report = Some(m);
        if improved.abs() < 1e-12 {
            break;
        }
        steps = vec![0.02 * x[1].exp(), 0.02, 0.01];
    }
    let m = report.expect("at least one pass");
    if !m.converged || !m.fx.is_finite() {
        return Err(Error::Numerical(format!(
            "GEV likelihood maximization did not converge after {} iterations \
             (location {:.6}, scale {:.6}, shape {:.6}, mean nll {})",
            m.iterations,
            m.x[0],
            m.x[1].exp(),
            m.x[2],
            m.fx
        )));
    }
    Ok((m.x[0], m.x[1].exp(), m.x[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gumbel_survival(x: f64, loc: f64, scale: f64) -> f64 {
        1.0 - (-(-(x - loc) / scale).exp()).exp()
    }

    #[test]
    fn gumbel_at_location() {
        let s = survival(0.0, 0.0, 1.0, 0.0);
        assert!((s - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((s - 0.632121).abs() < 1e-6);
    }

    #[test]
    fn near_zero_shape_matches_gumbel() {
        for i in -50..=50 {
            let x = i as f64 * 0.2;
            for shape in [1e-9, -1e-9, 2e-6, -2e-6] {
                let d = (survival(x, 0.3, 1.7, shape) - gumbel_survival(x, 0.3, 1.7)).abs();
                assert!(d < 1e-5, "x {x} shape {shape} diff {d}");
            }
            assert!((survival(x, 0.3, 1.7, 1e-9) - gumbel_survival(x, 0.3, 1.7)).abs() < 1e-6);
        }
    }

    #[test]
    fn support_edges() {
        // ξ = 0.25: lower endpoint at μ - σ/ξ = -4
        assert_eq!(survival(-5.0, 0.0, 1.0, 0.25), 1.0);
        // ξ = -0.25: upper endpoint at 4
        assert_eq!(survival(5.0, 0.0, 1.0, -0.25), 0.0);
        assert_eq!(ln_pdf(5.0, 0.0, 1.0, -0.25), f64::NEG_INFINITY);
    }

    #[test]
    fn density_integrates_to_survival_difference() {
        let (loc, scale, shape) = (0.5, 2.0, 0.2);
        let (a, b) = (-1.0, 3.0);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * ln_pdf(x, loc, scale, shape).exp();
        }
        integral *= h / 3.0;
        let expect = survival(a, loc, scale, shape) - survival(b, loc, scale, shape);
        assert!((integral - expect).abs() < 1e-10);
    }
}
