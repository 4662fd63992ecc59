//! Generalized normal (exponential power) distribution:
//! `f(x) = β / (2αΓ(1/β)) · exp(-(|x-μ|/α)^β)`.

use statrs::function::gamma::{checked_gamma_ur, ln_gamma};

use super::optim::golden_section;
use crate::error::{Error, Result};

const SHAPE_MIN: f64 = 0.2;
const SHAPE_MAX: f64 = 20.0;
const GRID: usize = 40;

pub fn survival(x: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    let r = ((x - loc).abs() / scale).powf(shape);
    let upper = checked_gamma_ur(1.0 / shape, r).unwrap_or(if r > 1.0 { 0.0 } else { 1.0 });
    if x >= loc {
        0.5 * upper
    } else {
        1.0 - 0.5 * upper
    }
}

pub fn ln_pdf(x: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    shape.ln() - (2.0 * scale).ln() - ln_gamma(1.0 / shape) - ((x - loc).abs() / scale).powf(shape)
}

fn abs_moment(data: &[f64], loc: f64, shape: f64) -> f64 {
    data.iter().map(|x| (x - loc).abs().powf(shape)).sum::<f64>() / data.len() as f64
}

/// Profile fit for one shape: (location, scale, mean log-likelihood).
fn profile(data: &[f64], lo: f64, hi: f64, shape: f64) -> (f64, f64, f64) {
    // Σ|x-μ|^β is convex in μ for β ≥ 1; below that this finds a local minimum
    let loc = golden_section(|m| abs_moment(data, m, shape), lo, hi, 1e-9 * (hi - lo));
    let m = abs_moment(data, loc, shape);
    let scale = (shape * m).powf(1.0 / shape);
    let ll = shape.ln() - (2.0 * scale).ln() - ln_gamma(1.0 / shape) - 1.0 / shape;
    (loc, scale, ll)
}

/// Maximum likelihood by profiling the shape over a log-spaced grid, then
/// refining around the best grid point.
pub fn fit(data: &[f64]) -> Result<(f64, f64, f64)> {
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid: Vec<f64> = (0..GRID)
        .map(|i| {
            let t = i as f64 / (GRID - 1) as f64;
            (SHAPE_MIN.ln() + t * (SHAPE_MAX.ln() - SHAPE_MIN.ln())).exp()
        })
        .collect();
    let lls: Vec<f64> = grid.iter().map(|&b| profile(data, lo, hi, b).2).collect();
    let best = lls
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Numerical("generalized normal profile likelihood is not finite".into()))?;
    let a = grid[best.saturating_sub(1)].ln();
    let b = grid[(best + 1).min(GRID - 1)].ln();
    let log_shape = golden_section(|lb| -profile(data, lo, hi, lb.exp()).2, a, b, 1e-6);
    let shape = log_shape.exp();
    let (loc, scale, ll) = profile(data, lo, hi, shape);
    if !ll.is_finite() || !(scale > 0.0) {
        return Err(Error::Numerical(format!(
            "generalized normal fit failed (location {loc}, scale {scale}, shape {shape})"
        )));
    }
    Ok((loc, scale, shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;

    #[test]
    fn shape_two_is_normal() {
        // β = 2, α = σ√2
        let sd: f64 = 1.3;
        for i in -20..=20 {
            let x = i as f64 * 0.25;
            let expect = 0.5 * erfc((x - 0.4) / (sd * 2f64.sqrt()));
            let d = (survival(x, 0.4, sd * 2f64.sqrt(), 2.0) - expect).abs();
            assert!(d < 1e-10, "x {x} diff {d}");
        }
    }

    #[test]
    fn shape_one_is_laplace() {
        for i in -20..=20 {
            let x = i as f64 * 0.3;
            let expect = if x >= 0.0 { 0.5 * (-x).exp() } else { 1.0 - 0.5 * x.exp() };
            assert!((survival(x, 0.0, 1.0, 1.0) - expect).abs() < 1e-12);
        }
    }
}
