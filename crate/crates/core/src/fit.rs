//! Maximum-likelihood weight learning.
//!
//! Full-batch L-BFGS with a backtracking (Armijo) line search on the exact
//! mean negative log-likelihood. Only descent steps are accepted, so the
//! NLL trace is non-increasing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mln::{MlnModel, SufficientStats, DEFAULT_SPACE_CAP};
use crate::schema::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_epochs: usize,
    /// Length of the very first step, scaled by `min(1, 1/|g|₁)`. Later
    /// iterations start from the unit quasi-Newton step.
    pub learning_rate: f64,
    /// Stop once one iteration improves the NLL by less than this.
    pub convergence_tol: f64,
    pub init_weight: f64,
    pub space_cap: u64,
    pub iterations_per_epoch: usize,
    pub history: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_epochs: 10,
            learning_rate: 0.01,
            convergence_tol: 1e-9,
            init_weight: -1.0,
            space_cap: DEFAULT_SPACE_CAP,
            iterations_per_epoch: 20,
            history: 10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::Usage("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Usage("learning rate must be positive".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Usage("convergence tolerance must be non-negative".into()));
        }
        if self.space_cap < 1 {
            return Err(Error::Usage("space cap must be at least 1".into()));
        }
        if self.iterations_per_epoch < 1 || self.history < 1 {
            return Err(Error::Usage("iterations per epoch and history must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub epochs: usize,
    pub iterations: usize,
    pub converged: bool,
    /// NLL after every accepted iteration, starting with the initial value.
    pub nll_trace: Vec<f64>,
    /// NLL at the end of every epoch.
    pub epoch_nll: Vec<f64>,
}

pub fn fit_weights(model: &MlnModel, data: &Dataset, cfg: &FitConfig) -> Result<MlnModel> {
    fit_weights_with_report(model, data, cfg).map(|(m, _)| m)
}

/// Fits from `cfg.init_weight` for every constraint, ignoring the model's
/// current weights.
pub fn fit_weights_with_report(
    model: &MlnModel,
    data: &Dataset,
    cfg: &FitConfig,
) -> Result<(MlnModel, FitReport)> {
    cfg.validate()?;
    let stats = SufficientStats::new(model, data, cfg.space_cap)?;
    let init = vec![cfg.init_weight; model.len()];
    let (weights, report) = minimize(&stats, init, cfg)?;
    Ok((model.with_weights(weights)?, report))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(nll: f64, grad: &[f64], iteration: usize) -> Result<()> {
    if !nll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite NLL or gradient at iteration {iteration}"
        )));
    }
    Ok(())
}

/// Two-loop recursion: approximate inverse Hessian times `grad`, negated.
fn lbfgs_direction(grad: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

fn minimize(stats: &SufficientStats, mut w: Vec<f64>, cfg: &FitConfig) -> Result<(Vec<f64>, FitReport)> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;

    let (mut f, mut g) = stats.nll_and_gradient(&w);
    check_finite(f, &g, 0)?;
    log::info!("epoch 0: nll {f:.10} weights {w:?}");

    let mut report = FitReport {
        initial_nll: f,
        final_nll: f,
        epochs: 0,
        iterations: 0,
        converged: false,
        nll_trace: vec![f],
        epoch_nll: vec![f],
    };
    if w.is_empty() {
        report.converged = true;
        return Ok((w, report));
    }

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    'epochs: for epoch in 1..=cfg.max_epochs {
        report.epochs = epoch;
        for _ in 0..cfg.iterations_per_epoch {
            if g.iter().all(|x| x.abs() < 1e-14) {
                report.converged = true;
                break 'epochs;
            }
            let mut d = lbfgs_direction(&g, &memory);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                memory.clear();
                d = g.iter().map(|x| -x).collect();
                slope = dot(&g, &d);
            }
            let mut t = if report.iterations == 0 {
                let g1: f64 = g.iter().map(|x| x.abs()).sum();
                cfg.learning_rate * (1.0 / g1).min(1.0)
            } else {
                1.0
            };

            let mut accepted = None;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = w.iter().zip(&d).map(|(wi, di)| wi + t * di).collect();
                let (ft, gt) = stats.nll_and_gradient(&trial);
                if ft.is_finite() && gt.iter().all(|x| x.is_finite()) && ft <= f + ARMIJO * t * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                t *= 0.5;
            }
            let Some((w_new, f_new, g_new)) = accepted else {
                // no descent possible at floating-point resolution
                report.converged = true;
                break 'epochs;
            };
            report.iterations += 1;
            check_finite(f_new, &g_new, report.iterations)?;

            let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 {
                if memory.len() == cfg.history {
                    memory.pop_front();
                }
                memory.push_back((s, y, 1.0 / sy));
            }

            let improvement = f - f_new;
            w = w_new;
            f = f_new;
            g = g_new;
            report.nll_trace.push(f);
            if improvement < cfg.convergence_tol && report.iterations > 1 {
                report.converged = true;
                break 'epochs;
            }
        }
        report.epoch_nll.push(f);
        log::info!("epoch {epoch}: nll {f:.10}");
    }
    if report.epoch_nll.len() <= report.epochs {
        report.epoch_nll.push(f);
    }
    report.final_nll = f;
    Ok((w, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Schema, SemanticVector};
    use std::sync::Arc;

    fn rows(bits: &[(u32, usize)]) -> Vec<SemanticVector> {
        bits.iter()
            .flat_map(|&(v, n)| std::iter::repeat(SemanticVector(vec![v])).take(n))
            .collect()
    }

    #[test]
    fn logistic_mle() {
        let s = Arc::new(Schema::binary(["p"]).unwrap());
        let m = MlnModel::from_sources(s.clone(), &["p"], vec![0.0]).unwrap();
        let data = Dataset::new(s, rows(&[(1, 75), (0, 25)])).unwrap();
        let (fit, report) = fit_weights_with_report(&m, &data, &FitConfig::default()).unwrap();
        assert!((fit.weights()[0] - 3f64.ln()).abs() < 1e-3, "{:?}", fit.weights());
        assert!(report.nll_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(report.nll_trace[0], report.initial_nll);
    }

    #[test]
    fn degenerate_data_stays_monotone() {
        let s = Arc::new(Schema::binary(["p"]).unwrap());
        let m = MlnModel::from_sources(s.clone(), &["p"], vec![0.0]).unwrap();
        let data = Dataset::new(s, rows(&[(1, 10)])).unwrap();
        let (fit, report) = fit_weights_with_report(&m, &data, &FitConfig::default()).unwrap();
        assert!(fit.weights()[0] > 5.0);
        assert!(report.nll_trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.epochs <= 10);
    }

    #[test]
    fn deterministic() {
        let s = Arc::new(Schema::binary(["p", "q"]).unwrap());
        let m = MlnModel::from_sources(s.clone(), &["p", "p -> q"], vec![0.0, 0.0]).unwrap();
        let data = Dataset::new(
            s,
            vec![
                SemanticVector(vec![1, 1]),
                SemanticVector(vec![0, 1]),
                SemanticVector(vec![1, 0]),
                SemanticVector(vec![1, 1]),
                SemanticVector(vec![0, 0]),
            ],
        )
        .unwrap();
        let a = fit_weights_with_report(&m, &data, &FitConfig::default()).unwrap();
        let b = fit_weights_with_report(&m, &data, &FitConfig::default()).unwrap();
        assert_eq!(a.0.weights(), b.0.weights());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn empty_knowledge_base() {
        let s = Arc::new(Schema::binary(["p"]).unwrap());
        let m = MlnModel::from_sources::<&str>(s.clone(), &[], vec![]).unwrap();
        let data = Dataset::new(s, rows(&[(1, 3)])).unwrap();
        let (fit, r) = fit_weights_with_report(&m, &data, &FitConfig::default()).unwrap();
        assert!(fit.is_empty());
        assert!((r.final_nll - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad = FitConfig {
            max_epochs: 0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = FitConfig {
            learning_rate: 0.0,
            ..FitConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn huge_init_is_a_numerical_error() {
        let s = Arc::new(Schema::binary(["p"]).unwrap());
        let m = MlnModel::from_sources(s.clone(), &["p"], vec![0.0]).unwrap();
        let data = Dataset::new(s, rows(&[(1, 1), (0, 1)])).unwrap();
        let cfg = FitConfig {
            init_weight: f64::INFINITY,
            ..FitConfig::default()
        };
        assert!(matches!(fit_weights(&m, &data, &cfg), Err(Error::Numerical(_))));
    }
}
