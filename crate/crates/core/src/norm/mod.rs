//! Parametric models of a baseline detector's scores on in-distribution
//! data. The survival function `P(S >= s)` maps raw scores of any scale
//! into `[0, 1]`.

mod gennorm;
pub mod gev;
mod optim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Minimum sample count for the likelihood-fitted families.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gev,
    Uniform,
    Normal,
    GeneralizedNormal,
    Lognormal,
    None,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Gev,
        Family::Uniform,
        Family::Normal,
        Family::GeneralizedNormal,
        Family::Lognormal,
        Family::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gev => "gev",
            Family::Uniform => "uniform",
            Family::Normal => "normal",
            Family::GeneralizedNormal => "generalized_normal",
            Family::Lognormal => "lognormal",
            Family::None => "none",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gev" => Family::Gev,
            "uniform" => Family::Uniform,
            "normal" => Family::Normal,
            "gennorm" | "generalized_normal" => Family::GeneralizedNormal,
            "lognormal" => Family::Lognormal,
            "none" => Family::None,
            other => return Err(Error::Usage(format!("unknown distribution family {other:?}"))),
        })
    }
}

/// A fitted score distribution. Serializes as
/// `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ScoreDistribution {
    Gev { location: f64, scale: f64, shape: f64 },
    Uniform { a: f64, b: f64 },
    Normal { mean: f64, sd: f64 },
    GeneralizedNormal { location: f64, scale: f64, shape: f64 },
    Lognormal { log_mean: f64, log_sd: f64 },
    None,
}

impl ScoreDistribution {
    /// Checks the parameter constraints of the family.
    pub fn validate(&self) -> Result<()> {
        use ScoreDistribution::*;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match *self {
            Gev { location, scale, shape } => finite(&[location, scale, shape]) && scale > 0.0,
            Uniform { a, b } => finite(&[a, b]) && a < b,
            Normal { mean, sd } => finite(&[mean, sd]) && sd > 0.0,
            GeneralizedNormal { location, scale, shape } => {
                finite(&[location, scale, shape]) && scale > 0.0 && shape > 0.0
            }
            Lognormal { log_mean, log_sd } => finite(&[log_mean, log_sd]) && log_sd > 0.0,
            None => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ScoreDistribution::Gev { .. } => Family::Gev,
            ScoreDistribution::Uniform { .. } => Family::Uniform,
            ScoreDistribution::Normal { .. } => Family::Normal,
            ScoreDistribution::GeneralizedNormal { .. } => Family::GeneralizedNormal,
            ScoreDistribution::Lognormal { .. } => Family::Lognormal,
            ScoreDistribution::None => Family::None,
        }
    }

    /// `P(S >= s)`, clamped to `[0, 1]`. Always 1 for `None`.
    pub fn survival(&self, s: f64) -> f64 {
        let v = match *self {
            ScoreDistribution::Gev { location, scale, shape } => gev::survival(s, location, scale, shape),
            ScoreDistribution::Uniform { a, b } => {
                if s <= a {
                    1.0
                } else if s >= b {
                    0.0
                } else {
                    (b - s) / (b - a)
                }
            }
            ScoreDistribution::Normal { mean, sd } => {
                0.5 * erfc((s - mean) / (sd * std::f64::consts::SQRT_2))
            }
            ScoreDistribution::GeneralizedNormal { location, scale, shape } => {
                gennorm::survival(s, location, scale, shape)
            }
            ScoreDistribution::Lognormal { log_mean, log_sd } => {
                if s <= 0.0 {
                    1.0
                } else {
                    0.5 * erfc((s.ln() - log_mean) / (log_sd * std::f64::consts::SQRT_2))
                }
            }
            ScoreDistribution::None => 1.0,
        };
        if v.is_nan() {
            // only reachable for s = ±inf in some families
            return if s > 0.0 { 0.0 } else { 1.0 };
        }
        v.clamp(0.0, 1.0)
    }

    pub fn cdf(&self, s: f64) -> f64 {
        1.0 - self.survival(s)
    }

    /// Log density; `None` for the `none` family.
    pub fn ln_pdf(&self, s: f64) -> Option<f64> {
        use std::f64::consts::PI;
        Some(match *self {
            ScoreDistribution::Gev { location, scale, shape } => gev::ln_pdf(s, location, scale, shape),
            ScoreDistribution::Uniform { a, b } => {
                if s < a || s > b {
                    f64::NEG_INFINITY
                } else {
                    -(b - a).ln()
                }
            }
            ScoreDistribution::Normal { mean, sd } => {
                let z = (s - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
            }
            ScoreDistribution::GeneralizedNormal { location, scale, shape } => {
                gennorm::ln_pdf(s, location, scale, shape)
            }
            ScoreDistribution::Lognormal { log_mean, log_sd } => {
                if s <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    let z = (s.ln() - log_mean) / log_sd;
                    -0.5 * z * z - log_sd.ln() - s.ln() - 0.5 * (2.0 * PI).ln()
                }
            }
            ScoreDistribution::None => return Option::None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("distribution serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: ScoreDistribution =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("distribution file: {e}")))?;
        d.validate()?;
        Ok(d)
    }
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Maximum-likelihood fit of `family` to ID scores. Uniform uses the sample
/// range; `None` always succeeds.
pub fn fit_distribution(scores: &[f64], family: Family) -> Result<ScoreDistribution> {
    if family == Family::None {
        return Ok(ScoreDistribution::None);
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Data(format!("non-finite score {bad}")));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    if family == Family::Uniform {
        if scores.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: scores.len(),
            });
        }
        if lo == hi {
            return Err(Error::Data("zero variance: all scores are equal".into()));
        }
        return Ok(ScoreDistribution::Uniform { a: lo, b: hi });
    }

    if scores.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_SAMPLES,
            got: scores.len(),
        });
    }
    if lo == hi {
        return Err(Error::Data("zero variance: all scores are equal".into()));
    }
    let dist = match family {
        Family::Normal => {
            let (mean, sd) = mean_and_sd(scores);
            ScoreDistribution::Normal { mean, sd }
        }
        Family::Lognormal => {
            if lo <= 0.0 {
                return Err(Error::Data(format!(
                    "lognormal fit needs positive scores, minimum is {lo}"
                )));
            }
            let logs: Vec<f64> = scores.iter().map(|s| s.ln()).collect();
            let (log_mean, log_sd) = mean_and_sd(&logs);
            if !(log_sd > 0.0) {
                return Err(Error::Data("zero variance in log scores".into()));
            }
            ScoreDistribution::Lognormal { log_mean, log_sd }
        }
        Family::Gev => {
            let (location, scale, shape) = gev::fit(scores)?;
            ScoreDistribution::Gev { location, scale, shape }
        }
        Family::GeneralizedNormal => {
            let (location, scale, shape) = gennorm::fit(scores)?;
            ScoreDistribution::GeneralizedNormal { location, scale, shape }
        }
        Family::Uniform | Family::None => unreachable!(),
    };
    dist.validate().map_err(|_| Error::Numerical(format!("fit produced invalid parameters {dist:?}")))?;
    Ok(dist)
}

pub fn survival(d: &ScoreDistribution, s: f64) -> f64 {
    d.survival(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: u64,
    /// Count divided by `n * width`.
    pub empirical_density: f64,
    /// Mean fitted density over the bin; absent for `none`.
    pub fitted_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub family: Family,
    pub n: usize,
    pub normalization_disabled: bool,
    pub log_likelihood: Option<f64>,
    /// Supremum distance between empirical and fitted CDF.
    pub ks_statistic: Option<f64>,
    pub note: Option<String>,
    #[serde(skip)]
    pub histogram: Vec<HistogramBin>,
}

impl FitDiagnostics {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize") + "\n"
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count,empirical_density,fitted_density\n");
        for b in &self.histogram {
            let fitted = b.fitted_density.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.left, b.right, b.count, b.empirical_density, fitted
            ));
        }
        out
    }
}

pub const DEFAULT_BINS: usize = 50;

/// Goodness-of-fit report of `d` against `scores`.
pub fn fit_diagnostics(d: &ScoreDistribution, scores: &[f64], bins: usize) -> Result<FitDiagnostics> {
    if scores.is_empty() {
        return Err(Error::Data("no scores to diagnose".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let disabled = d.family() == Family::None;

    let (log_likelihood, ks_statistic) = if disabled {
        (Option::None, Option::None)
    } else {
        let ll: f64 = sorted.iter().map(|&s| d.ln_pdf(s).unwrap()).sum();
        let mut ks: f64 = 0.0;
        let mut i = 0;
        while i < n {
            // step over ties so the empirical CDF is evaluated on both sides of the jump
            let mut j = i;
            while j < n && sorted[j] == sorted[i] {
                j += 1;
            }
            let f = d.cdf(sorted[i]);
            ks = ks.max((f - i as f64 / n as f64).abs());
            ks = ks.max((j as f64 / n as f64 - f).abs());
            i = j;
        }
        (Some(ll), Some(ks))
    };

    let lo = sorted[0];
    let hi = sorted[n - 1];
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let bins = if hi > lo { bins } else { 1 };
    let mut counts = vec![0u64; bins];
    for &s in &sorted {
        let k = (((s - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let histogram = counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            let left = lo + k as f64 * width;
            let right = if k + 1 == bins { lo + bins as f64 * width } else { lo + (k + 1) as f64 * width };
            let fitted_density = (!disabled).then(|| (d.survival(left) - d.survival(right)) / (right - left));
            HistogramBin {
                left,
                right,
                count,
                empirical_density: count as f64 / (n as f64 * (right - left)),
                fitted_density,
            }
        })
        .collect();

    Ok(FitDiagnostics {
        family: d.family(),
        n,
        normalization_disabled: disabled,
        log_likelihood,
        ks_statistic,
        note: disabled.then(|| "normalization disabled: survival is 1 for every score".to_string()),
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_survivals() {
        let g = ScoreDistribution::Gev { location: 0.0, scale: 1.0, shape: 0.0 };
        assert!((g.survival(0.0) - 0.632121).abs() < 1e-6);
        let u = ScoreDistribution::Uniform { a: 0.0, b: 2.0 };
        assert_eq!(u.survival(1.0), 0.5);
        assert_eq!(u.survival(-3.0), 1.0);
        assert_eq!(u.survival(3.0), 0.0);
        let n = ScoreDistribution::Normal { mean: 3.5, sd: 0.7 };
        assert!((n.survival(3.5) - 0.5).abs() < 1e-15);
        let l = ScoreDistribution::Lognormal { log_mean: 1.0, log_sd: 0.5 };
        assert!((l.survival(1f64.exp()) - 0.5).abs() < 1e-15);
        assert_eq!(l.survival(-1.0), 1.0);
        assert_eq!(ScoreDistribution::None.survival(1e9), 1.0);
    }

    #[test]
    fn uniform_fit_is_range() {
        let d = fit_distribution(&[1.0, 2.0, 3.0, 4.0], Family::Uniform).unwrap();
        assert_eq!(d, ScoreDistribution::Uniform { a: 1.0, b: 4.0 });
    }

    #[test]
    fn fit_guards() {
        let constant = vec![2.0; 50];
        for fam in [Family::Normal, Family::Gev, Family::GeneralizedNormal, Family::Lognormal, Family::Uniform] {
            assert!(fit_distribution(&constant, fam).is_err(), "{fam}");
        }
        let few = vec![1.0, 2.0, 3.0];
        assert!(matches!(
            fit_distribution(&few, Family::Normal),
            Err(Error::InsufficientSamples { needed: 20, got: 3 })
        ));
        let neg: Vec<f64> = (0..30).map(|i| i as f64 - 5.0).collect();
        assert!(fit_distribution(&neg, Family::Lognormal).is_err());
        assert!(fit_distribution(&[1.0, f64::NAN], Family::Uniform).is_err());
        assert_eq!(fit_distribution(&[], Family::None).unwrap(), ScoreDistribution::None);
    }

    #[test]
    fn normal_fit_is_mle() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let ScoreDistribution::Normal { mean, sd } = fit_distribution(&xs, Family::Normal).unwrap() else {
            panic!()
        };
        let m = xs.iter().sum::<f64>() / 40.0;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 40.0;
        assert!((mean - m).abs() < 1e-12 && (sd - v.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn json_format() {
        let d = ScoreDistribution::Gev { location: 0.5, scale: 2.0, shape: -0.1 };
        let text = d.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["family"], "gev");
        assert_eq!(v["params"]["scale"], 2.0);
        assert_eq!(ScoreDistribution::from_json(&text).unwrap(), d);
        let g = ScoreDistribution::GeneralizedNormal { location: 0.0, scale: 1.0, shape: 1.5 };
        assert!(g.to_json().contains("\"generalized_normal\""));
        assert_eq!(ScoreDistribution::from_json(r#"{"family":"none"}"#).unwrap(), ScoreDistribution::None);
        assert!(ScoreDistribution::from_json(r#"{"family":"normal","params":{"mean":0,"sd":-1}}"#).is_err());
    }

    #[test]
    fn family_names() {
        assert_eq!("gennorm".parse::<Family>().unwrap(), Family::GeneralizedNormal);
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("weibull".parse::<Family>().is_err());
    }

    #[test]
    fn diagnostics_for_none() {
        let d = fit_diagnostics(&ScoreDistribution::None, &[1.0, 2.0, 2.0, 5.0], 4).unwrap();
        assert!(d.normalization_disabled);
        assert!(d.note.as_deref().unwrap().contains("disabled"));
        assert!(d.ks_statistic.is_none());
        assert_eq!(d.histogram.iter().map(|b| b.count).sum::<u64>(), 4);
        assert!(fit_diagnostics(&ScoreDistribution::None, &[], 4).is_err());
        let csv = d.histogram_csv();
        assert_eq!(csv.lines().count(), 5);
    }
}
