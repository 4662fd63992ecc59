//! Binary OOD evaluation with OOD as the positive class and higher scores
//! meaning "more OOD".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positive {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auroc: f64,
    pub aupr_id: f64,
    pub aupr_ood: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

impl EvalResult {
    pub const CSV_HEADER: &'static str = "auroc,aupr_id,aupr_ood,fpr95,n_id,n_ood";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.auroc, self.aupr_id, self.aupr_ood, self.fpr95, self.n_id, self.n_ood
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

fn check_classes(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Data(format!(
            "both classes are needed ({} ID, {} OOD scores)",
            id.len(),
            ood.len()
        )));
    }
    if let Some(s) = id.iter().chain(ood).find(|s| s.is_nan()) {
        return Err(Error::Data(format!("score {s} cannot be ranked")));
    }
    Ok(())
}

/// Probability that an OOD score exceeds an ID score, ties counting half.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_classes(id_scores, ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the OOD rank sum, with midranks for ties
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut ood_in_group: u128 = 0;
        while j < all.len() && all[j].0 == all[i].0 {
            ood_in_group += all[j].1 as u128;
            j += 1;
        }
        twice_rank_sum += ood_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let n_id = id_scores.len() as u128;
    let n_ood = ood_scores.len() as u128;
    let twice_u = twice_rank_sum - n_ood * (n_ood + 1);
    Ok(twice_u as f64 / (2 * n_id * n_ood) as f64)
}

/// Fraction of ID scores at or above the largest threshold that keeps at
/// least `tpr_target` of the OOD scores at or above it.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr_target: f64) -> Result<f64> {
    check_classes(id_scores, ood_scores)?;
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(Error::Usage(format!("TPR target {tpr_target} outside (0, 1]")));
    }
    let mut ood = ood_scores.to_vec();
    ood.sort_by(|a, b| b.total_cmp(a));
    let n = ood.len();
    let k = (1..=n).find(|&k| k as f64 / n as f64 >= tpr_target).unwrap_or(n);
    let tau = ood[k - 1];
    let above = id_scores.iter().filter(|&&s| s >= tau).count();
    Ok(above as f64 / id_scores.len() as f64)
}

/// Area under the precision–recall curve with step interpolation over the
/// distinct thresholds. For `Positive::Id` the scores are negated.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64], positive: Positive) -> Result<f64> {
    check_classes(id_scores, ood_scores)?;
    let sign = if positive == Positive::Ood { 1.0 } else { -1.0 };
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (sign * s, positive == Positive::Id))
        .chain(ood_scores.iter().map(|&s| (sign * s, positive == Positive::Ood)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = all.iter().filter(|x| x.1).count() as f64;

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let mut new_tp = 0usize;
        while j < all.len() && all[j].0 == all[i].0 {
            new_tp += all[j].1 as usize;
            j += 1;
        }
        tp += new_tp;
        seen = j;
        if new_tp > 0 {
            area += (new_tp as f64 / n_pos) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    debug_assert_eq!(seen, all.len());
    Ok(area)
}

/// All four metrics for scores aligned with `data`'s rows.
pub fn evaluate(data: &Dataset, scores: &[f64]) -> Result<EvalResult> {
    let flags = data
        .is_ood
        .as_ref()
        .ok_or_else(|| Error::Data("dataset has no __is_ood column".into()))?;
    if scores.len() != flags.len() {
        return Err(Error::Data(format!("{} scores for {} rows", scores.len(), flags.len())));
    }
    let (mut id, mut ood) = (Vec::new(), Vec::new());
    for (&s, &f) in scores.iter().zip(flags) {
        if f {
            ood.push(s);
        } else {
            id.push(s);
        }
    }
    Ok(EvalResult {
        auroc: auroc(&id, &ood)?,
        aupr_id: aupr(&id, &ood, Positive::Id)?,
        aupr_ood: aupr(&id, &ood, Positive::Ood)?,
        fpr95: fpr_at_tpr(&id, &ood, 0.95)?,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[2.0; 5], &[2.0; 3]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.75);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at_tpr(&[0.0, 1.0], &[2.0, 3.0], 0.95).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&[0.0, 1.0, 5.0, 6.0], &[4.0], 0.95).unwrap(), 0.5);
        // 20 OOD: 19 of them is exactly 95%
        let ood: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(fpr_at_tpr(&[1.5, 2.5], &ood, 0.95).unwrap(), 0.5);
        assert!(fpr_at_tpr(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.0, 1.0], &[2.0, 3.0], Positive::Ood).unwrap(), 1.0);
        assert_eq!(aupr(&[0.0, 1.0], &[2.0, 3.0], Positive::Id).unwrap(), 1.0);
        let id: Vec<f64> = (1..=9).map(f64::from).collect();
        assert!((aupr(&id, &[0.0], Positive::Ood).unwrap() - 0.1).abs() < 1e-15);
    }
}
