//! Fusion of the MLN score with a detector score normalized by its ID
//! survival function, plus threshold decisions.

use crate::error::{Error, Result};
use crate::mln::MlnModel;
use crate::norm::ScoreDistribution;
use crate::schema::{Dataset, SemanticVector};

#[derive(Debug, Clone)]
pub struct FusedScorer {
    pub model: MlnModel,
    pub distribution: ScoreDistribution,
    pub threshold: Option<f64>,
}

impl FusedScorer {
    pub fn new(model: MlnModel, distribution: ScoreDistribution) -> Self {
        FusedScorer {
            model,
            distribution,
            threshold: None,
        }
    }

    pub fn with_threshold(mut self, tau: f64) -> Self {
        self.threshold = Some(tau);
        self
    }

    /// `mln_score(z) * P(S >= detector_score)`.
    ///
    /// An unusual detector score shrinks the product toward zero. That raises
    /// the outlier score when the MLN score is negative, which is the usual
    /// case with positive learned weights, and lowers it when positive.
    pub fn fuse_score(&self, z: &SemanticVector, detector_score: f64) -> Result<f64> {
        check_detector_score(detector_score, None)?;
        Ok(combine(self.model.score(z)?, &self.distribution, detector_score))
    }

    /// Row-order fused scores; needs the `__detector_score` column.
    pub fn fuse_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        let detector = data
            .detector_scores
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no __detector_score column".into()))?;
        for (i, &s) in detector.iter().enumerate() {
            check_detector_score(s, Some(&data.ids[i]))?;
        }
        let mln = self.model.score_batch(&data.rows)?;
        Ok(mln
            .into_iter()
            .zip(detector)
            .map(|(m, &s)| combine(m, &self.distribution, s))
            .collect())
    }

    /// Decisions under the configured threshold.
    pub fn decide(&self, scores: &[f64]) -> Result<Vec<bool>> {
        let tau = self
            .threshold
            .ok_or_else(|| Error::Usage("no threshold configured".into()))?;
        Ok(threshold(scores, tau))
    }
}

fn check_detector_score(s: f64, id: Option<&str>) -> Result<()> {
    if s.is_finite() {
        return Ok(());
    }
    Err(Error::Data(match id {
        Some(id) => format!("non-finite detector score {s} in row {id:?}"),
        None => format!("non-finite detector score {s}"),
    }))
}

fn combine(mln: f64, d: &ScoreDistribution, detector_score: f64) -> f64 {
    match d {
        ScoreDistribution::None => mln,
        d => mln * d.survival(detector_score),
    }
}

pub fn fuse_score(f: &FusedScorer, z: &SemanticVector, detector_score: f64) -> Result<f64> {
    f.fuse_score(z, detector_score)
}

pub fn fuse_batch(f: &FusedScorer, data: &Dataset) -> Result<Vec<f64>> {
    f.fuse_batch(data)
}

/// `score >= tau` flags an outlier.
pub fn threshold(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= tau).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Schema;
    use std::sync::Arc;

    fn scorer(d: ScoreDistribution) -> FusedScorer {
        let s = Arc::new(Schema::binary(["p", "q"]).unwrap());
        let m = MlnModel::from_sources(s, &["p", "q"], vec![4.0, 6.0]).unwrap();
        FusedScorer::new(m, d)
    }

    #[test]
    fn arithmetic() {
        let z = SemanticVector(vec![1, 1]);
        let f = scorer(ScoreDistribution::Uniform { a: 0.0, b: 2.0 });
        assert_eq!(f.fuse_score(&z, -1.0).unwrap(), -10.0);
        assert_eq!(f.fuse_score(&z, 1.0).unwrap(), -5.0);
        assert_eq!(scorer(ScoreDistribution::None).fuse_score(&z, 7.0).unwrap(), -10.0);
        assert!(f.fuse_score(&z, f64::NAN).is_err());
        assert!(f.fuse_score(&z, f64::INFINITY).is_err());
    }

    #[test]
    fn batch_needs_detector_column() {
        let f = scorer(ScoreDistribution::None);
        let data = Dataset::new(f.model.schema_arc().clone(), vec![SemanticVector(vec![0, 1])]).unwrap();
        assert!(f.fuse_batch(&data).is_err());
        let data = Dataset::with_columns(
            f.model.schema_arc().clone(),
            vec![SemanticVector(vec![0, 1])],
            vec!["r".into()],
            Some(vec![0.3]),
            None,
        )
        .unwrap();
        assert_eq!(f.fuse_batch(&data).unwrap(), vec![f.fuse_score(&data.rows[0], 0.3).unwrap()]);
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(threshold(&[-5.0, -1.0, 0.0], 0.0), vec![false, false, true]);
        assert_eq!(threshold(&[-5.0, 3.0], f64::MIN), vec![true, true]);
        assert_eq!(threshold(&[-5.0, 3.0], 4.0), vec![false, false]);
        let f = scorer(ScoreDistribution::None);
        assert!(f.decide(&[1.0]).is_err());
        assert_eq!(f.with_threshold(1.0).decide(&[1.0]).unwrap(), vec![true]);
    }
}
