//! Markov logic network over a finite semantic space.
//!
//! With single-object groundings every formula contributes an indicator
//! φᵢ(z) ∈ {0, 1}, so the network is the log-linear model
//! `P(z) = exp(Σᵢ wᵢ φᵢ(z)) / Z`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::{self, CompiledConstraint, WORD};
use crate::schema::{Dataset, Schema, SemanticVector};

/// Largest semantic space enumerated by default.
pub const DEFAULT_SPACE_CAP: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct MlnModel {
    schema: Arc<Schema>,
    constraints: Vec<CompiledConstraint>,
    weights: Vec<f64>,
}

#[inline]
fn contribution(weight: f64, satisfied: bool) -> f64 {
    -(weight * if satisfied { 1.0 } else { 0.0 })
}

impl MlnModel {
    pub fn new(
        schema: Arc<Schema>,
        constraints: Vec<CompiledConstraint>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if constraints.len() != weights.len() {
            return Err(Error::Data(format!(
                "{} weights for {} constraints",
                weights.len(),
                constraints.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Data(format!(
                "weight of constraint {:?} is not finite",
                constraints[i].source()
            )));
        }
        let constraints = constraints
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.with_id(i))
            .collect();
        Ok(MlnModel {
            schema,
            constraints,
            weights,
        })
    }

    /// Every weight set to `weight`.
    pub fn with_constant_weight(
        schema: Arc<Schema>,
        constraints: Vec<CompiledConstraint>,
        weight: f64,
    ) -> Result<Self> {
        let n = constraints.len();
        MlnModel::new(schema, constraints, vec![weight; n])
    }

    /// Compiles `sources` against `schema` and pairs them with `weights`.
    pub fn from_sources<S: AsRef<str>>(
        schema: Arc<Schema>,
        sources: &[S],
        weights: Vec<f64>,
    ) -> Result<Self> {
        let constraints = lang::compile_all(sources, &schema)?;
        MlnModel::new(schema, constraints, weights)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn constraints(&self) -> &[CompiledConstraint] {
        &self.constraints
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        MlnModel::new(self.schema.clone(), self.constraints.clone(), weights)
    }

    /// Σᵢ wᵢ φᵢ(z), unchecked.
    fn energy(&self, z: &[u32]) -> f64 {
        self.constraints
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| if c.eval_unchecked(z) { w } else { 0.0 })
            .sum()
    }

    /// Outlier score `-Σᵢ wᵢ φᵢ(z)`. Needs no partition function, so it
    /// works for any schema size.
    pub fn score(&self, z: &SemanticVector) -> Result<f64> {
        self.schema.check(z)?;
        Ok(self.score_unchecked(&z.0))
    }

    fn score_unchecked(&self, z: &[u32]) -> f64 {
        let mut total = 0.0;
        for (c, &w) in self.constraints.iter().zip(&self.weights) {
            total += contribution(w, c.eval_unchecked(z));
        }
        total
    }

    /// Scores many rows; bit-identical to calling [`score`](Self::score) per row.
    pub fn score_batch(&self, rows: &[SemanticVector]) -> Result<Vec<f64>> {
        for z in rows {
            self.schema.check(z)?;
        }
        let mut out = vec![0.0; rows.len()];
        out.par_chunks_mut(WORD)
            .zip(rows.par_chunks(WORD))
            .for_each(|(scores, chunk)| {
                let words: Vec<u64> = self.constraints.iter().map(|c| c.eval_word(chunk)).collect();
                for (r, s) in scores.iter_mut().enumerate() {
                    let mut total = 0.0;
                    for (word, &w) in words.iter().zip(&self.weights) {
                        total += contribution(w, (word >> r) & 1 == 1);
                    }
                    *s = total;
                }
            });
        Ok(out)
    }

    /// Satisfaction indicator of every constraint at `z`.
    pub fn satisfied(&self, z: &SemanticVector) -> Result<Vec<bool>> {
        self.schema.check(z)?;
        Ok(self.constraints.iter().map(|c| c.eval_unchecked(&z.0)).collect())
    }

    /// Per-constraint breakdown of [`score`](Self::score).
    pub fn explain(&self, z: &SemanticVector) -> Result<ScoreExplanation> {
        self.schema.check(z)?;
        let mut total = 0.0;
        let mut entries = Vec::with_capacity(self.len());
        for (c, &w) in self.constraints.iter().zip(&self.weights) {
            let satisfied = c.eval_unchecked(&z.0);
            let contribution = contribution(w, satisfied);
            total += contribution;
            entries.push(ExplanationEntry {
                constraint_id: c.id(),
                constraint: c.source().to_string(),
                satisfied,
                weight: w,
                contribution,
            });
        }
        Ok(ScoreExplanation {
            total_score: total,
            entries,
        })
    }

    /// `log Σ_z exp(Σᵢ wᵢ φᵢ(z))` by exhaustive enumeration with max-shift.
    pub fn log_partition(&self, space_cap: u64) -> Result<f64> {
        let energies: Vec<f64> = enumerate_space(&self.schema, space_cap)?
            .map(|z| self.energy(&z.0))
            .collect();
        Ok(log_sum_exp(&energies))
    }

    pub fn log_prob(&self, z: &SemanticVector, space_cap: u64) -> Result<f64> {
        self.schema.check(z)?;
        Ok(self.energy(&z.0) - self.log_partition(space_cap)?)
    }

    /// Mean negative log-likelihood of `data` and its gradient in the weights.
    pub fn nll_and_gradient(&self, data: &Dataset, space_cap: u64) -> Result<(f64, Vec<f64>)> {
        let stats = SufficientStats::new(self, data, space_cap)?;
        Ok(stats.nll_and_gradient(&self.weights))
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn mln_score(m: &MlnModel, z: &SemanticVector) -> Result<f64> {
    m.score(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEntry {
    pub constraint_id: usize,
    pub constraint: String,
    pub satisfied: bool,
    pub weight: f64,
    /// `-weight` when satisfied, zero otherwise.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreExplanation {
    pub total_score: f64,
    pub entries: Vec<ExplanationEntry>,
}

impl ScoreExplanation {
    pub fn violated(&self) -> impl Iterator<Item = &ExplanationEntry> {
        self.entries.iter().filter(|e| !e.satisfied)
    }
}

/// All possible worlds of a schema in lexicographic order (first concept
/// most significant).
#[derive(Debug, Clone)]
pub struct SpaceIter {
    sizes: Vec<u32>,
    next: Option<Vec<u32>>,
    remaining: u64,
}

impl Iterator for SpaceIter {
    type Item = SemanticVector;

    fn next(&mut self) -> Option<SemanticVector> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut i = succ.len();
        let mut carried = true;
        while carried && i > 0 {
            i -= 1;
            succ[i] += 1;
            if succ[i] == self.sizes[i] {
                succ[i] = 0;
            } else {
                carried = false;
            }
        }
        if !carried {
            self.next = Some(succ);
        }
        self.remaining -= 1;
        Some(SemanticVector(cur))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

impl ExactSizeIterator for SpaceIter {}

fn checked_space_size(schema: &Schema, cap: u64) -> Result<u64> {
    let size: u128 = schema
        .concepts()
        .iter()
        .fold(1u128, |acc, c| acc.saturating_mul(c.domain().len() as u128));
    if size > cap as u128 {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    Ok(size as u64)
}

pub fn enumerate_space(schema: &Schema, space_cap: u64) -> Result<SpaceIter> {
    let size = checked_space_size(schema, space_cap)?;
    Ok(SpaceIter {
        sizes: schema.domain_sizes(),
        next: Some(vec![0; schema.len()]),
        remaining: size,
    })
}

/// Per-constraint satisfaction statistics, computed once so that the NLL
/// becomes a function of the weights alone.
#[derive(Debug, Clone)]
pub struct SufficientStats {
    /// Distinct satisfaction patterns over the semantic space with their
    /// world counts, sorted by pattern.
    patterns: Vec<(Vec<bool>, f64)>,
    /// Fraction of data rows satisfying each constraint.
    empirical: Vec<f64>,
    rows: usize,
}

impl SufficientStats {
    pub fn new(model: &MlnModel, data: &Dataset, space_cap: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data("cannot fit on an empty dataset".into()));
        }
        let worlds: Vec<SemanticVector> = enumerate_space(&model.schema, space_cap)?.collect();
        for z in &data.rows {
            model.schema.check(z)?;
        }
        let counts = |rows: &[SemanticVector]| -> Vec<Vec<u64>> {
            rows.par_chunks(WORD)
                .map(|chunk| model.constraints.iter().map(|c| c.eval_word(chunk)).collect())
                .collect()
        };

        let mut grouped: HashMap<Vec<bool>, u64> = HashMap::new();
        for (k, words) in counts(&worlds).into_iter().enumerate() {
            let n = (worlds.len() - k * WORD).min(WORD);
            for r in 0..n {
                let pattern: Vec<bool> = words.iter().map(|w| (w >> r) & 1 == 1).collect();
                *grouped.entry(pattern).or_insert(0) += 1;
            }
        }
        let mut patterns: Vec<(Vec<bool>, f64)> =
            grouped.into_iter().map(|(p, c)| (p, c as f64)).collect();
        patterns.sort_by(|a, b| a.0.cmp(&b.0));

        let mut satisfied = vec![0u64; model.len()];
        for words in counts(&data.rows) {
            for (s, w) in satisfied.iter_mut().zip(words) {
                *s += w.count_ones() as u64;
            }
        }
        let n = data.len() as f64;
        Ok(SufficientStats {
            patterns,
            empirical: satisfied.into_iter().map(|s| s as f64 / n).collect(),
            rows: data.len(),
        })
    }

    pub fn num_constraints(&self) -> usize {
        self.empirical.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn empirical_means(&self) -> &[f64] {
        &self.empirical
    }

    fn pattern_logits(&self, weights: &[f64]) -> Vec<f64> {
        self.patterns
            .iter()
            .map(|(p, count)| {
                let e: f64 = p
                    .iter()
                    .zip(weights)
                    .map(|(&s, &w)| if s { w } else { 0.0 })
                    .sum();
                count.ln() + e
            })
            .collect()
    }

    pub fn log_partition(&self, weights: &[f64]) -> f64 {
        log_sum_exp(&self.pattern_logits(weights))
    }

    pub fn nll(&self, weights: &[f64]) -> f64 {
        let log_z = self.log_partition(weights);
        let fit: f64 = weights.iter().zip(&self.empirical).map(|(w, m)| w * m).sum();
        log_z - fit
    }

    /// NLL and `E_model[φ] - mean_data[φ]`.
    pub fn nll_and_gradient(&self, weights: &[f64]) -> (f64, Vec<f64>) {
        let logits = self.pattern_logits(weights);
        let log_z = log_sum_exp(&logits);
        let mut expected = vec![0.0; weights.len()];
        for ((p, _), l) in self.patterns.iter().zip(&logits) {
            let prob = (l - log_z).exp();
            for (e, &s) in expected.iter_mut().zip(p) {
                if s {
                    *e += prob;
                }
            }
        }
        let fit: f64 = weights.iter().zip(&self.empirical).map(|(w, m)| w * m).sum();
        let grad = expected
            .iter()
            .zip(&self.empirical)
            .map(|(e, m)| e - m)
            .collect();
        (log_z - fit, grad)
    }
}

/// One entry of a weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub constraint: String,
    pub weight: f64,
}

impl MlnModel {
    pub fn weight_entries(&self) -> Vec<WeightEntry> {
        self.constraints
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| WeightEntry {
                constraint: c.source().to_string(),
                weight: w,
            })
            .collect()
    }

    pub fn weights_json(&self) -> String {
        serde_json::to_string_pretty(&self.weight_entries()).expect("weights serialize") + "\n"
    }

    pub fn from_weights_json(text: &str, schema: Arc<Schema>) -> Result<Self> {
        let entries: Vec<WeightEntry> =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("weights file: {e}")))?;
        let sources: Vec<&str> = entries.iter().map(|e| e.constraint.as_str()).collect();
        MlnModel::from_sources(schema, &sources, entries.iter().map(|e| e.weight).collect())
    }

    pub fn load_weights(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MlnModel::from_weights_json(&text, schema)
    }
}
