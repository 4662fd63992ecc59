//! Candidate generation and greedy constraint-set search.
//!
//! Candidates are literals and formula trees over distinct concepts, with
//! logically equivalent formulas removed. The search walks the pool once,
//! refits the weights for every candidate added to the working set, and keeps
//! the candidate if validation AUROC improves by more than `delta_min`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_weights, FitConfig};
use crate::fusion::FusedScorer;
use crate::lang::{compile, CompiledConstraint, ConstraintAst, Expr};
use crate::metrics::auroc;
use crate::mln::MlnModel;
use crate::norm::ScoreDistribution;
use crate::schema::{Dataset, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connective {
    Implies,
    And,
    Or,
    Xor,
}

impl Connective {
    fn apply(self, a: Expr, b: Expr) -> Expr {
        match self {
            Connective::Implies => Expr::implies(a, b),
            Connective::And => Expr::and(a, b),
            Connective::Or => Expr::or(a, b),
            Connective::Xor => Expr::xor(a, b),
        }
    }
}

impl fmt::Display for Connective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connective::Implies => "implies",
            Connective::And => "and",
            Connective::Or => "or",
            Connective::Xor => "xor",
        })
    }
}

impl FromStr for Connective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "implies" | "->" => Connective::Implies,
            "and" => Connective::And,
            "or" => Connective::Or,
            "xor" => Connective::Xor,
            other => return Err(Error::Usage(format!("unknown connective {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// 1: literals only. 2: adds one connective over two literals. 3: adds
    /// a connective over a depth-2 tree and a literal or another depth-2 tree.
    pub max_depth: usize,
    pub connectives: Vec<Connective>,
    /// Whether literals may be negated.
    pub allow_negation: bool,
    /// Concepts to build from; all of the schema when `None`.
    pub concepts: Option<Vec<String>>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            max_depth: 2,
            connectives: vec![Connective::Implies],
            allow_negation: true,
            concepts: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub config: GeneratorConfig,
    pub candidates: Vec<ConstraintAst>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// A pool taken verbatim, e.g. from a constraint file.
    pub fn from_constraints(candidates: Vec<ConstraintAst>) -> Self {
        CandidatePool {
            config: GeneratorConfig::default(),
            candidates,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Literal {
    concept: usize,
    negated: bool,
}

struct Raw {
    expr: Expr,
    concepts: Vec<usize>,
    depth: usize,
}

fn literal_expr(schema: &Schema, l: Literal) -> Expr {
    let atom = Expr::bare(schema.concept(l.concept).name());
    if l.negated {
        Expr::not(atom)
    } else {
        atom
    }
}

fn eval(expr: &Expr, schema: &Schema, assignment: &[bool]) -> bool {
    match expr {
        Expr::Atom { concept, .. } => {
            assignment[schema.concept_index(concept).expect("generated from schema")]
        }
        Expr::Not(e) => !eval(e, schema, assignment),
        Expr::And(a, b) => eval(a, schema, assignment) && eval(b, schema, assignment),
        Expr::Or(a, b) => eval(a, schema, assignment) || eval(b, schema, assignment),
        Expr::Xor(a, b) => eval(a, schema, assignment) != eval(b, schema, assignment),
        Expr::Implies(a, b) => !eval(a, schema, assignment) || eval(b, schema, assignment),
    }
}

/// Boolean function identity: the variables it depends on and its truth
/// table over them. Empty variables means constant.
type FunctionKey = (Vec<usize>, Vec<bool>);

fn function_key(raw: &Raw, schema: &Schema) -> FunctionKey {
    let vars = &raw.concepts;
    let k = vars.len();
    let mut assignment = vec![false; schema.len()];
    let table: Vec<bool> = (0..1usize << k)
        .map(|bits| {
            for (j, &v) in vars.iter().enumerate() {
                assignment[v] = bits >> j & 1 == 1;
            }
            eval(&raw.expr, schema, &assignment)
        })
        .collect();
    let essential: Vec<usize> = (0..k)
        .filter(|&j| (0..1usize << k).any(|bits| table[bits] != table[bits ^ (1 << j)]))
        .collect();
    let reduced = (0..1usize << essential.len())
        .map(|bits| {
            let mut full = 0usize;
            for (e, &j) in essential.iter().enumerate() {
                full |= (bits >> e & 1) << j;
            }
            table[full]
        })
        .collect();
    (essential.iter().map(|&j| vars[j]).collect(), reduced)
}

fn negative_antecedent(e: &Expr) -> bool {
    matches!(e, Expr::Implies(a, _) if matches!(**a, Expr::Not(_)))
}

/// Builds the candidate pool in its fixed order: literals (schema order,
/// positive first), then depth-2 trees by connective, antecedent and
/// consequent, then depth-3 trees. Of logically equivalent candidates the
/// shallowest is kept, then one without a negated antecedent, then the
/// earliest; constant formulas are dropped.
pub fn generate_candidates(schema: &Schema, cfg: &GeneratorConfig) -> Result<CandidatePool> {
    if !(1..=3).contains(&cfg.max_depth) {
        return Err(Error::Usage(format!("max depth {} outside 1..=3", cfg.max_depth)));
    }
    if cfg.max_depth > 1 && cfg.connectives.is_empty() {
        return Err(Error::Usage("no connectives allowed for depth > 1".into()));
    }
    let selected: Vec<usize> = match &cfg.concepts {
        None => (0..schema.len()).collect(),
        Some(names) => {
            let mut idx = Vec::with_capacity(names.len());
            for n in names {
                let i = schema
                    .concept_index(n)
                    .ok_or_else(|| Error::Usage(format!("unknown concept {n:?}")))?;
                if !idx.contains(&i) {
                    idx.push(i);
                }
            }
            idx.sort_unstable();
            idx
        }
    };
    if selected.is_empty() {
        return Err(Error::Usage("empty concept selection".into()));
    }
    if let Some(&i) = selected.iter().find(|&&i| !schema.concept(i).is_binary()) {
        return Err(Error::Schema(format!(
            "concept {:?} is not binary; candidate literals need binary concepts",
            schema.concept(i).name()
        )));
    }

    let literals: Vec<Literal> = selected
        .iter()
        .flat_map(|&concept| {
            let pos = Literal { concept, negated: false };
            let neg = Literal { concept, negated: true };
            if cfg.allow_negation {
                vec![pos, neg]
            } else {
                vec![pos]
            }
        })
        .collect();

    let mut raw: Vec<Raw> = literals
        .iter()
        .map(|&l| Raw {
            expr: literal_expr(schema, l),
            concepts: vec![l.concept],
            depth: 1,
        })
        .collect();

    let disjoint = |a: &[usize], b: &[usize]| a.iter().all(|x| !b.contains(x));
    let combine = |raw: &mut Vec<Raw>, lefts: &[(Expr, Vec<usize>, usize)], rights: &[(Expr, Vec<usize>, usize)], depth: usize| {
        for &conn in &cfg.connectives {
            for (le, lc, ld) in lefts {
                for (re, rc, rd) in rights {
                    if (*ld).max(*rd) + 1 != depth || !disjoint(lc, rc) {
                        continue;
                    }
                    let mut concepts: Vec<usize> = lc.iter().chain(rc).copied().collect();
                    concepts.sort_unstable();
                    raw.push(Raw {
                        expr: conn.apply(le.clone(), re.clone()),
                        concepts,
                        depth,
                    });
                }
            }
        }
    };

    let depth1: Vec<(Expr, Vec<usize>, usize)> =
        raw.iter().map(|r| (r.expr.clone(), r.concepts.clone(), 1)).collect();
    if cfg.max_depth >= 2 {
        combine(&mut raw, &depth1, &depth1, 2);
    }
    if cfg.max_depth >= 3 {
        let kept2 = dedup(&raw, schema);
        let operands: Vec<(Expr, Vec<usize>, usize)> = kept2
            .into_iter()
            .map(|i| (raw[i].expr.clone(), raw[i].concepts.clone(), raw[i].depth))
            .collect();
        combine(&mut raw, &operands, &operands, 3);
    }

    let candidates = dedup(&raw, schema)
        .into_iter()
        .map(|i| ConstraintAst::new(raw[i].expr.clone()))
        .collect();
    Ok(CandidatePool {
        config: cfg.clone(),
        candidates,
    })
}

/// Indices of the kept representatives, in raw order.
fn dedup(raw: &[Raw], schema: &Schema) -> Vec<usize> {
    let mut best: HashMap<FunctionKey, usize> = HashMap::new();
    let rank = |i: usize| (raw[i].depth, negative_antecedent(&raw[i].expr), i);
    for (i, r) in raw.iter().enumerate() {
        let key = function_key(r, schema);
        if key.0.is_empty() {
            continue;
        }
        best.entry(key)
            .and_modify(|j| {
                if rank(i) < rank(*j) {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut kept: Vec<usize> = best.into_values().collect();
    kept.sort_unstable_by_key(|&i| (raw[i].depth, i));
    kept
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Required AUROC gain for accepting a candidate.
    pub delta_min: f64,
    /// AUROC of the starting set.
    pub baseline: f64,
    pub seed: Vec<ConstraintAst>,
    pub fit: FitConfig,
    /// Evaluate the fused detector instead of the MLN score alone; the
    /// validation set then needs detector scores.
    pub fused: Option<ScoreDistribution>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            delta_min: 0.01,
            baseline: 0.5,
            seed: Vec::new(),
            fit: FitConfig::default(),
            fused: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub index: usize,
    pub candidate: String,
    /// Validation AUROC with the candidate added; absent if fitting failed.
    pub auroc: Option<f64>,
    pub accepted: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub accepted: Vec<ConstraintAst>,
    pub model: MlnModel,
    pub final_auroc: f64,
    pub audit: Vec<AuditEntry>,
    pub pool_size: usize,
    pub delta_min: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub pool_size: usize,
    pub evaluations: usize,
    pub delta_min: f64,
    pub baseline: f64,
    pub final_auroc: f64,
    pub accepted: Vec<String>,
    pub weights: Vec<f64>,
    pub audit: Vec<AuditEntry>,
}

impl SearchOutcome {
    pub fn report(&self) -> SearchReport {
        SearchReport {
            pool_size: self.pool_size,
            evaluations: self.audit.len(),
            delta_min: self.delta_min,
            baseline: self.baseline,
            final_auroc: self.final_auroc,
            accepted: self.accepted.iter().map(|c| c.source.clone()).collect(),
            weights: self.model.weights().to_vec(),
            audit: self.audit.clone(),
        }
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(&self.report()).expect("report serializes") + "\n"
    }

    /// Accepted constraints, one per line.
    pub fn constraint_file(&self) -> String {
        self.accepted.iter().map(|c| format!("{}\n", c.source)).collect()
    }
}

/// `J - λ·count`.
pub fn objective(j: f64, constraint_count: usize, lambda: f64) -> f64 {
    j - lambda * constraint_count as f64
}

struct Evaluator<'a> {
    schema: Arc<Schema>,
    train: Dataset,
    val: &'a Dataset,
    flags: &'a [bool],
    cfg: &'a SearchConfig,
}

impl Evaluator<'_> {
    fn fit(&self, constraints: Vec<CompiledConstraint>) -> Result<MlnModel> {
        let model = MlnModel::with_constant_weight(self.schema.clone(), constraints, self.cfg.fit.init_weight)?;
        fit_weights(&model, &self.train, &self.cfg.fit)
    }

    fn auroc(&self, model: &MlnModel) -> Result<f64> {
        let scores = match &self.cfg.fused {
            None => model.score_batch(&self.val.rows)?,
            Some(d) => FusedScorer::new(model.clone(), d.clone()).fuse_batch(self.val)?,
        };
        let (mut id, mut ood) = (Vec::new(), Vec::new());
        for (s, &f) in scores.into_iter().zip(self.flags) {
            if f {
                ood.push(s)
            } else {
                id.push(s)
            }
        }
        auroc(&id, &ood)
    }
}

/// Greedy search over `pool`. Weights are fitted on the ID rows of `train`;
/// AUROC is measured on `val`. A candidate whose fit fails is logged and
/// skipped.
pub fn greedy_search(
    train: &Dataset,
    val: &Dataset,
    pool: &CandidatePool,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    if pool.is_empty() {
        return Err(Error::Data("empty candidate pool".into()));
    }
    if !(cfg.delta_min >= 0.0) {
        return Err(Error::Usage(format!("delta_min must be non-negative, got {}", cfg.delta_min)));
    }
    cfg.fit.validate()?;
    let schema = train.schema_arc().clone();
    if val.schema() != &*schema {
        return Err(Error::SchemaMismatch("training and validation schemas differ".into()));
    }
    let flags = val
        .is_ood
        .as_deref()
        .ok_or_else(|| Error::Data("validation set has no __is_ood column".into()))?;
    if !flags.iter().any(|&f| f) || flags.iter().all(|&f| f) {
        return Err(Error::Data("validation set needs both ID and OOD rows".into()));
    }
    if cfg.fused.is_some() && val.detector_scores.is_none() {
        return Err(Error::Data("fused search needs __detector_score in the validation set".into()));
    }
    let size = schema.space_size()?;
    if size > cfg.fit.space_cap {
        return Err(Error::SpaceTooLarge {
            size: size as u128,
            cap: cfg.fit.space_cap,
        });
    }
    let train = train.id_rows();
    if train.is_empty() {
        return Err(Error::Data("training set has no ID rows".into()));
    }

    let compiled: Vec<CompiledConstraint> = pool
        .candidates
        .iter()
        .map(|c| compile(c, &schema))
        .collect::<Result<_>>()?;
    let mut working: Vec<CompiledConstraint> = cfg
        .seed
        .iter()
        .map(|c| compile(c, &schema))
        .collect::<Result<_>>()?;
    let mut accepted: Vec<ConstraintAst> = cfg.seed.clone();

    let ev = Evaluator {
        schema: schema.clone(),
        train,
        val,
        flags,
        cfg,
    };
    let mut model = ev.fit(working.clone())?;
    let mut j = cfg.baseline;
    let mut audit = Vec::with_capacity(pool.len());

    for (index, (candidate, c)) in pool.candidates.iter().zip(&compiled).enumerate() {
        let mut trial = working.clone();
        trial.push(c.clone());
        let result = ev.fit(trial.clone()).and_then(|m| Ok((ev.auroc(&m)?, m)));
        let entry = match result {
            Ok((j_new, m)) => {
                let take = j_new > j + cfg.delta_min;
                log::info!(
                    "candidate {index} {:?}: auroc {j_new:.6} {}",
                    candidate.source,
                    if take { "accepted" } else { "rejected" }
                );
                if take {
                    j = j_new;
                    working = trial;
                    accepted.push(candidate.clone());
                    model = m;
                }
                AuditEntry {
                    index,
                    candidate: candidate.source.clone(),
                    auroc: Some(j_new),
                    accepted: take,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("candidate {index} {:?} skipped: {e}", candidate.source);
                AuditEntry {
                    index,
                    candidate: candidate.source.clone(),
                    auroc: None,
                    accepted: false,
                    error: Some(e.to_string()),
                }
            }
        };
        audit.push(entry);
    }

    Ok(SearchOutcome {
        accepted,
        model,
        final_auroc: j,
        audit,
        pool_size: pool.len(),
        delta_min: cfg.delta_min,
        baseline: cfg.baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(pool: &CandidatePool) -> Vec<String> {
        pool.candidates.iter().map(|c| c.source.clone()).collect()
    }

    #[test]
    fn two_concepts() {
        let s = Schema::binary(["p", "q"]).unwrap();
        let pool = generate_candidates(&s, &GeneratorConfig::default()).unwrap();
        assert_eq!(
            sources(&pool),
            [
                "p", "not p", "q", "not q", "p -> q", "p -> not q", "not p -> q", "q -> p"
            ]
        );
    }

    #[test]
    fn pool_sizes() {
        let one = Schema::binary(["p"]).unwrap();
        let cfg = GeneratorConfig {
            max_depth: 1,
            ..GeneratorConfig::default()
        };
        assert_eq!(sources(&generate_candidates(&one, &cfg).unwrap()), ["p", "not p"]);
        let names: Vec<String> = (0..14).map(|i| format!("c{i}")).collect();
        let s = Schema::binary(names).unwrap();
        assert_eq!(generate_candidates(&s, &GeneratorConfig::default()).unwrap().len(), 392);
        let no_neg = GeneratorConfig {
            allow_negation: false,
            ..GeneratorConfig::default()
        };
        assert_eq!(generate_candidates(&s, &no_neg).unwrap().len(), 14 + 14 * 13);
    }

    #[test]
    fn generator_errors() {
        let s = Schema::new([("p", vec!["a", "b", "c"]), ("q", vec!["false", "true"])]).unwrap();
        assert!(generate_candidates(&s, &GeneratorConfig::default()).is_err());
        let cfg = GeneratorConfig {
            concepts: Some(vec!["q".into()]),
            ..GeneratorConfig::default()
        };
        assert_eq!(generate_candidates(&s, &cfg).unwrap().len(), 2);
        let cfg = GeneratorConfig {
            concepts: Some(vec![]),
            ..GeneratorConfig::default()
        };
        assert!(generate_candidates(&s, &cfg).is_err());
        let cfg = GeneratorConfig {
            max_depth: 4,
            ..GeneratorConfig::default()
        };
        assert!(generate_candidates(&s, &cfg).is_err());
    }

    #[test]
    fn objective_arithmetic() {
        assert!((objective(0.9, 5, 0.01) - 0.85).abs() < 1e-15);
        assert_eq!(objective(0.7, 3, 0.0), 0.7);
    }
}
