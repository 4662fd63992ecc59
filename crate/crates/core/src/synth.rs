//! Synthetic benchmarks with known ground truth.
//!
//! Randomness is ChaCha8 (`rand_chacha`) seeded with `seed_from_u64(seed)`.
//! Each column gets its own stream via `set_stream`: for split `k`
//! (0 = train, 1 = val, 2 = test) stream `3k` draws ID worlds, `3k + 1`
//! OOD worlds and `3k + 2` detector scores. A world is drawn by inverse CDF
//! over the enumerated space: one uniform `u` in `[0, 1)` is scaled by the
//! total unnormalized mass and located in the cumulative sums, accumulated
//! in enumeration order. Detector scores are inverse-CDF draws from a
//! uniform in the open interval `(0, 1)`, in row order.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::mln::{enumerate_space, MlnModel, DEFAULT_SPACE_CAP};
use crate::schema::{Dataset, Schema, SemanticVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodMode {
    UniformOverZ,
    AlternateMln,
}

/// A detector score law, in the same `{"family", "params"}` form as a
/// fitted distribution, plus a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum ScoreLaw {
    Point { value: f64 },
    Gev { location: f64, scale: f64, shape: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { a: f64, b: f64 },
}

impl ScoreLaw {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            ScoreLaw::Point { value } => value,
            ScoreLaw::Gev { location, scale, shape } => {
                let e = -u.ln();
                if shape.abs() < crate::norm::gev::GUMBEL_EPS {
                    location - scale * e.ln()
                } else {
                    location + scale * (e.powf(-shape) - 1.0) / shape
                }
            }
            ScoreLaw::Normal { mean, sd } => mean - sd * std::f64::consts::SQRT_2 * erfc_inv(2.0 * u),
            ScoreLaw::Uniform { a, b } => a + u * (b - a),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScoreLaw::Point { value } => value.is_finite(),
            ScoreLaw::Gev { location, scale, shape } => {
                location.is_finite() && scale > 0.0 && scale.is_finite() && shape.is_finite()
            }
            ScoreLaw::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            ScoreLaw::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("invalid score law {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub id: ScoreLaw,
    pub ood: ScoreLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub constraints: Vec<String>,
    pub weights: Vec<f64>,
}

/// JSON form of a [`SynthSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpecFile {
    /// Same layout as a schema file.
    pub schema: serde_json::Value,
    pub rules: RuleSet,
    pub n_id: usize,
    pub n_ood: usize,
    pub ood_mode: OodMode,
    #[serde(default)]
    pub alternate: Option<RuleSet>,
    #[serde(default)]
    pub detector: Option<DetectorModel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub space_cap: Option<u64>,
}

#[derive(Debug, Clone)]
pub enum OodSource {
    UniformOverZ,
    AlternateMln(MlnModel),
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub model: MlnModel,
    pub n_id: usize,
    pub n_ood: usize,
    pub ood: OodSource,
    pub detector: Option<DetectorModel>,
    pub seed: u64,
    pub space_cap: u64,
}

impl SynthSpec {
    pub fn new(model: MlnModel, n_id: usize, n_ood: usize, ood: OodSource, seed: u64) -> Result<Self> {
        let spec = SynthSpec {
            model,
            n_id,
            n_ood,
            ood,
            detector: None,
            seed,
            space_cap: DEFAULT_SPACE_CAP,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_detector(mut self, detector: DetectorModel) -> Result<Self> {
        self.detector = Some(detector);
        self.validate()?;
        Ok(self)
    }

    pub fn schema(&self) -> &Arc<Schema> {
        self.model.schema_arc()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_id < 1 || self.n_ood < 1 {
            return Err(Error::Data("n_id and n_ood must be at least 1".into()));
        }
        let size = self.schema().space_size()?;
        if size > self.space_cap {
            return Err(Error::SpaceTooLarge {
                size: size as u128,
                cap: self.space_cap,
            });
        }
        if let OodSource::AlternateMln(m) = &self.ood {
            if m.schema() != self.model.schema() {
                return Err(Error::SchemaMismatch("alternate model uses a different schema".into()));
            }
        }
        if let Some(d) = &self.detector {
            d.id.validate()?;
            d.ood.validate()?;
        }
        Ok(())
    }

    pub fn from_file(file: SynthSpecFile) -> Result<Self> {
        let schema = Arc::new(Schema::from_json_str(&file.schema.to_string())?);
        let model = MlnModel::from_sources(schema.clone(), &file.rules.constraints, file.rules.weights)?;
        let ood = match (file.ood_mode, file.alternate) {
            (OodMode::UniformOverZ, None) => OodSource::UniformOverZ,
            (OodMode::AlternateMln, Some(r)) => {
                OodSource::AlternateMln(MlnModel::from_sources(schema, &r.constraints, r.weights)?)
            }
            (OodMode::AlternateMln, None) => {
                return Err(Error::Data("ood_mode alternate_mln needs an \"alternate\" rule set".into()))
            }
            (OodMode::UniformOverZ, Some(_)) => {
                return Err(Error::Data("\"alternate\" is only used with ood_mode alternate_mln".into()))
            }
        };
        let spec = SynthSpec {
            model,
            n_id: file.n_id,
            n_ood: file.n_ood,
            ood,
            detector: file.detector,
            seed: file.seed,
            space_cap: file.space_cap.unwrap_or(DEFAULT_SPACE_CAP),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SynthSpecFile =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("synth spec: {e}")))?;
        SynthSpec::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SynthSpec::from_json(&text)
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform in the open interval (0, 1).
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.gen_range(0u64..1 << 53) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Worlds with cumulative unnormalized probability, for inverse-CDF draws.
struct WorldTable {
    worlds: Vec<SemanticVector>,
    cumulative: Vec<f64>,
}

impl WorldTable {
    fn new(model: Option<&MlnModel>, schema: &Schema, cap: u64) -> Result<Self> {
        let worlds: Vec<SemanticVector> = enumerate_space(schema, cap)?.collect();
        let energies: Vec<f64> = match model {
            Some(m) => worlds.iter().map(|z| m.score(z).map(|s| -s)).collect::<Result<_>>()?,
            None => vec![0.0; worlds.len()],
        };
        let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let cumulative = energies
            .iter()
            .map(|e| {
                total += (e - max).exp();
                total
            })
            .collect();
        Ok(WorldTable { worlds, cumulative })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> SemanticVector {
        let total = *self.cumulative.last().expect("non-empty space");
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.worlds.len() - 1);
        self.worlds[i].clone()
    }

    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<SemanticVector> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn id_table(spec: &SynthSpec) -> Result<WorldTable> {
    WorldTable::new(Some(&spec.model), spec.schema(), spec.space_cap)
}

fn ood_table(spec: &SynthSpec) -> Result<WorldTable> {
    match &spec.ood {
        OodSource::UniformOverZ => WorldTable::new(None, spec.schema(), spec.space_cap),
        OodSource::AlternateMln(m) => WorldTable::new(Some(m), spec.schema(), spec.space_cap),
    }
}

fn labeled(schema: &Arc<Schema>, rows: Vec<SemanticVector>, prefix: &str, ood: bool) -> Result<Dataset> {
    let n = rows.len();
    Dataset::with_columns(schema.clone(), rows, ids(prefix, n), None, Some(vec![ood; n]))
}

/// `n_id` vectors drawn from the ground-truth model, flagged ID.
pub fn sample_id(spec: &SynthSpec) -> Result<Dataset> {
    let rows = id_table(spec)?.sample(spec.n_id, &mut stream(spec.seed, 0));
    labeled(spec.schema(), rows, "id", false)
}

/// `n_ood` vectors from the contrast distribution, flagged OOD.
pub fn sample_ood(spec: &SynthSpec) -> Result<Dataset> {
    let rows = ood_table(spec)?.sample(spec.n_ood, &mut stream(spec.seed, 1));
    labeled(spec.schema(), rows, "ood", true)
}

fn draw_scores(data: &Dataset, detector: &DetectorModel, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let flags = data
        .is_ood
        .as_ref()
        .ok_or_else(|| Error::Data("rows need __is_ood flags to draw detector scores".into()))?;
    Ok(flags
        .iter()
        .map(|&ood| {
            let law = if ood { &detector.ood } else { &detector.id };
            law.quantile(open_unit(rng))
        })
        .collect())
}

/// Fills `__detector_score` from the spec's ID and OOD score laws.
pub fn attach_detector_scores(data: &Dataset, spec: &SynthSpec) -> Result<Dataset> {
    attach_from_stream(data, spec, 2)
}

fn attach_from_stream(data: &Dataset, spec: &SynthSpec, index: u64) -> Result<Dataset> {
    let detector = spec
        .detector
        .as_ref()
        .ok_or_else(|| Error::Data("synth spec has no detector model".into()))?;
    let scores = draw_scores(data, detector, &mut stream(spec.seed, index))?;
    let mut out = data.clone();
    out.detector_scores = Some(scores);
    Ok(out)
}

/// Train (ID only), validation and test splits.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Three independent splits. Train holds `n_id` ID rows; validation and
/// test hold `n_id` ID rows followed by `n_ood` OOD rows. Detector scores are
/// attached when the spec has a detector model.
pub fn generate_benchmark(spec: &SynthSpec) -> Result<Benchmark> {
    let id = id_table(spec)?;
    let ood = ood_table(spec)?;
    let schema = spec.schema();
    let split = |k: u64, with_ood: bool, prefix: &str| -> Result<Dataset> {
        let mut data = labeled(schema, id.sample(spec.n_id, &mut stream(spec.seed, 3 * k)), &format!("{prefix}-id"), false)?;
        if with_ood {
            let o = labeled(
                schema,
                ood.sample(spec.n_ood, &mut stream(spec.seed, 3 * k + 1)),
                &format!("{prefix}-ood"),
                true,
            )?;
            data = data.concat(&o)?;
        }
        if spec.detector.is_some() {
            data = attach_from_stream(&data, spec, 3 * k + 2)?;
        }
        Ok(data)
    };
    Ok(Benchmark {
        train: split(0, false, "train")?,
        val: split(1, true, "val")?,
        test: split(2, true, "test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sources: &[&str], weights: Vec<f64>, n: usize) -> SynthSpec {
        let s = Arc::new(Schema::binary(["p", "q"]).unwrap());
        let m = MlnModel::from_sources(s, sources, weights).unwrap();
        SynthSpec::new(m, n, n, OodSource::UniformOverZ, 7).unwrap()
    }

    #[test]
    fn logistic_marginal() {
        let d = sample_id(&spec(&["p"], vec![3f64.ln()], 10_000)).unwrap();
        let frac = d.rows.iter().filter(|z| z.0[0] == 1).count() as f64 / 1e4;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }

    #[test]
    fn uniform_ood_counts() {
        let d = sample_ood(&spec(&["p"], vec![5.0], 40_000)).unwrap();
        let mut counts = [0usize; 4];
        for z in &d.rows {
            counts[(z.0[0] * 2 + z.0[1]) as usize] += 1;
        }
        // 4σ with p = 1/4
        let sigma = (40_000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 10_000.0).abs() < 4.0 * sigma, "{counts:?}");
        }
        assert!(d.is_ood.as_ref().unwrap().iter().all(|&f| f));
    }

    #[test]
    fn deterministic() {
        let s = spec(&["p -> q"], vec![1.5], 500);
        assert_eq!(sample_id(&s).unwrap().rows, sample_id(&s).unwrap().rows);
        assert_eq!(sample_ood(&s).unwrap().rows, sample_ood(&s).unwrap().rows);
        let other = SynthSpec { seed: 8, ..s.clone() };
        assert_ne!(sample_id(&s).unwrap().rows, sample_id(&other).unwrap().rows);
    }

    #[test]
    fn detector_needs_flags() {
        let s = spec(&["p"], vec![1.0], 10)
            .with_detector(DetectorModel {
                id: ScoreLaw::Point { value: 0.0 },
                ood: ScoreLaw::Point { value: 1.0 },
            })
            .unwrap();
        let d = sample_id(&s).unwrap();
        let scored = attach_detector_scores(&d, &s).unwrap();
        assert!(scored.detector_scores.unwrap().iter().all(|&x| x == 0.0));
        let unflagged = Dataset::new(s.schema().clone(), d.rows.clone()).unwrap();
        assert!(attach_detector_scores(&unflagged, &s).is_err());
    }

    #[test]
    fn quantiles() {
        let n = ScoreLaw::Normal { mean: 1.0, sd: 2.0 };
        assert!((n.quantile(0.5) - 1.0).abs() < 1e-12);
        assert!((n.quantile(0.975) - (1.0 + 2.0 * 1.959963984540054)).abs() < 1e-9);
        let g = ScoreLaw::Gev { location: 0.0, scale: 1.0, shape: 0.0 };
        assert!((g.quantile((-1.0f64).exp()) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn spec_json() {
        let text = r#"{
            "schema": {"p": "binary", "q": "binary"},
            "rules": {"constraints": ["p -> q"], "weights": [2.0]},
            "n_id": 10, "n_ood": 5, "ood_mode": "uniform_over_z",
            "detector": {"id": {"family": "normal", "params": {"mean": 0, "sd": 1}},
                         "ood": {"family": "point", "params": {"value": 3}}}
        }"#;
        let s = SynthSpec::from_json(text).unwrap();
        assert_eq!(s.n_ood, 5);
        assert_eq!(s.seed, 0);
        let b = generate_benchmark(&s).unwrap();
        assert_eq!(b.train.len(), 10);
        assert_eq!(b.val.len(), 15);
        assert!(b.test.detector_scores.is_some());
        let bad = text.replace("uniform_over_z", "alternate_mln");
        assert!(SynthSpec::from_json(&bad).is_err());
    }
}
