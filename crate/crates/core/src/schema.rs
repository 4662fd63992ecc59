//! The semantic space: named concepts with finite value domains, and the
//! concept-prediction tables read against it.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use crate::error::{Error, Result};

pub const ID_COLUMN: &str = "__id";
pub const SCORE_COLUMN: &str = "__detector_score";
pub const OOD_COLUMN: &str = "__is_ood";

const BINARY_DOMAIN: [&str; 2] = ["false", "true"];

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    name: String,
    domain: Vec<String>,
}

impl Concept {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &[String] {
        &self.domain
    }

    pub fn is_binary(&self) -> bool {
        self.domain.len() == 2 && self.domain[0] == "false" && self.domain[1] == "true"
    }

    pub fn value_index(&self, value: &str) -> Option<u32> {
        self.domain.iter().position(|v| v == value).map(|i| i as u32)
    }
}

/// Ordered list of concepts. Order is fixed by the schema file and shared by
/// every vector, enumeration and weight file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    concepts: Vec<Concept>,
    by_name: HashMap<String, usize>,
}

impl Schema {
    pub fn new<I, S, V>(concepts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<V>)>,
        S: Into<String>,
        V: Into<String>,
    {
        let mut out = Vec::new();
        let mut by_name = HashMap::new();
        for (name, domain) in concepts {
            let name = name.into();
            let domain: Vec<String> = domain.into_iter().map(Into::into).collect();
            if !is_identifier(&name) {
                return Err(Error::Schema(format!("invalid concept name {name:?}")));
            }
            if domain.len() < 2 {
                return Err(Error::Schema(format!(
                    "concept {name:?}: domain needs at least 2 values, got {}",
                    domain.len()
                )));
            }
            let mut seen = HashSet::new();
            for v in &domain {
                if v.is_empty() {
                    return Err(Error::Schema(format!("concept {name:?}: empty value")));
                }
                if !seen.insert(v.as_str()) {
                    return Err(Error::Schema(format!(
                        "concept {name:?}: duplicate value {v:?}"
                    )));
                }
            }
            if by_name.insert(name.clone(), out.len()).is_some() {
                return Err(Error::Schema(format!("duplicate concept name {name:?}")));
            }
            out.push(Concept { name, domain });
        }
        Ok(Schema {
            concepts: out,
            by_name,
        })
    }

    /// All-binary schema, convenient for synthetic setups.
    pub fn binary<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Schema::new(names.into_iter().map(|n| (n, BINARY_DOMAIN.to_vec())))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawSchema = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Schema::from_raw(raw)
    }

    fn from_raw(raw: RawSchema) -> Result<Self> {
        let mut names = HashSet::new();
        let mut concepts = Vec::with_capacity(raw.0.len());
        for (name, spec) in raw.0 {
            if !names.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate concept name {name:?}")));
            }
            let domain = match spec {
                RawDomain::Shorthand(s) if s == "binary" => {
                    BINARY_DOMAIN.iter().map(|s| s.to_string()).collect()
                }
                RawDomain::Shorthand(s) => {
                    return Err(Error::Schema(format!(
                        "concept {name:?}: expected value list or \"binary\", got {s:?}"
                    )))
                }
                RawDomain::Values(v) => v,
            };
            concepts.push((name, domain));
        }
        Schema::new(concepts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawSchema = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Schema::from_raw(raw)
    }

    /// JSON form, using the `"binary"` shorthand where it applies.
    pub fn to_json_string(&self) -> String {
        let mut out = String::from("{");
        for (i, c) in self.concepts.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&serde_json::to_string(&c.name).unwrap());
            out.push_str(": ");
            if c.is_binary() {
                out.push_str("\"binary\"");
            } else {
                out.push_str(&serde_json::to_string(&c.domain).unwrap());
            }
        }
        out.push('}');
        out
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept(&self, index: usize) -> &Concept {
        &self.concepts[index]
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn domain_sizes(&self) -> Vec<u32> {
        self.concepts.iter().map(|c| c.domain.len() as u32).collect()
    }

    /// Number of possible worlds: the product of all domain sizes.
    pub fn space_size(&self) -> Result<u64> {
        self.concepts.iter().try_fold(1u64, |acc, c| {
            acc.checked_mul(c.domain.len() as u64)
                .ok_or(Error::SpaceOverflow)
        })
    }

    pub fn check(&self, z: &SemanticVector) -> Result<()> {
        if z.0.len() != self.concepts.len() {
            return Err(Error::SchemaMismatch(format!(
                "vector has {} values, schema has {} concepts",
                z.0.len(),
                self.concepts.len()
            )));
        }
        for (c, &v) in self.concepts.iter().zip(&z.0) {
            if v as usize >= c.domain.len() {
                return Err(Error::SchemaMismatch(format!(
                    "value index {v} out of range for concept {:?} (domain size {})",
                    c.name,
                    c.domain.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    Schema::load(path)
}

pub fn semantic_space_size(schema: &Schema) -> Result<u64> {
    schema.space_size()
}

// JSON object read as an ordered list of entries so that file order and
// duplicate keys are both observable.
struct RawSchema(Vec<(String, RawDomain)>);

#[derive(Deserialize)]
#[serde(untagged)]
enum RawDomain {
    Shorthand(String),
    Values(Vec<String>),
}

impl<'de> Deserialize<'de> for RawSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawSchema;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping concept names to domains")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RawSchema, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = map.next_entry::<String, RawDomain>()? {
                    entries.push(entry);
                }
                Ok(RawSchema(entries))
            }
        }
        deserializer.deserialize_map(V)
    }
}

/// One input's concept assignment, as domain indices in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticVector(pub Vec<u32>);

impl SemanticVector {
    pub fn new(values: Vec<u32>) -> Self {
        SemanticVector(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    /// Build from value strings, one per concept in schema order.
    pub fn from_labels(schema: &Schema, labels: &[&str]) -> Result<Self> {
        if labels.len() != schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} labels, got {}",
                schema.len(),
                labels.len()
            )));
        }
        let mut values = Vec::with_capacity(labels.len());
        for (c, l) in schema.concepts().iter().zip(labels) {
            let v = c.value_index(l).ok_or_else(|| {
                Error::SchemaMismatch(format!("{l:?} is not a value of concept {:?}", c.name()))
            })?;
            values.push(v);
        }
        Ok(SemanticVector(values))
    }
}

/// Concept predictions for a set of samples, with optional detector scores
/// and ID/OOD flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    pub rows: Vec<SemanticVector>,
    pub ids: Vec<String>,
    pub detector_scores: Option<Vec<f64>>,
    pub is_ood: Option<Vec<bool>>,
}

impl Dataset {
    /// Rows get sequential ids `0, 1, ...`.
    pub fn new(schema: Arc<Schema>, rows: Vec<SemanticVector>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Dataset::with_columns(schema, rows, ids, None, None)
    }

    pub fn with_columns(
        schema: Arc<Schema>,
        rows: Vec<SemanticVector>,
        ids: Vec<String>,
        detector_scores: Option<Vec<f64>>,
        is_ood: Option<Vec<bool>>,
    ) -> Result<Self> {
        let n = rows.len();
        if ids.len() != n {
            return Err(Error::Data(format!("{} ids for {n} rows", ids.len())));
        }
        if let Some(s) = &detector_scores {
            if s.len() != n {
                return Err(Error::Data(format!("{} detector scores for {n} rows", s.len())));
            }
        }
        if let Some(f) = &is_ood {
            if f.len() != n {
                return Err(Error::Data(format!("{} ood flags for {n} rows", f.len())));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id {id:?}")));
            }
        }
        for (i, z) in rows.iter().enumerate() {
            schema
                .check(z)
                .map_err(|e| Error::Data(format!("row {i}: {e}")))?;
        }
        Ok(Dataset {
            schema,
            rows,
            ids,
            detector_scores,
            is_ood,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows matching a predicate on the row index, keeping all columns.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Dataset {
            schema: self.schema.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            detector_scores: self
                .detector_scores
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i]).collect()),
            is_ood: self.is_ood.as_ref().map(|f| idx.iter().map(|&i| f[i]).collect()),
        }
    }

    /// In-distribution rows. Without flags, every row counts as ID.
    pub fn id_rows(&self) -> Dataset {
        match &self.is_ood {
            Some(flags) => self.select(|i| !flags[i]),
            None => self.clone(),
        }
    }

    /// Appends `other` below `self`. Optional columns must be present in both or neither.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::Data("cannot concatenate datasets over different schemas".into()));
        }
        fn join<T: Clone>(a: &Option<Vec<T>>, b: &Option<Vec<T>>, what: &str) -> Result<Option<Vec<T>>> {
            match (a, b) {
                (Some(a), Some(b)) => Ok(Some(a.iter().chain(b).cloned().collect())),
                (None, None) => Ok(None),
                _ => Err(Error::Data(format!("{what} column present in only one dataset"))),
            }
        }
        Dataset::with_columns(
            self.schema.clone(),
            self.rows.iter().chain(&other.rows).cloned().collect(),
            self.ids.iter().chain(&other.ids).cloned().collect(),
            join(&self.detector_scores, &other.detector_scores, SCORE_COLUMN)?,
            join(&self.is_ood, &other.is_ood, OOD_COLUMN)?,
        )
    }

    pub fn load(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_reader(file, schema)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, schema: Arc<Schema>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Data(format!("header: {e}")))?
            .clone();

        enum Col {
            Concept(usize),
            Id,
            Score,
            Ood,
        }
        let mut cols = Vec::with_capacity(header.len());
        let mut concept_col = vec![None; schema.len()];
        let mut reserved_seen = HashSet::new();
        for (j, name) in header.iter().enumerate() {
            let col = match name {
                ID_COLUMN => Col::Id,
                SCORE_COLUMN => Col::Score,
                OOD_COLUMN => Col::Ood,
                _ => match schema.concept_index(name) {
                    Some(ci) => {
                        if concept_col[ci].is_some() {
                            return Err(Error::Data(format!("duplicate column {name:?}")));
                        }
                        concept_col[ci] = Some(j);
                        Col::Concept(ci)
                    }
                    None => return Err(Error::Data(format!("unknown column {name:?}"))),
                },
            };
            if !matches!(col, Col::Concept(_)) && !reserved_seen.insert(name.to_string()) {
                return Err(Error::Data(format!("duplicate column {name:?}")));
            }
            cols.push(col);
        }
        if let Some(ci) = concept_col.iter().position(Option::is_none) {
            return Err(Error::Data(format!(
                "missing column for concept {:?}",
                schema.concept(ci).name()
            )));
        }
        let has_id = cols.iter().any(|c| matches!(c, Col::Id));
        let has_score = cols.iter().any(|c| matches!(c, Col::Score));
        let has_ood = cols.iter().any(|c| matches!(c, Col::Ood));

        let mut rows = Vec::new();
        let mut ids = Vec::new();
        let mut scores = Vec::new();
        let mut flags = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            // data rows are 1-based, after the header
            let row = r + 1;
            let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
            let mut values = vec![0u32; schema.len()];
            for (j, cell) in record.iter().enumerate() {
                match cols[j] {
                    Col::Concept(ci) => {
                        let c = schema.concept(ci);
                        if cell.is_empty() {
                            return Err(Error::Data(format!(
                                "row {row}, column {:?}: missing value",
                                c.name()
                            )));
                        }
                        values[ci] = c.value_index(cell).ok_or_else(|| {
                            Error::Data(format!(
                                "row {row}, column {:?}: value {cell:?} not in domain {:?}",
                                c.name(),
                                c.domain()
                            ))
                        })?;
                    }
                    Col::Id => ids.push(cell.to_string()),
                    Col::Score => {
                        let s: f64 = cell.trim().parse().map_err(|_| {
                            Error::Data(format!(
                                "row {row}, column {SCORE_COLUMN:?}: non-numeric detector score {cell:?}"
                            ))
                        })?;
                        if !s.is_finite() {
                            return Err(Error::Data(format!(
                                "row {row}, column {SCORE_COLUMN:?}: non-finite detector score {cell:?}"
                            )));
                        }
                        scores.push(s);
                    }
                    Col::Ood => flags.push(match cell.trim() {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(Error::Data(format!(
                                "row {row}, column {OOD_COLUMN:?}: expected 0 or 1, got {other:?}"
                            )))
                        }
                    }),
                }
            }
            rows.push(SemanticVector(values));
        }
        if !has_id {
            ids = (0..rows.len()).map(|i| i.to_string()).collect();
        }
        Dataset::with_columns(
            schema,
            rows,
            ids,
            has_score.then_some(scores),
            has_ood.then_some(flags),
        )
    }

    /// CSV with `__id` first, then the concepts in schema order, then the
    /// optional reserved columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![ID_COLUMN.to_string()];
        header.extend(self.schema.concepts().iter().map(|c| c.name().to_string()));
        if self.detector_scores.is_some() {
            header.push(SCORE_COLUMN.into());
        }
        if self.is_ood.is_some() {
            header.push(OOD_COLUMN.into());
        }
        let csv_err = |e: csv::Error| Error::Data(format!("writing csv: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for (i, z) in self.rows.iter().enumerate() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(self.ids[i].clone());
            for (c, &v) in self.schema.concepts().iter().zip(&z.0) {
                rec.push(c.domain()[v as usize].clone());
            }
            if let Some(s) = &self.detector_scores {
                rec.push(format!("{}", s[i]));
            }
            if let Some(f) = &self.is_ood {
                rec.push(if f[i] { "1" } else { "0" }.into());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing csv: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn load_dataset(path: impl AsRef<Path>, schema: Arc<Schema>) -> Result<Dataset> {
    Dataset::load(path, schema)
}
