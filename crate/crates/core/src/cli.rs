//! Command-line interface. Exit codes: 0 success, 1 usage or compile
//! error, 2 invalid data, 3 numerical failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorKind, Result};
use crate::fit::{fit_weights_with_report, FitConfig};
use crate::fusion::{threshold, FusedScorer};
use crate::lang::{compile, constraint_lines, parse};
use crate::metrics::{evaluate, EvalResult};
use crate::mln::{MlnModel, DEFAULT_SPACE_CAP};
use crate::norm::{fit_diagnostics, fit_distribution, Family, ScoreDistribution, DEFAULT_BINS};
use crate::schema::{Dataset, Schema, ID_COLUMN};
use crate::search::{generate_candidates, greedy_search, CandidatePool, Connective, GeneratorConfig, SearchConfig};
use crate::synth::{generate_benchmark, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "mln-ood", version, about = "OOD scoring with Markov logic networks over concept predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and compile a constraint file
    Compile(CompileArgs),
    /// Fit constraint weights on ID training data
    Fit(FitArgs),
    /// Write MLN outlier scores
    Score(ScoreArgs),
    /// Write MLN scores fused with normalized detector scores
    Fuse(FuseArgs),
    /// Compute AUROC, AUPR and FPR95 for a score file
    Eval(EvalArgs),
    /// Greedy constraint-set search
    Search(SearchArgs),
    /// Generate a synthetic benchmark
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct CompileArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    constraints: PathBuf,
}

#[derive(Debug, Args)]
struct FitOptions {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    init_weight: f64,
    #[arg(long, default_value_t = DEFAULT_SPACE_CAP)]
    space_cap: u64,
}

impl FitOptions {
    fn config(&self) -> FitConfig {
        FitConfig {
            max_epochs: self.epochs,
            learning_rate: self.lr,
            init_weight: self.init_weight,
            space_cap: self.space_cap,
            ..FitConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    constraints: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Weights file to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fit: FitOptions,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Score CSV to write (`__id,score`)
    #[arg(long)]
    out: PathBuf,
    /// Also write per-sample explanations next to the output
    #[arg(long)]
    explain: bool,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Rows to score; needs `__detector_score`
    #[arg(long)]
    data: PathBuf,
    /// ID rows with detector scores used to fit the score distribution
    #[arg(long, required_unless_present = "distribution")]
    train: Option<PathBuf>,
    /// Previously fitted distribution file, instead of `--train`
    #[arg(long, conflicts_with = "train")]
    distribution: Option<PathBuf>,
    #[arg(long, default_value = "gev")]
    family: String,
    /// Also write `__id,outlier` decisions for `score >= threshold`
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    explain: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Rows with `__is_ood`
    #[arg(long)]
    data: PathBuf,
    /// Score CSV (`__id,score`)
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the metrics as a one-row CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Search report JSON to write
    #[arg(long)]
    out: PathBuf,
    /// Seed constraints to start from
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Candidate file to use instead of the generated pool
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    delta_min: f64,
    /// AUROC of the starting set
    #[arg(long, default_value_t = 0.5)]
    baseline: f64,
    #[arg(long, default_value_t = 2)]
    max_depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "implies")]
    connectives: Vec<String>,
    #[arg(long)]
    no_negation: bool,
    /// Comma-separated concept subset for the pool
    #[arg(long, value_delimiter = ',')]
    concepts: Option<Vec<String>>,
    /// Evaluate the fused detector; the distribution is fitted on training detector scores
    #[arg(long)]
    fused: bool,
    #[arg(long, default_value = "gev")]
    family: String,
    #[command(flatten)]
    fit: FitOptions,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Synthetic benchmark spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the spec; 0 if neither is given
    #[arg(long)]
    seed: Option<u64>,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Compile(a) => cmd_compile(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Search(a) => cmd_search(&a),
        Command::Synth(a) => cmd_synth(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// `out` with its extension replaced by `suffix`.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn load_schema(path: &Path) -> Result<Arc<Schema>> {
    Ok(Arc::new(Schema::load(path)?))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn cmd_compile(a: &CompileArgs) -> Result<i32> {
    let schema = load_schema(&a.schema)?;
    let text = read_text(&a.constraints)?;
    let lines = constraint_lines(&text);
    if lines.is_empty() {
        log::warn!("empty knowledge base");
        println!("compiled 0 constraints");
        return Ok(0);
    }
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate() {
        let compiled = parse(&line.text).and_then(|ast| compile(&ast, &schema));
        match compiled {
            Ok(c) => {
                let ops = c.op_counts();
                out.push_str(&format!(
                    "ok {i} line {}: {} ({} tests)\n",
                    line.line,
                    c.source(),
                    ops.tests
                ));
            }
            Err(e) => {
                print!("{out}");
                let e = crate::lang::at_line(line, e);
                eprintln!("error: {}: {e}", a.constraints.display());
                return Ok(1);
            }
        }
    }
    print!("{out}");
    println!("compiled {} constraints", lines.len());
    Ok(0)
}

fn load_constraints(path: &Path, schema: &Arc<Schema>) -> Result<Vec<crate::lang::CompiledConstraint>> {
    let text = read_text(path)?;
    let compiled = crate::lang::compile_file(&text, schema)?;
    if compiled.is_empty() {
        log::warn!("empty knowledge base");
    }
    Ok(compiled)
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let schema = load_schema(&a.schema)?;
    let constraints = load_constraints(&a.constraints, &schema)?;
    let train = Dataset::load(&a.train, schema.clone())?.id_rows();
    let cfg = a.fit.config();
    let model = MlnModel::with_constant_weight(schema.clone(), constraints, 0.0)?;
    let (fitted, report) = match fit_weights_with_report(&model, &train, &cfg) {
        Err(Error::SpaceTooLarge { size, cap }) => {
            return Err(Error::Data(format!(
                "semantic space too large for exact NLL: {size} worlds exceed cap {cap}"
            )))
        }
        r => r?,
    };
    write_atomic(&a.out, fitted.weights_json().as_bytes())?;
    println!("initial nll {}", report.initial_nll);
    println!("final nll {}", report.final_nll);
    println!("epochs {} iterations {} converged {}", report.epochs, report.iterations, report.converged);
    Ok(0)
}

fn scores_csv(data: &Dataset, scores: &[f64]) -> String {
    let mut out = format!("{ID_COLUMN},score\n");
    for (id, s) in data.ids.iter().zip(scores) {
        out.push_str(&format!("{},{s}\n", csv_field(id)));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_explanations(model: &MlnModel, data: &Dataset, out: &Path) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Row<'a> {
        id: &'a str,
        #[serde(flatten)]
        explanation: crate::mln::ScoreExplanation,
    }
    let rows = data
        .ids
        .iter()
        .zip(&data.rows)
        .map(|(id, z)| Ok(Row { id, explanation: model.explain(z)? }))
        .collect::<Result<Vec<_>>>()?;
    let text = serde_json::to_string_pretty(&rows).expect("explanations serialize") + "\n";
    write_atomic(&sibling(out, "explain.json"), text.as_bytes())
}

fn cmd_score(a: &ScoreArgs) -> Result<i32> {
    let schema = load_schema(&a.schema)?;
    let model = MlnModel::load_weights(&a.weights, schema.clone())?;
    if model.is_empty() {
        log::warn!("empty knowledge base");
    }
    let data = Dataset::load(&a.data, schema)?;
    let scores = model.score_batch(&data.rows)?;
    write_atomic(&a.out, scores_csv(&data, &scores).as_bytes())?;
    if a.explain {
        write_explanations(&model, &data, &a.out)?;
    }
    Ok(0)
}

fn detector_scores(data: &Dataset, what: &str) -> Result<Vec<f64>> {
    data.detector_scores
        .clone()
        .ok_or_else(|| Error::Data(format!("{what} has no __detector_score column")))
}

fn fit_score_distribution(train: &Dataset, family: Family, out: &Path) -> Result<ScoreDistribution> {
    let scores = detector_scores(&train.id_rows(), "training data")?;
    let dist = fit_distribution(&scores, family)?;
    let diag = fit_diagnostics(&dist, &scores, DEFAULT_BINS)?;
    write_atomic(&sibling(out, "distribution.json"), dist.to_json().as_bytes())?;
    write_atomic(&sibling(out, "diagnostics.json"), diag.summary_json().as_bytes())?;
    write_atomic(&sibling(out, "histogram.csv"), diag.histogram_csv().as_bytes())?;
    Ok(dist)
}

fn cmd_fuse(a: &FuseArgs) -> Result<i32> {
    let family: Family = a.family.parse()?;
    let schema = load_schema(&a.schema)?;
    let model = MlnModel::load_weights(&a.weights, schema.clone())?;
    let data = Dataset::load(&a.data, schema.clone())?;
    let dist = match (&a.distribution, &a.train) {
        (Some(p), _) => ScoreDistribution::from_json(&read_text(p)?)?,
        (None, Some(t)) => fit_score_distribution(&Dataset::load(t, schema)?, family, &a.out)?,
        (None, None) => return Err(Error::Usage("either --train or --distribution is required".into())),
    };
    let scorer = FusedScorer::new(model, dist);
    let fused = scorer.fuse_batch(&data)?;
    write_atomic(&a.out, scores_csv(&data, &fused).as_bytes())?;
    if let Some(tau) = a.threshold {
        let mut out = format!("{ID_COLUMN},outlier\n");
        for (id, d) in data.ids.iter().zip(threshold(&fused, tau)) {
            out.push_str(&format!("{},{}\n", csv_field(id), d as u8));
        }
        write_atomic(&sibling(&a.out, "decisions.csv"), out.as_bytes())?;
    }
    if a.explain {
        write_explanations(&scorer.model, &data, &a.out)?;
    }
    Ok(0)
}

/// Reads `__id,score` and aligns it with `data`'s rows by id.
fn read_scores(path: &Path, data: &Dataset) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == ID_COLUMN)
        .ok_or_else(|| bad(format!("missing {ID_COLUMN} column")))?;
    let score_col = headers
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| bad("missing score column".into()))?;
    let mut by_id: HashMap<String, f64> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let raw = rec.get(score_col).unwrap_or_default();
        let s: f64 = raw
            .parse()
            .map_err(|_| bad(format!("row {}: score {raw:?} is not a number", i + 1)))?;
        if by_id.insert(id.clone(), s).is_some() {
            return Err(bad(format!("duplicate id {id:?}")));
        }
    }
    if by_id.len() != data.len() {
        return Err(Error::Data(format!("{} scores for {} rows", by_id.len(), data.len())));
    }
    data.ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("no score for id {id:?}")))
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let schema = load_schema(&a.schema)?;
    let data = Dataset::load(&a.data, schema)?;
    let scores = read_scores(&a.scores, &data)?;
    let result = evaluate(&data, &scores)?;
    write_atomic(&a.out, result.to_json().as_bytes())?;
    if let Some(csv) = &a.csv {
        let text = format!("{}\n{}\n", EvalResult::CSV_HEADER, result.csv_row());
        write_atomic(csv, text.as_bytes())?;
    }
    println!("auroc {}", result.auroc);
    Ok(0)
}

fn cmd_search(a: &SearchArgs) -> Result<i32> {
    let schema = load_schema(&a.schema)?;
    let train = Dataset::load(&a.train, schema.clone())?;
    let val = Dataset::load(&a.val, schema.clone())?;
    let pool = match &a.pool {
        Some(p) => CandidatePool::from_constraints(crate::lang::parse_file(&read_text(p)?)?),
        None => {
            let connectives = a
                .connectives
                .iter()
                .map(|c| c.parse::<Connective>())
                .collect::<Result<Vec<_>>>()?;
            let gen = GeneratorConfig {
                max_depth: a.max_depth,
                connectives,
                allow_negation: !a.no_negation,
                concepts: a.concepts.clone(),
            };
            generate_candidates(&schema, &gen)?
        }
    };
    let seed = match &a.constraints {
        Some(p) => crate::lang::parse_file(&read_text(p)?)?,
        None => Vec::new(),
    };
    let fused = if a.fused {
        Some(fit_score_distribution(&train, a.family.parse()?, &a.out)?)
    } else {
        None
    };
    let cfg = SearchConfig {
        delta_min: a.delta_min,
        baseline: a.baseline,
        seed,
        fit: a.fit.config(),
        fused,
    };
    let outcome = greedy_search(&train, &val, &pool, &cfg)?;
    write_atomic(&a.out, outcome.report_json().as_bytes())?;
    write_atomic(&sibling(&a.out, "constraints.txt"), outcome.constraint_file().as_bytes())?;
    write_atomic(&sibling(&a.out, "weights.json"), outcome.model.weights_json().as_bytes())?;
    println!(
        "pool {} accepted {} final auroc {}",
        outcome.pool_size,
        outcome.accepted.len(),
        outcome.final_auroc
    );
    Ok(0)
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let mut spec = SynthSpec::load(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let bench = generate_benchmark(&spec)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let model = &spec.model;
    write_atomic(&a.out.join("schema.json"), (model.schema().to_json_string() + "\n").as_bytes())?;
    let rules: String = model.constraints().iter().map(|c| format!("{}\n", c.source())).collect();
    write_atomic(&a.out.join("constraints.txt"), rules.as_bytes())?;
    write_atomic(&a.out.join("weights.json"), model.weights_json().as_bytes())?;
    for (name, data) in [("train.csv", &bench.train), ("val.csv", &bench.val), ("test.csv", &bench.test)] {
        write_atomic(&a.out.join(name), data.to_csv_string()?.as_bytes())?;
    }
    Ok(0)
}
