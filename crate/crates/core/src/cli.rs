//! Command-line orchestration: ingest, index, template mining, attack
//! execution, the full pipeline, annotation collection, and reporting.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{self, PassageWriter, RetrySettings};
use crate::bench::{self, RunOutput, RunSettings};
use crate::config::RunConfig;
use crate::corpus::{self, AttackMethod, CorpusFormat};
use crate::error::{Error, Result};
use crate::eval::{self, AnnotationRecord, AttackRecord, EvalReport, NaturalnessSummary};
use crate::generator::GeneratorKind;
use crate::retriever::Index;
use crate::templates::ReasoningTemplate;
use crate::text::stable_hash;

#[derive(Debug, Parser)]
#[command(name = "rpb", version, about = "Red-team benchmark for poisoning RAG pipelines")]
pub struct Cli {
    /// Path to a JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Dotted config overrides, e.g. --set attack.k=3
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    MsmarcoTsv,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> CorpusFormat {
        match f {
            FormatArg::Jsonl => CorpusFormat::Jsonl,
            FormatArg::MsmarcoTsv => CorpusFormat::MsmarcoTsv,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and optionally re-export it.
    Ingest {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FormatArg,
        /// Re-export the validated corpus (always JSONL).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build the retrieval index over a corpus and optionally run a query.
    Index {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FormatArg,
        #[arg(long)]
        query: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Mine the shared reasoning template from clean benchmark runs.
    MineTemplate {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Forge and inject adversarial documents; write per-query outcomes.
    Attack {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Full pipeline: benchmark, template, attacks, generation, reports.
    Run,
    /// Collect blind, order-randomized naturalness annotations.
    Annotate {
        /// JSONL of {"sample_id", "text"} rows.
        samples: PathBuf,
        #[arg(long)]
        annotator: String,
        /// JSONL annotation log; appended to, and used to resume.
        #[arg(long)]
        output: PathBuf,
    },
    /// Aggregate attack records (and optional annotations) into tables.
    Report {
        records: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        json_out: Option<PathBuf>,
        #[arg(long)]
        text_out: Option<PathBuf>,
    },
}

/// Wraps an artifact row with the configuration fingerprint.
#[derive(Serialize)]
struct Row<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a T,
}

/// On-disk template artifact. The loader also accepts a bare template
/// object for hand-written files.
#[derive(Debug, Serialize, Deserialize)]
pub struct TemplateArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub template: ReasoningTemplate,
}

pub fn load_template(path: &Path) -> Result<ReasoningTemplate> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let value: serde_json::Value = serde_json::from_str(&raw)?;
    if value.get("template").is_some() {
        let artifact: TemplateArtifact = serde_json::from_value(value)?;
        Ok(artifact.template)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_jsonl<T: Serialize>(path: &Path, hash: &str, seed: u64, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for record in rows {
        let row = Row {
            config_hash: hash,
            seed,
            record,
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    write_file(path, &out)
}

/// Centile formatting: integer when the rounded value is whole, otherwise
/// one decimal place (65, 95, 68.4).
pub fn format_centile(x: f64) -> String {
    let tenth = (x * 1000.0).round() / 10.0;
    if tenth == tenth.round() {
        format!("{:.0}", tenth)
    } else {
        format!("{:.1}", tenth)
    }
}

pub fn format_report_table(reports: &[EvalReport]) -> String {
    let mut out = String::from("method  n     asr    asr_r  asr_g\n");
    for r in reports {
        out.push_str(&format!(
            "{:<7} {:<5} {:<6} {:<6} {}\n",
            r.method.as_str(),
            r.n,
            format_centile(r.asr_f64()),
            format_centile(r.asr_r_f64()),
            format_centile(r.asr_g_f64()),
        ));
    }
    out
}

pub fn format_naturalness(s: &NaturalnessSummary) -> String {
    let pearson = match s.mean_pairwise_pearson {
        Some(p) => format!("{p:.2}"),
        None => "n/a".to_string(),
    };
    format!(
        "naturalness  mean_n_r {:.2}  kappa {:.2}  mean_n_d {:.2}  pearson {}  \
         (annotators {}, samples {})\n",
        s.mean_n_r, s.kappa, s.mean_n_d, pearson, s.annotators, s.samples
    )
}

fn mine_template(cfg: &RunConfig) -> Result<ReasoningTemplate> {
    if let Some(path) = &cfg.template.path {
        return load_template(path);
    }
    if cfg.generator.kind != GeneratorKind::MockR1 {
        return Err(Error::NoReasoningTraces);
    }
    let (cases, baseline) = bench::generate_benchmark(cfg.benchmark.cases, cfg.seed)?;
    let embedder = cfg.build_embedder()?;
    bench::mine_template_offline(
        &cases,
        &baseline,
        embedder.as_ref(),
        &cfg.behavior(),
        cfg.attack.k,
        cfg.template.sample_size,
        cfg.template.min_support,
    )
}

/// Template used by the pipeline: an explicit file wins; otherwise mined
/// when the generator can produce traces; otherwise absent (COT then fails
/// with a template-required error).
fn pipeline_template(cfg: &RunConfig) -> Result<Option<ReasoningTemplate>> {
    if cfg.template.path.is_some() || cfg.generator.kind == GeneratorKind::MockR1 {
        mine_template(cfg).map(Some)
    } else {
        Ok(None)
    }
}

fn run_settings_for(cfg: &RunConfig) -> RunSettings {
    cfg.run_settings()
}

/// Runs the full offline pipeline and writes all artifacts into
/// `run.output_dir`. Returns the run output for exit-code decisions.
pub fn run_pipeline(cfg: &RunConfig, out: &mut dyn Write) -> Result<RunOutput> {
    let hash = cfg.hash();
    let (cases, baseline) = bench::generate_benchmark(cfg.benchmark.cases, cfg.seed)?;
    let embedder = cfg.build_embedder()?;
    let template = pipeline_template(cfg)?;
    let settings = run_settings_for(cfg);
    let output = bench::run_benchmark(
        &cases,
        &baseline,
        embedder.as_ref(),
        &cfg.attack.methods,
        &settings,
        template.as_ref(),
    )?;

    let dir = &cfg.run.output_dir;
    write_file(
        &dir.join("config.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::json!({
                "config_hash": hash,
                "config": cfg,
            }))?
        ),
    )?;
    if let Some(t) = &template {
        let artifact = TemplateArtifact {
            config_hash: hash.clone(),
            seed: cfg.seed,
            template: t.clone(),
        };
        write_file(
            &dir.join("template.json"),
            &format!("{}\n", serde_json::to_string_pretty(&artifact)?),
        )?;
    }
    write_jsonl(&dir.join("outcomes.jsonl"), &hash, cfg.seed, &output.outcomes)?;
    write_jsonl(&dir.join("records.jsonl"), &hash, cfg.seed, &output.records)?;
    write_file(
        &dir.join("reports.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::json!({
                "config_hash": hash,
                "seed": cfg.seed,
                "reports": output.reports,
            }))?
        ),
    )?;
    let table = format_report_table(&output.reports);
    write_file(&dir.join("report.txt"), &table)?;
    write!(out, "{table}").ok();

    if output.failures.is_empty() {
        writeln!(out, "completed {} cells", output.records.len()).ok();
    } else {
        let ids: Vec<String> = output
            .failures
            .iter()
            .map(|f| format!("{}:{}", f.method.as_str(), f.query_id))
            .collect();
        writeln!(out, "failed cells: {}", ids.join(", ")).ok();
    }
    Ok(output)
}

/// Injection-only stage: forge, inject with retry, record outcomes.
pub fn run_attack_stage(cfg: &RunConfig, output_path: &Path) -> Result<usize> {
    let hash = cfg.hash();
    let (cases, baseline) = bench::generate_benchmark(cfg.benchmark.cases, cfg.seed)?;
    let embedder = cfg.build_embedder()?;
    let template = if cfg.attack.methods.contains(&AttackMethod::Cot) {
        Some(mine_template(cfg)?)
    } else {
        None
    };
    let index = Index::build(embedder.as_ref(), &baseline)?;
    let retry = RetrySettings {
        k: cfg.attack.k,
        max_rounds: cfg.attack.max_rounds,
        keep_failed_rounds: cfg.attack.keep_failed_rounds,
    };
    let mut outcomes = Vec::new();
    for method in &cfg.attack.methods {
        for case in &cases {
            let (outcome, _, _) = attack::inject_with_retry(
                case,
                *method,
                &baseline,
                &index,
                &retry,
                template.as_ref(),
                &PassageWriter::Offline,
            )?;
            outcomes.push(outcome);
        }
    }
    write_jsonl(output_path, &hash, cfg.seed, &outcomes)?;
    Ok(outcomes.len())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub text: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let raw =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            format: "jsonl".into(),
            line: idx + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(rows)
}

fn prompt_score(
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    prompt: &str,
    lo: u8,
    hi: u8,
) -> Result<Option<u8>> {
    loop {
        write!(out, "{prompt}").ok();
        out.flush().ok();
        let mut line = String::new();
        let n = input
            .read_line(&mut line)
            .map_err(|e| Error::io("annotation input", e))?;
        if n == 0 {
            return Ok(None); // EOF: stop the session, keep what we have
        }
        match line.trim().parse::<u8>() {
            Ok(v) if (lo..=hi).contains(&v) => return Ok(Some(v)),
            _ => {
                writeln!(out, "  enter a number between {lo} and {hi}").ok();
            }
        }
    }
}

/// Interactive blind annotation. Samples are presented in an order
/// randomized per annotator; already-annotated samples are skipped, so an
/// interrupted session resumes where it left off. Returns the new records.
pub fn annotate_loop(
    samples: &[SampleRow],
    existing: &[AnnotationRecord],
    annotator: &str,
    seed: u64,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<Vec<AnnotationRecord>> {
    let mut pending: Vec<&SampleRow> = samples
        .iter()
        .filter(|s| {
            !existing
                .iter()
                .any(|r| r.annotator_id == annotator && r.sample_id == s.sample_id)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(annotator));
    pending.shuffle(&mut rng);

    let total = pending.len();
    let mut records = Vec::new();
    for (i, sample) in pending.iter().enumerate() {
        writeln!(out, "\nsample {}/{}:\n{}\n", i + 1, total, sample.text).ok();
        let Some(n_r) = prompt_score(input, out, "plausible reasoning? [0/1]: ", 0, 1)? else {
            break;
        };
        let Some(n_d) = prompt_score(input, out, "fluency [1-5]: ", 1, 5)? else {
            break;
        };
        let record = AnnotationRecord {
            sample_id: sample.sample_id.clone(),
            annotator_id: annotator.to_string(),
            n_r,
            n_d,
        };
        record.validate()?;
        records.push(record);
    }
    if records.len() < total {
        writeln!(out, "session ended with {} of {} samples annotated", records.len(), total).ok();
    } else {
        writeln!(out, "all {total} samples annotated").ok();
    }
    Ok(records)
}

fn append_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    use std::io::Write as _;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for row in rows {
        let line = serde_json::to_string(row)?;
        writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Aggregates attack records into per-method reports, ordered by the
/// canonical method list.
pub fn aggregate_records(records: &[AttackRecord]) -> Result<Vec<EvalReport>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut reports = Vec::new();
    for method in AttackMethod::ALL {
        let group: Vec<AttackRecord> = records
            .iter()
            .filter(|r| r.method == method)
            .cloned()
            .collect();
        if !group.is_empty() {
            reports.push(eval::compute_report(&group)?);
        }
    }
    Ok(reports)
}

/// Executes a parsed invocation. Returns the process exit code: zero only
/// when every stage completed.
pub fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<i32> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    match cli.command {
        Command::Ingest {
            input: path,
            format,
            output,
        } => {
            let snapshot = corpus::ingest(&path, format.into())?;
            writeln!(out, "ingested {} documents (version {})", snapshot.len(), snapshot.version())
                .ok();
            if let Some(output) = output {
                corpus::export(&snapshot, &output, CorpusFormat::Jsonl)?;
                writeln!(out, "wrote {}", output.display()).ok();
            }
            Ok(0)
        }
        Command::Index {
            input: path,
            format,
            query,
            k,
        } => {
            let snapshot = corpus::ingest(&path, format.into())?;
            let embedder = cfg.build_embedder()?;
            let index = Index::build(embedder.as_ref(), &snapshot)?;
            writeln!(out, "indexed {} documents (dim {})", index.len(), embedder.dim()).ok();
            if let Some(query) = query {
                let k = k.unwrap_or(cfg.attack.k);
                let res = index.retrieve("adhoc", &query, k)?;
                for (rank, (id, score)) in res.ranked.iter().enumerate() {
                    writeln!(out, "{:>3}  {score:.4}  {id}", rank + 1).ok();
                }
            }
            Ok(0)
        }
        Command::MineTemplate { output } => {
            let template = mine_template(&cfg)?;
            let artifact = TemplateArtifact {
                config_hash: cfg.hash(),
                seed: cfg.seed,
                template,
            };
            let json = format!("{}\n", serde_json::to_string_pretty(&artifact)?);
            match output {
                Some(path) => {
                    write_file(&path, &json)?;
                    writeln!(out, "wrote {}", path.display()).ok();
                }
                None => {
                    write!(out, "{json}").ok();
                }
            }
            Ok(0)
        }
        Command::Attack { output } => {
            let path = output.unwrap_or_else(|| cfg.run.output_dir.join("outcomes.jsonl"));
            let n = run_attack_stage(&cfg, &path)?;
            writeln!(out, "wrote {n} outcomes to {}", path.display()).ok();
            Ok(0)
        }
        Command::Run => {
            let output = run_pipeline(&cfg, out)?;
            Ok(if output.failures.is_empty() { 0 } else { 1 })
        }
        Command::Annotate {
            samples,
            annotator,
            output,
        } => {
            let samples: Vec<SampleRow> = read_jsonl(&samples)?;
            let existing: Vec<AnnotationRecord> = if output.exists() {
                read_jsonl(&output)?
            } else {
                Vec::new()
            };
            let records = annotate_loop(&samples, &existing, &annotator, cfg.seed, input, out)?;
            append_jsonl(&output, &records)?;
            let done = existing
                .iter()
                .filter(|r| r.annotator_id == annotator)
                .count()
                + records.len();
            Ok(if done >= samples.len() { 0 } else { 1 })
        }
        Command::Report {
            records,
            annotations,
            json_out,
            text_out,
        } => {
            let records: Vec<AttackRecord> = read_jsonl(&records)?;
            let reports = aggregate_records(&records)?;
            let naturalness = match annotations {
                Some(path) => {
                    let rows: Vec<AnnotationRecord> = read_jsonl(&path)?;
                    Some(eval::naturalness_summary(&rows)?)
                }
                None => None,
            };
            let mut text = format_report_table(&reports);
            if let Some(n) = &naturalness {
                text.push_str(&format_naturalness(n));
            }
            write!(out, "{text}").ok();
            if let Some(path) = text_out {
                write_file(&path, &text)?;
            }
            if let Some(path) = json_out {
                let json = serde_json::to_string_pretty(&serde_json::json!({
                    "reports": reports,
                    "naturalness": naturalness,
                }))?;
                write_file(&path, &format!("{json}\n"))?;
            }
            Ok(0)
        }
    }
}
