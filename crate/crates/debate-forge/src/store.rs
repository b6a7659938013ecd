//! Topic ingestion, run persistence, and report aggregation.
//!
//! Everything is JSONL on disk. A run lives under
//! `runs/<run_id>/` with `manifest.json`, append-only `generations.jsonl`,
//! per-sample `transcripts/<prop>_<k>.jsonl`, and the evaluation outputs
//! `metrics.json` and `report.csv`. Manifest updates go through a
//! single-writer lock and land via write-temp-then-rename; generation
//! appends are single atomic line writes.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::EvalContext;
use crate::metrics::{diversity_report, judge, Aspect, MetricsError};
use crate::pipelines::RunConfig;
use crate::types::{now_utc, DebateTranscript, GenerationRecord, Method, Proposition};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    MalformedLine { path: String, line: usize, message: String },
    #[error("unknown run id {0}")]
    UnknownRun(String),
    #[error("could not allocate a unique run id")]
    RunIdExhausted,
    #[error("encoding error: {0}")]
    Encode(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Reads one proposition per JSONL line. Lines may omit `id`, in which case
/// ids are assigned positionally as t000, t001, ...
pub fn load_topics(path: &Path) -> Result<Vec<Proposition>, StoreError> {
    #[derive(Deserialize)]
    struct TopicLine {
        #[serde(default)]
        id: Option<String>,
        statement: String,
        #[serde(default)]
        domain_tag: Option<String>,
    }

    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut topics = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TopicLine =
            serde_json::from_str(line).map_err(|e| StoreError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if parsed.statement.trim().is_empty() {
            return Err(StoreError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                message: "statement empty".to_string(),
            });
        }
        let id = parsed.id.unwrap_or_else(|| format!("t{:03}", topics.len()));
        if !seen_ids.insert(id.clone()) {
            return Err(StoreError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("duplicate proposition id {id}"),
            });
        }
        topics.push(Proposition { id, statement: parsed.statement, domain_tag: parsed.domain_tag });
    }
    Ok(topics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub proposition_id: String,
    pub sample_index: u32,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub run_id: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub config: RunConfig,
    pub prompt_digests: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
}

/// Root directory holding all runs.
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    /// Creates a run directory with a fresh id (UTC timestamp plus a random
    /// suffix, retried on collision) and writes the initial manifest.
    pub fn create_run(
        &self,
        config: &RunConfig,
        prompt_digests: BTreeMap<String, String>,
    ) -> Result<RunHandle, StoreError> {
        std::fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let stamp = now_utc().format("%Y%m%d-%H%M%S");
        for _ in 0..16 {
            let suffix: u16 = rand::thread_rng().gen();
            let run_id = format!("{stamp}-{suffix:04x}");
            let dir = self.run_dir(&run_id);
            match std::fs::create_dir(&dir) {
                Ok(()) => {
                    std::fs::create_dir_all(dir.join("transcripts")).map_err(io_err(&dir))?;
                    let manifest = RunManifest {
                        format_version: MANIFEST_FORMAT_VERSION,
                        run_id: run_id.clone(),
                        created_at: now_utc(),
                        config: config.clone(),
                        prompt_digests,
                        entries: Vec::new(),
                    };
                    let handle = RunHandle::create(dir, manifest)?;
                    return Ok(handle);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(&dir)(e)),
            }
        }
        Err(StoreError::RunIdExhausted)
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        let path = self.run_dir(run_id).join("manifest.json");
        if !path.exists() {
            return Err(StoreError::UnknownRun(run_id.to_string()));
        }
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn load_records(&self, run_id: &str) -> Result<Vec<GenerationRecord>, StoreError> {
        let path = self.run_dir(run_id).join("generations.jsonl");
        if !path.exists() {
            return Err(StoreError::UnknownRun(run_id.to_string()));
        }
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut records = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: GenerationRecord =
                serde_json::from_str(line).map_err(|e| StoreError::MalformedLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(record);
        }
        Ok(records)
    }

    pub fn write_metrics(&self, run_id: &str, metrics: &RunMetrics) -> Result<(), StoreError> {
        let dir = self.run_dir(run_id);
        if !dir.exists() {
            return Err(StoreError::UnknownRun(run_id.to_string()));
        }
        let path = dir.join("metrics.json");
        write_atomic(&path, serde_json::to_string_pretty(metrics)?.as_bytes())?;
        let csv_path = dir.join("report.csv");
        let table = ComparisonTable { rows: vec![metrics.aggregate.clone()] };
        write_atomic(&csv_path, table.render_csv().as_bytes())?;
        Ok(())
    }

    pub fn load_metrics(&self, run_id: &str) -> Result<Option<RunMetrics>, StoreError> {
        let path = self.run_dir(run_id).join("metrics.json");
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(Some(serde_json::from_str(&raw)?))
    }

    /// Topics snapshotted into the run directory, empty when absent.
    pub fn load_run_topics(&self, run_id: &str) -> Result<Vec<Proposition>, StoreError> {
        let path = self.run_dir(run_id).join("topics.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        load_topics(&path)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let parent = path.parent().expect("path has parent");
    let tmp = parent.join(format!(
        ".{}.{}.tmp",
        path.file_name().unwrap().to_string_lossy(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// An open run: appends records and serializes manifest updates.
pub struct RunHandle {
    dir: PathBuf,
    generations: Mutex<File>,
    manifest: Mutex<RunManifest>,
}

impl RunHandle {
    fn create(dir: PathBuf, manifest: RunManifest) -> Result<Self, StoreError> {
        let gen_path = dir.join("generations.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&gen_path)
            .map_err(io_err(&gen_path))?;
        let handle = Self { dir, generations: Mutex::new(file), manifest: Mutex::new(manifest) };
        handle.flush_manifest()?;
        Ok(handle)
    }

    pub fn run_id(&self) -> String {
        self.manifest.lock().unwrap().run_id.clone()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends one record as a single line write.
    pub fn persist_record(&self, record: &GenerationRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut file = self.generations.lock().unwrap();
        file.write_all(line.as_bytes())
            .map_err(io_err(&self.dir.join("generations.jsonl")))?;
        Ok(())
    }

    pub fn persist_transcript(
        &self,
        proposition_id: &str,
        sample_index: u32,
        transcript: &DebateTranscript,
    ) -> Result<(), StoreError> {
        let path = self
            .dir
            .join("transcripts")
            .join(format!("{proposition_id}_{sample_index}.jsonl"));
        let mut body = String::new();
        for turn in &transcript.turns {
            body.push_str(&serde_json::to_string(turn)?);
            body.push('\n');
        }
        write_atomic(&path, body.as_bytes())
    }

    /// Snapshots the input topics so later evaluation can recover the
    /// proposition statements.
    pub fn persist_topics(&self, topics: &[Proposition]) -> Result<(), StoreError> {
        let path = self.dir.join("topics.jsonl");
        let mut body = String::new();
        for topic in topics {
            body.push_str(&serde_json::to_string(topic)?);
            body.push('\n');
        }
        write_atomic(&path, body.as_bytes())
    }

    /// Adds one manifest entry and rewrites manifest.json atomically.
    pub fn push_entry(&self, entry: ManifestEntry) -> Result<(), StoreError> {
        let mut manifest = self.manifest.lock().unwrap();
        manifest.entries.push(entry);
        let path = self.dir.join("manifest.json");
        write_atomic(&path, serde_json::to_string_pretty(&*manifest)?.as_bytes())
    }

    fn flush_manifest(&self) -> Result<(), StoreError> {
        let manifest = self.manifest.lock().unwrap();
        let path = self.dir.join("manifest.json");
        write_atomic(&path, serde_json::to_string_pretty(&*manifest)?.as_bytes())
    }
}

/// Evaluation results for one topic of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMetrics {
    pub proposition_id: String,
    pub records: usize,
    pub relevance: Option<f64>,
    pub quality: Option<f64>,
    pub self_bleu: Option<f64>,
    pub self_emb: Option<f64>,
    pub perspective: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// One row of the comparison table; every score is a topic-level macro
/// average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub method: Method,
    pub relevance: Option<f64>,
    pub quality: Option<f64>,
    pub self_bleu: Option<f64>,
    pub self_emb: Option<f64>,
    pub perspective: Option<f64>,
    pub topics: usize,
    pub topics_skipped_for_diversity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub method: Method,
    pub model_id: String,
    pub topics: Vec<TopicMetrics>,
    pub aggregate: ReportRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ReportRow>,
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// Evaluates one run: judge scores per record, diversity per topic with at
/// least two records, macro-averaged into one report row.
pub fn compute_run_metrics(
    store: &RunStore,
    run_id: &str,
    ctx: &EvalContext,
) -> Result<RunMetrics, StoreError> {
    let manifest = store.load_manifest(run_id)?;
    let records = store.load_records(run_id)?;
    let statements: BTreeMap<String, String> = store
        .load_run_topics(run_id)?
        .into_iter()
        .map(|t| (t.id, t.statement))
        .collect();

    // Group by proposition in first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut by_topic: BTreeMap<String, Vec<&GenerationRecord>> = BTreeMap::new();
    for record in &records {
        if !by_topic.contains_key(&record.proposition_id) {
            order.push(record.proposition_id.clone());
        }
        by_topic.entry(record.proposition_id.clone()).or_default().push(record);
    }

    let mut topics = Vec::new();
    for proposition_id in &order {
        let topic_records = &by_topic[proposition_id];
        // Runs persisted before evaluation carry the statement; fall back to
        // the id so judging still has a stable topic reference.
        let statement = statements
            .get(proposition_id)
            .cloned()
            .unwrap_or_else(|| proposition_id.clone());
        let proposition = Proposition::new(proposition_id.clone(), statement);
        let mut warnings = Vec::new();

        let mut relevance_scores = Vec::new();
        let mut quality_scores = Vec::new();
        for record in topic_records.iter() {
            relevance_scores.push(judge(&record.essay, &proposition, Aspect::Relevance, ctx)?);
            quality_scores.push(judge(&record.essay, &proposition, Aspect::Quality, ctx)?);
        }

        let essays: Vec<String> = topic_records.iter().map(|r| r.essay.clone()).collect();
        let (self_bleu, self_emb, perspective) = if essays.len() >= 2 {
            let report = diversity_report(&essays, ctx)?;
            if !report.breakdowns.perspective.excluded.is_empty() {
                warnings.push(format!(
                    "{} argument(s) excluded from perspective diversity",
                    report.breakdowns.perspective.excluded.len()
                ));
            }
            (Some(report.self_bleu), Some(report.self_emb), Some(report.perspective))
        } else {
            warnings.push("fewer than 2 records, diversity metrics skipped".to_string());
            log::warn!("topic {proposition_id}: {}", warnings.last().unwrap());
            (None, None, None)
        };

        topics.push(TopicMetrics {
            proposition_id: proposition_id.clone(),
            records: topic_records.len(),
            relevance: mean_of(&relevance_scores),
            quality: mean_of(&quality_scores),
            self_bleu,
            self_emb,
            perspective,
            warnings,
        });
    }

    let collect = |f: fn(&TopicMetrics) -> Option<f64>| -> Vec<f64> {
        topics.iter().filter_map(f).collect()
    };
    let skipped = topics.iter().filter(|t| t.self_bleu.is_none()).count();
    let aggregate = ReportRow {
        run_id: run_id.to_string(),
        method: manifest.config.method,
        relevance: mean_of(&collect(|t| t.relevance)),
        quality: mean_of(&collect(|t| t.quality)),
        self_bleu: mean_of(&collect(|t| t.self_bleu)),
        self_emb: mean_of(&collect(|t| t.self_emb)),
        perspective: mean_of(&collect(|t| t.perspective)),
        topics: topics.len(),
        topics_skipped_for_diversity: skipped,
    };

    Ok(RunMetrics {
        run_id: run_id.to_string(),
        method: manifest.config.method,
        model_id: manifest.config.model_id.clone(),
        topics,
        aggregate,
    })
}

/// Evaluates (or reloads) each run and lines the rows up for comparison.
pub fn aggregate_report(
    store: &RunStore,
    run_ids: &[String],
    ctx: &EvalContext,
) -> Result<ComparisonTable, StoreError> {
    let mut rows = Vec::new();
    for run_id in run_ids {
        let metrics = match store.load_metrics(run_id)? {
            Some(metrics) => metrics,
            None => {
                let metrics = compute_run_metrics(store, run_id, ctx)?;
                store.write_metrics(run_id, &metrics)?;
                metrics
            }
        };
        rows.push(metrics.aggregate);
    }
    Ok(ComparisonTable { rows })
}

fn fmt_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

impl ComparisonTable {
    /// Aligned text table with the column order Rel, Qual, S-BLEU, S-Emb,
    /// Pers.
    pub fn render_text(&self) -> String {
        let header = ["run_id", "method", "Rel.", "Qual.", "S-BLEU", "S-Emb", "Pers."];
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for row in &self.rows {
            cells.push(vec![
                row.run_id.clone(),
                row.method.to_string(),
                fmt_cell(row.relevance),
                fmt_cell(row.quality),
                fmt_cell(row.self_bleu),
                fmt_cell(row.self_emb),
                fmt_cell(row.perspective),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|col| cells.iter().map(|row| row[col].len()).max().unwrap_or(0))
            .collect();
        cells
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(col, cell)| format!("{cell:<width$}", width = widths[col]))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("run_id,method,relevance,quality,self_bleu,self_emb,perspective\n");
        for row in &self.rows {
            let csv_cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.run_id,
                row.method,
                csv_cell(row.relevance),
                csv_cell(row.quality),
                csv_cell(row.self_bleu),
                csv_cell(row.self_emb),
                csv_cell(row.perspective),
            ));
        }
        out
    }
}
