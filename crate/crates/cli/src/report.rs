//! On-disk run artifacts: the JSON-lines ledger, checkpoints, the Pareto CSV,
//! and summary.json. Every file carries a schema version.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use latnas::controller::{Checkpoint, LedgerRecord, SearchObserver};
use latnas::pareto::{extract_front, ParetoFront, ParetoPoint};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const LEDGER_VERSION: u32 = 1;
pub const SUMMARY_VERSION: u32 = 1;
pub const PARETO_VERSION: u32 = 1;

pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PARETO_FILE: &str = "pareto.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Serialize, Deserialize)]
struct LedgerLine {
    ledger_version: u32,
    #[serde(flatten)]
    record: LedgerRecord,
}

pub fn ledger_line(record: &LedgerRecord) -> String {
    serde_json::to_string(&LedgerLine {
        ledger_version: LEDGER_VERSION,
        record: record.clone(),
    })
    .expect("ledger records serialize")
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LedgerLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if parsed.ledger_version != LEDGER_VERSION {
            return Err(CliError::Config(format!(
                "{}:{}: unsupported ledger_version {}",
                path.display(),
                i + 1,
                parsed.ledger_version
            )));
        }
        out.push(parsed.record);
    }
    Ok(out)
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Appends ledger records and refreshes the checkpoint as a run progresses.
pub struct RunWriter {
    dir: PathBuf,
    ledger: BufWriter<File>,
}

impl RunWriter {
    /// Opens the run directory. A fresh run truncates the ledger; a resumed
    /// run rewrites it with the records kept by the checkpoint first.
    pub fn open(dir: &Path, keep: &[LedgerRecord]) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LEDGER_FILE);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        let mut w = RunWriter {
            dir: dir.to_path_buf(),
            ledger: BufWriter::new(file),
        };
        w.on_batch(keep).map_err(|e| CliError::io(&path, e))?;
        Ok(w)
    }
}

impl SearchObserver for RunWriter {
    fn on_batch(&mut self, records: &[LedgerRecord]) -> std::io::Result<()> {
        for r in records {
            writeln!(self.ledger, "{}", ledger_line(r))?;
        }
        self.ledger.flush()
    }

    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(checkpoint).expect("checkpoints serialize");
        write_atomic(&self.dir.join(CHECKPOINT_FILE), text.as_bytes())
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

pub fn ledger_front(ledger: &[LedgerRecord]) -> ParetoFront {
    extract_front(ledger.iter().map(|r| ParetoPoint {
        arch_id: r.arch_id.clone(),
        accuracy: r.evaluation.accuracy,
        latency_ms: r.evaluation.latency_ms,
        tokens: r.tokens.clone(),
    }))
}

fn tokens_field(tokens: &[usize]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize, Deserialize)]
struct ParetoRow {
    arch_id: String,
    accuracy: f64,
    latency_ms: f64,
    tokens: String,
}

/// CSV with a leading `# pareto_version` comment line.
pub fn write_pareto_csv<W: Write>(front: &ParetoFront, mut out: W) -> Result<(), CliError> {
    use crate::commands::{csv_err, io_err};
    writeln!(out, "# pareto_version {PARETO_VERSION}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    for p in front.points() {
        w.serialize(ParetoRow {
            arch_id: p.arch_id.clone(),
            accuracy: p.accuracy,
            latency_ms: p.latency_ms,
            tokens: tokens_field(&p.tokens),
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_pareto_csv(path: &Path) -> Result<Vec<ParetoPoint>, CliError> {
    let bad = |e: csv::Error| CliError::Config(format!("{}: {e}", path.display()));
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(bad)?;
    let mut out = Vec::new();
    for row in r.deserialize::<ParetoRow>() {
        let row = row.map_err(bad)?;
        let tokens = row
            .tokens
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("{}: bad token list: {e}", path.display())))?;
        out.push(ParetoPoint {
            arch_id: row.arch_id,
            accuracy: row.accuracy,
            latency_ms: row.latency_ms,
            tokens,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedArch {
    pub sample: usize,
    pub arch_id: String,
    pub tokens: Vec<usize>,
    pub reward: f64,
    pub accuracy: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub summary_version: u32,
    pub strategy: String,
    pub seed: u64,
    pub samples: usize,
    pub best: Option<RankedArch>,
    pub front_size: usize,
    pub front: Vec<ParetoPoint>,
    /// Distinct archs with the highest rewards, best first.
    pub top_k: Vec<RankedArch>,
    pub wall_time_ms: f64,
}

/// The `k` best distinct archs by reward; ties go to the earlier sample.
pub fn top_k(ledger: &[LedgerRecord], k: usize) -> Vec<RankedArch> {
    let mut order: Vec<&LedgerRecord> = ledger.iter().collect();
    order.sort_by(|a, b| b.reward.total_cmp(&a.reward).then(a.sample.cmp(&b.sample)));
    let mut seen = HashSet::new();
    order
        .into_iter()
        .filter(|r| seen.insert(r.arch_id.as_str()))
        .take(k)
        .map(|r| RankedArch {
            sample: r.sample,
            arch_id: r.arch_id.clone(),
            tokens: r.tokens.clone(),
            reward: r.reward,
            accuracy: r.evaluation.accuracy,
            latency_ms: r.evaluation.latency_ms,
        })
        .collect()
}

pub fn summarize(ledger: &[LedgerRecord], strategy: &str, seed: u64, k: usize, wall_time_ms: f64) -> Summary {
    let front = ledger_front(ledger);
    let top = top_k(ledger, k);
    Summary {
        summary_version: SUMMARY_VERSION,
        strategy: strategy.to_string(),
        seed,
        samples: ledger.len(),
        best: top.first().cloned(),
        front_size: front.len(),
        front: front.into_points(),
        top_k: top,
        wall_time_ms,
    }
}

/// Writes pareto.csv and summary.json for a finished ledger.
pub fn write_reports(dir: &Path, summary: &Summary) -> Result<(), CliError> {
    let front = latnas::pareto::extract_front(summary.front.iter().cloned());
    let mut buf = Vec::new();
    write_pareto_csv(&front, &mut buf)?;
    write_atomic(&dir.join(PARETO_FILE), &buf)?;
    let text = serde_json::to_string_pretty(summary).expect("summaries serialize");
    write_atomic(&dir.join(SUMMARY_FILE), text.as_bytes())
}
