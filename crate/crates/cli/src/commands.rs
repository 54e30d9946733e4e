//! Subcommand bodies. Each takes already-parsed inputs and writes either to
//! the run directory or to a caller-supplied sink.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use latnas::arch::{ArchFile, NetworkArch, Skeleton};
use latnas::baselines::{run_baseline, Strategy};
use latnas::controller::{continue_search, initial_state, SearchState};
use latnas::cost::{DeviceProfile, LatencyModel};
use latnas::eval::SurrogateConfig;
use latnas::explore::{enumerate, scale_grid};
use latnas::pareto::ParetoFront;
use latnas::reward::{reward, sweep, Measurement, RewardConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{self, read_checkpoint, read_ledger, RunWriter, Summary, LEDGER_FILE};
use crate::CliError;

pub const COST_VERSION: u32 = 1;
pub const ENUMERATE_VERSION: u32 = 1;
pub const SCALE_VERSION: u32 = 1;
pub const REWARD_EVAL_VERSION: u32 = 1;

pub fn csv_err(e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe => CliError::OutputClosed,
        _ => CliError::Config(format!("csv: {e}")),
    }
}

pub fn io_err(e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        return CliError::OutputClosed;
    }
    CliError::Config(format!("output: {e}"))
}

/// Runs the controller and writes ledger.jsonl, checkpoint.json, pareto.csv,
/// and summary.json to the output directory. With `resume`, continues from
/// a checkpoint and the ledger already in the output directory.
pub fn cmd_search(cfg: &RunConfig, resume: Option<&Path>) -> Result<Summary, CliError> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    cfg.check()?;
    let state = match resume {
        Some(cp_path) => {
            let cp = read_checkpoint(cp_path)?;
            // The checkpoint's seed keeps the per-batch streams aligned.
            cfg.search.seed = cp.seed;
            let ledger = read_ledger(&cfg.output_dir.join(LEDGER_FILE))?;
            SearchState::resume(cp, ledger)?
        }
        None => initial_state(&cfg.skeleton()?, &cfg.search),
    };
    let skeleton = cfg.skeleton()?;
    let evaluator = cfg.evaluator()?;
    let mut writer = RunWriter::open(&cfg.output_dir, &state.ledger)?;
    let state = continue_search(state, &skeleton, &cfg.reward, &cfg.search, &evaluator, &mut writer)?;
    let summary = report::summarize(
        &state.ledger,
        "controller",
        cfg.search.seed,
        cfg.top_k,
        started.elapsed().as_secs_f64() * 1e3,
    );
    report::write_reports(&cfg.output_dir, &summary)?;
    Ok(summary)
}

/// Runs a baseline searcher with the same outputs as [`cmd_search`], minus
/// the checkpoint.
pub fn cmd_baselines(cfg: &RunConfig, strategy: Strategy) -> Result<Summary, CliError> {
    let started = Instant::now();
    cfg.check()?;
    let skeleton = cfg.skeleton()?;
    let evaluator = cfg.evaluator()?;
    let mut writer = RunWriter::open(&cfg.output_dir, &[])?;
    let ledger = run_baseline(&skeleton, &cfg.reward, &cfg.search, strategy, &evaluator, &mut writer)?;
    let name = match strategy {
        Strategy::Random => "random",
        Strategy::Evolution { .. } => "evolution",
    };
    let summary = report::summarize(
        &ledger,
        name,
        cfg.search.seed,
        cfg.top_k,
        started.elapsed().as_secs_f64() * 1e3,
    );
    report::write_reports(&cfg.output_dir, &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct EnumerateRow {
    arch_id: String,
    tokens: String,
    macs: u64,
    params: u64,
    latency_ms: f64,
    accuracy: Option<f64>,
}

fn tokens_field(tokens: &[usize]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

/// Streams every arch of the skeleton as CSV. Returns the row count.
pub fn cmd_enumerate<W: Write>(
    skeleton: &Skeleton,
    profile: &DeviceProfile,
    surrogate: Option<&SurrogateConfig>,
    limit: u64,
    mut out: W,
) -> Result<usize, CliError> {
    let model = LatencyModel::new(profile);
    let archs = enumerate(skeleton, &model, surrogate, limit)?;
    writeln!(out, "# enumerate_version {ENUMERATE_VERSION}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    let mut n = 0;
    for a in archs {
        let a = a?;
        w.serialize(EnumerateRow {
            arch_id: a.arch_id,
            tokens: tokens_field(&a.tokens),
            macs: a.macs,
            params: a.params,
            latency_ms: a.latency_ms,
            accuracy: a.accuracy,
        })
        .map_err(csv_err)?;
        n += 1;
    }
    w.flush().map_err(io_err)?;
    Ok(n)
}

/// Front of a ledger file, written as CSV.
pub fn cmd_pareto<W: Write>(ledger_path: &Path, out: W) -> Result<ParetoFront, CliError> {
    let ledger = read_ledger(ledger_path)?;
    let front = report::ledger_front(&ledger);
    report::write_pareto_csv(&front, out)?;
    Ok(front)
}

/// Loads an arch file. Without a skeleton the file must carry its own input
/// resolution and stem width.
pub fn load_arch(path: &Path, skeleton: Option<&Skeleton>) -> Result<NetworkArch, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file = ArchFile::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let resolved = match skeleton {
        Some(sk) => file.resolve(sk),
        None => match (file.input_resolution, file.stem_filters) {
            (Some(res), Some(stem)) => NetworkArch::from_parts(file.skeleton_id.clone(), res, stem, file.blocks.clone()),
            _ => {
                return Err(CliError::Config(format!(
                    "{}: needs input_resolution and stem_filters or a skeleton",
                    path.display()
                )))
            }
        },
    };
    resolved.map_err(|e| CliError::Guard(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostFormat {
    Json,
    Table,
}

#[derive(Serialize)]
struct CostReport<'a> {
    cost_version: u32,
    skeleton_id: &'a str,
    input_resolution: u32,
    profile: &'a str,
    #[serde(flatten)]
    breakdown: &'a latnas::cost::CostBreakdown,
}

/// Per-layer and total cost of one arch.
pub fn cmd_cost<W: Write>(
    arch: &NetworkArch,
    profile: &DeviceProfile,
    format: CostFormat,
    mut out: W,
) -> Result<(), CliError> {
    let cost = LatencyModel::new(profile)
        .estimate(arch)
        .map_err(|e| CliError::Config(e.to_string()))?;
    match format {
        CostFormat::Json => {
            let report = CostReport {
                cost_version: COST_VERSION,
                skeleton_id: &arch.skeleton_id,
                input_resolution: arch.input_resolution,
                profile: &profile.name,
                breakdown: &cost,
            };
            let text = serde_json::to_string_pretty(&report).expect("cost reports serialize");
            writeln!(out, "{text}").map_err(io_err)
        }
        CostFormat::Table => {
            let w = &mut out;
            writeln!(
                w,
                "{:>5} {:>5} {:<12} {:>2} {:<9} {:>9} {:>11} {:>6} {:>13} {:>10} {:>12}",
                "layer", "block", "op", "k", "skip", "in", "channels", "stride", "macs", "params", "latency_ms"
            )
            .map_err(io_err)?;
            for (i, (layer, c)) in arch.layers.iter().zip(&cost.per_layer).enumerate() {
                let s = &layer.shape;
                writeln!(
                    w,
                    "{:>5} {:>5} {:<12} {:>2} {:<9} {:>9} {:>11} {:>6} {:>13} {:>10} {:>12.6}",
                    i,
                    layer.block,
                    layer.spec.conv_op.to_string(),
                    layer.spec.kernel,
                    format!("{:?}", layer.spec.skip_op),
                    format!("{}x{}", s.height, s.width),
                    format!("{}->{}", s.channels_in, s.channels_out),
                    s.stride,
                    c.macs,
                    c.params,
                    c.latency_ms
                )
                .map_err(io_err)?;
            }
            writeln!(
                w,
                "{:>5} {:>5} {:<12} {:>2} {:<9} {:>9} {:>11} {:>6} {:>13} {:>10} {:>12.6}",
                "total", "", "", "", "", "", "", "", cost.total_macs, cost.total_params, cost.total_latency_ms
            )
            .map_err(io_err)
        }
    }
}

#[derive(Serialize)]
struct ScaleCsvRow {
    multiplier: f64,
    input_size: u32,
    macs: Option<u64>,
    params: Option<u64>,
    latency_ms: Option<f64>,
    accuracy: Option<f64>,
    error: Option<String>,
}

/// Depth-multiplier by input-size grid as CSV. Returns the number of rows
/// that could not be built.
pub fn cmd_scale<W: Write>(
    arch: &NetworkArch,
    multipliers: &[f64],
    input_sizes: &[u32],
    profile: &DeviceProfile,
    surrogate: Option<&SurrogateConfig>,
    mut out: W,
) -> Result<usize, CliError> {
    let rows = scale_grid(arch, multipliers, input_sizes, &LatencyModel::new(profile), surrogate);
    writeln!(out, "# scale_version {SCALE_VERSION}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    let mut failed = 0;
    for r in rows {
        failed += r.error.is_some() as usize;
        w.serialize(ScaleCsvRow {
            multiplier: r.multiplier,
            input_size: r.input_size,
            macs: r.macs,
            params: r.params,
            latency_ms: r.latency_ms,
            accuracy: r.accuracy,
            error: r.error,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(failed)
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim()))
        .ok_or_else(|| CliError::Config(format!("input csv needs a column named {}", names.join(" or "))))
}

/// Copies the input CSV and appends a `reward` column.
pub fn cmd_reward_eval<R: Read, W: Write>(input: R, cfg: &RewardConfig, mut out: W) -> Result<usize, CliError> {
    cfg.check().map_err(|e| CliError::Config(e.to_string()))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    let acc_col = column(&headers, &["accuracy", "acc"])?;
    let lat_col = column(&headers, &["latency_ms", "lat", "latency"])?;
    writeln!(out, "# reward_eval_version {REWARD_EVAL_VERSION}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    let mut head = headers.clone();
    head.push_field("reward");
    w.write_record(&head).map_err(csv_err)?;
    let mut n = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |col: usize| -> Result<f64, CliError> {
            rec.get(col)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("row {}: {e}", i + 1)))
        };
        let meas = Measurement {
            accuracy: num(acc_col)?,
            latency_ms: num(lat_col)?,
        };
        let value = reward(meas, cfg).map_err(|e| CliError::Config(format!("row {}: {e}", i + 1)))?;
        let mut row = rec.clone();
        row.push_field(&value.to_string());
        w.write_record(&row).map_err(csv_err)?;
        n += 1;
    }
    w.flush().map_err(io_err)?;
    Ok(n)
}

/// Reward of a fixed accuracy over an evenly spaced latency grid, as CSV.
pub fn cmd_reward_sweep<W: Write>(
    accuracy: f64,
    cfg: &RewardConfig,
    lat_min_ms: f64,
    lat_max_ms: f64,
    steps: usize,
    mut out: W,
) -> Result<(), CliError> {
    cfg.check().map_err(|e| CliError::Config(e.to_string()))?;
    let points = sweep(accuracy, cfg, lat_min_ms, lat_max_ms, steps).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(out, "# reward_sweep_version {REWARD_EVAL_VERSION}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["accuracy", "latency_ms", "reward"]).map_err(csv_err)?;
    for (lat, r) in points {
        w.write_record([accuracy.to_string(), lat.to_string(), r.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}
