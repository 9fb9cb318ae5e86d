//! Monte-Carlo identification over sensor counts.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use oma_core::modal::pair_modes;
use oma_core::simulator::{analytic_modes, random_sensor_ids, select_sensors, simulate, GroundTruthModes, SimConfig};
use oma_core::OmaError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SystemSpec, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::pipeline::identify;

pub const RUNS_CSV: &str = "runs.csv";
pub const MODES_CSV: &str = "modes.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    FitFailure,
    NumericalFailure,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::FitFailure => "fit_failure",
            RunStatus::NumericalFailure => "numerical_failure",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [RunStatus::Ok, RunStatus::FitFailure, RunStatus::NumericalFailure]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

/// One identified mode of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub freq_hz: f64,
    pub damping_ratio: f64,
    /// Index of the reference mode it was paired with.
    pub paired_truth_index: Option<usize>,
    /// MAC with the paired reference mode.
    pub mac: Option<f64>,
    /// MAC with every reference mode, on the run's sensors.
    pub mac_to_truth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sensor_count: usize,
    pub repetition: usize,
    pub seed: u64,
    pub sensor_ids: Vec<usize>,
    pub status: RunStatus,
    pub estimated_rank: Option<usize>,
    pub modes: Vec<ModeRecord>,
    pub elbo_final: Option<f64>,
    pub iterations: Option<usize>,
    pub refinements: Option<usize>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `(sensor_count, repetition)`. Simulation uses it directly;
/// the sensor draw and the factorization use `seed + 1` and `seed + 2`
/// passed through the same mixer.
pub fn run_seed(master_seed: u64, sensor_count: usize, repetition: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(((sensor_count as u64) << 32) | repetition as u64))
}

fn substream(seed: u64, k: u64) -> u64 {
    splitmix64(seed.wrapping_add(k))
}

fn failed(mut rec: RunRecord, e: &CliError) -> RunRecord {
    let core = match e {
        CliError::Core(c) | CliError::Stage { source: c, .. } => Some(c),
        _ => None,
    };
    rec.status = match core {
        Some(OmaError::Numerical { .. }) => RunStatus::NumericalFailure,
        _ => RunStatus::FitFailure,
    };
    rec.error = Some(e.to_string());
    rec
}

/// One Monte-Carlo run. Failures are recorded, never propagated.
pub fn run_one(cfg: &ExperimentConfig, truth: &GroundTruthModes, sensor_count: usize, repetition: usize) -> RunRecord {
    let start = Instant::now();
    let seed = run_seed(cfg.master_seed, sensor_count, repetition);
    let mut rec = RunRecord {
        sensor_count,
        repetition,
        seed,
        sensor_ids: Vec::new(),
        status: RunStatus::Ok,
        estimated_rank: None,
        modes: Vec::new(),
        elbo_final: None,
        iterations: None,
        refinements: None,
        wall_ms: 0.0,
        error: None,
    };
    let outcome = (|| -> Result<_> {
        let sys = cfg.system.build()?;
        let ids = random_sensor_ids(sys.dofs(), sensor_count, substream(seed, 1))?;
        let sim = SimConfig { seed, ..cfg.sim.clone() };
        let x = select_sensors(&simulate(&sys, &sim)?, &ids)?;
        let id = identify(&x, &cfg.cov, &cfg.bcpf, cfg.refine_rounds, substream(seed, 2))?;
        let (assign, macs) = pair_modes(&id.estimate, &truth.restricted_to(&ids)?)?;
        Ok((ids, id, assign, macs))
    })();
    rec = match outcome {
        Ok((ids, id, assign, macs)) => {
            rec.sensor_ids = ids;
            rec.estimated_rank = Some(id.estimated_rank());
            rec.elbo_final = Some(id.trace.final_elbo());
            rec.iterations = Some(id.trace.iterations);
            rec.refinements = Some(id.refinements);
            rec.modes = id
                .estimate
                .modes
                .iter()
                .enumerate()
                .map(|(e, m)| ModeRecord {
                    freq_hz: m.freq_hz,
                    damping_ratio: m.damping_ratio,
                    paired_truth_index: assign[e],
                    mac: assign[e].map(|t| macs.get(e, t)),
                    mac_to_truth: macs.values[e].clone(),
                })
                .collect();
            rec
        }
        Err(e) => {
            rec.sensor_ids = random_sensor_ids(truth.freqs_hz.len(), sensor_count, substream(seed, 1)).unwrap_or_default();
            failed(rec, &e)
        }
    };
    rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    log::info!(
        "M={sensor_count} rep={repetition}: {} rank {:?} in {:.0} ms",
        rec.status.as_str(),
        rec.estimated_rank,
        rec.wall_ms
    );
    rec
}

/// All runs, ordered by `(sensor_count, repetition)` in config order.
pub fn run_all(cfg: &ExperimentConfig, truth: &GroundTruthModes) -> Vec<RunRecord> {
    let jobs: Vec<(usize, usize)> = cfg
        .sensor_counts
        .iter()
        .flat_map(|&m| (0..cfg.repetitions).map(move |r| (m, r)))
        .collect();
    jobs.par_iter().map(|&(m, r)| run_one(cfg, truth, m, r)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub truth_index: usize,
    pub truth_freq_hz: f64,
    pub truth_damping_ratio: f64,
    /// Runs in which an identified mode was paired with this one.
    pub paired_runs: usize,
    pub freq_mean: Option<f64>,
    pub freq_std: Option<f64>,
    /// `|freq_mean - truth| / truth`.
    pub freq_rel_error: Option<f64>,
    pub damping_mean: Option<f64>,
    pub damping_std: Option<f64>,
    pub mac_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub sensor_count: usize,
    pub runs: usize,
    pub ok_runs: usize,
    pub fit_failures: usize,
    pub numerical_failures: usize,
    pub rank_mean: Option<f64>,
    pub rank_std: Option<f64>,
    pub rank_two_sigma: Option<f64>,
    pub modes: Vec<ModeSummary>,
    /// Row `i`: mean MAC of the identified mode paired with reference mode
    /// `i` against each reference mode; null where mode `i` was never paired.
    pub mac_matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub master_seed: u64,
    pub repetitions: usize,
    pub truth: GroundTruthModes,
    pub groups: Vec<GroupSummary>,
}

/// Mean and sample standard deviation; the deviation needs two values.
fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn group_summary(sensor_count: usize, runs: &[&RunRecord], truth: &GroundTruthModes) -> GroupSummary {
    let ok: Vec<&RunRecord> = runs.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
    let ranks: Vec<f64> = ok.iter().filter_map(|r| r.estimated_rank).map(|d| d as f64).collect();
    let (rank_mean, rank_std) = mean_std(&ranks);
    let n_truth = truth.freqs_hz.len();

    let mut modes = Vec::with_capacity(n_truth);
    let mut mac_matrix = Vec::with_capacity(n_truth);
    for j in 0..n_truth {
        let paired: Vec<&ModeRecord> = ok
            .iter()
            .flat_map(|r| r.modes.iter())
            .filter(|m| m.paired_truth_index == Some(j))
            .collect();
        let col = |f: fn(&ModeRecord) -> f64| paired.iter().map(|m| f(m)).collect::<Vec<f64>>();
        let (freq_mean, freq_std) = mean_std(&col(|m| m.freq_hz));
        let (damping_mean, damping_std) = mean_std(&col(|m| m.damping_ratio));
        let (mac_mean, _) = mean_std(&col(|m| m.mac.unwrap_or(f64::NAN)));
        modes.push(ModeSummary {
            truth_index: j,
            truth_freq_hz: truth.freqs_hz[j],
            truth_damping_ratio: truth.damping_ratios[j],
            paired_runs: paired.len(),
            freq_mean,
            freq_std,
            freq_rel_error: freq_mean.map(|f| (f - truth.freqs_hz[j]).abs() / truth.freqs_hz[j]),
            damping_mean,
            damping_std,
            mac_mean,
        });
        mac_matrix.push(
            (0..n_truth)
                .map(|l| mean_std(&paired.iter().map(|m| m.mac_to_truth[l]).collect::<Vec<_>>()).0)
                .collect(),
        );
    }
    GroupSummary {
        sensor_count,
        runs: runs.len(),
        ok_runs: ok.len(),
        fit_failures: runs.iter().filter(|r| r.status == RunStatus::FitFailure).count(),
        numerical_failures: runs.iter().filter(|r| r.status == RunStatus::NumericalFailure).count(),
        rank_mean,
        rank_std,
        rank_two_sigma: rank_std.map(|s| 2.0 * s),
        modes,
        mac_matrix,
    }
}

/// Per-sensor-count statistics. Depends on the records only, so it can be
/// recomputed from the raw CSV files.
pub fn summarize(cfg: &ExperimentConfig, truth: &GroundTruthModes, records: &[RunRecord]) -> ExperimentSummary {
    let groups = cfg
        .sensor_counts
        .iter()
        .map(|&m| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.sensor_count == m).collect();
            group_summary(m, &runs, truth)
        })
        .collect();
    ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        system: cfg.system.clone(),
        master_seed: cfg.master_seed,
        repetitions: cfg.repetitions,
        truth: truth.clone(),
        groups,
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, std::io::Error::other(e))
}

/// Write `runs.csv`, `modes.csv` and `timings.csv`. The first two hold no
/// timing data so that repeated runs produce identical bytes.
pub fn write_records(dir: &Path, records: &[RunRecord], n_truth: usize) -> Result<()> {
    let path = dir.join(RUNS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "sensor_count",
        "repetition",
        "seed",
        "sensor_ids",
        "status",
        "estimated_rank",
        "n_modes",
        "elbo_final",
        "iterations",
        "refinements",
        "error",
    ])
    .map_err(csv_err(&path))?;
    for r in records {
        w.write_record([
            r.sensor_count.to_string(),
            r.repetition.to_string(),
            r.seed.to_string(),
            join_ids(&r.sensor_ids),
            r.status.as_str().to_string(),
            opt(r.estimated_rank),
            r.modes.len().to_string(),
            opt(r.elbo_final),
            opt(r.iterations),
            opt(r.refinements),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join(MODES_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    let mut header: Vec<String> = [
        "sensor_count",
        "repetition",
        "mode",
        "freq_hz",
        "damping_ratio",
        "paired_truth_index",
        "mac",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..n_truth).map(|j| format!("mac_truth_{j}")));
    w.write_record(&header).map_err(csv_err(&path))?;
    for r in records {
        for (i, m) in r.modes.iter().enumerate() {
            let mut row = vec![
                r.sensor_count.to_string(),
                r.repetition.to_string(),
                i.to_string(),
                m.freq_hz.to_string(),
                m.damping_ratio.to_string(),
                opt(m.paired_truth_index),
                opt(m.mac),
            ];
            row.extend(m.mac_to_truth.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join(TIMINGS_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["sensor_count", "repetition", "wall_ms"]).map_err(csv_err(&path))?;
    for r in records {
        w.write_record([r.sensor_count.to_string(), r.repetition.to_string(), format!("{:.3}", r.wall_ms)])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

fn read_table(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| OmaError::Data(format!("{}: {e}", path.display())).into())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<Option<T>> {
    let s = rec.get(i).unwrap_or("");
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        OmaError::Data(format!("{} line {line}: bad value `{s}` in column {}", path.display(), i + 1)).into()
    })
}

fn required<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    field(rec, i, path)?.ok_or_else(|| {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        OmaError::Data(format!("{} line {line}: column {} is empty", path.display(), i + 1)).into()
    })
}

/// Read back the records written by [`write_records`]. Wall times are not
/// part of the raw tables and come back as zero.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RUNS_CSV);
    let mut records = Vec::new();
    for rec in read_table(&path)? {
        let ids: String = required(&rec, 3, &path)?;
        let status: String = required(&rec, 4, &path)?;
        records.push(RunRecord {
            sensor_count: required(&rec, 0, &path)?,
            repetition: required(&rec, 1, &path)?,
            seed: required(&rec, 2, &path)?,
            sensor_ids: ids.split(';').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap_or(usize::MAX)).collect(),
            status: RunStatus::parse(&status)
                .ok_or_else(|| OmaError::Data(format!("{}: unknown status `{status}`", path.display())))?,
            estimated_rank: field(&rec, 5, &path)?,
            modes: Vec::new(),
            elbo_final: field(&rec, 7, &path)?,
            iterations: field(&rec, 8, &path)?,
            refinements: field(&rec, 9, &path)?,
            wall_ms: 0.0,
            error: field(&rec, 10, &path)?,
        });
    }
    let path = dir.join(MODES_CSV);
    for rec in read_table(&path)? {
        let (m, rep): (usize, usize) = (required(&rec, 0, &path)?, required(&rec, 1, &path)?);
        let run = records
            .iter_mut()
            .find(|r| r.sensor_count == m && r.repetition == rep)
            .ok_or_else(|| OmaError::Data(format!("{}: mode row for unknown run ({m}, {rep})", path.display())))?;
        run.modes.push(ModeRecord {
            freq_hz: required(&rec, 3, &path)?,
            damping_ratio: required(&rec, 4, &path)?,
            paired_truth_index: field(&rec, 5, &path)?,
            mac: field(&rec, 6, &path)?,
            mac_to_truth: (7..rec.len()).map(|i| required(&rec, i, &path)).collect::<Result<_>>()?,
        });
    }
    Ok(records)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Run every configured repetition and write the raw tables and summary
/// into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| CliError::io(&cfg.output_dir, e))?;
    let truth = analytic_modes(&cfg.system.build()?)?;
    let records = run_all(cfg, &truth);
    write_records(&cfg.output_dir, &records, truth.freqs_hz.len())?;
    let summary = summarize(cfg, &truth, &records);
    write_json(&cfg.output_dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}
