//! Commands behind the `safeland` binary: single missions with optional
//! renders, seeded batches and annotation replays.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use safeland::eval::{aggregate, read_heads, read_poses, replay_annotations, MetricsReport, ReplayFrame};
use safeland::world::{simulate_mission, simulate_mission_with, Criterion, MissionLog, Outcome};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod config;
pub mod render;

pub use config::{Overrides, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COLLISION: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;
pub const EXIT_ABORTED: i32 = 4;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_SOFTWARE: i32 = 70;
pub const EXIT_IO: i32 = 74;

pub const MISSION_LOG: &str = "mission.jsonl";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPLAY_CSV: &str = "replay_frames.csv";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Core(safeland::Error),
}

impl From<safeland::Error> for CliError {
    fn from(e: safeland::Error) -> Self {
        match e {
            safeland::Error::MalformedFile(m) => CliError::Malformed(m),
            safeland::Error::Io(io) => CliError::Io(io),
            safeland::Error::InvalidParameter(m) => CliError::Config(m),
            e @ safeland::Error::PlacementFailure(_) => CliError::Config(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => CliError::Io(io),
                _ => unreachable!(),
            }
        } else {
            CliError::Malformed(e.to_string())
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Malformed(_) => EXIT_DATA,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(_) => EXIT_SOFTWARE,
        }
    }
}

pub fn outcome_exit_code(o: Outcome) -> i32 {
    match o {
        Outcome::LandedSafe => EXIT_OK,
        Outcome::Collision => EXIT_COLLISION,
        Outcome::Timeout => EXIT_TIMEOUT,
        Outcome::Aborted => EXIT_ABORTED,
    }
}

/// One row of the batch summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub outcome: String,
    pub frames: usize,
    pub warning_avg: f64,
    pub danger_avg: f64,
    pub slz_area_avg: f64,
    pub best_iou_avg: f64,
    pub nearest_person_avg: f64,
    pub exec_time_avg: f64,
}

impl SummaryRow {
    pub fn from_log(log: &MissionLog) -> Self {
        let m = aggregate(std::slice::from_ref(log)).expect("one log");
        Self {
            seed: log.header.seed,
            outcome: log.outcome().to_string(),
            frames: log.frames.len(),
            warning_avg: m.warning_avg,
            danger_avg: m.danger_avg,
            slz_area_avg: m.slz_area_avg,
            best_iou_avg: m.best_iou_avg,
            nearest_person_avg: m.nearest_person_avg,
            exec_time_avg: m.exec_time_avg,
        }
    }
}

/// Per-frame row of a replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub frame_id: u64,
    pub heads: usize,
    pub proposals: usize,
    pub target_x: Option<f64>,
    pub target_y: Option<f64>,
    pub target_r: Option<f64>,
    pub warning: Option<u32>,
    pub danger: Option<u32>,
    pub slz_area: Option<f64>,
    pub best_iou: Option<f64>,
    pub nearest_person: Option<f64>,
    pub exec_time: Option<f64>,
}

impl From<&ReplayFrame> for ReplayRow {
    fn from(f: &ReplayFrame) -> Self {
        Self {
            frame_id: f.frame_id,
            heads: f.heads,
            proposals: f.proposals.len(),
            target_x: f.target.map(|t| t.x),
            target_y: f.target.map(|t| t.y),
            target_r: f.target.map(|t| t.r),
            warning: f.metrics.warning,
            danger: f.metrics.danger,
            slz_area: f.metrics.slz_area,
            best_iou: f.metrics.best_iou,
            nearest_person: f.metrics.nearest_person,
            exec_time: f.metrics.exec_time,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`]. A file with only a header yields no rows.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn create(path: PathBuf) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Summary of a finished `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub outcome: Outcome,
    pub frames: usize,
    pub renders: usize,
}

/// Simulates one mission and writes its log, summary and optional renders.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    prepare_out(&cfg.out_dir)?;
    let frames_dir = cfg.out_dir.join(FRAMES_DIR);
    if cfg.render {
        fs::create_dir_all(&frames_dir)?;
    }
    let roi = cfg.scenario.roi();
    let mut renders = 0;
    let log = simulate_mission_with(&cfg.scenario, &cfg.pipeline, |frame, perception| {
        if cfg.render {
            let img = render::frame_ppm(&roi, frame, perception);
            let path = frames_dir.join(format!("frame_{:05}.ppm", frame.index));
            img.write(BufWriter::new(File::create(path)?))?;
            renders += 1;
            if let Some(p) = perception {
                let occ = render::occupancy_pgm(&p.occupancy);
                let path = frames_dir.join(format!("occupancy_{:05}.pgm", frame.index));
                occ.write(BufWriter::new(File::create(path)?))?;
            }
        }
        Ok(())
    })?;
    let mut w = create(cfg.out_dir.join(MISSION_LOG))?;
    log.write_jsonl(&mut w)?;
    w.flush()?;
    write_csv(&cfg.out_dir.join(SUMMARY_CSV), &[SummaryRow::from_log(&log)])?;
    let report = aggregate(std::slice::from_ref(&log))?;
    write_csv(&cfg.out_dir.join(REPORT_CSV), &[report])?;
    Ok(RunOutput {
        outcome: log.outcome(),
        frames: log.frames.len(),
        renders,
    })
}

/// Runs `runs` missions with consecutive seeds starting at the configured
/// seed, in parallel, and writes rows in seed order.
pub fn cmd_batch(cfg: &RunConfig, runs: u64) -> Result<MetricsReport, CliError> {
    cfg.validate()?;
    if runs == 0 {
        return Err(CliError::Config("runs must be at least 1".into()));
    }
    prepare_out(&cfg.out_dir)?;
    let base = cfg.scenario.seed;
    let logs: Vec<MissionLog> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut scenario = cfg.scenario;
            scenario.seed = base.wrapping_add(i);
            simulate_mission(&scenario, &cfg.pipeline)
        })
        .collect::<Result<_, _>>()?;
    let rows: Vec<SummaryRow> = logs.iter().map(SummaryRow::from_log).collect();
    write_csv(&cfg.out_dir.join(SUMMARY_CSV), &rows)?;
    let report = aggregate(&logs)?;
    write_csv(&cfg.out_dir.join(REPORT_CSV), &[report])?;
    Ok(report)
}

/// Replays annotated heads and poses through the perception chain.
pub fn cmd_replay(cfg: &RunConfig, annotations: &Path, poses: &Path) -> Result<MetricsReport, CliError> {
    cfg.validate()?;
    let open = |p: &Path| File::open(p).map(BufReader::new);
    let heads = read_heads(open(annotations)?)?;
    let poses = read_poses(open(poses)?)?;
    prepare_out(&cfg.out_dir)?;
    let criterion = match cfg.scenario.criterion {
        Criterion::Random => return Err(CliError::Config("replay needs a track-based criterion".into())),
        c => c,
    };
    let replay = replay_annotations(&heads, &poses, &cfg.pipeline, criterion, cfg.scenario.record_timing)?;
    let rows: Vec<ReplayRow> = replay.frames.iter().map(ReplayRow::from).collect();
    write_csv(&cfg.out_dir.join(REPLAY_CSV), &rows)?;
    write_csv(&cfg.out_dir.join(REPORT_CSV), &[replay.report])?;
    Ok(replay.report)
}
