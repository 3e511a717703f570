//! Safety metrics over mission logs and annotation replays, plus the text
//! formats for head annotations and camera poses.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Circle, PlaneGrid, CELL_OCCUPIED};
use crate::pipeline::{PerceptionPipeline, PipelineConfig};
use crate::slz::{extract_slz, SlzConfig, SlzProposal};
use crate::tracking::circle_iou;
use crate::world::{Criterion, FrameMetrics, MissionLog, Outcome, Target, TargetSelector};

/// Radius around the target center that counts as danger, meters.
pub const DANGER_RADIUS: f64 = 1.0;
/// Half side of the square personal space around a head, meters.
pub const PERSONAL_SPACE_HALF: f64 = 0.2;
/// Number of ground-truth zones extracted per frame.
pub const GROUND_TRUTH_ZONES: usize = 10;

/// Heads strictly inside the target disk, and heads closer than one meter to
/// its center.
pub fn risk_counts(target: &Circle, heads: &[(f64, f64)]) -> (u32, u32) {
    let mut warning = 0;
    let mut danger = 0;
    for &(x, y) in heads {
        let d = target.center_distance(x, y);
        if d < target.r {
            warning += 1;
        }
        if d < DANGER_RADIUS {
            danger += 1;
        }
    }
    (warning, danger)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthSlz {
    /// Non-increasing radii.
    pub circles: Vec<Circle>,
}

/// Marks the cells covered by each head's 0.4 m square, plus the cell
/// holding the head itself.
pub fn rasterize_personal_space(grid: &mut PlaneGrid, heads: &[(f64, f64)]) {
    let cell = grid.cell_size();
    let (ox, oy) = grid.origin();
    let h = PERSONAL_SPACE_HALF;
    for &(x, y) in heads {
        if let Some((r, c)) = grid.cell_of(x, y) {
            grid.set(r, c, CELL_OCCUPIED);
        }
        // Cell centers inside the half-open square [x - h, x + h) x [y - h, y + h).
        let first = |v: f64, o: f64| ((v - h - o) / cell).ceil().max(0.0);
        let last = |v: f64, o: f64, n: usize| (((v + h - o) / cell).ceil() - 1.0).min(n as f64 - 1.0);
        let (c0, c1) = (first(x, ox), last(x, ox, grid.cols()));
        let (r0, r1) = (first(y, oy), last(y, oy, grid.rows()));
        if c1 < c0 || r1 < r0 {
            continue;
        }
        for r in r0 as usize..=r1 as usize {
            for c in c0 as usize..=c1 as usize {
                grid.set(r, c, CELL_OCCUPIED);
            }
        }
    }
}

/// The ten biggest landing zones of the grid once every head's personal
/// space is occupied. Cells already occupied in `template` stay occupied.
pub fn ground_truth_slz(heads: &[(f64, f64)], template: &PlaneGrid, r0: f64) -> GroundTruthSlz {
    let mut grid = template.clone();
    rasterize_personal_space(&mut grid, heads);
    let cfg = SlzConfig {
        n_p: GROUND_TRUTH_ZONES,
        r0,
    };
    GroundTruthSlz {
        circles: extract_slz(&grid, &cfg, 0).iter().map(SlzProposal::circle).collect(),
    }
}

/// Highest IoU between the target and any ground-truth zone.
pub fn best_iou(target: &Circle, gt: &GroundTruthSlz) -> Result<f64> {
    gt.circles
        .iter()
        .map(|c| circle_iou(target, c))
        .max_by(f64::total_cmp)
        .ok_or(Error::EmptyGroundTruth)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub missions: usize,
    pub frames: usize,
    pub warning_avg: f64,
    pub warning_std: f64,
    pub danger_avg: f64,
    pub danger_std: f64,
    pub slz_area_avg: f64,
    pub best_iou_avg: f64,
    pub nearest_person_avg: f64,
    pub success_rate: f64,
    pub exec_time_avg: f64,
    pub exec_time_max: f64,
    pub exec_time_min: f64,
}

#[derive(Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        if self.n == 0 {
            self.min = v;
            self.max = v;
        }
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Population standard deviation.
    fn std(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0).sqrt()
    }
}

/// Pools per-frame metrics. Undefined values are skipped; a metric with no
/// defined frame reports 0.
pub fn summarize<'a>(frames: impl IntoIterator<Item = &'a FrameMetrics>) -> MetricsReport {
    let mut warning = Moments::default();
    let mut danger = Moments::default();
    let mut area = Moments::default();
    let mut iou = Moments::default();
    let mut nearest = Moments::default();
    let mut exec = Moments::default();
    let mut count = 0;
    for f in frames {
        count += 1;
        let push = |m: &mut Moments, v: Option<f64>| {
            if let Some(v) = v {
                m.push(v)
            }
        };
        push(&mut warning, f.warning.map(f64::from));
        push(&mut danger, f.danger.map(f64::from));
        push(&mut area, f.slz_area);
        push(&mut iou, f.best_iou);
        if f.descending {
            push(&mut nearest, f.nearest_person);
        }
        push(&mut exec, f.exec_time);
    }
    MetricsReport {
        missions: 0,
        frames: count,
        warning_avg: warning.mean(),
        warning_std: warning.std(),
        danger_avg: danger.mean(),
        danger_std: danger.std(),
        slz_area_avg: area.mean(),
        best_iou_avg: iou.mean(),
        nearest_person_avg: nearest.mean(),
        success_rate: 0.0,
        exec_time_avg: exec.mean(),
        exec_time_max: exec.max,
        exec_time_min: exec.min,
    }
}

/// Frame metrics pooled over all missions, with the landing success rate.
pub fn aggregate(logs: &[MissionLog]) -> Result<MetricsReport> {
    if logs.is_empty() {
        return Err(Error::InvalidParameter("no mission logs to aggregate".into()));
    }
    let mut report = summarize(logs.iter().flat_map(|l| l.frames.iter().map(|f| &f.metrics)));
    report.missions = logs.len();
    let safe = logs.iter().filter(|l| l.outcome() == Outcome::LandedSafe).count();
    report.success_rate = safe as f64 / logs.len() as f64;
    Ok(report)
}

/// Annotated heads of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadsFrame {
    pub frame_id: u64,
    /// `(head_id, x, y)` in world meters.
    pub heads: Vec<(u64, f64, f64)>,
}

impl HeadsFrame {
    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.heads.iter().map(|&(_, x, y)| (x, y)).collect()
    }
}

/// World-to-body pose of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub frame_id: u64,
    pub t: [f64; 3],
    /// `[qx, qy, qz, qw]`.
    pub q: [f64; 4],
}

fn body_lines<R: BufRead>(r: R, magic: &str) -> Result<Vec<(usize, String)>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(first)) if first == magic => {}
        Some(Err(e)) => return Err(e.into()),
        _ => return Err(Error::MalformedFile(format!("missing {magic:?} header"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 2, line));
        }
    }
    Ok(out)
}

fn fields<const N: usize>(line: &str, no: usize) -> Result<[&str; N]> {
    let parts: Vec<&str> = line.split(',').map(str::trim).collect();
    parts
        .try_into()
        .map_err(|p: Vec<&str>| Error::MalformedFile(format!("line {no}: expected {N} fields, found {}", p.len())))
}

fn number<T: std::str::FromStr>(s: &str, no: usize) -> Result<T> {
    s.parse().map_err(|_| Error::MalformedFile(format!("line {no}: bad number {s:?}")))
}

fn finite(v: f64, no: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::MalformedFile(format!("line {no}: non-finite value")))
    }
}

/// Parses a `HEADS v1` file. Lines of one frame must be contiguous and frame
/// ids non-decreasing.
pub fn read_heads<R: BufRead>(r: R) -> Result<Vec<HeadsFrame>> {
    let mut frames: Vec<HeadsFrame> = Vec::new();
    for (no, line) in body_lines(r, "HEADS v1")? {
        let [f, h, x, y] = fields::<4>(&line, no)?;
        let frame_id: u64 = number(f, no)?;
        let head = (number(h, no)?, finite(number(x, no)?, no)?, finite(number(y, no)?, no)?);
        match frames.last_mut() {
            Some(last) if last.frame_id == frame_id => last.heads.push(head),
            Some(last) if last.frame_id > frame_id => {
                return Err(Error::MalformedFile(format!(
                    "line {no}: frame {frame_id} after frame {}",
                    last.frame_id
                )))
            }
            _ => frames.push(HeadsFrame {
                frame_id,
                heads: vec![head],
            }),
        }
    }
    Ok(frames)
}

pub fn write_heads<W: Write>(frames: &[HeadsFrame], mut w: W) -> Result<()> {
    writeln!(w, "HEADS v1")?;
    for f in frames {
        for &(id, x, y) in &f.heads {
            writeln!(w, "{},{id},{x},{y}", f.frame_id)?;
        }
    }
    Ok(())
}

/// Parses a `POSE v1` file; frame ids must increase strictly.
pub fn read_poses<R: BufRead>(r: R) -> Result<Vec<PoseRecord>> {
    let mut out: Vec<PoseRecord> = Vec::new();
    for (no, line) in body_lines(r, "POSE v1")? {
        let v = fields::<8>(&line, no)?;
        let frame_id: u64 = number(v[0], no)?;
        if let Some(prev) = out.last() {
            if prev.frame_id >= frame_id {
                return Err(Error::MalformedFile(format!(
                    "line {no}: frame {frame_id} after frame {}",
                    prev.frame_id
                )));
            }
        }
        let mut nums = [0.0; 7];
        for (slot, s) in nums.iter_mut().zip(&v[1..]) {
            *slot = finite(number(s, no)?, no)?;
        }
        let [tx, ty, tz, qx, qy, qz, qw] = nums;
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::MalformedFile(format!("line {no}: quaternion norm {norm}")));
        }
        out.push(PoseRecord {
            frame_id,
            t: [tx, ty, tz],
            q: [qx, qy, qz, qw],
        });
    }
    Ok(out)
}

pub fn write_poses<W: Write>(poses: &[PoseRecord], mut w: W) -> Result<()> {
    writeln!(w, "POSE v1")?;
    for p in poses {
        let [tx, ty, tz] = p.t;
        let [qx, qy, qz, qw] = p.q;
        writeln!(w, "{},{tx},{ty},{tz},{qx},{qy},{qz},{qw}", p.frame_id)?;
    }
    Ok(())
}

/// Ground-truth heads and camera poses of every perceived frame of a mission.
pub fn export_annotations(log: &MissionLog) -> (Vec<HeadsFrame>, Vec<PoseRecord>) {
    let mut heads = Vec::new();
    let mut poses = Vec::new();
    for f in log.frames.iter().filter(|f| f.perceived) {
        if !f.actors.is_empty() {
            heads.push(HeadsFrame {
                frame_id: f.index,
                heads: f.actors.iter().enumerate().map(|(i, a)| (i as u64, a[0], a[1])).collect(),
            });
        }
        poses.push(PoseRecord {
            frame_id: f.index,
            t: f.pose_t,
            q: f.pose_q,
        });
    }
    (heads, poses)
}

/// Per-frame output of an annotation replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFrame {
    pub frame_id: u64,
    pub heads: usize,
    pub proposals: Vec<SlzProposal>,
    pub target: Option<Target>,
    pub metrics: FrameMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub frames: Vec<ReplayFrame>,
    pub report: MetricsReport,
}

/// Runs the perception chain over annotated frames. Frames are those of the
/// pose stream; annotated frames without a pose are rejected.
pub fn replay_annotations(
    heads: &[HeadsFrame],
    poses: &[PoseRecord],
    cfg: &PipelineConfig,
    criterion: Criterion,
    record_timing: bool,
) -> Result<Replay> {
    let mut pipeline = PerceptionPipeline::new(cfg.clone())?;
    let mut selector = TargetSelector::new();
    let mut annotations = heads.iter().peekable();
    let mut frames = Vec::with_capacity(poses.len());
    for pose in poses {
        let mut positions = Vec::new();
        while let Some(a) = annotations.peek() {
            if a.frame_id < pose.frame_id {
                return Err(Error::MalformedFile(format!("annotated frame {} has no pose", a.frame_id)));
            }
            if a.frame_id == pose.frame_id {
                positions.extend(a.positions());
                annotations.next();
            } else {
                break;
            }
        }
        let body = crate::geometry::RigidTransform::from_translation_quaternion(pose.t, pose.q)
            .map_err(|e| Error::MalformedFile(format!("frame {}: {e}", pose.frame_id)))?;
        let wc = cfg.world_to_camera(&body)?;
        let density = pipeline.render_heads(&positions, &wc, pose.frame_id)?;
        let out = pipeline.process(&density, &wc, pose.frame_id)?;
        let target = selector
            .choose(pipeline.tracks(), criterion, 0.1)
            .map(|t| {
                let c = t.circle();
                Target {
                    track: Some(t.id),
                    x: c.x,
                    y: c.y,
                    r: c.r,
                }
            });
        let center = wc.source_origin();
        let mut metrics = FrameMetrics {
            nearest_person: positions
                .iter()
                .map(|&(x, y)| (x - center.x).hypot(y - center.y))
                .min_by(f64::total_cmp),
            descending: true,
            exec_time: Some(if record_timing { out.exec_time } else { 0.0 }),
            ..Default::default()
        };
        if let Some(t) = &target {
            let (w, d) = risk_counts(&t.circle(), &positions);
            metrics.warning = Some(w);
            metrics.danger = Some(d);
            metrics.slz_area = Some(t.circle().area());
            let gt = ground_truth_slz(&positions, &out.visibility, cfg.slz.r0);
            metrics.best_iou = best_iou(&t.circle(), &gt).ok();
        }
        frames.push(ReplayFrame {
            frame_id: pose.frame_id,
            heads: positions.len(),
            proposals: out.proposals,
            target,
            metrics,
        });
    }
    if let Some(a) = annotations.next() {
        return Err(Error::MalformedFile(format!("annotated frame {} has no pose", a.frame_id)));
    }
    let report = summarize(frames.iter().map(|f| &f.metrics));
    Ok(Replay { frames, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Roi;
    use crate::world::{simulate_mission, ScenarioConfig};

    fn free_grid(side: f64) -> PlaneGrid {
        PlaneGrid::covering(&Roi::square(side), 0.1).unwrap()
    }

    /// Largest empty circle by enumerating every free cell as a center.
    fn brute_largest(g: &PlaneGrid) -> f64 {
        let occupied: Vec<(usize, usize)> = (0..g.rows())
            .flat_map(|r| (0..g.cols()).map(move |c| (r, c)))
            .filter(|&(r, c)| !g.is_free(r, c))
            .collect();
        let mut best = 0.0f64;
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let d = occupied
                    .iter()
                    .map(|&(i, j)| ((r as f64 - i as f64).powi(2) + (c as f64 - j as f64).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                best = best.max(d);
            }
        }
        best * g.cell_size()
    }

    #[test]
    fn risk_examples() {
        let t = Circle::new(0.0, 0.0, 3.0);
        assert_eq!(risk_counts(&t, &[]), (0, 0));
        assert_eq!(risk_counts(&t, &[(0.0, 0.0)]), (1, 1));
        assert_eq!(risk_counts(&t, &[(2.0, 0.0)]), (1, 0));
        assert_eq!(risk_counts(&t, &[(3.0, 0.0), (0.0, 0.5), (5.0, 5.0)]), (1, 1));
    }

    #[test]
    fn personal_space_covers_sixteen_cells() {
        let mut g = free_grid(10.0);
        rasterize_personal_space(&mut g, &[(5.0, 5.0)]);
        // Cell centers at 4.85, 4.95, 5.05, 5.15 on each axis.
        assert_eq!(g.occupied_count(), 16);
        let mut h = free_grid(10.0);
        rasterize_personal_space(&mut h, &[(5.03, 4.98)]);
        assert_eq!(h.occupied_count(), 16);
    }

    #[test]
    fn empty_scene_ground_truth_spans_grid() {
        let g = free_grid(20.0);
        let gt = ground_truth_slz(&[], &g, 1.0);
        assert!((gt.circles[0].r - 10.0).abs() < 0.11);
        assert!((gt.circles[0].x - 10.0).abs() < 0.11 && (gt.circles[0].y - 10.0).abs() < 0.11);
        for w in gt.circles.windows(2) {
            assert!(w[1].r <= w[0].r);
        }
    }

    #[test]
    fn single_central_head_pushes_zone_to_a_corner() {
        let mut g = free_grid(20.0);
        // Outside the grid counts as occupied; model it with a border ring.
        for i in 0..g.rows() {
            g.set(i, 0, CELL_OCCUPIED);
            g.set(i, g.cols() - 1, CELL_OCCUPIED);
            g.set(0, i, CELL_OCCUPIED);
            g.set(g.rows() - 1, i, CELL_OCCUPIED);
        }
        let gt = ground_truth_slz(&[(10.0, 10.0)], &g, 1.0);
        let mut oracle = g.clone();
        rasterize_personal_space(&mut oracle, &[(10.0, 10.0)]);
        let first = gt.circles[0];
        assert!((first.r - brute_largest(&oracle)).abs() < 1e-9);
        assert!((first.x - 10.0).abs() > 3.0 && (first.y - 10.0).abs() > 3.0);
        assert!(first.center_distance(10.0, 10.0) >= first.r);
    }

    #[test]
    fn wall_of_heads_yields_two_dominant_zones() {
        let roi = Roi { min_x: 0.0, min_y: 0.0, max_x: 20.0, max_y: 10.0 };
        let mut g = PlaneGrid::covering(&roi, 0.1).unwrap();
        let (rows, cols) = (g.rows(), g.cols());
        for i in 0..rows {
            g.set(i, 0, CELL_OCCUPIED);
            g.set(i, cols - 1, CELL_OCCUPIED);
        }
        for j in 0..cols {
            g.set(0, j, CELL_OCCUPIED);
            g.set(rows - 1, j, CELL_OCCUPIED);
        }
        let wall: Vec<(f64, f64)> = (0..=25).map(|i| (10.0, i as f64 * 0.4)).collect();
        let gt = ground_truth_slz(&wall, &g, 1.0);
        let (a, b) = (gt.circles[0], gt.circles[1]);
        assert!((a.x - 10.0) * (b.x - 10.0) < 0.0, "{a:?} {b:?}");
        let mut oracle = g.clone();
        rasterize_personal_space(&mut oracle, &wall);
        assert!((a.r - brute_largest(&oracle)).abs() < 1e-9);
        assert!((a.r - b.r).abs() < 0.11);
        assert_eq!(gt.circles.len(), 2);
    }

    #[test]
    fn iou_examples() {
        let c = Circle::new(1.0, 2.0, 3.0);
        let gt = GroundTruthSlz { circles: vec![Circle::new(20.0, 0.0, 1.0), c] };
        assert_eq!(best_iou(&c, &gt).unwrap(), 1.0);
        assert_eq!(best_iou(&Circle::new(50.0, 50.0, 1.0), &gt).unwrap(), 0.0);
        assert!((best_iou(&Circle::new(1.0, 2.0, 1.5), &gt).unwrap() - 0.25).abs() < 1e-12);
        assert!(matches!(best_iou(&c, &GroundTruthSlz::default()), Err(Error::EmptyGroundTruth)));
        let mut prev = 1.0;
        for k in 1..10 {
            let v = best_iou(&Circle::new(1.0, 2.0, 3.0 - 0.3 * k as f64), &gt).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn summary_skips_undefined_values() {
        let frames = [
            FrameMetrics {
                warning: Some(2),
                danger: Some(1),
                slz_area: Some(4.0),
                ..Default::default()
            },
            FrameMetrics {
                warning: Some(0),
                danger: Some(0),
                slz_area: Some(2.0),
                best_iou: Some(0.5),
                ..Default::default()
            },
            FrameMetrics::default(),
        ];
        let r = summarize(&frames);
        assert_eq!(r.frames, 3);
        assert_eq!(r.warning_avg, 1.0);
        assert_eq!(r.warning_std, 1.0);
        assert_eq!(r.danger_avg, 0.5);
        assert_eq!(r.slz_area_avg, 3.0);
        assert_eq!(r.best_iou_avg, 0.5);
        assert_eq!(r.nearest_person_avg, 0.0);
    }

    #[test]
    fn aggregate_success_rates() {
        let base = ScenarioConfig {
            n_actors_min: 0,
            n_actors_max: 0,
            ..Default::default()
        };
        let log = simulate_mission(&base, &PipelineConfig::default()).unwrap();
        let single = aggregate(std::slice::from_ref(&log)).unwrap();
        assert_eq!(single.success_rate, 1.0);
        assert_eq!((single.warning_avg, single.danger_avg), (0.0, 0.0));
        let own = summarize(log.frames.iter().map(|f| &f.metrics));
        assert_eq!(single.warning_avg, own.warning_avg);
        assert_eq!(single.slz_area_avg, own.slz_area_avg);
        let mut crashed = log.clone();
        crashed.end.outcome = Outcome::Collision;
        assert_eq!(aggregate(&[log, crashed]).unwrap().success_rate, 0.5);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn heads_format_round_trip_and_errors() {
        let frames = vec![
            HeadsFrame {
                frame_id: 0,
                heads: vec![(0, 1.5, 2.25), (1, 0.1, 1e-7)],
            },
            HeadsFrame {
                frame_id: 3,
                heads: vec![(0, -4.0, 10.0 / 3.0)],
            },
        ];
        let mut a = Vec::new();
        write_heads(&frames, &mut a).unwrap();
        let back = read_heads(a.as_slice()).unwrap();
        assert_eq!(back, frames);
        let mut b = Vec::new();
        write_heads(&back, &mut b).unwrap();
        assert_eq!(a, b);

        let bad = b"HEADS v1\n2,0,1,1\n1,0,1,1\n";
        assert!(matches!(read_heads(&bad[..]), Err(Error::MalformedFile(_))));
        assert!(matches!(read_heads(&b"HEADS v2\n"[..]), Err(Error::MalformedFile(_))));
        assert!(matches!(read_heads(&b"HEADS v1\n1,0,x,1\n"[..]), Err(Error::MalformedFile(_))));
        assert!(read_heads(&b"HEADS v1\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn pose_format_round_trip_and_errors() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let poses = vec![
            PoseRecord { frame_id: 1, t: [0.1, -2.0, -10.0], q: [0.0, 0.0, 0.0, 1.0] },
            PoseRecord { frame_id: 2, t: [1.0 / 3.0, 0.0, -9.9], q: [0.0, 0.0, h, h] },
        ];
        let mut a = Vec::new();
        write_poses(&poses, &mut a).unwrap();
        let back = read_poses(a.as_slice()).unwrap();
        assert_eq!(back, poses);
        let mut b = Vec::new();
        write_poses(&back, &mut b).unwrap();
        assert_eq!(a, b);
        let repeat = b"POSE v1\n1,0,0,0,0,0,0,1\n1,0,0,0,0,0,0,1\n";
        assert!(matches!(read_poses(&repeat[..]), Err(Error::MalformedFile(_))));
        let skew = b"POSE v1\n1,0,0,0,0,0,0,2\n";
        assert!(matches!(read_poses(&skew[..]), Err(Error::MalformedFile(_))));
    }

    fn hover_poses(n: u64) -> Vec<PoseRecord> {
        (0..n)
            .map(|i| PoseRecord { frame_id: i, t: [-15.0, -15.0, -10.0], q: [0.0, 0.0, 0.0, 1.0] })
            .collect()
    }

    #[test]
    fn replay_of_empty_scene() {
        let cfg = PipelineConfig { geofence: Some(Roi::square(30.0)), ..Default::default() };
        let out = replay_annotations(&[], &hover_poses(6), &cfg, Criterion::Biggest, false).unwrap();
        assert_eq!(out.frames.len(), 6);
        assert_eq!(out.report.warning_avg, 0.0);
        assert!(out.report.best_iou_avg > 0.9, "{:?}", out.report);
    }

    #[test]
    fn replay_with_single_head() {
        let cfg = PipelineConfig { geofence: Some(Roi::square(30.0)), ..Default::default() };
        let heads: Vec<HeadsFrame> = (0..6).map(|i| HeadsFrame { frame_id: i, heads: vec![(0, 15.0, 15.0)] }).collect();
        let out = replay_annotations(&heads, &hover_poses(6), &cfg, Criterion::Biggest, false).unwrap();
        for f in &out.frames {
            if let Some(t) = f.target {
                if t.circle().center_distance(15.0, 15.0) >= 1.0 {
                    assert_eq!(f.metrics.danger, Some(0));
                }
            }
        }
        let orphan = [HeadsFrame { frame_id: 9, heads: vec![(0, 1.0, 1.0)] }];
        assert!(matches!(
            replay_annotations(&orphan, &hover_poses(3), &cfg, Criterion::Biggest, false),
            Err(Error::MalformedFile(_))
        ));
    }

    #[test]
    fn mission_replay_reproduces_proposals() {
        let scenario = ScenarioConfig { seed: 21, frac_moving: 0.2, ..Default::default() };
        let pcfg = PipelineConfig { noise: crate::density::OracleNoiseConfig { fp_rate: 0.5, seed: 4, ..Default::default() }, ..Default::default() };
        let log = simulate_mission(&scenario, &pcfg).unwrap();
        let (heads, poses) = export_annotations(&log);
        let mut text_h = Vec::new();
        let mut text_p = Vec::new();
        write_heads(&heads, &mut text_h).unwrap();
        write_poses(&poses, &mut text_p).unwrap();
        let heads = read_heads(text_h.as_slice()).unwrap();
        let poses = read_poses(text_p.as_slice()).unwrap();
        let replay_cfg = PipelineConfig {
            geofence: Some(scenario.roi()),
            noise: crate::density::OracleNoiseConfig { seed: log.header.noise_seed, ..pcfg.noise },
            ..pcfg
        };
        let replay = replay_annotations(&heads, &poses, &replay_cfg, Criterion::Biggest, false).unwrap();
        let perceived: Vec<_> = log.frames.iter().filter(|f| f.perceived).collect();
        assert_eq!(replay.frames.len(), perceived.len());
        for (r, f) in replay.frames.iter().zip(perceived) {
            assert_eq!(r.frame_id, f.index);
            assert_eq!(r.proposals, f.proposals);
        }
    }
}
