//! Seeded 2-D crowd world: random-walk actors, a point-mass drone with a
//! mounted camera, the landing policy and the mission loop that ties them to
//! the perception pipeline.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{render_oracle_density, DensityMap, OracleNoiseConfig};
use crate::error::{Error, Result};
use crate::eval::{best_iou, ground_truth_slz, risk_counts};
use crate::geometry::{compose, CameraModel, Circle, HeadPlane, RigidTransform, Roi};
use crate::pipeline::{heads_to_pixels, mix_seed, Perception, PerceptionPipeline, PipelineConfig};
use crate::slz::SlzProposal;
use crate::tracking::TrackState;

/// Random-walk displacement per axis and step, meters.
pub const ACTOR_STEP: f64 = 0.2;
/// Actor update period, seconds.
pub const ACTOR_PERIOD: f64 = 0.1;
pub const MAX_PLACEMENT_REJECTIONS: usize = 100_000;

/// Stream tag for the random-touchdown baseline.
const BASELINE_STREAM: u64 = 0xBA5E_11AE;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub x: f64,
    pub y: f64,
    pub moving: bool,
    /// Collision radius, meters.
    pub body_radius: f64,
}

impl Actor {
    pub fn new(x: f64, y: f64, moving: bool, body_radius: f64) -> Result<Self> {
        if !(body_radius > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "actor at ({x}, {y}) with body radius {body_radius}"
            )));
        }
        Ok(Self {
            x,
            y,
            moving,
            body_radius,
        })
    }
}

/// Moves a walking actor by `0.2 * alpha` on each axis, alpha uniform on
/// {-1, 0, 1}, clamped to `roi`. Static actors are returned unchanged and
/// consume no randomness.
pub fn random_walk_step<R: Rng + ?Sized>(a: &Actor, rng: &mut R, roi: &Roi) -> Actor {
    if !a.moving {
        return *a;
    }
    let ax = rng.random_range(-1i32..=1) as f64;
    let ay = rng.random_range(-1i32..=1) as f64;
    let (x, y) = roi.clamp(a.x + ACTOR_STEP * ax, a.y + ACTOR_STEP * ay);
    Actor { x, y, ..*a }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    /// World position, meters; z is altitude above ground.
    pub position: [f64; 3],
    pub yaw: f64,
    pub speed_xy: f64,
    pub speed_z: f64,
    /// Camera-to-body transform.
    pub camera_mount: RigidTransform,
}

impl DroneState {
    /// World-to-body pose as a translation and a `[qx, qy, qz, qw]` quaternion.
    pub fn pose(&self) -> ([f64; 3], [f64; 4]) {
        let (s, c) = (-self.yaw / 2.0).sin_cos();
        let q = [0.0, 0.0, s, c];
        let (sy, cy) = (-self.yaw).sin_cos();
        let [x, y, z] = self.position;
        let t = [-(cy * x - sy * y), -(sy * x + cy * y), -z];
        (t, q)
    }

    pub fn world_to_body(&self) -> Result<RigidTransform> {
        let (t, q) = self.pose();
        RigidTransform::from_translation_quaternion(t, q)
    }

    pub fn world_to_camera(&self) -> Result<RigidTransform> {
        Ok(compose(&self.camera_mount.inverse(), &self.world_to_body()?))
    }

    pub fn horizontal_distance(&self, x: f64, y: f64) -> f64 {
        (self.position[0] - x).hypot(self.position[1] - y)
    }

    /// Advances one tick toward `cmd` at the speed limits.
    pub fn advance(&mut self, cmd: &Command, dt: f64, ceiling: f64) {
        let [px, py, pz] = self.position;
        match *cmd {
            Command::GotoWaypoint { x, y, z } => {
                let (dx, dy) = (x - px, y - py);
                let d = dx.hypot(dy);
                let reach = self.speed_xy * dt;
                if d <= reach {
                    self.position[0] = x;
                    self.position[1] = y;
                } else {
                    self.position[0] = px + dx / d * reach;
                    self.position[1] = py + dy / d * reach;
                }
                let climb = self.speed_z * dt;
                self.position[2] = if (z - pz).abs() <= climb { z } else { pz + climb * (z - pz).signum() };
            }
            Command::Ascend => self.position[2] = (pz + self.speed_z * dt).min(ceiling.max(pz)),
            Command::Hold => {}
            Command::Land => self.position[2] = (pz - self.speed_z * dt).max(0.0),
        }
        self.position[2] = self.position[2].max(0.0);
    }
}

/// How the landing target is chosen among live tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Biggest,
    Oldest,
    /// Baseline: a uniformly random touchdown point, no perception.
    Random,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Biggest => "biggest",
            Criterion::Oldest => "oldest",
            Criterion::Random => "random",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biggest" => Ok(Criterion::Biggest),
            "oldest" => Ok(Criterion::Oldest),
            "random" => Ok(Criterion::Random),
            other => Err(Error::InvalidParameter(format!("unknown criterion {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Approach altitude above ground, meters.
    pub waypoint_altitude: f64,
    /// Horizontal tolerance for the landing command, meters.
    pub land_radius: f64,
    /// Highest altitude reached while searching, meters.
    pub ceiling: f64,
    /// Relative margin a challenger needs to replace the current target.
    pub hysteresis: f64,
    /// Waypoints are clamped into this region when set.
    #[serde(skip)]
    pub bounds: Option<Roi>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            waypoint_altitude: 2.0,
            land_radius: 0.5,
            ceiling: 20.0,
            hysteresis: 0.1,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    GotoWaypoint { x: f64, y: f64, z: f64 },
    Land,
    Ascend,
    Hold,
}

/// One decision of the landing flowchart.
pub fn landing_policy_step(drone: &DroneState, target: Option<&Circle>, cfg: &PolicyConfig) -> Command {
    let Some(t) = target else {
        return if drone.position[2] < cfg.ceiling {
            Command::Ascend
        } else {
            Command::Hold
        };
    };
    let (x, y) = match &cfg.bounds {
        Some(b) => b.clamp(t.x, t.y),
        None => (t.x, t.y),
    };
    if drone.position[2] <= cfg.waypoint_altitude + 1e-9 && drone.horizontal_distance(x, y) <= cfg.land_radius {
        Command::Land
    } else {
        Command::GotoWaypoint {
            x,
            y,
            z: cfg.waypoint_altitude,
        }
    }
}

fn criterion_value(t: &TrackState, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Biggest => t.circle().r,
        Criterion::Oldest => t.age as f64,
        Criterion::Random => 0.0,
    }
}

/// Best track by `criterion`, ties to the lower id. `Random` never picks a track.
pub fn select_target(tracks: &[TrackState], criterion: Criterion) -> Option<&TrackState> {
    if criterion == Criterion::Random {
        return None;
    }
    let mut best: Option<&TrackState> = None;
    for t in tracks {
        best = match best {
            None => Some(t),
            Some(b) => {
                let (vt, vb) = (criterion_value(t, criterion), criterion_value(b, criterion));
                if vt > vb || (vt == vb && t.id < b.id) {
                    Some(t)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Target choice with hysteresis and a list of rejected tracks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetSelector {
    incumbent: Option<u64>,
    rejected: HashSet<u64>,
}

impl TargetSelector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reject(&mut self, id: u64) {
        self.rejected.insert(id);
        if self.incumbent == Some(id) {
            self.incumbent = None;
        }
    }

    pub fn choose(&mut self, tracks: &[TrackState], criterion: Criterion, hysteresis: f64) -> Option<TrackState> {
        let allowed: Vec<TrackState> = tracks.iter().filter(|t| !self.rejected.contains(&t.id)).cloned().collect();
        let best = select_target(&allowed, criterion)?.clone();
        let current = self.incumbent.and_then(|id| allowed.iter().find(|t| t.id == id));
        let chosen = match current {
            Some(cur) if criterion_value(&best, criterion) <= criterion_value(cur, criterion) * (1.0 + hysteresis) => {
                cur.clone()
            }
            _ => best,
        };
        self.incumbent = Some(chosen.id);
        Some(chosen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Side of the square region of interest, meters.
    pub roi_side: f64,
    /// Actor count is drawn uniformly from this inclusive range.
    pub n_actors_min: usize,
    pub n_actors_max: usize,
    pub frac_moving: f64,
    pub seed: u64,
    pub dt_sim: f64,
    pub criterion: Criterion,
    pub max_mission_time: f64,
    pub body_radius: f64,
    pub drone_radius: f64,
    pub start_altitude: f64,
    pub speed_xy: f64,
    pub speed_z: f64,
    /// Seconds spent holding at the ceiling without a target before giving up.
    pub abort_after: f64,
    /// Record wall-clock perception time per frame. Off keeps logs reproducible.
    pub record_timing: bool,
    pub policy: PolicyConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            roi_side: 30.0,
            n_actors_min: 80,
            n_actors_max: 120,
            frac_moving: 0.0,
            seed: 0,
            dt_sim: 0.1,
            criterion: Criterion::Biggest,
            max_mission_time: 120.0,
            body_radius: 0.3,
            drone_radius: 0.25,
            start_altitude: 10.0,
            speed_xy: 2.0,
            speed_z: 1.0,
            abort_after: 10.0,
            record_timing: false,
            policy: PolicyConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.roi_side > 0.0 && self.roi_side.is_finite(), "roi_side must be positive"),
            (self.n_actors_min <= self.n_actors_max, "n_actors_min exceeds n_actors_max"),
            ((0.0..=1.0).contains(&self.frac_moving), "frac_moving must lie in [0, 1]"),
            (self.dt_sim > 0.0 && self.dt_sim.is_finite(), "dt_sim must be positive"),
            (self.max_mission_time > 0.0, "max_mission_time must be positive"),
            (self.body_radius > 0.0 && self.drone_radius > 0.0, "radii must be positive"),
            (self.start_altitude > 0.0, "start_altitude must be positive"),
            (self.speed_xy > 0.0 && self.speed_z > 0.0, "speeds must be positive"),
            (self.abort_after > 0.0, "abort_after must be positive"),
            (
                self.policy.waypoint_altitude > 0.0 && self.policy.land_radius >= 0.0,
                "policy altitudes must be positive",
            ),
            (self.policy.ceiling >= self.policy.waypoint_altitude, "ceiling below waypoint altitude"),
            (self.policy.hysteresis >= 0.0, "hysteresis must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidParameter((*msg).into())),
            None => Ok(()),
        }
    }

    pub fn roi(&self) -> Roi {
        Roi::square(self.roi_side)
    }
}

/// Mutable simulation state of one mission.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub roi: Roi,
    pub actors: Vec<Actor>,
    pub drone: DroneState,
    /// Actor random-walk steps taken so far.
    pub actor_steps: u64,
    rng: ChaCha8Rng,
}

impl WorldState {
    pub fn heads(&self) -> Vec<(f64, f64)> {
        self.actors.iter().map(|a| (a.x, a.y)).collect()
    }

    /// Steps every walking actor once.
    pub fn step_actors(&mut self) {
        let roi = self.roi;
        for a in &mut self.actors {
            *a = random_walk_step(a, &mut self.rng, &roi);
        }
        self.actor_steps += 1;
    }

    /// Steps actors until they are current with simulation time `t`.
    pub fn catch_up(&mut self, t: f64) {
        let due = ((t + 1e-9) / ACTOR_PERIOD).floor() as u64;
        while self.actor_steps < due {
            self.step_actors();
        }
    }
}

/// Places the crowd and the drone for `cfg.seed`.
pub fn spawn_scenario(cfg: &ScenarioConfig, camera_mount: RigidTransform) -> Result<WorldState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let roi = cfg.roi();
    let n = rng.random_range(cfg.n_actors_min..=cfg.n_actors_max);
    let min_sq = (2.0 * cfg.body_radius).powi(2);
    let mut actors: Vec<Actor> = Vec::with_capacity(n);
    let mut rejections = 0usize;
    while actors.len() < n {
        let x = rng.random_range(roi.min_x..=roi.max_x);
        let y = rng.random_range(roi.min_y..=roi.max_y);
        if actors.iter().any(|a| (a.x - x).powi(2) + (a.y - y).powi(2) < min_sq) {
            rejections += 1;
            if rejections >= MAX_PLACEMENT_REJECTIONS {
                return Err(Error::PlacementFailure(rejections));
            }
            continue;
        }
        actors.push(Actor::new(x, y, false, cfg.body_radius)?);
    }
    let n_moving = (cfg.frac_moving * n as f64 + 1e-9).floor() as usize;
    for i in rand::seq::index::sample(&mut rng, n, n_moving.min(n)) {
        actors[i].moving = true;
    }
    let drone = DroneState {
        position: [
            rng.random_range(roi.min_x..=roi.max_x),
            rng.random_range(roi.min_y..=roi.max_y),
            cfg.start_altitude,
        ],
        yaw: 0.0,
        speed_xy: cfg.speed_xy,
        speed_z: cfg.speed_z,
        camera_mount,
    };
    Ok(WorldState {
        roi,
        actors,
        drone,
        actor_steps: 0,
        rng,
    })
}

/// Oracle density of the actors' heads as seen from the drone camera, and the
/// world-to-camera transform used.
pub fn observe(
    world: &WorldState,
    drone: &DroneState,
    cam: &CameraModel,
    plane: &HeadPlane,
    noise: &OracleNoiseConfig,
) -> Result<(DensityMap, RigidTransform)> {
    if drone.position[2] <= plane.height() {
        return Err(Error::DegenerateView(format!(
            "drone at {} m is not above the head plane",
            drone.position[2]
        )));
    }
    let wc = drone.world_to_camera()?;
    let pixels = heads_to_pixels(&world.heads(), &wc, cam, plane);
    let density = render_oracle_density(&pixels, noise, cam.width, cam.height)?;
    Ok((density, wc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    LandedSafe,
    Collision,
    Timeout,
    Aborted,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::LandedSafe => "landed_safe",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
            Outcome::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSnapshot {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub age: u32,
    pub misses: u32,
}

impl From<&TrackState> for TrackSnapshot {
    fn from(t: &TrackState) -> Self {
        let c = t.circle();
        Self {
            id: t.id,
            x: c.x,
            y: c.y,
            r: c.r,
            age: t.age,
            misses: t.misses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// Track id; `None` for the random baseline.
    pub track: Option<u64>,
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Target {
    pub fn circle(&self) -> Circle {
        Circle::new(self.x, self.y, self.r)
    }
}

/// Metrics of one frame; `None` where the quantity is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub warning: Option<u32>,
    pub danger: Option<u32>,
    pub slz_area: Option<f64>,
    pub best_iou: Option<f64>,
    pub nearest_person: Option<f64>,
    /// Drone below its start altitude.
    pub descending: bool,
    pub exec_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u64,
    pub time: f64,
    pub drone: [f64; 3],
    pub yaw: f64,
    /// World-to-body translation and `[qx, qy, qz, qw]` rotation.
    pub pose_t: [f64; 3],
    pub pose_q: [f64; 4],
    pub actors: Vec<[f64; 2]>,
    pub perceived: bool,
    pub proposals: Vec<SlzProposal>,
    pub tracks: Vec<TrackSnapshot>,
    pub target: Option<Target>,
    pub command: Command,
    pub metrics: FrameMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionHeader {
    pub seed: u64,
    pub criterion: Criterion,
    pub roi_side: f64,
    pub n_actors: usize,
    pub n_moving: usize,
    pub start_altitude: f64,
    pub dt_sim: f64,
    /// Oracle noise seed the pipeline ran with.
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionEnd {
    pub outcome: Outcome,
    pub time: f64,
    pub touchdown: Option<[f64; 2]>,
}

/// Full record of one mission.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    pub header: MissionHeader,
    pub frames: Vec<FrameRecord>,
    pub end: MissionEnd,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Header(MissionHeader),
    Frame(Box<FrameRecord>),
    End(MissionEnd),
}

impl MissionLog {
    pub fn outcome(&self) -> Outcome {
        self.end.outcome
    }

    /// Writes one JSON record per line: header, frames, end.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = |rec: &LogLine| -> Result<()> {
            serde_json::to_writer(&mut w, rec).map_err(|e| Error::Io(e.into()))?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&LogLine::Header(self.header.clone()))?;
        for f in &self.frames {
            line(&LogLine::Frame(Box::new(f.clone())))?;
        }
        line(&LogLine::End(self.end.clone()))?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut frames: Vec<FrameRecord> = Vec::new();
        let mut end = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogLine = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedFile(format!("line {}: {e}", n + 1)))?;
            match rec {
                LogLine::Header(h) if header.is_none() && frames.is_empty() => header = Some(h),
                LogLine::Frame(f) if header.is_some() && end.is_none() => {
                    if frames.last().is_some_and(|p| p.index >= f.index) {
                        return Err(Error::MalformedFile(format!("line {}: frame out of order", n + 1)));
                    }
                    frames.push(*f)
                }
                LogLine::End(e) if header.is_some() && end.is_none() => end = Some(e),
                _ => return Err(Error::MalformedFile(format!("line {}: unexpected record", n + 1))),
            }
        }
        match (header, end) {
            (Some(header), Some(end)) => Ok(Self { header, frames, end }),
            _ => Err(Error::MalformedFile("log lacks a header or an end record".into())),
        }
    }
}

fn disk_is_clear(p: &Perception, c: &Circle) -> bool {
    p.plane
        .cells_in_disk(c)
        .into_iter()
        .all(|(r, col)| p.plane.is_free(r, col) || !p.visibility.is_free(r, col))
}

/// Runs one mission to its terminal outcome.
pub fn simulate_mission(cfg: &ScenarioConfig, pipeline: &PipelineConfig) -> Result<MissionLog> {
    simulate_mission_with(cfg, pipeline, |_, _| Ok(()))
}

/// Like [`simulate_mission`], calling `observer` after every frame with the
/// frame record and that frame's perception output, if any.
pub fn simulate_mission_with<F>(cfg: &ScenarioConfig, pipeline: &PipelineConfig, mut observer: F) -> Result<MissionLog>
where
    F: FnMut(&FrameRecord, Option<&Perception>) -> Result<()>,
{
    cfg.validate()?;
    let mut pcfg = pipeline.clone();
    pcfg.geofence = Some(cfg.roi());
    pcfg.noise.seed = mix_seed(pipeline.noise.seed, cfg.seed);
    let mut perception = PerceptionPipeline::new(pcfg)?;
    let pcfg = perception.config().clone();
    let mut world = spawn_scenario(cfg, pcfg.camera_mount.transform()?)?;
    let mut policy = cfg.policy;
    policy.bounds = Some(world.roi);

    let header = MissionHeader {
        seed: cfg.seed,
        criterion: cfg.criterion,
        roi_side: cfg.roi_side,
        n_actors: world.actors.len(),
        n_moving: world.actors.iter().filter(|a| a.moving).count(),
        start_altitude: cfg.start_altitude,
        dt_sim: cfg.dt_sim,
        noise_seed: pcfg.noise.seed,
    };

    let baseline = (cfg.criterion == Criterion::Random).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, BASELINE_STREAM));
        let roi = world.roi;
        Target {
            track: None,
            x: rng.random_range(roi.min_x..=roi.max_x),
            y: rng.random_range(roi.min_y..=roi.max_y),
            r: pcfg.slz.r0,
        }
    });

    let mut selector = TargetSelector::new();
    let mut command = Command::Hold;
    let mut landing_target: Option<Target> = None;
    let mut holding_since: Option<f64> = None;
    let mut frames = Vec::new();
    let mut k: u64 = 0;
    let end = loop {
        let time = k as f64 * cfg.dt_sim;
        if k > 0 {
            world.catch_up(time);
            world.drone.advance(&command, cfg.dt_sim, policy.ceiling);
        }
        let heads = world.heads();
        let drone = world.drone;
        let (pose_t, pose_q) = drone.pose();

        let mut out: Option<Perception> = None;
        let mut target: Option<Target>;
        let touched_down = landing_target.is_some() && drone.position[2] <= 0.0;
        if landing_target.is_some() {
            target = landing_target;
        } else if let Some(b) = baseline {
            target = Some(b);
        } else {
            if drone.position[2] > pcfg.head_plane.height() + pcfg.cell_size {
                let (density, wc) = observe(
                    &world,
                    &drone,
                    &pcfg.camera,
                    &pcfg.head_plane,
                    &pcfg.frame_noise(k),
                )?;
                out = Some(perception.process(&density, &wc, k)?);
            } else {
                perception.coast();
            }
            target = selector
                .choose(perception.tracks(), cfg.criterion, policy.hysteresis)
                .map(|t| Target {
                    track: Some(t.id),
                    x: t.circle().x,
                    y: t.circle().y,
                    r: t.circle().r,
                });
        }

        if !touched_down {
            command = if landing_target.is_some() {
                Command::Land
            } else {
                loop {
                    let cmd = landing_policy_step(&drone, target.as_ref().map(Target::circle).as_ref(), &policy);
                    let refuse = match (cmd, &target, &out) {
                        (Command::Land, Some(t), Some(p)) => !disk_is_clear(p, &t.circle()),
                        _ => false,
                    };
                    if !refuse {
                        break cmd;
                    }
                    let id = target.and_then(|t| t.track).expect("perceived targets come from tracks");
                    selector.reject(id);
                    target = selector
                        .choose(perception.tracks(), cfg.criterion, policy.hysteresis)
                        .map(|t| Target {
                            track: Some(t.id),
                            x: t.circle().x,
                            y: t.circle().y,
                            r: t.circle().r,
                        });
                }
            };
            if command == Command::Land {
                landing_target = target;
            }
        }

        let mut metrics = FrameMetrics {
            nearest_person: heads
                .iter()
                .map(|&(x, y)| drone.horizontal_distance(x, y))
                .min_by(f64::total_cmp),
            descending: drone.position[2] < cfg.start_altitude,
            ..Default::default()
        };
        if let Some(t) = &target {
            let (w, d) = risk_counts(&t.circle(), &heads);
            metrics.warning = Some(w);
            metrics.danger = Some(d);
            metrics.slz_area = Some(t.circle().area());
        }
        if let Some(p) = &out {
            metrics.exec_time = Some(if cfg.record_timing { p.exec_time } else { 0.0 });
            if let Some(t) = &target {
                let gt = ground_truth_slz(&heads, &p.visibility, pcfg.slz.r0);
                metrics.best_iou = best_iou(&t.circle(), &gt).ok();
            }
        }

        let record = FrameRecord {
            index: k,
            time,
            drone: drone.position,
            yaw: drone.yaw,
            pose_t,
            pose_q,
            actors: heads.iter().map(|&(x, y)| [x, y]).collect(),
            perceived: out.is_some(),
            proposals: out.as_ref().map(|p| p.proposals.clone()).unwrap_or_default(),
            tracks: perception.tracks().iter().map(TrackSnapshot::from).collect(),
            target,
            command,
            metrics,
        };
        observer(&record, out.as_ref())?;
        frames.push(record);

        if touched_down {
            let (x, y) = (drone.position[0], drone.position[1]);
            let reach = cfg.body_radius + cfg.drone_radius;
            let hit = world.actors.iter().any(|a| (a.x - x).hypot(a.y - y) < reach);
            break MissionEnd {
                outcome: if hit { Outcome::Collision } else { Outcome::LandedSafe },
                time,
                touchdown: Some([x, y]),
            };
        }
        if target.is_none() && command == Command::Hold {
            let since = *holding_since.get_or_insert(time);
            if time - since > cfg.abort_after {
                break MissionEnd {
                    outcome: Outcome::Aborted,
                    time,
                    touchdown: None,
                };
            }
        } else {
            holding_since = None;
        }
        if time + cfg.dt_sim > cfg.max_mission_time + 1e-9 {
            break MissionEnd {
                outcome: Outcome::Timeout,
                time,
                touchdown: None,
            };
        }
        k += 1;
    };
    Ok(MissionLog { header, frames, end })
}
