//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! command-line flags.

use std::path::{Path, PathBuf};

use safeland::nalgebra::Matrix3;
use safeland::pipeline::PipelineConfig;
use safeland::world::{Criterion, ScenarioConfig};
use safeland::{CameraModel, HeadPlane};
use serde::Deserialize;

use crate::CliError;

/// Everything one invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    pub out_dir: PathBuf,
    pub render: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            pipeline: PipelineConfig::default(),
            out_dir: PathBuf::from("out"),
            render: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub criterion: Option<Criterion>,
    pub render: bool,
    pub out_dir: Option<PathBuf>,
    pub frac_moving: Option<f64>,
    pub actors: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    scenario: ScenarioSection,
    #[serde(default)]
    policy: PolicySection,
    #[serde(default)]
    camera: CameraSection,
    #[serde(default)]
    perception: PerceptionSection,
    #[serde(default)]
    tracker: TrackerSection,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSection {
    roi_side: Option<f64>,
    n_actors_min: Option<usize>,
    n_actors_max: Option<usize>,
    frac_moving: Option<f64>,
    seed: Option<u64>,
    dt_sim: Option<f64>,
    criterion: Option<Criterion>,
    max_mission_time: Option<f64>,
    body_radius: Option<f64>,
    drone_radius: Option<f64>,
    start_altitude: Option<f64>,
    speed_xy: Option<f64>,
    speed_z: Option<f64>,
    abort_after: Option<f64>,
    record_timing: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    waypoint_altitude: Option<f64>,
    land_radius: Option<f64>,
    ceiling: Option<f64>,
    hysteresis: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraSection {
    width: Option<usize>,
    height: Option<usize>,
    hfov_deg: Option<f64>,
    fx: Option<f64>,
    fy: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
    mount_rotation: Option<[[f64; 3]; 3]>,
    mount_translation: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerceptionSection {
    head_height: Option<f64>,
    cell_size: Option<f64>,
    margin: Option<f64>,
    r0: Option<f64>,
    n_p: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackerSection {
    sigma_a: Option<f64>,
    /// Diagonal of the measurement covariance for (x, y, r).
    r_diag: Option<[f64; 3]>,
    dt: Option<f64>,
    max_tracks: Option<usize>,
    iou_gate: Option<f64>,
    mu1: Option<u32>,
    mu2: Option<u32>,
    min_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    sigma_px: Option<f64>,
    fp_rate: Option<f64>,
    fn_rate: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    render: Option<bool>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    /// Defaults overlaid with the file at `path`, if given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.merge_toml(&text)?;
        }
        Ok(cfg)
    }

    /// Overlays the values present in a TOML document.
    pub fn merge_toml(&mut self, text: &str) -> Result<(), CliError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let s = &mut self.scenario;
        let fs = file.scenario;
        set(&mut s.roi_side, fs.roi_side);
        set(&mut s.n_actors_min, fs.n_actors_min);
        set(&mut s.n_actors_max, fs.n_actors_max);
        set(&mut s.frac_moving, fs.frac_moving);
        set(&mut s.seed, fs.seed);
        set(&mut s.dt_sim, fs.dt_sim);
        set(&mut s.criterion, fs.criterion);
        set(&mut s.max_mission_time, fs.max_mission_time);
        set(&mut s.body_radius, fs.body_radius);
        set(&mut s.drone_radius, fs.drone_radius);
        set(&mut s.start_altitude, fs.start_altitude);
        set(&mut s.speed_xy, fs.speed_xy);
        set(&mut s.speed_z, fs.speed_z);
        set(&mut s.abort_after, fs.abort_after);
        set(&mut s.record_timing, fs.record_timing);

        let p = &mut s.policy;
        set(&mut p.waypoint_altitude, file.policy.waypoint_altitude);
        set(&mut p.land_radius, file.policy.land_radius);
        set(&mut p.ceiling, file.policy.ceiling);
        set(&mut p.hysteresis, file.policy.hysteresis);

        let pl = &mut self.pipeline;
        let cam = file.camera;
        if cam.width.is_some() || cam.height.is_some() || cam.hfov_deg.is_some() {
            let width = cam.width.unwrap_or(pl.camera.width);
            let height = cam.height.unwrap_or(pl.camera.height);
            let hfov = match cam.hfov_deg {
                Some(h) => h,
                None => 2.0 * (pl.camera.width as f64 / 2.0 / pl.camera.fx).atan().to_degrees(),
            };
            pl.camera = CameraModel::from_hfov(width, height, hfov).map_err(|e| CliError::Config(e.to_string()))?;
        }
        set(&mut pl.camera.fx, cam.fx);
        set(&mut pl.camera.fy, cam.fy);
        set(&mut pl.camera.cx, cam.cx);
        set(&mut pl.camera.cy, cam.cy);
        set(&mut pl.camera_mount.rotation, cam.mount_rotation);
        set(&mut pl.camera_mount.translation, cam.mount_translation);

        let per = file.perception;
        if let Some(h) = per.head_height {
            pl.head_plane = HeadPlane::new(h).map_err(|e| CliError::Config(e.to_string()))?;
        }
        set(&mut pl.cell_size, per.cell_size);
        set(&mut pl.margin, per.margin);
        set(&mut pl.slz.r0, per.r0);
        set(&mut pl.slz.n_p, per.n_p);

        let t = &mut pl.tracker;
        let ft = file.tracker;
        set(&mut t.sigma_a, ft.sigma_a);
        if let Some([a, b, c]) = ft.r_diag {
            t.r_meas = Matrix3::new(a, 0.0, 0.0, 0.0, b, 0.0, 0.0, 0.0, c);
        }
        set(&mut t.dt, ft.dt);
        set(&mut t.n_p, ft.max_tracks);
        set(&mut t.iou_gate, ft.iou_gate);
        set(&mut t.mu1, ft.mu1);
        set(&mut t.mu2, ft.mu2);
        set(&mut t.min_radius, ft.min_radius);

        let n = &mut pl.noise;
        set(&mut n.sigma_px, file.noise.sigma_px);
        set(&mut n.fp_rate, file.noise.fp_rate);
        set(&mut n.fn_rate, file.noise.fn_rate);
        set(&mut n.seed, file.noise.seed);

        set(&mut self.out_dir, file.output.dir);
        set(&mut self.render, file.output.render);
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        set(&mut self.scenario.seed, o.seed);
        set(&mut self.scenario.criterion, o.criterion);
        set(&mut self.scenario.frac_moving, o.frac_moving);
        if let Some(n) = o.actors {
            self.scenario.n_actors_min = n;
            self.scenario.n_actors_max = n;
        }
        set(&mut self.out_dir, o.out_dir.clone());
        self.render |= o.render;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_overlay_defaults() {
        let mut cfg = RunConfig::default();
        cfg.merge_toml(
            "[scenario]\nroi_side = 20.0\ncriterion = \"oldest\"\n[tracker]\nr_diag = [0.04, 0.04, 0.09]\nmu1 = 7\n[perception]\nhead_height = 1.6\n",
        )
        .unwrap();
        assert_eq!(cfg.scenario.roi_side, 20.0);
        assert_eq!(cfg.scenario.criterion, Criterion::Oldest);
        assert_eq!(cfg.pipeline.tracker.mu1, 7);
        assert_eq!(cfg.pipeline.tracker.r_meas[(2, 2)], 0.09);
        assert_eq!(cfg.pipeline.head_plane.height(), 1.6);
        assert_eq!(cfg.scenario.n_actors_min, 80);
    }

    #[test]
    fn camera_fov_rebuilds_intrinsics() {
        let mut cfg = RunConfig::default();
        cfg.merge_toml("[camera]\nwidth = 200\nheight = 100\nhfov_deg = 90.0\n").unwrap();
        let cam = cfg.pipeline.camera;
        assert_eq!((cam.width, cam.height), (200, 100));
        assert!((cam.fx - 100.0).abs() < 1e-9);
        assert_eq!((cam.cx, cam.cy), (100.0, 50.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.merge_toml("[scenario]\nroi = 3\n"), Err(CliError::Config(_))));
        assert!(matches!(cfg.merge_toml("[nope]\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg = RunConfig::default();
        cfg.merge_toml("[scenario]\nseed = 4\nfrac_moving = 0.5\n").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            actors: Some(12),
            ..Default::default()
        });
        assert_eq!(cfg.scenario.seed, 9);
        assert_eq!(cfg.scenario.frac_moving, 0.5);
        assert_eq!((cfg.scenario.n_actors_min, cfg.scenario.n_actors_max), (12, 12));
    }
}
