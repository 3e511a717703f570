//! Per-frame perception chain shared by the mission simulator and the
//! annotation replay: density map to occupancy, head-plane resampling, SLZ
//! extraction and tracking.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::density::{occupancy_from_density, render_oracle_density, DensityMap, OccupancyGrid, OracleNoiseConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    compose, image_footprint, project_point, sample_occupancy_to_plane, CameraModel, HeadPlane,
    PlaneGrid, RigidTransform, Roi, CELL_FREE,
};
use crate::slz::{extract_slz, SlzConfig, SlzProposal};
use crate::tracking::{TrackEvent, TrackManager, TrackState, TrackerConfig};

/// Width in cells of the band next to unobserved or geofenced ground that is
/// treated as occupied.
pub const VIEW_EDGE_BAND: usize = 2;

/// Everything the perception chain needs besides the per-frame inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub camera: CameraModel,
    /// Camera-to-body transform rotation (row-major) and translation.
    pub camera_mount: MountConfig,
    pub head_plane: HeadPlane,
    /// Head-plane grid resolution, meters per cell.
    pub cell_size: f64,
    /// Extra extent added around the image footprint, meters.
    pub margin: f64,
    pub slz: SlzConfig,
    pub tracker: TrackerConfig,
    pub noise: OracleNoiseConfig,
    /// Cells outside this region are treated as occupied.
    pub geofence: Option<Roi>,
}

/// Serializable camera mounting, camera-to-body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountConfig {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl MountConfig {
    /// Downward-looking camera at the body origin; image x along body x,
    /// image y along body -y.
    pub fn nadir() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn transform(&self) -> Result<RigidTransform> {
        let r = &self.rotation;
        RigidTransform::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(self.translation),
        )
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::from_hfov(320, 320, 110.0).expect("default camera"),
            camera_mount: MountConfig::nadir(),
            head_plane: HeadPlane::default(),
            cell_size: 0.1,
            margin: 1.0,
            slz: SlzConfig::default(),
            tracker: TrackerConfig::default(),
            noise: OracleNoiseConfig::default(),
            geofence: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.camera_mount.transform()?;
        self.slz.validate()?;
        self.tracker.validate()?;
        self.noise.validate()?;
        if !(self.cell_size > 0.0 && self.margin >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cell size {} and margin {} must be positive",
                self.cell_size, self.margin
            )));
        }
        Ok(())
    }

    /// World-to-camera transform from a world-to-body pose.
    pub fn world_to_camera(&self, world_to_body: &RigidTransform) -> Result<RigidTransform> {
        let body_to_camera = self.camera_mount.transform()?.inverse();
        Ok(compose(&body_to_camera, world_to_body))
    }

    /// Oracle noise for one frame; the seed mixes the configured seed with the
    /// frame index so every frame draws an independent stream.
    pub fn frame_noise(&self, frame_index: u64) -> OracleNoiseConfig {
        self.noise.with_seed(mix_seed(self.noise.seed, frame_index))
    }
}

/// SplitMix64-style mixing of two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Projects world head positions `(x, y)` on the head plane into the image,
/// dropping heads behind the camera or outside the frame.
pub fn heads_to_pixels(
    heads: &[(f64, f64)],
    world_to_camera: &RigidTransform,
    cam: &CameraModel,
    plane: &HeadPlane,
) -> Vec<(f64, f64)> {
    heads
        .iter()
        .filter_map(|&(x, y)| {
            let p = project_point(&Vector3::new(x, y, plane.height()), world_to_camera, cam).ok()?;
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < cam.width as f64 && p.y < cam.height as f64;
            inside.then_some((p.x, p.y))
        })
        .collect()
}

/// Output of one processed frame.
#[derive(Debug, Clone)]
pub struct Perception {
    pub frame_index: u64,
    pub occupancy: OccupancyGrid,
    /// Head-plane occupancy after resampling and geofencing.
    pub plane: PlaneGrid,
    /// Same grid with only the out-of-view and geofenced cells, and the
    /// band next to them, occupied.
    pub visibility: PlaneGrid,
    pub proposals: Vec<SlzProposal>,
    pub events: Vec<TrackEvent>,
    /// Wall time spent from density map to tracks, seconds.
    pub exec_time: f64,
}

/// Stateful perception chain; owns the track manager.
#[derive(Debug, Clone)]
pub struct PerceptionPipeline {
    cfg: PipelineConfig,
    manager: TrackManager,
}

impl PerceptionPipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let manager = TrackManager::new(cfg.tracker)?;
        Ok(Self { cfg, manager })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[TrackState] {
        self.manager.tracks()
    }

    /// Oracle density for world head positions seen from `world_to_camera`.
    pub fn render_heads(
        &self,
        heads: &[(f64, f64)],
        world_to_camera: &RigidTransform,
        frame_index: u64,
    ) -> Result<DensityMap> {
        let cam = &self.cfg.camera;
        let pixels = heads_to_pixels(heads, world_to_camera, cam, &self.cfg.head_plane);
        render_oracle_density(&pixels, &self.cfg.frame_noise(frame_index), cam.width, cam.height)
    }

    /// Head-plane grid for the current view, cropped to the geofence.
    pub fn view_grid(&self, world_to_camera: &RigidTransform) -> Result<PlaneGrid> {
        let cfg = &self.cfg;
        let mut bounds = image_footprint(&cfg.camera, world_to_camera, &cfg.head_plane)?.expanded(cfg.margin);
        if let Some(fence) = &cfg.geofence {
            bounds = bounds
                .intersect(&fence.expanded(cfg.margin))
                .ok_or_else(|| Error::DegenerateView("view does not overlap the geofence".into()))?;
        }
        PlaneGrid::covering(&bounds, cfg.cell_size)
    }

    /// Runs the chain on a density map and advances the trackers.
    pub fn process(
        &mut self,
        density: &DensityMap,
        world_to_camera: &RigidTransform,
        frame_index: u64,
    ) -> Result<Perception> {
        let cfg = &self.cfg;
        if density.width() != cfg.camera.width || density.height() != cfg.camera.height {
            return Err(Error::InvalidParameter(format!(
                "density map {}x{} does not match camera {}x{}",
                density.width(),
                density.height(),
                cfg.camera.width,
                cfg.camera.height
            )));
        }
        let template = self.view_grid(world_to_camera)?;
        let free = OccupancyGrid::filled(cfg.camera.width, cfg.camera.height, CELL_FREE);
        let mut observed = sample_occupancy_to_plane(&free, &template, world_to_camera, &cfg.camera, &cfg.head_plane);
        if let Some(fence) = &cfg.geofence {
            observed.occupy_outside(fence);
        }
        // Observed cells next to unobserved ground count as unobserved.
        let mut visibility = observed.clone();
        visibility.occupy_near(&observed, VIEW_EDGE_BAND);

        let start = Instant::now();
        let occupancy = occupancy_from_density(density);
        let mut plane = sample_occupancy_to_plane(&occupancy, &template, world_to_camera, &cfg.camera, &cfg.head_plane);
        plane.occupy_near(&visibility, 0);
        let proposals = extract_slz(&plane, &cfg.slz, frame_index);
        let events = self.manager.step(&proposals);
        let exec_time = start.elapsed().as_secs_f64();
        Ok(Perception {
            frame_index,
            occupancy,
            plane,
            visibility,
            proposals,
            events,
            exec_time,
        })
    }

    /// Advances the trackers on a frame where no image could be processed.
    pub fn coast(&mut self) -> Vec<TrackEvent> {
        self.manager.step(&[])
    }
}
