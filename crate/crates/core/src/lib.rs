//! Visual safe-landing-zone detection over crowd occupancy maps, multi-target
//! tracking of the landing zones, and a seeded 2-D landing simulator that
//! measures how safely a UAV lands among people.
//!
//! The perception chain runs density map → binary occupancy → head-plane grid
//! → distance transform → circular proposals → Kalman tracks. [`world`]
//! drives it inside randomized crowd scenarios and [`eval`] turns the
//! resulting logs (or annotation replays) into safety metrics.

#[cfg(test)]
#[macro_use]
mod test_macros {
    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }
}

pub mod assignment;
pub mod density;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod slz;
pub mod tracking;
pub mod world;

pub use nalgebra;

pub use assignment::hungarian_assign;
pub use density::{
    load_density, occupancy_from_density, read_density, render_oracle_density, save_density,
    write_density, DensityMap, OccupancyGrid, OracleNoiseConfig,
};
pub use error::{Error, Result};
pub use geometry::{
    compose, grid_footprint, project_plane_point, sample_occupancy_to_plane, CameraModel, Circle,
    HeadPlane, PlaneGrid, RigidTransform, Roi,
};
pub use pipeline::{PerceptionPipeline, PipelineConfig};
pub use slz::{euclidean_distance_transform, extract_slz, DistanceMap, SlzConfig, SlzProposal};
pub use tracking::{circle_iou, kf_predict, kf_update, TrackManager, TrackState, TrackerConfig};
pub use eval::{aggregate, best_iou, ground_truth_slz, replay_annotations, risk_counts, MetricsReport};
pub use world::{simulate_mission, Criterion, MissionLog, Outcome, ScenarioConfig};

#[cfg(test)]
pub(crate) mod test_util {
    use nalgebra::{Matrix3, Vector3};
    use rand::Rng;

    use crate::geometry::{PlaneGrid, RigidTransform, CELL_FREE, CELL_OCCUPIED};

    /// World-to-camera transform of a downward-looking camera at `(x, y, z)`.
    pub fn nadir(x: f64, y: f64, z: f64) -> RigidTransform {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        RigidTransform::new(r, Vector3::new(x, y, z)).unwrap().inverse()
    }

    pub fn random_grid(rng: &mut impl Rng, rows: usize, cols: usize, p_occupied: f64) -> PlaneGrid {
        let values = (0..rows * cols)
            .map(|_| if rng.random_bool(p_occupied) { CELL_OCCUPIED } else { CELL_FREE })
            .collect();
        PlaneGrid::from_values(0.05, 0.05, 0.1, rows, cols, values).unwrap()
    }

    /// All-pairs squared cell distance to the nearest occupied cell.
    pub fn brute_force_squared(g: &PlaneGrid) -> Vec<u64> {
        let occupied: Vec<(i64, i64)> = (0..g.rows())
            .flat_map(|r| (0..g.cols()).map(move |c| (r, c)))
            .filter(|&(r, c)| !g.is_free(r, c))
            .map(|(r, c)| (r as i64, c as i64))
            .collect();
        let mut out = Vec::with_capacity(g.rows() * g.cols());
        for r in 0..g.rows() as i64 {
            for c in 0..g.cols() as i64 {
                let d = occupied
                    .iter()
                    .map(|&(i, j)| ((r - i).pow(2) + (c - j).pow(2)) as u64)
                    .min()
                    .unwrap_or(u64::MAX);
                out.push(d);
            }
        }
        out
    }

    /// Exhaustive minimum over injective assignments of the smaller side.
    pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let m = cost[0].len();
        if n > m {
            let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
            return brute_force_assignment(&t);
        }
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + go(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        go(cost, 0, &mut vec![false; m])
    }
}
