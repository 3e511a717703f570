//! Multi-instance Kalman tracking of landing-zone circles.
//!
//! Each track filters the state `(x, y, r, vx, vy, vr)` with a constant
//! velocity model. Proposals are associated to tracks by minimum-cost
//! assignment on `1 - IoU`; tracks die after too many consecutive misses and
//! new ones are born from proposals that persist while unmatched.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::assignment::hungarian_assign;
use crate::error::{Error, Result};
use crate::geometry::Circle;
use crate::slz::SlzProposal;

/// Innovation covariances above this condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Tracker tuning. Defaults are sized for walking-speed disturbances at 10 Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Acceleration uncertainty; scales the whole process-noise block matrix.
    pub sigma_a: f64,
    /// Measurement covariance of `(x, y, r)`, m^2.
    pub r_meas: Matrix3<f64>,
    /// Frame interval, seconds.
    pub dt: f64,
    /// Maximum number of live tracks.
    pub n_p: usize,
    /// Minimum IoU for a valid association.
    pub iou_gate: f64,
    /// A track is deleted once its consecutive misses exceed this.
    pub mu1: u32,
    /// Consecutive unmatched sightings needed to start a track.
    pub mu2: u32,
    /// Floor applied to the filtered radius after each correction, meters.
    pub min_radius: f64,
}

impl TrackerConfig {
    pub fn with_measurement_std(mut self, sx: f64, sy: f64, sr: f64) -> Self {
        self.r_meas = Matrix3::from_diagonal(&Vector3::new(sx * sx, sy * sy, sr * sr));
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r_ok = self.r_meas.iter().all(|v| v.is_finite())
            && (self.r_meas - self.r_meas.transpose()).amax() <= 1e-12
            && SymmetricEigen::new(self.r_meas).eigenvalues.min() > 0.0;
        let ok = self.sigma_a > 0.0
            && self.dt > 0.0
            && self.n_p >= 1
            && self.iou_gate > 0.0
            && self.iou_gate < 1.0
            && self.mu1 >= 1
            && self.mu2 >= 1
            && self.min_radius > 0.0
            && r_ok;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid tracker config {self:?}")))
        }
    }

    fn transition(&self) -> Matrix6<f64> {
        let mut f = Matrix6::identity();
        for i in 0..3 {
            f[(i, i + 3)] = self.dt;
        }
        f
    }

    fn process_noise(&self) -> Matrix6<f64> {
        let dt = self.dt;
        let (pp, pv, vv) = (dt.powi(4) / 4.0, dt.powi(3) / 2.0, dt * dt);
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = pp;
            q[(i, i + 3)] = pv;
            q[(i + 3, i)] = pv;
            q[(i + 3, i + 3)] = vv;
        }
        q * self.sigma_a
    }
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigma_a: 0.5,
            r_meas: Matrix3::from_diagonal_element(0.01),
            dt: 0.1,
            n_p: 10,
            iou_gate: 0.2,
            mu1: 5,
            mu2: 3,
            min_radius: 0.1,
        }
    }
}

/// Filtered landing zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub id: u64,
    /// `(x, y, r, vx, vy, vr)`.
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    /// Frames since creation.
    pub age: u32,
    /// Consecutive frames without an associated proposal.
    pub misses: u32,
}

impl TrackState {
    /// New track at a measured circle with zero velocity.
    pub fn from_measurement(id: u64, z: &Circle, cfg: &TrackerConfig) -> Self {
        let mut covariance = Matrix6::identity();
        covariance.fixed_view_mut::<3, 3>(0, 0).copy_from(&cfg.r_meas);
        Self {
            id,
            mean: Vector6::new(z.x, z.y, z.r, 0.0, 0.0, 0.0),
            covariance,
            age: 0,
            misses: 0,
        }
    }

    /// Filtered circle; the radius is reported non-negative.
    pub fn circle(&self) -> Circle {
        Circle::new(self.mean[0], self.mean[1], self.mean[2].max(0.0))
    }
}

/// Propagates a track one frame with the constant velocity model.
pub fn kf_predict(t: &TrackState, cfg: &TrackerConfig) -> TrackState {
    let f = cfg.transition();
    let mut out = t.clone();
    out.mean = f * t.mean;
    out.covariance = symmetrize(f * t.covariance * f.transpose() + cfg.process_noise());
    out
}

/// Corrects a track with a measured `(x, y, r)`.
pub fn kf_update(t: &TrackState, z: &Circle, cfg: &TrackerConfig) -> Result<TrackState> {
    let p = &t.covariance;
    let p_xx: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    let s = symmetrize3(p_xx + cfg.r_meas);
    let eig = SymmetricEigen::new(s).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovation(cond));
    }
    let s_inv = s
        .try_inverse()
        .ok_or(Error::SingularInnovation(f64::INFINITY))?;
    // P H^T is the first three columns of P.
    let pht = p.fixed_view::<6, 3>(0, 0).into_owned();
    let gain = pht * s_inv;
    let innovation = Vector3::new(z.x, z.y, z.r) - t.mean.fixed_rows::<3>(0);

    let mut out = t.clone();
    out.mean = t.mean + gain * innovation;
    out.mean[2] = out.mean[2].max(cfg.min_radius);
    // Joseph form keeps the covariance symmetric positive definite.
    let mut h = nalgebra::Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).fill_with_identity();
    let i_kh = Matrix6::identity() - gain * h;
    out.covariance =
        symmetrize(i_kh * p * i_kh.transpose() + gain * cfg.r_meas * gain.transpose());
    out.misses = 0;
    Ok(out)
}

fn symmetrize(m: Matrix6<f64>) -> Matrix6<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize3(m: Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Intersection over union of two disks.
pub fn circle_iou(a: &Circle, b: &Circle) -> f64 {
    if !(a.r > 0.0 && b.r > 0.0) {
        return 0.0;
    }
    let d = a.center_distance(b.x, b.y);
    let (ra, rb) = (a.r, b.r);
    if d >= ra + rb {
        return 0.0;
    }
    if d <= (ra - rb).abs() {
        let (small, large) = if ra < rb { (ra, rb) } else { (rb, ra) };
        return (small * small) / (large * large);
    }
    let alpha = ((d * d + ra * ra - rb * rb) / (2.0 * d * ra)).clamp(-1.0, 1.0).acos();
    let beta = ((d * d + rb * rb - ra * ra) / (2.0 * d * rb)).clamp(-1.0, 1.0).acos();
    let kite = (-d + ra + rb) * (d + ra - rb) * (d - ra + rb) * (d + ra + rb);
    let inter = ra * ra * alpha + rb * rb * beta - 0.5 * kite.max(0.0).sqrt();
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Lifecycle events emitted by one manager step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackEvent {
    Matched { track: u64, proposal: usize },
    Born { track: u64, proposal: usize },
    Died { track: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct BirthCandidate {
    circle: Circle,
    sightings: u32,
}

/// Owns the live tracks and the pool of birth candidates.
#[derive(Debug, Clone)]
pub struct TrackManager {
    cfg: TrackerConfig,
    tracks: Vec<TrackState>,
    pool: Vec<BirthCandidate>,
    next_id: u64,
}

impl TrackManager {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            pool: Vec::new(),
            next_id: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Runs one frame: predict, associate, correct, retire and spawn.
    pub fn step(&mut self, proposals: &[SlzProposal]) -> Vec<TrackEvent> {
        let cfg = self.cfg;
        let mut events = Vec::new();

        for t in &mut self.tracks {
            *t = kf_predict(t, &cfg);
        }

        let circles: Vec<Circle> = proposals.iter().map(SlzProposal::circle).collect();
        let track_circles: Vec<Circle> = self.tracks.iter().map(TrackState::circle).collect();
        let pairs = gated_assignment(&track_circles, &circles, cfg.iou_gate);

        let mut proposal_used = vec![false; proposals.len()];
        let mut track_matched = vec![false; self.tracks.len()];
        for &(ti, pi) in &pairs {
            match kf_update(&self.tracks[ti], &circles[pi], &cfg) {
                Ok(updated) => {
                    self.tracks[ti] = updated;
                    track_matched[ti] = true;
                    proposal_used[pi] = true;
                    events.push(TrackEvent::Matched {
                        track: self.tracks[ti].id,
                        proposal: pi,
                    });
                }
                Err(e) => log::warn!("track {} update skipped: {e}", self.tracks[ti].id),
            }
        }

        let mut survivors = Vec::with_capacity(self.tracks.len());
        for (t, matched) in self.tracks.drain(..).zip(track_matched) {
            let mut t = t;
            if !matched {
                t.misses += 1;
            }
            if t.misses > cfg.mu1 {
                events.push(TrackEvent::Died { track: t.id });
            } else {
                t.age += 1;
                survivors.push(t);
            }
        }
        self.tracks = survivors;

        // Birth pool: unmatched proposals must re-appear on consecutive frames.
        let fresh: Vec<usize> = (0..proposals.len()).filter(|&i| !proposal_used[i]).collect();
        let fresh_circles: Vec<Circle> = fresh.iter().map(|&i| circles[i]).collect();
        let pool_circles: Vec<Circle> = self.pool.iter().map(|c| c.circle).collect();
        let pool_pairs = gated_assignment(&pool_circles, &fresh_circles, cfg.iou_gate);

        let mut next_pool: Vec<(BirthCandidate, usize)> = Vec::new();
        let mut fresh_used = vec![false; fresh.len()];
        for &(ci, fi) in &pool_pairs {
            fresh_used[fi] = true;
            next_pool.push((
                BirthCandidate {
                    circle: fresh_circles[fi],
                    sightings: self.pool[ci].sightings + 1,
                },
                fresh[fi],
            ));
        }
        for (fi, &pi) in fresh.iter().enumerate() {
            if !fresh_used[fi] {
                next_pool.push((
                    BirthCandidate {
                        circle: fresh_circles[fi],
                        sightings: 1,
                    },
                    pi,
                ));
            }
        }

        self.pool.clear();
        for (cand, pi) in next_pool {
            if cand.sightings >= cfg.mu2 && self.tracks.len() < cfg.n_p {
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.push(TrackState::from_measurement(id, &cand.circle, &cfg));
                events.push(TrackEvent::Born {
                    track: id,
                    proposal: pi,
                });
            } else {
                self.pool.push(cand);
            }
        }
        events
    }
}

/// Assignment on `1 - IoU` with pairs below the IoU gate removed.
fn gated_assignment(rows: &[Circle], cols: &[Circle], gate: f64) -> Vec<(usize, usize)> {
    if rows.is_empty() || cols.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|a| cols.iter().map(|b| 1.0 - circle_iou(a, b)).collect())
        .collect();
    hungarian_assign(&cost)
        .into_iter()
        .filter(|&(i, j)| 1.0 - cost[i][j] >= gate)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn is_spd(m: &Matrix6<f64>) -> bool {
        (m - m.transpose()).amax() <= 1e-9 && SymmetricEigen::new(*m).eigenvalues.min() > 0.0
    }

    fn track(mean: [f64; 6]) -> TrackState {
        TrackState {
            id: 0,
            mean: Vector6::from_row_slice(&mean),
            covariance: Matrix6::identity(),
            age: 0,
            misses: 0,
        }
    }

    fn proposal(x: f64, y: f64, r: f64) -> SlzProposal {
        SlzProposal {
            cx: x,
            cy: y,
            radius: r,
            frame_index: 0,
        }
    }

    #[test]
    fn predict_propagates_linearly() {
        let cfg = TrackerConfig::default();
        let p = kf_predict(&track([0.0, 0.0, 1.0, 1.0, 0.0, 0.0]), &cfg);
        let expected = [0.1, 0.0, 1.0, 1.0, 0.0, 0.0];
        for i in 0..6 {
            assert!((p.mean[i] - expected[i]).abs() < 1e-15);
        }
        let still = kf_predict(&track([3.0, -2.0, 1.5, 0.0, 0.0, 0.0]), &TrackerConfig { dt: 0.7, ..cfg });
        assert_eq!(still.mean.fixed_rows::<3>(0), Vector3::new(3.0, -2.0, 1.5));
        assert!(p.covariance.trace() > Matrix6::<f64>::identity().trace());
    }

    #[test]
    fn process_noise_matches_block_form() {
        let cfg = TrackerConfig {
            sigma_a: 2.0,
            dt: 0.5,
            ..Default::default()
        };
        let q = cfg.process_noise();
        assert!((q[(0, 0)] - 2.0 * 0.0625 / 4.0).abs() < 1e-15);
        assert!((q[(1, 4)] - 2.0 * 0.125 / 2.0).abs() < 1e-15);
        assert!((q[(5, 5)] - 2.0 * 0.25).abs() < 1e-15);
        assert_eq!(q[(0, 1)], 0.0);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let cfg = TrackerConfig::default();
        let t = track([2.0, 3.0, 1.5, 0.2, 0.0, 0.0]);
        let u = kf_update(&t, &Circle::new(2.0, 3.0, 1.5), &cfg).unwrap();
        assert!((u.mean - t.mean).amax() < 1e-15);
    }

    #[test]
    fn precise_measurement_pins_state() {
        let cfg = TrackerConfig {
            r_meas: Matrix3::from_diagonal_element(1e-12),
            ..Default::default()
        };
        let t = track([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let u = kf_update(&t, &Circle::new(5.0, 5.0, 2.0), &cfg).unwrap();
        // Gain on the measured block is P / (P + R) = 1 / (1 + 1e-12).
        assert!((u.mean[0] - 5.0).abs() < 1e-6);
        assert!((u.mean[1] - 5.0).abs() < 1e-6);
        assert!((u.mean[2] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn update_contracts_position_covariance() {
        let cfg = TrackerConfig::default();
        let mut t = track([0.0; 6]);
        t.covariance = Matrix6::from_fn(|i, j| if i == j { 2.0 } else if i + 3 == j || j + 3 == i { 0.5 } else { 0.0 });
        let u = kf_update(&t, &Circle::new(0.3, -0.1, 0.2), &cfg).unwrap();
        let prior: Matrix3<f64> = t.covariance.fixed_view::<3, 3>(0, 0).into();
        let post: Matrix3<f64> = u.covariance.fixed_view::<3, 3>(0, 0).into();
        let diff = prior - post;
        assert!(SymmetricEigen::new(diff).eigenvalues.min() >= -1e-12);
        assert!(is_spd(&u.covariance));
    }

    #[test]
    fn ill_conditioned_innovation_is_rejected() {
        let cfg = TrackerConfig {
            r_meas: Matrix3::from_diagonal(&Vector3::new(1e-14, 1.0, 1.0)),
            ..Default::default()
        };
        let mut t = track([0.0; 6]);
        t.covariance = Matrix6::from_diagonal_element(1e-14);
        t.covariance[(1, 1)] = 1e3;
        assert!(matches!(
            kf_update(&t, &Circle::new(1.0, 1.0, 1.0), &cfg),
            Err(Error::SingularInnovation(_))
        ));
    }

    #[test]
    fn iou_special_cases() {
        let a = Circle::new(0.0, 0.0, 1.0);
        assert_eq!(circle_iou(&a, &a), 1.0);
        assert_eq!(circle_iou(&a, &Circle::new(2.0, 0.0, 1.0)), 0.0);
        assert_eq!(circle_iou(&a, &Circle::new(5.0, 5.0, 1.0)), 0.0);
        assert!((circle_iou(&a, &Circle::new(0.0, 0.0, 0.5)) - 0.25).abs() < 1e-15);
        // Lens of two unit disks at distance 1: 2 acos(1/2) - sqrt(3)/2.
        let lens = 2.0 * (0.5f64).acos() - 3f64.sqrt() / 2.0;
        let expected = lens / (2.0 * std::f64::consts::PI - lens);
        let got = circle_iou(&a, &Circle::new(1.0, 0.0, 1.0));
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.2430).abs() < 1e-3);
    }

    #[test]
    fn iou_agrees_with_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = Circle::new(0.3, -0.2, 1.3);
        let b = Circle::new(1.1, 0.4, 0.9);
        let (x0, x1, y0, y1) = (-1.0, 2.0, -1.5, 1.5);
        let (mut inter, mut union) = (0u64, 0u64);
        for _ in 0..400_000 {
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(y0..y1);
            let ia = a.center_distance(x, y) <= a.r;
            let ib = b.center_distance(x, y) <= b.r;
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
        let mc = inter as f64 / union as f64;
        assert!((circle_iou(&a, &b) - mc).abs() < 5e-3);
    }

    #[test]
    fn tracks_die_after_enough_misses() {
        let cfg = TrackerConfig {
            mu2: 1,
            ..Default::default()
        };
        let mut m = TrackManager::new(cfg).unwrap();
        m.step(&[proposal(0.0, 0.0, 2.0), proposal(10.0, 0.0, 1.5)]);
        assert_eq!(m.tracks().len(), 2);
        for i in 0..=cfg.mu1 {
            let events = m.step(&[]);
            if i < cfg.mu1 {
                assert_eq!(m.tracks().len(), 2);
            } else {
                assert_eq!(events.iter().filter(|e| matches!(e, TrackEvent::Died { .. })).count(), 2);
            }
        }
        assert!(m.tracks().is_empty());
    }

    #[test]
    fn persistent_proposal_spawns_exactly_one_track() {
        let cfg = TrackerConfig::default();
        let mut m = TrackManager::new(cfg).unwrap();
        let p = [proposal(4.0, 4.0, 2.0)];
        let mut births = 0;
        for frame in 0..10 {
            let events = m.step(&p);
            let born = events.iter().filter(|e| matches!(e, TrackEvent::Born { .. })).count();
            if frame + 1 == cfg.mu2 as usize {
                assert_eq!(born, 1);
            }
            births += born;
        }
        assert_eq!(births, 1);
        assert_eq!(m.tracks().len(), 1);
        assert_eq!(m.tracks()[0].age, 10 - cfg.mu2);
    }

    #[test]
    fn matched_track_moves_toward_offset_proposal() {
        let cfg = TrackerConfig {
            mu2: 1,
            r_meas: Matrix3::from_diagonal_element(1e-4),
            ..Default::default()
        };
        let mut m = TrackManager::new(cfg).unwrap();
        m.step(&[proposal(0.0, 0.0, 2.0)]);
        let target = proposal(0.1, 0.0, 2.0);
        m.step(&[target]);
        let first = m.tracks()[0].circle().center_distance(target.cx, target.cy);
        assert!(first < 0.1);
        for _ in 0..40 {
            m.step(&[target]);
        }
        assert!(m.tracks()[0].circle().center_distance(target.cx, target.cy) < 1e-3);
    }

    #[test]
    fn capacity_and_unique_ids() {
        let cfg = TrackerConfig {
            n_p: 3,
            mu1: 1,
            mu2: 1,
            ..Default::default()
        };
        let mut m = TrackManager::new(cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let props: Vec<SlzProposal> = (0..rng.random_range(0..6))
                .map(|_| proposal(rng.random_range(0.0..30.0), rng.random_range(0.0..30.0), rng.random_range(1.0..3.0)))
                .collect();
            for e in m.step(&props) {
                if let TrackEvent::Born { track, .. } = e {
                    assert!(seen.insert(track), "id {track} reused");
                }
            }
            assert!(m.tracks().len() <= 3);
            assert!(m.tracks().iter().all(|t| is_spd(&t.covariance)));
        }
    }

    #[test]
    fn converges_on_constant_velocity_circle() {
        let cfg = TrackerConfig::default();
        let mut t = TrackState::from_measurement(0, &Circle::new(1.0, 2.0, 3.0), &cfg);
        let truth = |k: f64| [1.0 + 0.5 * k * 0.1, 2.0 - 0.3 * k * 0.1, 3.0 + 0.05 * k * 0.1, 0.5, -0.3, 0.05];
        for k in 1..=50 {
            t = kf_predict(&t, &cfg);
            let s = truth(k as f64);
            t = kf_update(&t, &Circle::new(s[0], s[1], s[2]), &cfg).unwrap();
            assert!(is_spd(&t.covariance));
        }
        let s = truth(50.0);
        for i in 0..6 {
            assert!((t.mean[i] - s[i]).abs() < 1e-3, "component {i}: {} vs {}", t.mean[i], s[i]);
        }
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(
            ax in -5.0f64..5.0, ay in -5.0f64..5.0, ar in 0.1f64..4.0,
            bx in -5.0f64..5.0, by in -5.0f64..5.0, br in 0.1f64..4.0,
        ) {
            let a = Circle::new(ax, ay, ar);
            let b = Circle::new(bx, by, br);
            let ab = circle_iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - circle_iou(&b, &a)).abs() < 1e-12);
            if (ax, ay, ar) != (bx, by, br) {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn concentric_iou_is_area_ratio(r1 in 0.1f64..5.0, r2 in 0.1f64..5.0) {
            let a = Circle::new(1.0, 1.0, r1);
            let b = Circle::new(1.0, 1.0, r2);
            let expected = (r1.min(r2) / r1.max(r2)).powi(2);
            prop_assert!((circle_iou(&a, &b) - expected).abs() < 1e-12);
        }
    }
}
