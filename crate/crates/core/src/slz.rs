//! Euclidean distance transform on the head-plane grid and iterative
//! extraction of circular safe-landing-zone proposals.
//!
//! The transform is the two-pass exact algorithm of Meijster et al. run on
//! integer squared cell distances, so results are exact and linear in the
//! number of cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Circle, PlaneGrid, CELL_OCCUPIED};

/// Squared distance (in cells) to the nearest occupied cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    rows: usize,
    cols: usize,
    cell_size: f64,
    squared: Vec<u64>,
}

impl DistanceMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Squared distance in cell units.
    pub fn squared_cells(&self, row: usize, col: usize) -> u64 {
        self.squared[row * self.cols + col]
    }

    pub fn squared_cells_all(&self) -> &[u64] {
        &self.squared
    }

    /// Distance in meters.
    pub fn meters(&self, row: usize, col: usize) -> f64 {
        (self.squared_cells(row, col) as f64).sqrt() * self.cell_size
    }

    /// Largest distance and its cell; ties go to the lowest `(row, col)`.
    pub fn argmax(&self) -> Option<(usize, usize, u64)> {
        argmax_squared(&self.squared, self.cols)
    }
}

fn argmax_squared(squared: &[u64], cols: usize) -> Option<(usize, usize, u64)> {
    let mut best: Option<(usize, u64)> = None;
    for (i, &d) in squared.iter().enumerate() {
        if d > 0 && best.is_none_or(|(_, b)| d > b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, d)| (i / cols, i % cols, d))
}

/// Exact Euclidean distance transform of a plane grid. Free cells get the
/// distance to the nearest occupied cell center. A grid without any occupied
/// cell is measured against the ring of virtual cells just outside its
/// boundary instead.
pub fn euclidean_distance_transform(grid: &PlaneGrid) -> DistanceMap {
    let boundary = grid.occupied_count() == 0;
    distance_transform(grid, boundary)
}

fn distance_transform(grid: &PlaneGrid, boundary_occupied: bool) -> DistanceMap {
    if boundary_occupied {
        return distance_with_boundary(grid);
    }
    let occupied: Vec<bool> = grid.values().iter().map(|&v| v == CELL_OCCUPIED).collect();
    DistanceMap {
        rows: grid.rows(),
        cols: grid.cols(),
        cell_size: grid.cell_size(),
        squared: squared_edt(grid.rows(), grid.cols(), &occupied),
    }
}

/// Two-pass exact transform over a row-major occupancy mask.
fn squared_edt(rows: usize, cols: usize, occupied: &[bool]) -> Vec<u64> {
    let inf = (rows + cols) as i64;

    // Column pass: vertical distance to the nearest occupied cell.
    let mut g = vec![inf; rows * cols];
    for c in 0..cols {
        g[c] = if occupied[c] { 0 } else { inf };
        for r in 1..rows {
            g[r * cols + c] = if occupied[r * cols + c] { 0 } else { (g[(r - 1) * cols + c] + 1).min(inf) };
        }
        for r in (0..rows - 1).rev() {
            let below = g[(r + 1) * cols + c];
            if below < g[r * cols + c] {
                g[r * cols + c] = below + 1;
            }
        }
    }

    // Row pass: lower envelope of parabolas (x - i)^2 + g(i)^2.
    let mut squared = vec![0u64; rows * cols];
    let mut s = vec![0usize; cols];
    let mut t = vec![0i64; cols];
    for r in 0..rows {
        let gr = &g[r * cols..(r + 1) * cols];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + gr[i] * gr[i];
        let sep = |i: usize, u: usize| {
            let (i_, u_) = (i as i64, u as i64);
            (u_ * u_ - i_ * i_ + gr[u] * gr[u] - gr[i] * gr[i]).div_euclid(2 * (u_ - i_))
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..cols {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let w = 1 + sep(s[q as usize], u);
                if w < cols as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = w;
                }
            }
        }
        for u in (0..cols).rev() {
            squared[r * cols + u] = f(u as i64, s[q as usize]) as u64;
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    squared
}

/// Distance to the virtual occupied ring around the grid, combined with any
/// occupied cells inside it.
fn distance_with_boundary(grid: &PlaneGrid) -> DistanceMap {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut squared = vec![0u64; rows * cols];
    let inner = if grid.occupied_count() > 0 {
        Some(distance_transform(grid, false))
    } else {
        None
    };
    for r in 0..rows {
        for c in 0..cols {
            let edge = (r + 1).min(rows - r).min(c + 1).min(cols - c) as u64;
            let mut d = edge * edge;
            if let Some(inner) = &inner {
                d = d.min(inner.squared_cells(r, c));
            }
            squared[r * cols + c] = d;
        }
    }
    DistanceMap {
        rows,
        cols,
        cell_size: grid.cell_size(),
        squared,
    }
}

/// Limits for the proposal loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlzConfig {
    /// Maximum number of proposals per frame.
    pub n_p: usize,
    /// Minimum safety radius, meters.
    pub r0: f64,
}

impl SlzConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_p >= 1 && self.r0 > 0.0 && self.r0.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid SLZ config {self:?}")))
        }
    }
}

impl Default for SlzConfig {
    fn default() -> Self {
        Self { n_p: 10, r0: 1.0 }
    }
}

/// Circular landing-zone candidate on the head plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlzProposal {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub frame_index: u64,
}

impl SlzProposal {
    pub fn circle(&self) -> Circle {
        Circle::new(self.cx, self.cy, self.radius)
    }
}

/// Repeatedly takes the distance-map maximum as a proposal and marks its disk
/// occupied, until `n_p` proposals are found or the best radius drops below
/// `r0`. Proposals come out in non-increasing radius order.
pub fn extract_slz(grid: &PlaneGrid, cfg: &SlzConfig, frame_index: u64) -> Vec<SlzProposal> {
    let (rows, cols) = (grid.rows(), grid.cols());
    // An unobserved boundary stays in force after the first disk is marked.
    let boundary = grid.occupied_count() == 0;
    let mut dist = distance_transform(grid, boundary).squared;
    let mut out = Vec::new();
    while out.len() < cfg.n_p {
        let Some((row, col, sq)) = argmax_squared(&dist, cols) else {
            break;
        };
        let radius = (sq as f64).sqrt() * grid.cell_size();
        if radius < cfg.r0 {
            break;
        }
        let (cx, cy) = grid.cell_center(row, col);
        out.push(SlzProposal {
            cx,
            cy,
            radius,
            frame_index,
        });

        // Marking the disk can only lower distances of cells closer than
        // twice its radius, so the update is a transform over that window.
        let reach = sq.isqrt() as usize;
        let half = 2 * reach + 1;
        let (r0, r1) = (row.saturating_sub(half), (row + half + 1).min(rows));
        let (c0, c1) = (col.saturating_sub(half), (col + half + 1).min(cols));
        let (wr, wc) = (r1 - r0, c1 - c0);
        let mut disk = vec![false; wr * wc];
        for r in r0..r1 {
            for c in c0..c1 {
                let (dr, dc) = (r.abs_diff(row) as u64, c.abs_diff(col) as u64);
                disk[(r - r0) * wc + (c - c0)] = dr * dr + dc * dc <= sq;
            }
        }
        let local = squared_edt(wr, wc, &disk);
        for r in r0..r1 {
            for c in c0..c1 {
                let d = &mut dist[r * cols + c];
                *d = (*d).min(local[(r - r0) * wc + (c - c0)]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CELL_FREE, CELL_OCCUPIED};
    use crate::test_util::{brute_force_squared, random_grid};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_from(rows: usize, cols: usize, cell: f64, occupied: &[(usize, usize)]) -> PlaneGrid {
        let mut g = PlaneGrid::new(0.0, 0.0, cell, rows, cols, CELL_FREE).unwrap();
        for &(r, c) in occupied {
            g.set(r, c, CELL_OCCUPIED);
        }
        g
    }

    #[test]
    fn three_by_three_center_obstacle() {
        let d = euclidean_distance_transform(&grid_from(3, 3, 1.0, &[(1, 1)]));
        assert_eq!(d.meters(1, 1), 0.0);
        for (r, c) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_eq!(d.meters(r, c), 1.0);
        }
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert!((d.meters(r, c) - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_grid_measures_to_boundary() {
        let d = euclidean_distance_transform(&grid_from(10, 10, 1.0, &[]));
        // Brute force against the virtual ring just outside the grid.
        for r in 0..10usize {
            for c in 0..10usize {
                let mut best = u64::MAX;
                for i in -1i64..=10 {
                    for j in -1i64..=10 {
                        let ring = i == -1 || j == -1 || i == 10 || j == 10;
                        if ring {
                            let dd = ((r as i64 - i).pow(2) + (c as i64 - j).pow(2)) as u64;
                            best = best.min(dd);
                        }
                    }
                }
                assert_eq!(d.squared_cells(r, c), best, "({r}, {c})");
            }
        }
        assert_eq!(d.meters(4, 4), 5.0);
        assert_eq!(d.meters(5, 5), 5.0);
    }

    #[test]
    fn distance_is_zero_exactly_on_occupied_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_grid(&mut rng, 20, 31, 0.1);
        let d = euclidean_distance_transform(&g);
        for r in 0..20 {
            for c in 0..31 {
                assert_eq!(d.squared_cells(r, c) == 0, !g.is_free(r, c));
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..60 {
            let rows = 1 + i % 16;
            let cols = 1 + (i * 7) % 16;
            let g = random_grid(&mut rng, rows, cols, 0.05 + 0.01 * (i % 10) as f64);
            if g.occupied_count() == 0 {
                continue;
            }
            let d = euclidean_distance_transform(&g);
            assert_eq!(d.squared_cells_all(), &brute_force_squared(&g)[..]);
        }
    }

    #[test]
    fn fully_occupied_grid_has_no_proposals() {
        let g = PlaneGrid::new(0.0, 0.0, 0.1, 12, 9, CELL_OCCUPIED).unwrap();
        assert!(extract_slz(&g, &SlzConfig::default(), 0).is_empty());
    }

    #[test]
    fn free_grid_first_proposal_spans_grid() {
        let g = PlaneGrid::new(0.125, 0.125, 0.25, 40, 40, CELL_FREE).unwrap();
        let props = extract_slz(&g, &SlzConfig { n_p: 10, r0: 1.0 }, 3);
        assert!(!props.is_empty());
        let first = props[0];
        assert_eq!(first.radius, 5.0);
        assert_eq!(first.frame_index, 3);
        assert!((first.cx - 5.0).abs() <= 0.25 && (first.cy - 5.0).abs() <= 0.25);
        assert!(props.len() > 1);
        for p in &props {
            assert!(p.radius >= 1.0);
            let b = g.bounds();
            assert!(p.cx - p.radius >= b.min_x - 0.25 - 1e-9 && p.cx + p.radius <= b.max_x + 0.25 + 1e-9);
        }
    }

    #[test]
    fn wall_separates_two_pockets() {
        // Occupied border plus a vertical wall splits the grid into two pockets.
        let (rows, cols) = (30usize, 61usize);
        let mut g = PlaneGrid::new(0.05, 0.05, 0.1, rows, cols, CELL_FREE).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 || c == 30 {
                    g.set(r, c, CELL_OCCUPIED);
                }
            }
        }
        let props = extract_slz(&g, &SlzConfig { n_p: 10, r0: 1.0 }, 0);
        assert_eq!(props.len(), 2);
        let left = props.iter().filter(|p| p.cx < 3.0).count();
        assert_eq!(left, 1);
    }

    /// Reference loop: brute-force distances, mark disk, repeat.
    fn naive_extract(grid: &PlaneGrid, cfg: &SlzConfig) -> Vec<(usize, usize, u64)> {
        let boundary = grid.occupied_count() == 0;
        let mut work = grid.clone();
        let mut out = Vec::new();
        while out.len() < cfg.n_p {
            let mut d = brute_force_squared(&work);
            if boundary {
                for r in 0..work.rows() {
                    for c in 0..work.cols() {
                        let e = (r + 1).min(work.rows() - r).min(c + 1).min(work.cols() - c) as u64;
                        d[r * work.cols() + c] = d[r * work.cols() + c].min(e * e);
                    }
                }
            }
            let mut best: Option<(usize, u64)> = None;
            for (i, &v) in d.iter().enumerate() {
                if v > 0 && best.is_none_or(|(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            let Some((i, sq)) = best else { break };
            if (sq as f64).sqrt() * work.cell_size() < cfg.r0 {
                break;
            }
            let (row, col) = (i / work.cols(), i % work.cols());
            for r in 0..work.rows() {
                for c in 0..work.cols() {
                    if (r.abs_diff(row).pow(2) + c.abs_diff(col).pow(2)) as u64 <= sq {
                        work.set(r, c, CELL_OCCUPIED);
                    }
                }
            }
            out.push((row, col, sq));
        }
        out
    }

    #[test]
    fn incremental_extraction_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = SlzConfig { n_p: 10, r0: 0.1 };
        for trial in 0..60 {
            let p = [0.0, 0.002, 0.01, 0.05][trial % 4];
            let g = random_grid(&mut rng, 20 + trial % 17, 25 + trial % 11, p);
            let got: Vec<(usize, usize, u64)> = extract_slz(&g, &cfg, 0)
                .iter()
                .map(|q| {
                    let (r, c) = g.cell_of(q.cx, q.cy).unwrap();
                    (r, c, ((q.radius / g.cell_size()).powi(2)).round() as u64)
                })
                .collect();
            assert_eq!(got, naive_extract(&g, &cfg), "trial {trial}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn extraction_invariants(seed in any::<u64>(), rows in 8usize..40, cols in 8usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_grid(&mut rng, rows, cols, 0.02);
            let cfg = SlzConfig { n_p: 6, r0: 0.3 };
            let props = extract_slz(&g, &cfg, 0);
            for w in props.windows(2) {
                prop_assert!(w[1].radius <= w[0].radius);
            }
            for (i, a) in props.iter().enumerate() {
                prop_assert!(a.radius >= cfg.r0);
                for b in &props[i + 1..] {
                    prop_assert!(a.circle().center_distance(b.cx, b.cy) >= a.radius.max(b.radius) - 1e-9);
                }
                // The open disk covers only free cells of the input grid.
                for r in 0..rows {
                    for c in 0..cols {
                        let (x, y) = g.cell_center(r, c);
                        if a.circle().center_distance(x, y) < a.radius - 1e-9 {
                            prop_assert!(g.is_free(r, c));
                        }
                    }
                }
            }
        }

        #[test]
        fn extra_obstacles_never_grow_proposals(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_grid(&mut rng, 24, 24, 0.02);
            let mut h = g.clone();
            let extra = random_grid(&mut rng, 24, 24, 0.03);
            for r in 0..24 {
                for c in 0..24 {
                    if !extra.is_free(r, c) {
                        h.set(r, c, CELL_OCCUPIED);
                    }
                }
            }
            if g.occupied_count() == 0 {
                return Ok(());
            }
            let cfg = SlzConfig { n_p: 1, r0: 0.2 };
            let a = extract_slz(&g, &cfg, 0);
            let b = extract_slz(&h, &cfg, 0);
            if let Some(pb) = b.first() {
                prop_assert!(pb.radius <= a[0].radius);
            }
        }
    }
}
