//! Image-space crowd density maps and their conversion into binary occupancy.
//!
//! A density map is either rendered from known head pixels (the oracle
//! renderer, which stands in for a learned density generator) or loaded from a
//! `DMAP` raster. [`occupancy_from_density`] thresholds against the map
//! minimum, grows the crowd mask with two 5x5 dilations and inverts it so the
//! final semantics are `255 = free`, `0 = occupied`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CELL_FREE, CELL_OCCUPIED};

/// Pixels whose density exceeds the minimum by no more than this are treated
/// as equal to it.
pub const MIN_EQUALITY_TOLERANCE: f64 = 1e-12;
/// Half-width of the square structuring element (5x5).
const DILATION_HALF_WIDTH: usize = 2;
const DILATION_PASSES: usize = 2;
/// Gaussian blobs are truncated this many standard deviations from the center.
const TRUNCATION_SIGMAS: f64 = 4.0;

const DMAP_MAGIC: &str = "DMAP";

/// Per-pixel density, persons per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DensityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "density map of {width}x{height} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "density values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Sum of all pixel values.
    pub fn total(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }
}

/// Binary image-space occupancy. Row-major, values in `{0, 255}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl OccupancyGrid {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        debug_assert!(value == CELL_FREE || value == CELL_OCCUPIED);
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        debug_assert!(value == CELL_FREE || value == CELL_OCCUPIED);
        self.values[y * self.width + x] = value;
    }

    pub fn is_free(&self, x: usize, y: usize) -> bool {
        self.get(x, y) == CELL_FREE
    }

    pub fn free_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == CELL_FREE).count()
    }
}

/// Error model for the oracle density renderer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNoiseConfig {
    /// Standard deviation of each head blob, pixels.
    pub sigma_px: f64,
    /// Expected number of spurious blobs per frame.
    pub fp_rate: f64,
    /// Probability that a head is not rendered.
    pub fn_rate: f64,
    pub seed: u64,
}

impl OracleNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_px > 0.0
            && self.sigma_px.is_finite()
            && self.fp_rate >= 0.0
            && self.fp_rate.is_finite()
            && (0.0..1.0).contains(&self.fn_rate)
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid oracle noise config {self:?}")))
        }
    }

    /// Same configuration with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }
}

impl Default for OracleNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_px: 3.0,
            fp_rate: 0.0,
            fn_rate: 0.0,
            seed: 0,
        }
    }
}

/// Renders a density map as a sum of unit-mass Gaussians at the retained head
/// pixels plus Poisson-many spurious blobs at uniform positions.
pub fn render_oracle_density(
    head_pixels: &[(f64, f64)],
    cfg: &OracleNoiseConfig,
    width: usize,
    height: usize,
) -> Result<DensityMap> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter("density map needs a positive size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(head_pixels.len());
    for &head in head_pixels {
        // One draw per head regardless of fn_rate keeps the stream aligned.
        let keep = rng.random::<f64>() >= cfg.fn_rate;
        if keep {
            centers.push(head);
        }
    }
    if cfg.fp_rate > 0.0 {
        let poisson = Poisson::new(cfg.fp_rate)
            .map_err(|e| Error::InvalidParameter(format!("fp_rate: {e}")))?;
        let n = poisson.sample(&mut rng) as usize;
        for _ in 0..n {
            let x = rng.random::<f64>() * width as f64;
            let y = rng.random::<f64>() * height as f64;
            centers.push((x, y));
        }
    }

    let mut acc = vec![0.0f64; width * height];
    let sigma = cfg.sigma_px;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let reach = TRUNCATION_SIGMAS * sigma;
    for &(hx, hy) in &centers {
        if !(hx.is_finite() && hy.is_finite()) {
            continue;
        }
        // Pixel centers sit at (u + 0.5, v + 0.5).
        let u0 = (hx - reach - 0.5).ceil().max(0.0);
        let u1 = (hx + reach - 0.5).floor().min(width as f64 - 1.0);
        let v0 = (hy - reach - 0.5).ceil().max(0.0);
        let v1 = (hy + reach - 0.5).floor().min(height as f64 - 1.0);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for v in v0 as usize..=v1 as usize {
            let dy = v as f64 + 0.5 - hy;
            let row = &mut acc[v * width..(v + 1) * width];
            for (u, cell) in row.iter_mut().enumerate().take(u1 as usize + 1).skip(u0 as usize) {
                let dx = u as f64 + 0.5 - hx;
                *cell += norm * (-(dx * dx + dy * dy) * inv_two_var).exp();
            }
        }
    }
    Ok(DensityMap {
        width,
        height,
        values: acc.into_iter().map(|v| v as f32).collect(),
    })
}

/// Thresholds, dilates and inverts a density map into final occupancy
/// (`255 = free`, `0 = occupied`).
pub fn occupancy_from_density(d: &DensityMap) -> OccupancyGrid {
    let min = d.values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let mut crowd: Vec<bool> = d
        .values
        .iter()
        .map(|&v| v as f64 - min > MIN_EQUALITY_TOLERANCE)
        .collect();
    for _ in 0..DILATION_PASSES {
        crowd = dilate_square(&crowd, d.width, d.height, DILATION_HALF_WIDTH);
    }
    OccupancyGrid {
        width: d.width,
        height: d.height,
        values: crowd
            .into_iter()
            .map(|c| if c { CELL_OCCUPIED } else { CELL_FREE })
            .collect(),
    }
}

/// Binary dilation with a `(2k+1)x(2k+1)` all-ones element; pixels outside the
/// image count as unset. Runs as a row pass followed by a column pass.
pub(crate) fn dilate_square(mask: &[bool], width: usize, height: usize, k: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..height {
        let line = &mask[y * width..(y + 1) * width];
        for x in 0..width {
            let lo = x.saturating_sub(k);
            let hi = (x + k).min(width - 1);
            rows[y * width + x] = line[lo..=hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; mask.len()];
    for x in 0..width {
        for y in 0..height {
            let lo = y.saturating_sub(k);
            let hi = (y + k).min(height - 1);
            out[y * width + x] = (lo..=hi).any(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// Outcome of reading a density raster.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityLoad {
    pub map: DensityMap,
    /// Number of negative stored values that were clamped to zero.
    pub clamped: usize,
}

/// Writes the `DMAP` raster: an ASCII header `DMAP <w> <h>\n` followed by
/// little-endian `f32` values in row-major order.
pub fn write_density<W: Write>(d: &DensityMap, mut w: W) -> Result<()> {
    writeln!(w, "{DMAP_MAGIC} {} {}", d.width, d.height)?;
    let mut buf = Vec::with_capacity(d.values.len() * 4);
    for v in &d.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_density(d: &DensityMap, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_density(d, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a `DMAP` raster. Negative values are clamped to zero and counted.
pub fn read_density<R: Read>(mut r: R) -> Result<DensityLoad> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedFile("missing DMAP header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::MalformedFile("header is not ASCII".into()))?;
    let mut parts = header.split(' ');
    if parts.next() != Some(DMAP_MAGIC) {
        return Err(Error::MalformedFile(format!("bad magic in header {header:?}")));
    }
    let mut dim = |name: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::MalformedFile(format!("bad {name} in header {header:?}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    if parts.next().is_some() {
        return Err(Error::MalformedFile(format!("trailing fields in header {header:?}")));
    }
    let payload = &bytes[newline + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedFile("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::MalformedFile(format!(
            "payload has {} bytes, expected {expected} for {width}x{height}",
            payload.len()
        )));
    }
    let mut clamped = 0;
    let mut values = Vec::with_capacity(width * height);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::MalformedFile(format!("non-finite density value {v}")));
        }
        if v < 0.0 {
            clamped += 1;
            values.push(0.0);
        } else {
            values.push(v);
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} negative density values to zero");
    }
    Ok(DensityLoad {
        map: DensityMap {
            width,
            height,
            values,
        },
        clamped,
    })
}

pub fn load_density(path: impl AsRef<Path>) -> Result<DensityLoad> {
    read_density(BufReader::new(File::open(path)?))
}
