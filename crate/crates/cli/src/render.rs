//! Binary PGM/PPM frame renders.

use std::io::{self, BufRead, Write};

use safeland::density::OccupancyGrid;
use safeland::geometry::Roi;
use safeland::pipeline::Perception;
use safeland::world::FrameRecord;

/// Top-down render resolution, meters per pixel.
pub const RENDER_CELL: f64 = 0.1;

const FREE: [u8; 3] = [235, 235, 235];
const OCCUPIED: [u8; 3] = [40, 40, 40];
const UNSEEN: [u8; 3] = [150, 150, 150];
const ACTOR: [u8; 3] = [220, 30, 30];
const PROPOSAL: [u8; 3] = [30, 170, 60];
const TRACK: [u8; 3] = [40, 90, 220];
const TARGET: [u8; 3] = [240, 190, 0];
const DRONE: [u8; 3] = [200, 0, 200];

/// An RGB raster; `channels` is 1 for grayscale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn rgb(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            channels: 3,
            data: fill.iter().copied().cycle().take(width * height * 3).collect(),
        }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(w, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn read<R: BufRead>(mut r: R) -> io::Result<Self> {
        let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
        let mut header = Vec::new();
        let mut fields = Vec::new();
        while fields.len() < 4 {
            let mut byte = [0u8];
            r.read_exact(&mut byte)?;
            if byte[0].is_ascii_whitespace() {
                if !header.is_empty() {
                    fields.push(String::from_utf8(std::mem::take(&mut header)).map_err(|_| bad("header"))?);
                }
            } else {
                header.push(byte[0]);
            }
        }
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(bad("not a binary PGM/PPM")),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height) = (num(&fields[1])?, num(&fields[2])?);
        if num(&fields[3])? != 255 {
            return Err(bad("only 8-bit rasters are supported"));
        }
        let mut data = vec![0u8; width * height * channels];
        r.read_exact(&mut data)?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

/// Image-plane occupancy as a grayscale raster.
pub fn occupancy_pgm(o: &OccupancyGrid) -> Raster {
    Raster {
        width: o.width(),
        height: o.height(),
        channels: 1,
        data: o.values().to_vec(),
    }
}

/// Top-down composite of one frame over the ROI: head-plane occupancy when
/// the frame was perceived, actors, proposals, tracks, target and drone.
/// North is up.
pub fn frame_ppm(roi: &Roi, frame: &FrameRecord, perception: Option<&Perception>) -> Raster {
    let width = ((roi.max_x - roi.min_x) / RENDER_CELL).round() as usize;
    let height = ((roi.max_y - roi.min_y) / RENDER_CELL).round() as usize;
    let mut img = Raster::rgb(width, height, FREE);
    let to_px = |x: f64, y: f64| {
        let px = ((x - roi.min_x) / RENDER_CELL).floor() as i64;
        let py = height as i64 - 1 - ((y - roi.min_y) / RENDER_CELL).floor() as i64;
        (px, py)
    };

    if let Some(p) = perception {
        for py in 0..height {
            for px in 0..width {
                let x = roi.min_x + (px as f64 + 0.5) * RENDER_CELL;
                let y = roi.min_y + ((height - 1 - py) as f64 + 0.5) * RENDER_CELL;
                let color = match p.plane.cell_of(x, y) {
                    Some((r, c)) if !p.visibility.is_free(r, c) => UNSEEN,
                    Some((r, c)) if !p.plane.is_free(r, c) => OCCUPIED,
                    Some(_) => FREE,
                    None => UNSEEN,
                };
                img.put(px as i64, py as i64, color);
            }
        }
    }

    let mut circle = |cx: f64, cy: f64, r: f64, color: [u8; 3]| {
        let steps = ((2.0 * std::f64::consts::PI * r / (RENDER_CELL * 0.5)).ceil() as usize).max(16);
        for k in 0..steps {
            let a = k as f64 / steps as f64 * std::f64::consts::TAU;
            let (px, py) = to_px(cx + r * a.cos(), cy + r * a.sin());
            img.put(px, py, color);
        }
    };
    for p in &frame.proposals {
        circle(p.cx, p.cy, p.radius, PROPOSAL);
    }
    for t in &frame.tracks {
        circle(t.x, t.y, t.r, TRACK);
    }
    if let Some(t) = &frame.target {
        circle(t.x, t.y, t.r, TARGET);
        circle(t.x, t.y, (t.r - RENDER_CELL).max(RENDER_CELL), TARGET);
    }
    for a in &frame.actors {
        let (px, py) = to_px(a[0], a[1]);
        for dy in -1..=1 {
            for dx in -1..=1 {
                img.put(px + dx, py + dy, ACTOR);
            }
        }
    }
    let (px, py) = to_px(frame.drone[0], frame.drone[1]);
    for d in -4..=4 {
        img.put(px + d, py + d, DRONE);
        img.put(px + d, py - d, DRONE);
    }
    img
}

/// Reads a raster from a file.
pub fn read_raster(path: &std::path::Path) -> io::Result<Raster> {
    Raster::read(io::BufReader::new(std::fs::File::open(path)?))
}
