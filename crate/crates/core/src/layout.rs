//! Scale targets for point annotations.
//!
//! Points split the image into raster Voronoi cells. Inside each cell a
//! two-marker watershed grows the object around its point, and the extent
//! of the resulting mask in the frame of a predicted angle gives the width
//! and height target.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, PointAnnotation};

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must have positive dimensions"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Paints every pixel of `mask` with `value`.
    pub fn paint(&mut self, mask: &BinaryMask, value: f64) -> Result<()> {
        if mask.width != self.width || mask.height != self.height {
            return Err(Error::invalid("mask and image differ in size"));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("intensity {value} outside [0, 1]")));
        }
        for (px, &on) in self.data.iter_mut().zip(&mask.data) {
            if on {
                *px = value;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} cells, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `(x, y)` of every set pixel in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(move |(i, _)| (i % w, i / w))
    }
}

/// Pixels whose centers `(x + 0.5, y + 0.5)` fall inside the box.
pub fn rasterize_box(width: usize, height: usize, b: &OrientedBox) -> BinaryMask {
    let (s, c) = b.theta.sin_cos();
    let mut mask = BinaryMask::empty(width, height);
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 + 0.5 - b.cx;
            let dy = y as f64 + 0.5 - b.cy;
            let u = c * dx + s * dy;
            let v = -s * dx + c * dy;
            if u.abs() <= 0.5 * b.w && v.abs() <= 0.5 * b.h {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Raster Voronoi partition: `cell_id[y * width + x]` indexes `seeds`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiLabelMap {
    pub width: usize,
    pub height: usize,
    pub cell_id: Vec<usize>,
    pub seeds: Vec<PointAnnotation>,
}

impl VoronoiLabelMap {
    pub fn get(&self, x: usize, y: usize) -> usize {
        self.cell_id[y * self.width + x]
    }
}

/// Pixel holding a point: `(⌊x⌋, ⌊y⌋)`.
pub fn seed_pixel(p: &PointAnnotation) -> (usize, usize) {
    (p.x.floor() as usize, p.y.floor() as usize)
}

/// Assigns every pixel to the seed whose pixel center is nearest.
///
/// Distances are squared integer offsets between the pixel and the pixel
/// holding each seed, so ties are exact; they go to the lowest seed index.
/// Two seeds may not share a pixel.
pub fn voronoi_partition(seeds: &[PointAnnotation], width: usize, height: usize) -> Result<VoronoiLabelMap> {
    if seeds.is_empty() {
        return Err(Error::invalid("Voronoi partition needs at least one seed"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid("image must have positive dimensions"));
    }
    let mut occupied = vec![usize::MAX; width * height];
    let mut centers = Vec::with_capacity(seeds.len());
    for (k, s) in seeds.iter().enumerate() {
        s.check_bounds(width, height)?;
        let (sx, sy) = seed_pixel(s);
        let slot = &mut occupied[sy * width + sx];
        if *slot != usize::MAX {
            return Err(Error::invalid(format!(
                "seeds {} and {k} fall in the same pixel ({sx}, {sy})",
                *slot
            )));
        }
        *slot = k;
        centers.push((sx as i64, sy as i64));
    }

    let mut cell_id = Vec::with_capacity(width * height);
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let mut best = 0;
            let mut best_d = i64::MAX;
            for (k, &(sx, sy)) in centers.iter().enumerate() {
                let d = (x - sx).pow(2) + (y - sy).pow(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            cell_id.push(best);
        }
    }
    Ok(VoronoiLabelMap {
        width,
        height,
        cell_id,
        seeds: seeds.to_vec(),
    })
}

/// Gradient magnitude by central differences with replicated edges.
pub fn gradient_magnitude(image: &RasterImage) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = 0.5 * (image.get((x + 1).min(w - 1), y) - image.get(x.saturating_sub(1), y));
            let gy = 0.5 * (image.get(x, (y + 1).min(h - 1)) - image.get(x, y.saturating_sub(1)));
            out.push(gx.hypot(gy));
        }
    }
    out
}

const UNLABELED: u8 = 0;
const FOREGROUND: u8 = 1;
const BACKGROUND: u8 = 2;

struct FloodEntry {
    priority: f64,
    age: u64,
    index: usize,
    label: u8,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FloodEntry {}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloodEntry {
    // BinaryHeap is a max-heap: lowest priority, then oldest, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .priority
            .total_cmp(&self.priority)
            .then_with(|| other.age.cmp(&self.age))
    }
}

/// 4-neighbors in the fixed order up, left, right, down.
fn neighbors(index: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (index % width, index / width);
    [
        (y > 0).then(|| index - width),
        (x > 0).then(|| index - 1),
        (x + 1 < width).then(|| index + 1),
        (y + 1 < height).then(|| index + width),
    ]
    .into_iter()
    .flatten()
}

/// Marker watershed inside each Voronoi cell.
///
/// The seed pixel is the foreground marker; cell pixels touching another
/// cell or the image border are the background marker. Both flood the
/// gradient-magnitude surface through 4-connected neighbors of the same
/// cell, lowest gradient first and first-queued first among equals, with
/// each pixel taking the label of the entry that reaches it. Returns one
/// foreground mask per seed, in seed order.
pub fn watershed_segment(image: &RasterImage, cells: &VoronoiLabelMap) -> Result<Vec<BinaryMask>> {
    let (w, h) = (image.width, image.height);
    if cells.width != w || cells.height != h || cells.cell_id.len() != w * h {
        return Err(Error::invalid(format!(
            "image is {}x{} but Voronoi map is {}x{}",
            w, h, cells.width, cells.height
        )));
    }
    if let Some(&bad) = cells.cell_id.iter().find(|&&c| c >= cells.seeds.len()) {
        return Err(Error::invalid(format!("cell id {bad} has no seed")));
    }
    let grad = gradient_magnitude(image);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cells.seeds.len()];
    for (i, &c) in cells.cell_id.iter().enumerate() {
        members[c].push(i);
    }

    let mut labels = vec![UNLABELED; w * h];
    let mut masks = Vec::with_capacity(cells.seeds.len());
    for (k, seed) in cells.seeds.iter().enumerate() {
        let (sx, sy) = seed_pixel(seed);
        let seed_index = sy * w + sx;
        if cells.cell_id[seed_index] != k {
            return Err(Error::invalid(format!("seed {k} does not lie in its own Voronoi cell")));
        }
        let in_cell = |i: usize| cells.cell_id[i] == k;

        for &i in &members[k] {
            let on_border = {
                let (x, y) = (i % w, i / w);
                x == 0 || y == 0 || x + 1 == w || y + 1 == h
            };
            labels[i] = if i == seed_index {
                FOREGROUND
            } else if on_border || neighbors(i, w, h).any(|n| !in_cell(n)) {
                BACKGROUND
            } else {
                UNLABELED
            };
        }

        let mut heap = BinaryHeap::new();
        let mut age = 0u64;
        let mut push_neighbors = |heap: &mut BinaryHeap<FloodEntry>, labels: &[u8], i: usize| {
            for n in neighbors(i, w, h) {
                if in_cell(n) && labels[n] == UNLABELED {
                    heap.push(FloodEntry {
                        priority: grad[n],
                        age,
                        index: n,
                        label: labels[i],
                    });
                    age += 1;
                }
            }
        };
        for &i in &members[k] {
            if labels[i] != UNLABELED {
                push_neighbors(&mut heap, &labels, i);
            }
        }
        while let Some(entry) = heap.pop() {
            if labels[entry.index] != UNLABELED {
                continue;
            }
            labels[entry.index] = entry.label;
            push_neighbors(&mut heap, &labels, entry.index);
        }

        let mut mask = BinaryMask::empty(w, h);
        for &i in &members[k] {
            if labels[i] == FOREGROUND {
                mask.data[i] = true;
            }
        }
        masks.push(mask);
    }
    Ok(masks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleTarget {
    pub w_t: f64,
    pub h_t: f64,
    pub valid: bool,
}

impl ScaleTarget {
    pub const INVALID: ScaleTarget = ScaleTarget {
        w_t: 0.0,
        h_t: 0.0,
        valid: false,
    };
}

/// Width and height of a mask measured along the axes of angle `theta`.
///
/// Pixel coordinates are rotated by `−theta` about the mask centroid; each
/// extent is `max − min + 1` pixels. An empty mask yields an invalid target.
pub fn scale_target_from_mask(mask: &BinaryMask, theta: f64) -> ScaleTarget {
    let n = mask.count();
    if n == 0 || !theta.is_finite() {
        return ScaleTarget::INVALID;
    }
    let (sum_x, sum_y) = mask
        .pixels()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x as f64, sy + y as f64));
    let (mx, my) = (sum_x / n as f64, sum_y / n as f64);
    let (s, c) = theta.sin_cos();
    let mut u_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut v_range = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in mask.pixels() {
        let dx = x as f64 - mx;
        let dy = y as f64 - my;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        u_range = (u_range.0.min(u), u_range.1.max(u));
        v_range = (v_range.0.min(v), v_range.1.max(v));
    }
    ScaleTarget {
        w_t: u_range.1 - u_range.0 + 1.0,
        h_t: v_range.1 - v_range.0 + 1.0,
        valid: true,
    }
}

/// Binary (P5) PGM reading and writing.
pub mod pgm {
    use std::io::{Read, Write};

    use super::{BinaryMask, RasterImage};
    use crate::error::{Error, Result};

    fn bad(msg: impl Into<String>) -> Error {
        Error::invalid(format!("PGM: {}", msg.into()))
    }

    /// Reads an 8-bit P5 image, scaling samples by `1 / maxval`.
    pub fn read(mut reader: impl Read) -> Result<RasterImage> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(bad("only binary P5 images are supported"));
        }
        let mut number = |what: &str| -> Result<usize> { token()?.parse().map_err(|_| bad(format!("bad {what}"))) };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if !(1..=255).contains(&maxval) {
            return Err(bad(format!("maxval {maxval} not in 1..=255")));
        }
        // One whitespace byte separates the header from the raster.
        let start = pos + 1;
        let n = width * height;
        if bytes.len() < start + n {
            return Err(bad("raster shorter than width x height"));
        }
        let data = bytes[start..start + n]
            .iter()
            .map(|&b| (b as f64 / maxval as f64).min(1.0))
            .collect();
        RasterImage::new(width, height, data)
    }

    /// Writes intensities rounded to 8 bits.
    pub fn write_image(mut writer: impl Write, image: &RasterImage) -> Result<()> {
        write!(writer, "P5\n{} {}\n255\n", image.width(), image.height())?;
        let raster: Vec<u8> = image.data().iter().map(|v| (v * 255.0).round() as u8).collect();
        writer.write_all(&raster)?;
        Ok(())
    }

    /// Writes a mask as 0 / 255.
    pub fn write_mask(mut writer: impl Write, mask: &BinaryMask) -> Result<()> {
        write!(writer, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
        let raster: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
        writer.write_all(&raster)?;
        Ok(())
    }
}
