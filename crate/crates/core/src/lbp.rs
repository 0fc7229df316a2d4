//! Local binary patterns on a circular, sub-pixel neighbourhood.
//!
//! Bit `p` of a code compares the neighbour at angle `2πp/P` on a circle of
//! radius `R` with the centre pixel and is set when the neighbour is not
//! darker (`S(d) = 1` iff `d >= 0`). The color variant thresholds the
//! neighbour-minus-centre color difference against a hyperplane with unit
//! normal `n`.
//!
//! Sample offsets are rounded to a 1/65536 pixel lattice before
//! interpolation. On integer-valued images every interpolated sample is then
//! an exact dyadic rational, so ties such as the zero differences of a flat
//! region (or of a ramp sampled at `cos(3π/2)`) are decided exactly instead
//! of by rounding noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dataset::Rect;
use crate::error::{Error, Result};
use crate::raster::{ColorImage, GrayImage};

const OFFSET_LATTICE: f64 = 65536.0;

/// Neighbour count `P` and radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbpParams {
    neighbors: usize,
    radius: f64,
}

impl LbpParams {
    pub fn new(neighbors: usize, radius: f64) -> Result<Self> {
        if !(4..=24).contains(&neighbors) {
            return Err(Error::InvalidParameter(format!(
                "LBP neighbour count {neighbors} must lie in 4..=24"
            )));
        }
        if !(radius.is_finite() && radius >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "LBP radius {radius} must be at least 1"
            )));
        }
        Ok(Self { neighbors, radius })
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Number of distinct codes, `2^P`.
    pub fn code_count(&self) -> u32 {
        1 << self.neighbors
    }

    fn offsets(&self) -> Vec<(f64, f64)> {
        neighbor_coords(0.0, 0.0, self)
            .into_iter()
            .map(|(dx, dy)| {
                (
                    (dx * OFFSET_LATTICE).round() / OFFSET_LATTICE,
                    (dy * OFFSET_LATTICE).round() / OFFSET_LATTICE,
                )
            })
            .collect()
    }
}

impl Default for LbpParams {
    fn default() -> Self {
        Self {
            neighbors: 8,
            radius: 1.0,
        }
    }
}

/// Parameters of the hyperplane color LBP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorLbpParams {
    base: LbpParams,
    normal: [f64; 3],
}

impl ColorLbpParams {
    pub fn new(base: LbpParams, normal: [f64; 3]) -> Result<Self> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "hyperplane normal {normal:?} must have unit length (has {norm})"
            )));
        }
        Ok(Self { base, normal })
    }

    /// Normal along the achromatic axis, `(1, 1, 1) / sqrt(3)`.
    pub fn achromatic(base: LbpParams) -> Self {
        let c = 1.0 / 3f64.sqrt();
        Self {
            base,
            normal: [c, c, c],
        }
    }

    pub fn base(&self) -> &LbpParams {
        &self.base
    }

    pub fn normal(&self) -> [f64; 3] {
        self.normal
    }
}

/// Mean code and normalized code histogram of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbpSummary {
    pub mean_code: f64,
    /// Non-empty bins as `(code, frequency)`, ascending by code. Bins not
    /// listed are zero.
    pub histogram: Vec<(u32, f64)>,
}

impl LbpSummary {
    fn from_codes(codes: impl Iterator<Item = u32>) -> Result<Self> {
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        let (mut n, mut total) = (0u64, 0u64);
        for code in codes {
            *counts.entry(code).or_default() += 1;
            n += 1;
            total += u64::from(code);
        }
        if n == 0 {
            return Err(Error::Empty("LBP block has no pixels".into()));
        }
        Ok(Self {
            mean_code: total as f64 / n as f64,
            histogram: counts
                .into_iter()
                .map(|(code, c)| (code, c as f64 / n as f64))
                .collect(),
        })
    }

    /// Frequency of `code`.
    pub fn bin(&self, code: u32) -> f64 {
        self.histogram
            .binary_search_by_key(&code, |&(c, _)| c)
            .map_or(0.0, |i| self.histogram[i].1)
    }
}

/// Circle sample points `(x_c + R cos(2πp/P), y_c + R sin(2πp/P))` for
/// `p = 0..P`.
pub fn neighbor_coords(x_c: f64, y_c: f64, params: &LbpParams) -> Vec<(f64, f64)> {
    let p_count = params.neighbors as f64;
    (0..params.neighbors)
        .map(|p| {
            let angle = 2.0 * PI * p as f64 / p_count;
            (
                x_c + params.radius * angle.cos(),
                y_c + params.radius * angle.sin(),
            )
        })
        .collect()
}

#[inline]
fn blend(width: usize, height: usize, x: f64, y: f64, fetch: impl Fn(usize, usize) -> f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (a, b) = (fetch(x0, y0), fetch(x1, y0));
    let (c, d) = (fetch(x0, y1), fetch(x1, y1));
    let top = a + fx * (b - a);
    let bottom = c + fx * (d - c);
    top + fy * (bottom - top)
}

/// Bilinear interpolation with coordinates clamped to the image.
pub fn bilinear_sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    blend(img.width(), img.height(), x, y, |i, j| img.get(i, j))
}

fn check_center(width: usize, height: usize, x: usize, y: usize) -> Result<()> {
    if x >= width || y >= height {
        return Err(Error::OutOfBounds {
            x,
            y,
            width,
            height,
        });
    }
    Ok(())
}

fn gray_code(img: &GrayImage, x_c: usize, y_c: usize, offsets: &[(f64, f64)]) -> u32 {
    let center = img.get(x_c, y_c);
    offsets.iter().enumerate().fold(0, |code, (p, &(dx, dy))| {
        let v = bilinear_sample(img, x_c as f64 + dx, y_c as f64 + dy);
        code | (u32::from(v - center >= 0.0) << p)
    })
}

/// Grayscale LBP code of the pixel at `(x_c, y_c)`.
pub fn lbp_code(img: &GrayImage, x_c: usize, y_c: usize, params: &LbpParams) -> Result<u32> {
    check_center(img.width(), img.height(), x_c, y_c)?;
    Ok(gray_code(img, x_c, y_c, &params.offsets()))
}

fn color_code(img: &ColorImage, x_c: usize, y_c: usize, normal: [f64; 3], offsets: &[(f64, f64)]) -> u32 {
    let center = img.get(x_c, y_c);
    offsets.iter().enumerate().fold(0, |code, (p, &(dx, dy))| {
        let (x, y) = (x_c as f64 + dx, y_c as f64 + dy);
        let mut terms = [0.0; 6];
        for ch in 0..3 {
            let v = blend(img.width(), img.height(), x, y, |i, j| f64::from(img.get(i, j)[ch]));
            let diff = v - f64::from(center[ch]);
            let (prod, err) = two_product(normal[ch], diff);
            terms[2 * ch] = prod;
            terms[2 * ch + 1] = err;
        }
        code | (u32::from(exact_sum_sign(&terms) >= 0) << p)
    })
}

/// Hyperplane color LBP code: bit `p` is set when
/// `n1 (r_p - r_c) + n2 (g_p - g_c) + n3 (b_p - b_c) >= 0`, with the
/// neighbour color sampled per channel at the same points as [`lbp_code`].
/// The sign of the projection is evaluated exactly.
pub fn color_lbp_code(img: &ColorImage, x_c: usize, y_c: usize, params: &ColorLbpParams) -> Result<u32> {
    check_center(img.width(), img.height(), x_c, y_c)?;
    Ok(color_code(img, x_c, y_c, params.normal, &params.base.offsets()))
}

fn check_block(width: usize, height: usize, block: &Rect) -> Result<()> {
    if block.area() == 0 {
        return Err(Error::Empty("LBP block is empty".into()));
    }
    if block.x + block.width > width || block.y + block.height > height {
        return Err(Error::DimensionMismatch(format!(
            "block {block:?} exceeds the {width}x{height} image"
        )));
    }
    Ok(())
}

/// Codes of every pixel in `block`, summarized.
pub fn lbp_block_summary(img: &GrayImage, block: &Rect, params: &LbpParams) -> Result<LbpSummary> {
    check_block(img.width(), img.height(), block)?;
    let offsets = params.offsets();
    LbpSummary::from_codes(block.pixels().map(|(x, y)| gray_code(img, x, y, &offsets)))
}

/// Color-LBP counterpart of [`lbp_block_summary`].
pub fn color_lbp_block_summary(img: &ColorImage, block: &Rect, params: &ColorLbpParams) -> Result<LbpSummary> {
    check_block(img.width(), img.height(), block)?;
    let offsets = params.base.offsets();
    LbpSummary::from_codes(
        block
            .pixels()
            .map(|(x, y)| color_code(img, x, y, params.normal, &offsets)),
    )
}

#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Sign (-1, 0, 1) of the exact sum of `values`, using non-overlapping
/// partial sums.
fn exact_sum_sign(values: &[f64]) -> i8 {
    let mut partials: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        let mut x = v;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    match partials.iter().rev().find(|v| **v != 0.0) {
        Some(v) if *v > 0.0 => 1,
        Some(_) => -1,
        None => 0,
    }
}
