//! Seeded synthetic saliency data: one bright noisy rectangle on a dark
//! noisy background, with the rectangle as ground truth.
//!
//! Rectangles are aligned to the particle grid so that block-level labels
//! can describe the ground truth exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Rect;
use crate::error::{Error, Result};
use crate::raster::{save_color_png, ColorImage, GtMask};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub block_size: usize,
    pub background_mean: f64,
    pub foreground_mean: f64,
    pub noise_sd: f64,
    /// Smallest rectangle side, in blocks.
    pub min_blocks: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            count: 200,
            width: 128,
            height: 96,
            block_size: 16,
            background_mean: 60.0,
            foreground_mean: 180.0,
            noise_sd: 10.0,
            min_blocks: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub name: String,
    pub image: ColorImage,
    pub mask: GtMask,
    pub rect: Rect,
}

fn check(params: &SynthParams) -> Result<(usize, usize)> {
    let cols = params.width / params.block_size.max(1);
    let rows = params.height / params.block_size.max(1);
    if params.block_size == 0 || params.min_blocks == 0 || cols < params.min_blocks || rows < params.min_blocks {
        return Err(Error::InvalidParameter(format!(
            "{}x{} image with {}-pixel blocks cannot hold a {m}x{m}-block rectangle",
            params.width,
            params.height,
            params.block_size,
            m = params.min_blocks
        )));
    }
    if !(params.noise_sd.is_finite() && params.noise_sd >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise sd {} must be >= 0", params.noise_sd)));
    }
    Ok((cols, rows))
}

/// Rectangle sides are uniform between `min_blocks` and half the grid
/// (rounded up, at least `min_blocks`); the position is uniform over the
/// placements that fit.
pub fn generate(params: &SynthParams) -> Result<Vec<SynthSample>> {
    let (cols, rows) = check(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.noise_sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let max_w = cols.div_ceil(2).max(params.min_blocks);
    let max_h = rows.div_ceil(2).max(params.min_blocks);
    let b = params.block_size;
    (0..params.count)
        .map(|i| {
            let bw = rng.random_range(params.min_blocks..=max_w);
            let bh = rng.random_range(params.min_blocks..=max_h);
            let bx = rng.random_range(0..=cols - bw);
            let by = rng.random_range(0..=rows - bh);
            let rect = Rect {
                x: bx * b,
                y: by * b,
                width: bw * b,
                height: bh * b,
            };
            let inside = |x: usize, y: usize| {
                x >= rect.x && x < rect.x + rect.width && y >= rect.y && y < rect.y + rect.height
            };
            let image = ColorImage::from_fn(params.width, params.height, |x, y| {
                let mean = if inside(x, y) {
                    params.foreground_mean
                } else {
                    params.background_mean
                };
                let v = (mean + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
                [v, v, v]
            })?;
            let mask = GtMask::new(
                params.width,
                params.height,
                (0..params.height)
                    .flat_map(|y| (0..params.width).map(move |x| (x, y)))
                    .map(|(x, y)| u8::from(inside(x, y)))
                    .collect(),
            )?;
            Ok(SynthSample {
                name: format!("synth_{i:04}"),
                image,
                mask,
                rect,
            })
        })
        .collect()
}

/// Writes `samples` as `dir/img/<name>.png` and `dir/gt/<name>.png`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<()> {
    for sub in ["img", "gt"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in samples {
        save_color_png(&s.image, &dir.join("img").join(format!("{}.png", s.name)))?;
        s.mask.save_png(&dir.join("gt").join(format!("{}.png", s.name)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{load_image, load_mask};

    #[test]
    fn rectangles_are_block_aligned_and_masked() {
        let params = SynthParams { count: 30, seed: 3, ..SynthParams::default() };
        let samples = generate(&params).unwrap();
        assert_eq!(samples.len(), 30);
        for s in &samples {
            let r = s.rect;
            assert!(r.x % 16 == 0 && r.y % 16 == 0 && r.width % 16 == 0 && r.height % 16 == 0);
            assert!(r.width >= 32 && r.height >= 32);
            assert!(r.x + r.width <= 128 && r.y + r.height <= 96);
            let salient = s.mask.values().iter().filter(|&&v| v == 1).count();
            assert_eq!(salient, r.area());
            let (mut fg, mut bg) = (0.0, 0.0);
            for y in 0..96 {
                for x in 0..128 {
                    let v = f64::from(s.image.get(x, y)[0]);
                    if s.mask.get(x, y) == 1 {
                        fg += v;
                    } else {
                        bg += v;
                    }
                }
            }
            let fg = fg / salient as f64;
            let bg = bg / (128 * 96 - salient) as f64;
            assert!((fg - 180.0).abs() < 3.0 && (bg - 60.0).abs() < 3.0, "{fg} {bg}");
        }
    }

    #[test]
    fn seeded_and_written() {
        let a = generate(&SynthParams { count: 3, seed: 9, ..SynthParams::default() }).unwrap();
        let b = generate(&SynthParams { count: 3, seed: 9, ..SynthParams::default() }).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthParams { count: 3, seed: 10, ..SynthParams::default() }).unwrap();
        assert_ne!(a, c);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &a).unwrap();
        let img = load_image(&dir.path().join("img/synth_0001.png")).unwrap();
        let mask = load_mask(&dir.path().join("gt/synth_0001.png")).unwrap();
        assert_eq!(img, a[1].image);
        assert_eq!(mask, a[1].mask);
    }

    #[test]
    fn impossible_geometry_is_rejected() {
        assert!(generate(&SynthParams { width: 20, ..SynthParams::default() }).is_err());
        assert!(generate(&SynthParams { block_size: 0, ..SynthParams::default() }).is_err());
    }
}
