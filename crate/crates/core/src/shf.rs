//! Spatial color histograms over rectangular templates, the average
//! salient-object histogram, and the distance feature measured against it.

use serde::{Deserialize, Serialize};

use crate::dataset::Rect;
use crate::error::{Error, Result};
use crate::raster::ColorImage;

/// A template rectangle in block-relative fractional coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Template {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    fn validate(&self) -> Result<()> {
        let Template { x, y, w, h } = *self;
        let ok = [x, y, w, h].iter().all(|v| v.is_finite())
            && x >= 0.0
            && y >= 0.0
            && w > 0.0
            && h > 0.0
            && x + w <= 1.0 + 1e-12
            && y + h <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "template {self:?} must have positive extent inside the unit square"
            )))
        }
    }

    /// Pixel region of this template inside `block`: origin rounded down,
    /// extent rounded up to at least one pixel, clipped to the block.
    pub fn region(&self, block: &Rect) -> Result<Rect> {
        let (bw, bh) = (block.width as f64, block.height as f64);
        let x0 = ((self.x * bw).floor() as usize).min(block.width);
        let y0 = ((self.y * bh).floor() as usize).min(block.height);
        let w = ((self.w * bw).ceil() as usize).max(1).min(block.width - x0);
        let h = ((self.h * bh).ceil() as usize).max(1).min(block.height - y0);
        if w == 0 || h == 0 {
            return Err(Error::InvalidParameter(format!(
                "template {self:?} covers no pixel of a {}x{} block",
                block.width, block.height
            )));
        }
        Ok(Rect {
            x: block.x + x0,
            y: block.y + y0,
            width: w,
            height: h,
        })
    }
}

/// The full block followed by its four quadrants.
pub fn default_templates() -> Vec<Template> {
    vec![
        Template::new(0.0, 0.0, 1.0, 1.0),
        Template::new(0.0, 0.0, 0.5, 0.5),
        Template::new(0.5, 0.0, 0.5, 0.5),
        Template::new(0.0, 0.5, 0.5, 0.5),
        Template::new(0.5, 0.5, 0.5, 0.5),
    ]
}

/// Histogram distance used for the feature `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    /// `sum |a - b|`, in `[0, 2]` for normalized histograms.
    #[default]
    L1,
    /// `sum (a - b)^2 / (a + b)` over bins with `a + b > 0`, also in `[0, 2]`.
    Chi2,
}

impl Distance {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Distance::Chi2 => a
                .iter()
                .zip(b)
                .filter(|(x, y)| *x + *y > 0.0)
                .map(|(x, y)| (x - y) * (x - y) / (x + y))
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShfParams {
    templates: Vec<Template>,
    levels: usize,
}

impl ShfParams {
    pub fn new(templates: Vec<Template>, levels: usize) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::InvalidParameter("template list is empty".into()));
        }
        for t in &templates {
            t.validate()?;
        }
        // levels^3 bins; 64 levels is already 262144 bins per template.
        if !(2..=64).contains(&levels) {
            return Err(Error::InvalidParameter(format!(
                "quantization levels {levels} must lie in 2..=64"
            )));
        }
        Ok(Self { templates, levels })
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn bins(&self) -> usize {
        self.levels.pow(3)
    }
}

impl Default for ShfParams {
    fn default() -> Self {
        Self {
            templates: default_templates(),
            levels: 4,
        }
    }
}

/// One normalized `levels^3`-bin histogram per template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialHistogram {
    pub per_template: Vec<Vec<f64>>,
}

impl SpatialHistogram {
    pub fn templates(&self) -> usize {
        self.per_template.len()
    }

    fn same_shape(&self, other: &SpatialHistogram) -> bool {
        self.per_template.len() == other.per_template.len()
            && self
                .per_template
                .iter()
                .zip(&other.per_template)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Mean spatial histogram of the salient training particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageShf {
    pub model: SpatialHistogram,
    pub sample_count: usize,
}

/// Joint RGB bin: `r_bin * levels^2 + g_bin * levels + b_bin` with
/// `bin = floor(channel * levels / 256)`.
#[inline]
pub fn quantize_color(pixel: [u8; 3], levels: usize) -> usize {
    let bin = |v: u8| usize::from(v) * levels / 256;
    bin(pixel[0]) * levels * levels + bin(pixel[1]) * levels + bin(pixel[2])
}

pub fn spatial_histogram(img: &ColorImage, block: &Rect, params: &ShfParams) -> Result<SpatialHistogram> {
    if block.area() == 0 || block.x + block.width > img.width() || block.y + block.height > img.height() {
        return Err(Error::DimensionMismatch(format!(
            "block {block:?} is empty or exceeds the {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let per_template = params
        .templates
        .iter()
        .map(|t| {
            let region = t.region(block)?;
            let mut hist = vec![0.0; params.bins()];
            for (x, y) in region.pixels() {
                hist[quantize_color(img.get(x, y), params.levels)] += 1.0;
            }
            let n = region.area() as f64;
            hist.iter_mut().for_each(|v| *v /= n);
            Ok(hist)
        })
        .collect::<Result<_>>()?;
    Ok(SpatialHistogram { per_template })
}

/// Bin-wise mean of `samples`.
pub fn average_histogram(samples: &[SpatialHistogram]) -> Result<AverageShf> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("no histograms to average".into()))?;
    if let Some(bad) = samples.iter().position(|s| !s.same_shape(first)) {
        return Err(Error::DimensionMismatch(format!(
            "histogram {bad} has a different shape than histogram 0"
        )));
    }
    let n = samples.len() as f64;
    let per_template = (0..first.templates())
        .map(|k| {
            let mut acc = vec![0.0; first.per_template[k].len()];
            for s in samples {
                acc.iter_mut().zip(&s.per_template[k]).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    Ok(AverageShf {
        model: SpatialHistogram { per_template },
        sample_count: samples.len(),
    })
}

/// Per-template distance from `sh` to the average model.
pub fn shf_distance(sh: &SpatialHistogram, avg: &AverageShf, distance: Distance) -> Result<Vec<f64>> {
    if !sh.same_shape(&avg.model) {
        return Err(Error::DimensionMismatch(
            "histogram and average model differ in shape".into(),
        ));
    }
    Ok(sh
        .per_template
        .iter()
        .zip(&avg.model.per_template)
        .map(|(a, b)| distance.eval(a, b))
        .collect())
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BLOCK: Rect = Rect { x: 0, y: 0, width: 16, height: 16 };

    fn random_hist(rng: &mut ChaCha8Rng, bins: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..bins).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_color([0, 0, 0], 4), 0);
        assert_eq!(quantize_color([255, 255, 255], 4), 63);
        assert_eq!(quantize_color([64, 128, 192], 4), 27);
    }

    #[test]
    fn template_regions() {
        let q = Template::new(0.5, 0.0, 0.5, 0.5).region(&Rect { x: 32, y: 16, width: 16, height: 16 }).unwrap();
        assert_eq!(q, Rect { x: 40, y: 16, width: 8, height: 8 });
        let thin = Template::new(0.99, 0.99, 0.01, 0.01).region(&BLOCK).unwrap();
        assert_eq!((thin.x, thin.y, thin.width, thin.height), (15, 15, 1, 1));
        assert!(ShfParams::new(vec![Template::new(0.6, 0.0, 0.5, 0.5)], 4).is_err());
        assert!(ShfParams::new(vec![], 4).is_err());
        assert!(ShfParams::new(default_templates(), 1).is_err());
    }

    #[test]
    fn monochrome_and_split_blocks() {
        let params = ShfParams::default();
        let mono = ColorImage::from_fn(16, 16, |_, _| [64, 128, 192]).unwrap();
        let sh = spatial_histogram(&mono, &BLOCK, &params).unwrap();
        for t in &sh.per_template {
            assert_eq!(t[27], 1.0);
            assert_eq!(t.iter().sum::<f64>(), 1.0);
        }
        let split = ColorImage::from_fn(16, 16, |x, _| if x < 8 { [0, 0, 0] } else { [255, 255, 255] }).unwrap();
        let sh = spatial_histogram(&split, &BLOCK, &params).unwrap();
        assert_eq!((sh.per_template[0][0], sh.per_template[0][63]), (0.5, 0.5));
        assert_eq!(sh.per_template[1][0], 1.0);
        assert_eq!(sh.per_template[2][63], 1.0);
    }

    /// Naive recount: visit every pixel once and test template membership.
    #[test]
    fn matches_pixel_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = ColorImage::new(20, 18, (0..360).map(|_| rng.random()).collect()).unwrap();
        let block = Rect { x: 3, y: 2, width: 16, height: 16 };
        let params = ShfParams::default();
        let sh = spatial_histogram(&img, &block, &params).unwrap();
        let bounds = [(0, 0, 16, 16), (0, 0, 8, 8), (8, 0, 16, 8), (0, 8, 8, 16), (8, 8, 16, 16)];
        for (k, &(x0, y0, x1, y1)) in bounds.iter().enumerate() {
            let mut counts = vec![0usize; 64];
            let mut n = 0;
            for y in 0..16 {
                for x in 0..16 {
                    if x >= x0 && x < x1 && y >= y0 && y < y1 {
                        let [r, g, b] = img.get(block.x + x, block.y + y);
                        let idx = (r / 64) as usize * 16 + (g / 64) as usize * 4 + (b / 64) as usize;
                        counts[idx] += 1;
                        n += 1;
                    }
                }
            }
            for bin in 0..64 {
                assert!((sh.per_template[k][bin] - counts[bin] as f64 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn average_examples() {
        let a = SpatialHistogram { per_template: vec![vec![1.0, 0.0]] };
        let b = SpatialHistogram { per_template: vec![vec![0.0, 1.0]] };
        assert_eq!(average_histogram(std::slice::from_ref(&a)).unwrap().model, a);
        let avg = average_histogram(&[a.clone(), b]).unwrap();
        assert_eq!(avg.model.per_template[0], vec![0.5, 0.5]);
        assert_eq!(avg.sample_count, 2);
        assert!(average_histogram(&[]).is_err());
        let odd = SpatialHistogram { per_template: vec![vec![1.0, 0.0, 0.0]] };
        assert!(average_histogram(&[a, odd]).is_err());
    }

    #[test]
    fn average_matches_accumulation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<SpatialHistogram> = (0..10)
            .map(|_| SpatialHistogram { per_template: (0..5).map(|_| random_hist(&mut rng, 64)).collect() })
            .collect();
        let avg = average_histogram(&samples).unwrap();
        for k in 0..5 {
            for bin in 0..64 {
                let mut total = 0.0;
                for s in &samples {
                    total += s.per_template[k][bin];
                }
                assert!((avg.model.per_template[k][bin] - total / 10.0).abs() < 1e-12);
            }
            assert!((avg.model.per_template[k].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sh = SpatialHistogram { per_template: (0..5).map(|_| random_hist(&mut rng, 64)).collect() };
        let avg = average_histogram(std::slice::from_ref(&sh)).unwrap();
        assert!(shf_distance(&sh, &avg, Distance::L1).unwrap().iter().all(|&f| f == 0.0));
        assert!(shf_distance(&sh, &avg, Distance::Chi2).unwrap().iter().all(|&f| f == 0.0));

        let a = SpatialHistogram { per_template: vec![vec![1.0, 0.0, 0.0]] };
        let b = average_histogram(&[SpatialHistogram { per_template: vec![vec![0.0, 0.0, 1.0]] }]).unwrap();
        assert_eq!(shf_distance(&a, &b, Distance::L1).unwrap(), vec![2.0]);
        assert_eq!(shf_distance(&a, &b, Distance::Chi2).unwrap(), vec![2.0]);

        let other = SpatialHistogram { per_template: (0..5).map(|_| random_hist(&mut rng, 64)).collect() };
        let f = shf_distance(&other, &avg, Distance::L1).unwrap();
        for k in 0..5 {
            let mut total = 0.0;
            for bin in 0..64 {
                total += (other.per_template[k][bin] - sh.per_template[k][bin]).abs();
            }
            assert!((f[k] - total).abs() < 1e-12);
            assert!((0.0..=2.0).contains(&f[k]));
        }
        assert!(shf_distance(&a, &avg, Distance::L1).is_err());
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_hist(&mut rng, 64), random_hist(&mut rng, 64), random_hist(&mut rng, 64));
            let d = |x: &[f64], y: &[f64]| Distance::L1.eval(x, y);
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        }

        #[test]
        fn histograms_ignore_pixel_order_within_template(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pixels: Vec<[u8; 3]> = (0..64).map(|_| rng.random()).collect();
            let params = ShfParams::new(vec![Template::new(0.0, 0.0, 1.0, 1.0)], 4).unwrap();
            let block = Rect { x: 0, y: 0, width: 8, height: 8 };
            let before = spatial_histogram(&ColorImage::new(8, 8, pixels.clone()).unwrap(), &block, &params).unwrap();
            pixels.shuffle(&mut rng);
            let after = spatial_histogram(&ColorImage::new(8, 8, pixels).unwrap(), &block, &params).unwrap();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn average_is_bounded_by_samples(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<SpatialHistogram> = (0..n)
                .map(|_| SpatialHistogram { per_template: vec![random_hist(&mut rng, 16)] })
                .collect();
            let avg = average_histogram(&samples).unwrap();
            for bin in 0..16 {
                let lo = samples.iter().map(|s| s.per_template[0][bin]).fold(f64::INFINITY, f64::min);
                let hi = samples.iter().map(|s| s.per_template[0][bin]).fold(f64::NEG_INFINITY, f64::max);
                let v = avg.model.per_template[0][bin];
                prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
            }
        }
    }
}
