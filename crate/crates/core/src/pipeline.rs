//! End-to-end feature extraction, training, prediction and evaluation.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{LbpVariant, PipelineConfig};
use crate::crf::{self, CrfModel, TrainMode};
use crate::dataset::{label_particles, partition_grid, LabelGrid, ParticleGrid, Rect, SamplePair};
use crate::error::{Error, Result};
use crate::integrate::{fit_normalization, integrate_features, raw_product, FeatureGrid, IntegrationParams};
use crate::lbp::{color_lbp_block_summary, lbp_block_summary, LbpSummary};
use crate::metrics::{aggregate, confusion, Confusion, MetricsReport};
use crate::model::ModelFile;
use crate::raster::{load_image, load_mask, to_grayscale, ColorImage, GtMask};
use crate::shf::{average_histogram, shf_distance, spatial_histogram, AverageShf, SpatialHistogram};

/// Per-particle descriptors of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnalysis {
    pub grid: ParticleGrid,
    pub lbp: Vec<LbpSummary>,
    pub shf: Vec<SpatialHistogram>,
}

pub fn analyze(img: &ColorImage, cfg: &PipelineConfig) -> Result<ImageAnalysis> {
    let grid = partition_grid(img.width(), img.height(), cfg.block_size)?;
    let shf_params = cfg.shf()?;
    let blocks: Vec<Rect> = grid.particles().collect();
    let lbp = match cfg.lbp_variant {
        LbpVariant::Gray => {
            let params = cfg.lbp()?;
            let gray = to_grayscale(img);
            blocks
                .iter()
                .map(|b| lbp_block_summary(&gray, b, &params))
                .collect::<Result<_>>()?
        }
        LbpVariant::Color => {
            let params = cfg.color_lbp()?;
            blocks
                .iter()
                .map(|b| color_lbp_block_summary(img, b, &params))
                .collect::<Result<_>>()?
        }
    };
    let shf = blocks
        .iter()
        .map(|b| spatial_histogram(img, b, &shf_params))
        .collect::<Result<_>>()?;
    Ok(ImageAnalysis { grid, lbp, shf })
}

impl ImageAnalysis {
    /// Distance of each particle's histogram to the average model.
    pub fn distances(&self, average: &AverageShf, cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
        self.shf
            .iter()
            .map(|sh| shf_distance(sh, average, cfg.shf_distance))
            .collect()
    }

    /// Raw products `mean_code * f_k / 2` of each particle.
    pub fn products(&self, average: &AverageShf, cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .distances(average, cfg)?
            .iter()
            .zip(&self.lbp)
            .map(|(f, s)| raw_product(s, f))
            .collect())
    }

    pub fn features(
        &self,
        average: &AverageShf,
        integration: &IntegrationParams,
        cfg: &PipelineConfig,
    ) -> Result<FeatureGrid> {
        let sites = self
            .distances(average, cfg)?
            .iter()
            .zip(&self.lbp)
            .map(|(f, s)| integrate_features(s, f, integration))
            .collect::<Result<_>>()?;
        FeatureGrid::new(self.grid.cols(), self.grid.rows(), sites)
    }
}

/// A decoded training pair.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub name: String,
    pub image: ColorImage,
    pub mask: GtMask,
}

pub fn load_samples(pairs: &[SamplePair]) -> Result<Vec<LoadedSample>> {
    pairs
        .par_iter()
        .map(|p| {
            let image = load_image(&p.image)?;
            let mask = load_mask(&p.mask)?;
            if (image.width(), image.height()) != (mask.width(), mask.height()) {
                return Err(Error::DimensionMismatch(format!(
                    "{}: image is {}x{}, mask {}x{}",
                    p.name,
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                )));
            }
            Ok(LoadedSample {
                name: p.name.clone(),
                image,
                mask,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub objective_history: Vec<f64>,
    /// Pixel metrics of the trained model on its own training set.
    pub training_metrics: MetricsReport,
    pub warnings: Vec<String>,
}

/// Fits the average histogram and the normalization, then trains the CRF.
pub fn train(cfg: &PipelineConfig, samples: &[LoadedSample]) -> Result<(ModelFile, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    let analyzed: Vec<(ImageAnalysis, LabelGrid)> = samples
        .par_iter()
        .map(|s| {
            let analysis = analyze(&s.image, cfg)?;
            let labels = label_particles(&analysis.grid, &s.mask, cfg.gt_threshold)?;
            Ok((analysis, labels))
        })
        .collect::<Result<_>>()?;

    let salient: Vec<SpatialHistogram> = analyzed
        .iter()
        .flat_map(|(a, l)| a.shf.iter().zip(l.labels()).filter(|(_, &y)| y == 1).map(|(sh, _)| sh.clone()))
        .collect();
    if salient.is_empty() {
        return Err(Error::NoSalientSamples);
    }
    let average = average_histogram(&salient)?;

    let products: Vec<Vec<f64>> = analyzed
        .iter()
        .map(|(a, _)| a.products(&average, cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let integration = fit_normalization(&products, cfg.epsilon)?;

    let data: Vec<(FeatureGrid, LabelGrid)> = analyzed
        .par_iter()
        .map(|(a, l)| Ok((a.features(&average, &integration, cfg)?, l.clone())))
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let mut train_cfg = cfg.crf.clone();
    let tallest = data.iter().map(|(f, _)| f.rows()).max().unwrap_or(0);
    if train_cfg.mode == TrainMode::ExactDp && tallest > train_cfg.max_exact_height {
        warnings.push(format!(
            "grids up to {tallest} rows exceed the exact limit of {}; training by pseudolikelihood",
            train_cfg.max_exact_height
        ));
        train_cfg.mode = TrainMode::Pseudolikelihood;
    }
    let dim = data[0].0.dim();
    let outcome = crf::sgd_train(&CrfModel::zeros(dim), &data, &train_cfg)?;
    let model = ModelFile::new(cfg.clone(), average, integration, outcome.model);

    let confusions: Vec<(String, Confusion)> = samples
        .par_iter()
        .zip(&data)
        .map(|(s, (features, _))| {
            let labels = crf::map_labels(&model.crf, features, model.inference_mode(features.rows()))?;
            let grid = partition_grid(s.image.width(), s.image.height(), cfg.block_size)?;
            let pred = grid.paint(&labels)?;
            let gt = s.mask.crop(pred.width(), pred.height())?;
            Ok((s.name.clone(), confusion(&pred, &gt)?))
        })
        .collect::<Result<_>>()?;
    let report = TrainReport {
        mode: train_cfg.mode,
        objective_history: outcome.objective_history,
        training_metrics: aggregate(&confusions, cfg.beta_squared)?,
        warnings,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub grid: ParticleGrid,
    pub labels: LabelGrid,
    /// `P(y = 1)` per particle, row-major.
    pub site_marginals: Vec<f64>,
    pub mask: GtMask,
}

impl Prediction {
    /// Marginals as 8-bit gray `round(255 p)`, constant over each particle,
    /// row-major over the covered region.
    pub fn soft_map(&self) -> Vec<u8> {
        let (w, h) = self.grid.coverage();
        let b = self.grid.block_size();
        let cols = self.grid.cols();
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| (255.0 * self.site_marginals[(y / b) * cols + x / b]).round() as u8)
            .collect()
    }
}

pub fn predict(model: &ModelFile, img: &ColorImage) -> Result<Prediction> {
    let analysis = analyze(img, &model.config)?;
    let features = analysis.features(&model.average_shf, &model.integration, &model.config)?;
    let result = crf::infer(&model.crf, &features, model.inference_mode(features.rows()))?;
    let mask = analysis.grid.paint(&result.map_labels)?;
    Ok(Prediction {
        grid: analysis.grid,
        labels: result.map_labels,
        site_marginals: result.site_marginals,
        mask,
    })
}

/// Matched and unmatched stems of a prediction and a ground-truth directory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPairs {
    pub matched: Vec<SamplePair>,
    pub unmatched: Vec<String>,
}

pub fn pair_eval_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<EvalPairs> {
    let preds = crate::dataset::rasters_by_stem(pred_dir)?;
    let gts = crate::dataset::rasters_by_stem(gt_dir)?;
    let unmatched = preds
        .keys()
        .filter(|k| !gts.contains_key(*k))
        .chain(gts.keys().filter(|k| !preds.contains_key(*k)))
        .cloned()
        .collect();
    let matched = preds
        .iter()
        .filter_map(|(name, pred)| {
            gts.get(name).map(|gt| SamplePair {
                name: name.clone(),
                image: pred.clone(),
                mask: gt.clone(),
            })
        })
        .collect();
    Ok(EvalPairs { matched, unmatched })
}

/// Scores each prediction (`image`) against its ground truth (`mask`), the
/// latter cropped from the top-left to the prediction's size.
pub fn evaluate(pairs: &[SamplePair], beta_squared: f64) -> Result<MetricsReport> {
    let confusions: Vec<(String, Confusion)> = pairs
        .par_iter()
        .map(|p| {
            let pred = load_mask(&p.image)?;
            let gt = load_mask(&p.mask)?;
            if gt.width() < pred.width() || gt.height() < pred.height() {
                return Err(Error::DimensionMismatch(format!(
                    "{}: prediction {}x{} is larger than ground truth {}x{}",
                    p.name,
                    pred.width(),
                    pred.height(),
                    gt.width(),
                    gt.height()
                )));
            }
            let gt = gt.crop(pred.width(), pred.height())?;
            Ok((p.name.clone(), confusion(&pred, &gt)?))
        })
        .collect::<Result<_>>()?;
    aggregate(&confusions, beta_squared)
}

/// One line of the feature dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleRecord {
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub rect: Rect,
    pub lbp: LbpSummary,
    pub shf: SpatialHistogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_products: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub integrated: Option<Vec<f64>>,
}

/// Per-particle records; distances and products need a fitted model.
pub fn particle_records(img: &ColorImage, cfg: &PipelineConfig, model: Option<&ModelFile>) -> Result<Vec<ParticleRecord>> {
    let analysis = analyze(img, cfg)?;
    let fitted = match model {
        Some(m) => {
            let distances = analysis.distances(&m.average_shf, cfg)?;
            let features = analysis.features(&m.average_shf, &m.integration, cfg)?;
            Some((distances, features))
        }
        None => None,
    };
    let cols = analysis.grid.cols();
    Ok((0..analysis.grid.len())
        .map(|i| {
            let (distances, raw_products, integrated) = match &fitted {
                Some((d, f)) => (
                    Some(d[i].clone()),
                    Some(raw_product(&analysis.lbp[i], &d[i])),
                    Some(f.site(i).to_vec()),
                ),
                None => (None, None, None),
            };
            ParticleRecord {
                index: i,
                row: i / cols,
                col: i % cols,
                rect: analysis.grid.particle(i),
                lbp: analysis.lbp[i].clone(),
                shf: analysis.shf[i].clone(),
                distances,
                raw_products,
                integrated,
            }
        })
        .collect())
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::score;
    use crate::lbp::lbp_block_summary;
    use crate::shf::spatial_histogram;
    use crate::synth::{generate, SynthParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> ColorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ColorImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    fn hand_model(img: &ColorImage) -> ModelFile {
        let cfg = PipelineConfig::default();
        let analysis = analyze(img, &cfg).unwrap();
        let average = average_histogram(&analysis.shf[..1]).unwrap();
        let integration = IntegrationParams {
            mu: vec![40.0, 30.0, 60.0, 20.0, 50.0],
            sigma: vec![1.5, 2.0, 0.5, 3.0, 1.0],
            epsilon: 1e-8,
        };
        let crf = CrfModel::new(vec![-1.5, 0.8, 1.1, -0.6, 0.3, 0.9], 0.35).unwrap();
        ModelFile::new(cfg, average, integration, crf)
    }

    #[test]
    fn record_count_and_spot_check() {
        let img = random_image(1, 50, 40);
        let cfg = PipelineConfig::default();
        let records = particle_records(&img, &cfg, None).unwrap();
        assert_eq!(records.len(), 3 * 2);
        assert!(records.iter().all(|r| r.raw_products.is_none() && r.integrated.is_none()));
        let r = &records[4];
        assert_eq!((r.row, r.col), (1, 1));
        let rect = Rect { x: 16, y: 16, width: 16, height: 16 };
        assert_eq!(r.rect, rect);
        let gray = to_grayscale(&img);
        assert_eq!(r.lbp, lbp_block_summary(&gray, &rect, &cfg.lbp().unwrap()).unwrap());
        assert_eq!(r.shf, spatial_histogram(&img, &rect, &cfg.shf().unwrap()).unwrap());

        let model = hand_model(&img);
        let records = particle_records(&img, &cfg, Some(&model)).unwrap();
        let r = &records[4];
        let f = shf_distance(&r.shf, &model.average_shf, cfg.shf_distance).unwrap();
        assert_eq!(r.distances.as_ref().unwrap(), &f);
        assert_eq!(r.raw_products.as_ref().unwrap(), &raw_product(&r.lbp, &f));
        assert_eq!(r.integrated.as_ref().unwrap(), &integrate_features(&r.lbp, &f, &model.integration).unwrap());
    }

    #[test]
    fn constant_image_gives_identical_records() {
        let img = ColorImage::from_fn(64, 48, |_, _| [90, 30, 200]).unwrap();
        let records = particle_records(&img, &PipelineConfig::default(), None).unwrap();
        assert_eq!(records.len(), 12);
        for r in &records {
            assert_eq!((&r.lbp, &r.shf), (&records[0].lbp, &records[0].shf));
            assert_eq!(r.lbp.mean_code, 255.0);
        }
    }

    #[test]
    fn image_smaller_than_a_block_is_rejected() {
        let img = random_image(2, 15, 40);
        assert!(matches!(analyze(&img, &PipelineConfig::default()), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn dominant_negative_bias_predicts_background() {
        let img = random_image(3, 70, 37);
        let mut model = hand_model(&img);
        model.crf = CrfModel::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, -50.0], 0.0).unwrap();
        let pred = predict(&model, &img).unwrap();
        assert_eq!((pred.mask.width(), pred.mask.height()), (64, 32));
        assert!(pred.mask.values().iter().all(|&v| v == 0));
        assert!(pred.soft_map().iter().all(|&v| v == 0));
    }

    /// 3x3 grid: the painted mask equals the brute-force MAP with the
    /// lexicographic tie rule.
    #[test]
    fn prediction_matches_brute_force_map() {
        for seed in 0..5 {
            let img = random_image(10 + seed, 48, 48);
            let model = hand_model(&img);
            let analysis = analyze(&img, &model.config).unwrap();
            let features = analysis.features(&model.average_shf, &model.integration, &model.config).unwrap();
            let mut best: Option<(f64, LabelGrid)> = None;
            for code in 0u32..512 {
                let labels = LabelGrid::new(3, 3, (0..9).map(|i| ((code >> (8 - i)) & 1) as u8).collect()).unwrap();
                let s = score(&model.crf, &features, &labels).unwrap();
                if best.as_ref().is_none_or(|(b, _)| s > b + 1e-9 * b.abs().max(1.0)) {
                    best = Some((s, labels));
                }
            }
            let expected = analysis.grid.paint(&best.unwrap().1).unwrap();
            let pred = predict(&model, &img).unwrap();
            assert_eq!(pred.mask, expected);
            let soft = pred.soft_map();
            assert_eq!(soft[0], (255.0 * pred.site_marginals[0]).round() as u8);
            assert_eq!(soft[47 * 48 + 47], (255.0 * pred.site_marginals[8]).round() as u8);
        }
    }

    fn synthetic(count: usize, seed: u64) -> Vec<LoadedSample> {
        generate(&SynthParams { count, seed, ..SynthParams::default() })
            .unwrap()
            .into_iter()
            .map(|s| LoadedSample { name: s.name, image: s.image, mask: s.mask })
            .collect()
    }

    #[test]
    fn background_only_training_set_is_rejected() {
        let mut samples = synthetic(3, 4);
        for s in &mut samples {
            s.mask = GtMask::filled(s.mask.width(), s.mask.height(), 0).unwrap();
        }
        assert!(matches!(train(&PipelineConfig::default(), &samples), Err(Error::NoSalientSamples)));
        assert!(matches!(train(&PipelineConfig::default(), &[]), Err(Error::Dataset(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_zero_weights() {
        let cfg = PipelineConfig::parse("crf.alpha = 0\ncrf.epochs = 2").unwrap();
        let (model, report) = train(&cfg, &synthetic(4, 5)).unwrap();
        assert_eq!(model.crf, CrfModel::zeros(6));
        assert_eq!(report.objective_history.len(), 2);
    }

    #[test]
    fn tall_grids_fall_back_to_pseudolikelihood() {
        let cfg = PipelineConfig::parse("crf.max_exact_height = 4\ncrf.epochs = 1").unwrap();
        let (_, report) = train(&cfg, &synthetic(4, 6)).unwrap();
        assert_eq!(report.mode, TrainMode::Pseudolikelihood);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = PipelineConfig::parse("crf.epochs = 3\ncrf.seed = 5").unwrap();
        let samples = synthetic(8, 7);
        let (a, ra) = train(&cfg, &samples).unwrap();
        let (b, rb) = train(&cfg, &samples).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ra, rb);
    }
}
