//! Particle grids, particle labels and image/mask dataset discovery.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GtMask;

/// Default particle edge length in pixels.
pub const DEFAULT_BLOCK_SIZE: usize = 16;
/// Default fraction of salient pixels that makes a particle salient.
pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.5;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.height).flat_map(move |y| (self.x..self.x + self.width).map(move |x| (x, y)))
    }
}

/// Non-overlapping square blocks covering the top-left
/// `cols * block_size` x `rows * block_size` region of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParticleGrid {
    cols: usize,
    rows: usize,
    block_size: usize,
}

impl ParticleGrid {
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width and height of the covered region.
    pub fn coverage(&self) -> (usize, usize) {
        (self.cols * self.block_size, self.rows * self.block_size)
    }

    /// Rectangle of the particle at row-major index `index`.
    pub fn particle(&self, index: usize) -> Rect {
        let (row, col) = (index / self.cols, index % self.cols);
        Rect {
            x: col * self.block_size,
            y: row * self.block_size,
            width: self.block_size,
            height: self.block_size,
        }
    }

    pub fn particles(&self) -> impl Iterator<Item = Rect> + '_ {
        (0..self.len()).map(|i| self.particle(i))
    }

    /// Expands particle labels into a pixel mask the size of the covered region.
    pub fn paint(&self, labels: &LabelGrid) -> Result<GtMask> {
        self.check_labels(labels)?;
        let (w, h) = self.coverage();
        let values = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| labels.get(y / self.block_size, x / self.block_size))
            .collect();
        GtMask::new(w, h, values)
    }

    pub(crate) fn check_labels(&self, labels: &LabelGrid) -> Result<()> {
        if labels.cols() != self.cols || labels.rows() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "label grid {}x{} does not match particle grid {}x{}",
                labels.cols(),
                labels.rows(),
                self.cols,
                self.rows
            )));
        }
        Ok(())
    }
}

/// Binary label per particle, row-major; 1 = salient.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelGrid {
    cols: usize,
    rows: usize,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(cols: usize, rows: usize, labels: Vec<u8>) -> Result<Self> {
        if cols == 0 || rows == 0 || labels.len() != cols * rows {
            return Err(Error::DimensionMismatch(format!(
                "{cols}x{rows} label grid cannot hold {} labels",
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidParameter("labels must be 0 or 1".into()));
        }
        Ok(Self { cols, rows, labels })
    }

    pub fn filled(cols: usize, rows: usize, label: u8) -> Result<Self> {
        Self::new(cols, rows, vec![label; cols * rows])
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.cols + col]
    }
}

pub fn partition_grid(width: usize, height: usize, block_size: usize) -> Result<ParticleGrid> {
    if block_size < 2 {
        return Err(Error::InvalidParameter(format!(
            "block size {block_size} must be at least 2"
        )));
    }
    if width < block_size || height < block_size {
        return Err(Error::ImageTooSmall {
            width,
            height,
            block_size,
        });
    }
    Ok(ParticleGrid {
        cols: width / block_size,
        rows: height / block_size,
        block_size,
    })
}

/// A particle is salient when its fraction of salient mask pixels reaches
/// `threshold`.
pub fn label_particles(grid: &ParticleGrid, mask: &GtMask, threshold: f64) -> Result<LabelGrid> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "label threshold {threshold} must lie in (0, 1]"
        )));
    }
    let (w, h) = grid.coverage();
    if mask.width() < w || mask.height() < h {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} mask does not cover the {w}x{h} particle grid",
            mask.width(),
            mask.height()
        )));
    }
    let labels = grid
        .particles()
        .map(|rect| {
            let salient = rect.pixels().filter(|&(x, y)| mask.get(x, y) == 1).count();
            u8::from(salient as f64 / rect.area() as f64 >= threshold)
        })
        .collect();
    LabelGrid::new(grid.cols(), grid.rows(), labels)
}

/// One image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePair {
    pub name: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

const RASTER_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Raster files in `dir` keyed by file stem, sorted.
pub fn rasters_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_raster = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| RASTER_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_raster || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(previous) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Dataset(format!(
                    "stem {stem:?} is ambiguous: {} and {}",
                    previous.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

/// Pairs `root/img/<stem>.*` with `root/gt/<stem>.*`.
///
/// Images without a mask (or the reverse) are an error.
pub fn discover_pairs(root: &Path) -> Result<Vec<SamplePair>> {
    let images = rasters_by_stem(&root.join("img"))?;
    let masks = rasters_by_stem(&root.join("gt"))?;
    let unmatched: Vec<&String> = images
        .keys()
        .filter(|k| !masks.contains_key(*k))
        .chain(masks.keys().filter(|k| !images.contains_key(*k)))
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Dataset(format!(
            "{} unmatched stem(s): {}",
            unmatched.len(),
            unmatched.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }
    let pairs: Vec<SamplePair> = images
        .into_iter()
        .map(|(name, image)| SamplePair {
            mask: masks[&name].clone(),
            name,
            image,
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no image/mask pairs under {}", root.display())));
    }
    Ok(pairs)
}

/// Reads a manifest of `image_path<TAB>mask_path` lines. Relative paths are
/// resolved against the manifest's directory; blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<SamplePair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (image, mask) = line.split_once('\t').ok_or_else(|| {
            Error::Dataset(format!("{}:{}: expected image<TAB>mask", path.display(), lineno + 1))
        })?;
        let image = base.join(image);
        let name = image
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        pairs.push(SamplePair {
            name,
            image,
            mask: base.join(mask),
        });
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("manifest {} lists no pairs", path.display())));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_examples() {
        let g = partition_grid(64, 48, 16).unwrap();
        assert_eq!((g.cols(), g.rows(), g.len()), (4, 3, 12));
        let g = partition_grid(70, 50, 16).unwrap();
        assert_eq!((g.cols(), g.rows()), (4, 3));
        assert_eq!(g.coverage(), (64, 48));
        assert!(matches!(partition_grid(10, 10, 16), Err(Error::ImageTooSmall { .. })));
        assert!(partition_grid(10, 10, 1).is_err());
    }

    #[test]
    fn labels_follow_coverage_fraction() {
        let grid = partition_grid(32, 16, 16).unwrap();
        // Left block: fully salient. Right block: exactly 128 salient pixels.
        let mask = GtMask::new(
            32,
            16,
            (0..16)
                .flat_map(|y| (0..32).map(move |x| (x, y)))
                .map(|(x, y)| u8::from(x < 16 || (x < 24 && y < 16)))
                .collect(),
        )
        .unwrap();
        assert_eq!(label_particles(&grid, &mask, 0.5).unwrap().labels(), &[1, 1]);
        assert_eq!(label_particles(&grid, &mask, 0.51).unwrap().labels(), &[1, 0]);
        let empty = GtMask::filled(32, 16, 0).unwrap();
        assert_eq!(label_particles(&grid, &empty, 0.5).unwrap().labels(), &[0, 0]);
    }

    #[test]
    fn label_errors() {
        let grid = partition_grid(32, 32, 16).unwrap();
        let small = GtMask::filled(31, 32, 1).unwrap();
        assert!(matches!(
            label_particles(&grid, &small, 0.5),
            Err(Error::DimensionMismatch(_))
        ));
        let mask = GtMask::filled(32, 32, 1).unwrap();
        assert!(label_particles(&grid, &mask, 0.0).is_err());
        assert!(label_particles(&grid, &mask, 1.5).is_err());
    }

    #[test]
    fn paint_expands_blocks() {
        let grid = partition_grid(5, 4, 2).unwrap();
        let labels = LabelGrid::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let mask = grid.paint(&labels).unwrap();
        assert_eq!((mask.width(), mask.height()), (4, 4));
        assert_eq!(mask.values(), &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]);
    }

    #[test]
    fn pairs_by_stem_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("img")).unwrap();
        std::fs::create_dir_all(root.join("gt")).unwrap();
        for stem in ["b", "a"] {
            std::fs::write(root.join("img").join(format!("{stem}.jpg")), b"").unwrap();
            std::fs::write(root.join("gt").join(format!("{stem}.png")), b"").unwrap();
        }
        std::fs::write(root.join("gt").join("notes.txt"), b"").unwrap();
        let pairs = discover_pairs(root).unwrap();
        assert_eq!(pairs.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        std::fs::write(root.join("gt").join("c.png"), b"").unwrap();
        assert!(matches!(discover_pairs(root), Err(Error::Dataset(_))));

        let manifest = root.join("list.tsv");
        std::fs::write(&manifest, "img/a.jpg\tgt/a.png\n\nimg/b.jpg\tgt/b.png\n").unwrap();
        let listed = read_manifest(&manifest).unwrap();
        assert_eq!(listed.len(), 2);
        assert_eq!(listed[1].mask, root.join("gt/b.png"));
        std::fs::write(&manifest, "img/a.jpg gt/a.png\n").unwrap();
        assert!(read_manifest(&manifest).is_err());
    }

    proptest! {
        #[test]
        fn grid_tiles_cropped_region(w in 2usize..80, h in 2usize..80, b in 2usize..20) {
            prop_assume!(w >= b && h >= b);
            let grid = partition_grid(w, h, b).unwrap();
            let (cw, ch) = grid.coverage();
            prop_assert_eq!(cw, w / b * b);
            prop_assert_eq!(ch, h / b * b);
            let mut hits = vec![0u32; cw * ch];
            for rect in grid.particles() {
                prop_assert_eq!((rect.width, rect.height), (b, b));
                for (x, y) in rect.pixels() {
                    hits[y * cw + x] += 1;
                }
            }
            prop_assert!(hits.iter().all(|&n| n == 1));
        }

        #[test]
        fn uniform_masks_give_uniform_labels(w in 4usize..60, h in 4usize..60, t in 0.01f64..=1.0) {
            let grid = partition_grid(w, h, 4).unwrap();
            let ones = label_particles(&grid, &GtMask::filled(w, h, 1).unwrap(), t).unwrap();
            prop_assert!(ones.labels().iter().all(|&l| l == 1));
            let zeros = label_particles(&grid, &GtMask::filled(w, h, 0).unwrap(), t).unwrap();
            prop_assert!(zeros.labels().iter().all(|&l| l == 0));
        }
    }
}
