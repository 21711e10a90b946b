use crate::imaging::RasterImage;
use crate::segmentation::BinaryMask;

/// Guards floor() against representation error, e.g. 1.0 / 0.01.
const FLOOR_EPS: f64 = 1e-9;

/// Fixed-bin-width discretization: `level = floor((p - min) / bin_width) + 1`.
/// Returns the levels and the level count `floor((max - min) / bin_width) + 1`.
pub fn discretize(pixels: &[f64], bin_width: f64) -> (Vec<u32>, u32) {
    assert!(bin_width > 0.0, "bin width must be positive");
    if pixels.is_empty() {
        return (Vec::new(), 0);
    }
    let (min, max) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
    let level = |p: f64| ((p - min) / bin_width + FLOOR_EPS).floor() as u32 + 1;
    (pixels.iter().map(|&p| level(p)).collect(), level(max))
}

/// Gray levels on the image grid; 0 marks pixels outside the segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelImage {
    pub width: usize,
    pub height: usize,
    pub levels: Vec<u32>,
    pub n_levels: u32,
}

impl LevelImage {
    pub fn from_masked(img: &RasterImage, mask: &BinaryMask, bin_width: f64) -> Self {
        let (w, h) = img.dims();
        assert_eq!((w, h), mask.dims(), "mask and image dimensions differ");
        let idx: Vec<usize> = (0..w * h).filter(|&i| mask.bits()[i]).collect();
        let vals: Vec<f64> = idx.iter().map(|&i| img.pixels()[i]).collect();
        let (lv, n_levels) = discretize(&vals, bin_width);
        let mut levels = vec![0; w * h];
        for (&i, &l) in idx.iter().zip(&lv) {
            levels[i] = l;
        }
        Self {
            width: w,
            height: h,
            levels,
            n_levels,
        }
    }

    /// Builds directly from level rows (0 = outside).
    pub fn from_rows(rows: &[&[u32]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let levels: Vec<u32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        assert_eq!(levels.len(), width * height, "ragged rows");
        let n_levels = levels.iter().copied().max().unwrap_or(0);
        Self {
            width,
            height,
            levels,
            n_levels,
        }
    }

    pub fn at(&self, x: isize, y: isize) -> u32 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0
        } else {
            self.levels[y as usize * self.width + x as usize]
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.levels.iter().filter(|&&l| l > 0).count()
    }
}

/// The four in-plane directions at distance 1 (0°, 45°, 90°, 135°).
pub const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (1, -1), (0, 1), (1, 1)];

pub(crate) fn log2_term(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}
