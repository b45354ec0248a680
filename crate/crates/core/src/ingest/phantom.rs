//! Synthetic layered phantoms with a known tumor mask.
//!
//! A phantom is four horizontal bands (skin, fat, mammary, muscle) with
//! constant base intensities, a dark elliptical tumor inside the mammary
//! band, optional dark distractor ellipse in another band, and additive
//! Gaussian noise. The companion probability map is the one-hot band
//! labeling blurred along rows, so region-averaged probabilities are
//! informative but not degenerate near band edges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Image, LabelMap, Mask, ProbMap, CLASS_COUNT};
use crate::error::{Result, TseError};
use crate::layer::Layer;

const MIN_TUMOR_FRACTION: f64 = 0.01;
const MAX_TUMOR_FRACTION: f64 = 0.40;

/// Axis-aligned ellipse in relative image coordinates (x by width, y by height).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TumorSpec {
    pub center: (f64, f64),
    pub axes: (f64, f64),
}

impl TumorSpec {
    fn contains(&self, x: usize, y: usize, width: usize, height: usize) -> bool {
        let u = ((x as f64 + 0.5) / width as f64 - self.center.0) / self.axes.0;
        let v = ((y as f64 + 0.5) / height as f64 - self.center.1) / self.axes.1;
        u * u + v * v <= 1.0
    }

    fn rows(&self) -> (f64, f64) {
        (self.center.1 - self.axes.1, self.center.1 + self.axes.1)
    }

    fn fits_columns(&self) -> bool {
        self.center.0 - self.axes.0 >= 0.0 && self.center.0 + self.axes.0 <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    /// Relative rows where fat, mammary and muscle begin.
    pub band_edges: [f64; 3],
    /// Base intensity of skin, fat, mammary, muscle.
    pub band_intensity: [f64; 4],
    pub tumor_intensity: f64,
    /// Row-wise Gaussian blur (pixels) applied to the one-hot class map.
    pub prob_blur: f64,
    pub distractor: Option<TumorSpec>,
    pub distractor_intensity: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            band_edges: [0.08, 0.25, 0.70],
            band_intensity: [200.0, 120.0, 140.0, 90.0],
            tumor_intensity: 40.0,
            prob_blur: 3.0,
            distractor: None,
            distractor_intensity: 40.0,
        }
    }
}

impl PhantomConfig {
    fn band_of_row(&self, y: usize, height: usize) -> Layer {
        let r = (y as f64 + 0.5) / height as f64;
        match self.band_edges.iter().position(|&e| r < e) {
            Some(i) => Layer::ALL[i],
            None => Layer::Muscle,
        }
    }

    fn band_span(&self, layer: Layer) -> (f64, f64) {
        let edges = [0.0, self.band_edges[0], self.band_edges[1], self.band_edges[2], 1.0];
        (edges[layer.index()], edges[layer.index() + 1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub image: Image,
    pub ground_truth: Mask,
    pub prob_map: ProbMap,
    /// Band class per pixel (1..=4), tumor pixels counted as mammary.
    pub bands: LabelMap,
    /// Tumor center in pixel coordinates (x, y).
    pub tumor_center: (usize, usize),
    pub seed: u64,
}

pub fn generate_phantom(
    width: usize,
    height: usize,
    tumor: &TumorSpec,
    noise_sigma: f64,
    seed: u64,
    config: &PhantomConfig,
) -> Result<PhantomCase> {
    if !(noise_sigma >= 0.0) {
        return Err(TseError::contract(format!(
            "noise_sigma {noise_sigma} must be non-negative"
        )));
    }
    if tumor.axes.0 <= 0.0 || tumor.axes.1 <= 0.0 {
        return Err(TseError::Geometry("tumor axes must be positive".into()));
    }
    let (mam_top, mam_bottom) = config.band_span(Layer::Mammary);
    let (top, bottom) = tumor.rows();
    if top < mam_top || bottom > mam_bottom || !tumor.fits_columns() {
        return Err(TseError::Geometry(format!(
            "tumor ellipse rows [{top:.3}, {bottom:.3}] must stay inside the mammary band \
             [{mam_top:.3}, {mam_bottom:.3}) and within the image columns"
        )));
    }
    if let Some(d) = &config.distractor {
        let (dt, db) = d.rows();
        let inside_other_band = [Layer::Skin, Layer::Fat, Layer::Muscle].iter().any(|&l| {
            let (lo, hi) = config.band_span(l);
            dt >= lo && db <= hi
        });
        if !inside_other_band || !d.fits_columns() || d.axes.0 <= 0.0 || d.axes.1 <= 0.0 {
            return Err(TseError::Geometry(
                "distractor ellipse must lie inside a single non-mammary band".into(),
            ));
        }
    }

    let n = width * height;
    let mut truth = vec![false; n];
    let mut bands = vec![0u32; n];
    let mut base = vec![0.0f64; n];
    for y in 0..height {
        let band = config.band_of_row(y, height);
        for x in 0..width {
            let p = y * width + x;
            bands[p] = band.code() as u32;
            base[p] = config.band_intensity[band.index()];
            if tumor.contains(x, y, width, height) {
                truth[p] = true;
                base[p] = config.tumor_intensity;
            } else if config.distractor.is_some_and(|d| d.contains(x, y, width, height)) {
                base[p] = config.distractor_intensity;
            }
        }
    }

    let fraction = truth.iter().filter(|&&t| t).count() as f64 / n as f64;
    if !(MIN_TUMOR_FRACTION..=MAX_TUMOR_FRACTION).contains(&fraction) {
        return Err(TseError::Geometry(format!(
            "tumor covers {:.2}% of the image, allowed range is 1%..40%",
            fraction * 100.0
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        base.iter()
            .map(|&b| (b + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        base.iter().map(|&b| b.round().clamp(0.0, 255.0) as u8).collect()
    };

    let image = Image::new(width, height, pixels)?;
    let prob_map = blurred_band_probs(width, height, config)?;
    let tumor_center = (
        ((tumor.center.0 * width as f64) as usize).min(width - 1),
        ((tumor.center.1 * height as f64) as usize).min(height - 1),
    );
    Ok(PhantomCase {
        image,
        ground_truth: Mask::new(width, height, truth)?,
        prob_map,
        bands: LabelMap::new(width, height, bands)?,
        tumor_center,
        seed,
    })
}

fn blurred_band_probs(width: usize, height: usize, config: &PhantomConfig) -> Result<ProbMap> {
    let row_band: Vec<Layer> = (0..height).map(|y| config.band_of_row(y, height)).collect();
    let reach = (3.0 * config.prob_blur).ceil() as isize;
    let mut rows = vec![[0.0f64; CLASS_COUNT]; height];
    for (y, probs) in rows.iter_mut().enumerate() {
        if config.prob_blur <= 0.0 {
            probs[row_band[y].index()] = 1.0;
            continue;
        }
        let mut total = 0.0;
        for dy in -reach..=reach {
            let yy = y as isize + dy;
            if yy < 0 || yy >= height as isize {
                continue;
            }
            let w = (-(dy * dy) as f64 / (2.0 * config.prob_blur * config.prob_blur)).exp();
            probs[row_band[yy as usize].index()] += w;
            total += w;
        }
        probs.iter_mut().for_each(|p| *p /= total);
    }
    let n = width * height;
    let mut data = vec![0.0f32; CLASS_COUNT * n];
    for (y, probs) in rows.iter().enumerate() {
        for (k, &p) in probs.iter().enumerate() {
            data[k * n + y * width..k * n + (y + 1) * width].fill(p as f32);
        }
    }
    ProbMap::new(width, height, data)
}

/// Draws a tumor (and optionally a distractor in the fat band) that satisfies
/// the default band geometry. Deterministic in `seed`.
pub fn random_layout(seed: u64, with_distractor: bool) -> (TumorSpec, Option<TumorSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a70);
    let ax = rng.random_range(0.07..0.14);
    let ay = rng.random_range(0.05..0.09);
    let cx = rng.random_range(0.2 + ax * 0.5..0.8 - ax * 0.5);
    let cy = rng.random_range(0.27 + ay..0.68 - ay);
    let tumor = TumorSpec {
        center: (cx, cy),
        axes: (ax, ay),
    };
    let distractor = with_distractor.then(|| {
        let dax = rng.random_range(0.04..0.07);
        let day = rng.random_range(0.035..0.05);
        // beside the tumor column range, close enough to sit inside the center prior
        let offset = rng.random_range(ax + dax..ax + dax + 0.08);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut dcx = cx + side * offset;
        if dcx - dax < 0.02 || dcx + dax > 0.98 {
            dcx = cx - side * offset;
        }
        let dcy = rng.random_range(0.09 + day..0.24 - day);
        TumorSpec {
            center: (dcx, dcy),
            axes: (dax, day),
        }
    });
    (tumor, distractor)
}
