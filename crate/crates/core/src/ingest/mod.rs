//! Image, label-map and probability-map containers and their file formats.

mod pgm;
pub mod phantom;
mod planes;

use std::path::Path;

pub use phantom::{generate_phantom, PhantomCase, PhantomConfig, TumorSpec};
pub use planes::Planes;

use crate::error::{Result, TseError};
use crate::layer::Layer;

pub const MIN_SIDE: usize = 8;
pub const CLASS_COUNT: usize = 4;

const PROB_RANGE_SLACK: f32 = 1e-6;
const PROB_SUM_TOL: f64 = 1e-4;

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(TseError::contract(format!(
                "image is {width}x{height}, both sides must be at least {MIN_SIDE}"
            )));
        }
        if pixels.len() != width * height {
            return Err(TseError::contract(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Binary mask; stored on disk as a PGM with values {0, 255}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(TseError::contract(format!(
                "{} mask bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pixels at or above mid-gray are foreground.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&v| v >= 128).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

/// Per-pixel integer labels: anatomy classes 1..=4, or region indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(TseError::contract(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(Self { width, height, labels })
    }

    /// Checks every label lies in `lo..=hi`.
    pub fn check_range(&self, lo: u32, hi: u32) -> Result<()> {
        match self.labels.iter().position(|l| !(lo..=hi).contains(l)) {
            Some(p) => Err(TseError::contract(format!(
                "label {} at pixel {p} outside [{lo}, {hi}]",
                self.labels[p]
            ))),
            None => Ok(()),
        }
    }
}

/// Four-class per-pixel probability map (skin, fat, mammary, muscle).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ProbMap {
    /// Validates ranges and per-pixel normalization.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let n = width * height;
        if data.len() != CLASS_COUNT * n {
            return Err(TseError::contract(format!(
                "probability map holds {} values, expected 4x{width}x{height}",
                data.len()
            )));
        }
        for (idx, &v) in data.iter().enumerate() {
            if !(-PROB_RANGE_SLACK..=1.0 + PROB_RANGE_SLACK).contains(&v) {
                return Err(TseError::Range {
                    plane: idx / n,
                    pixel: idx % n,
                    value: v,
                });
            }
        }
        for p in 0..n {
            let sum: f64 = (0..CLASS_COUNT).map(|k| data[k * n + p] as f64).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(TseError::Normalization { pixel: p, sum });
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn from_planes(planes: Planes) -> Result<Self> {
        if planes.count != CLASS_COUNT {
            return Err(TseError::format(
                0,
                format!("probability map needs 4 planes, found {}", planes.count),
            ));
        }
        Self::new(planes.width, planes.height, planes.data)
    }

    pub fn to_planes(&self) -> Planes {
        Planes {
            count: CLASS_COUNT,
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, class: usize, pixel: usize) -> f32 {
        self.data[class * self.width * self.height + pixel]
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[class * n..(class + 1) * n]
    }

    /// Most probable class at a pixel; ties go to the lower class.
    pub fn argmax(&self, pixel: usize) -> Layer {
        let mut best = 0;
        for k in 1..CLASS_COUNT {
            if self.get(k, pixel) > self.get(best, pixel) {
                best = k;
            }
        }
        Layer::ALL[best]
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let raw = pgm::read(path.as_ref())?;
    Image::new(raw.width, raw.height, raw.bytes)
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    pgm::write(path.as_ref(), image.width, image.height, &image.pixels)
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let raw = pgm::decode(bytes)?;
    Image::new(raw.width, raw.height, raw.bytes)
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    pgm::encode(image.width, image.height, &image.pixels)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let raw = pgm::read(path.as_ref())?;
    Mask::from_bytes(raw.width, raw.height, &raw.bytes)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    pgm::write(path.as_ref(), mask.width, mask.height, &mask.to_bytes())
}

/// Loads an 8-bit label map (anatomy classes or small region counts).
pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let raw = pgm::read(path.as_ref())?;
    LabelMap::new(raw.width, raw.height, raw.bytes.into_iter().map(u32::from).collect())
}

pub fn save_label_map(path: impl AsRef<Path>, map: &LabelMap) -> Result<()> {
    let bytes = map
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| TseError::contract(format!("label {l} does not fit a PGM byte"))))
        .collect::<Result<Vec<_>>>()?;
    pgm::write(path.as_ref(), map.width, map.height, &bytes)
}

pub fn load_prob_map(path: impl AsRef<Path>) -> Result<ProbMap> {
    ProbMap::from_planes(Planes::load(path)?)
}

pub fn save_prob_map(path: impl AsRef<Path>, map: &ProbMap) -> Result<()> {
    map.to_planes().save(path)
}
