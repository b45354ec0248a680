//! Flat `key = value` pipeline configuration. Blank lines and `#` comments are
//! skipped, unknown or repeated keys are errors, and [`PipelineConfig::to_manifest`]
//! prints every key so a manifest parses back to the same configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::anatomy::AnatomyParams;
use crate::error::{Result, TseError};
use crate::eval::THETA_SQ;
use crate::maps::{BackgroundVariant, MapParams};
use crate::optimizer::{EnergyParams, PairwiseMode};
use crate::superpixel::SegmentParams;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub segment: SegmentParams,
    pub anatomy: AnatomyParams,
    pub maps: MapParams,
    pub energy: EnergyParams,
    pub background: BackgroundVariant,
    pub theta_sq: f64,

    pub image: Option<PathBuf>,
    pub prob_map: Option<PathBuf>,
    pub superpixels: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    pub seed: u64,
    pub phantom_count: usize,
    pub phantom_width: usize,
    pub phantom_height: usize,
    pub noise_sigma: f64,
    pub phantom_distractor: bool,

    pub sweep_alpha: Vec<f64>,
    pub sweep_beta: Vec<f64>,
    pub sweep_gamma: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment: SegmentParams::default(),
            anatomy: AnatomyParams::default(),
            maps: MapParams::default(),
            energy: EnergyParams::default(),
            background: BackgroundVariant::Full,
            theta_sq: THETA_SQ,
            image: None,
            prob_map: None,
            superpixels: None,
            dataset_dir: None,
            out_dir: None,
            seed: 0,
            phantom_count: 100,
            phantom_width: 256,
            phantom_height: 256,
            noise_sigma: 10.0,
            phantom_distractor: false,
            sweep_alpha: vec![0.0, 5.0, 10.0],
            sweep_beta: vec![1.0, 51.0, 101.0, 151.0],
            sweep_gamma: vec![1.0, 6.0, 11.0, 16.0, 21.0],
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| TseError::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let list = value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(list)
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn path_value(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "alpha",
        "beta",
        "gamma",
        "sigma1_sq",
        "sigma2_sq",
        "sigma3_sq",
        "eps_log",
        "step",
        "max_iters",
        "tol",
        "pairwise",
        "background",
        "theta_sq",
        "sp_kernel_size",
        "sp_max_dist",
        "sp_intensity_weight",
        "validity_fraction",
        "dark_intensity",
        "dark_fraction",
        "smooth_intensity",
        "smooth_fraction",
        "link_tol",
        "band_min_coverage",
        "ward_tol",
        "z_low",
        "z_high",
        "sigma_floor",
        "eps_f",
        "image",
        "prob_map",
        "superpixels",
        "dataset_dir",
        "out_dir",
        "seed",
        "phantom_count",
        "phantom_width",
        "phantom_height",
        "noise_sigma",
        "phantom_distractor",
        "sweep_alpha",
        "sweep_beta",
        "sweep_gamma",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TseError::Config(format!("line {}: expected `key = value`", no + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(TseError::Config(format!("line {}: duplicate key `{key}`", no + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| TseError::Config(format!("line {}: {}", no + 1, strip_prefix(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TseError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "alpha" => self.energy.alpha = parse_value(key, v)?,
            "beta" => self.energy.beta = parse_value(key, v)?,
            "gamma" => self.energy.gamma = parse_value(key, v)?,
            "sigma1_sq" => self.energy.sigma1_sq = parse_value(key, v)?,
            "sigma2_sq" => self.energy.sigma2_sq = parse_value(key, v)?,
            "sigma3_sq" => self.maps.sigma3_sq = parse_value(key, v)?,
            "eps_log" => self.energy.eps_log = parse_value(key, v)?,
            "step" => self.energy.step = parse_value(key, v)?,
            "max_iters" => self.energy.max_iters = parse_value(key, v)?,
            "tol" => self.energy.tol = parse_value(key, v)?,
            "pairwise" => {
                self.energy.pairwise = match v {
                    "dense" => PairwiseMode::Dense,
                    "adjacent" => PairwiseMode::Adjacent,
                    _ => {
                        return Err(TseError::Config(format!(
                            "`pairwise` must be dense or adjacent, got `{v}`"
                        )))
                    }
                }
            }
            "background" => {
                self.background = match v {
                    "full" => BackgroundVariant::Full,
                    "nc2" => BackgroundVariant::NcSquared,
                    _ => return Err(TseError::Config(format!("`background` must be full or nc2, got `{v}`"))),
                }
            }
            "theta_sq" => self.theta_sq = parse_value(key, v)?,
            "sp_kernel_size" => self.segment.kernel_size = parse_value(key, v)?,
            "sp_max_dist" => self.segment.max_dist = parse_value(key, v)?,
            "sp_intensity_weight" => self.segment.intensity_weight = parse_value(key, v)?,
            "validity_fraction" => {
                let f = parse_value(key, v)?;
                self.anatomy.validity_fraction = f;
                self.maps.validity_fraction = f;
            }
            "dark_intensity" => self.anatomy.dark_intensity = parse_value(key, v)?,
            "dark_fraction" => self.anatomy.dark_fraction = parse_value(key, v)?,
            "smooth_intensity" => self.anatomy.smooth_intensity = parse_value(key, v)?,
            "smooth_fraction" => self.anatomy.smooth_fraction = parse_value(key, v)?,
            "link_tol" => self.anatomy.link_tol = parse_value(key, v)?,
            "band_min_coverage" => self.anatomy.band_min_coverage = parse_value(key, v)?,
            "ward_tol" => self.anatomy.ward_tol = parse_value(key, v)?,
            "z_low" => self.maps.z_low = parse_value(key, v)?,
            "z_high" => self.maps.z_high = parse_value(key, v)?,
            "sigma_floor" => self.maps.sigma_floor = parse_value(key, v)?,
            "eps_f" => self.maps.eps_f = parse_value(key, v)?,
            "image" => self.image = path_value(v),
            "prob_map" => self.prob_map = path_value(v),
            "superpixels" => self.superpixels = path_value(v),
            "dataset_dir" => self.dataset_dir = path_value(v),
            "out_dir" => self.out_dir = path_value(v),
            "seed" => self.seed = parse_value(key, v)?,
            "phantom_count" => self.phantom_count = parse_value(key, v)?,
            "phantom_width" => self.phantom_width = parse_value(key, v)?,
            "phantom_height" => self.phantom_height = parse_value(key, v)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, v)?,
            "phantom_distractor" => self.phantom_distractor = parse_value(key, v)?,
            "sweep_alpha" => self.sweep_alpha = parse_list(key, v)?,
            "sweep_beta" => self.sweep_beta = parse_list(key, v)?,
            "sweep_gamma" => self.sweep_gamma = parse_list(key, v)?,
            _ => return Err(TseError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TseError::Config(m.to_string()));
        if self.energy.validate().is_err() {
            return bad("alpha, beta, gamma must be >= 0 and sigma1_sq, sigma2_sq, eps_log, step > 0");
        }
        if !(self.maps.sigma3_sq > 0.0) {
            return bad("sigma3_sq must be positive");
        }
        if !(0.0..1.0).contains(&self.anatomy.validity_fraction) {
            return bad("validity_fraction must be in [0, 1)");
        }
        if self.maps.z_low >= self.maps.z_high {
            return bad("z_low must be below z_high");
        }
        if !(self.theta_sq >= 0.0) {
            return bad("theta_sq must be non-negative");
        }
        if self.segment.kernel_size == 0 || !(self.segment.max_dist > 0.0) {
            return bad("sp_kernel_size and sp_max_dist must be positive");
        }
        if self.sweep_alpha.is_empty() || self.sweep_beta.is_empty() || self.sweep_gamma.is_empty() {
            return bad("sweep grids must be non-empty");
        }
        Ok(())
    }

    /// Every key with its effective value, one per line.
    pub fn to_manifest(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let e = &self.energy;
        let a = &self.anatomy;
        let m = &self.maps;
        let s = &self.segment;
        let values: Vec<String> = vec![
            e.alpha.to_string(),
            e.beta.to_string(),
            e.gamma.to_string(),
            e.sigma1_sq.to_string(),
            e.sigma2_sq.to_string(),
            m.sigma3_sq.to_string(),
            e.eps_log.to_string(),
            e.step.to_string(),
            e.max_iters.to_string(),
            e.tol.to_string(),
            match e.pairwise {
                PairwiseMode::Dense => "dense",
                PairwiseMode::Adjacent => "adjacent",
            }
            .into(),
            background_name(self.background).into(),
            self.theta_sq.to_string(),
            s.kernel_size.to_string(),
            s.max_dist.to_string(),
            s.intensity_weight.to_string(),
            a.validity_fraction.to_string(),
            a.dark_intensity.to_string(),
            a.dark_fraction.to_string(),
            a.smooth_intensity.to_string(),
            a.smooth_fraction.to_string(),
            a.link_tol.to_string(),
            a.band_min_coverage.to_string(),
            a.ward_tol.to_string(),
            m.z_low.to_string(),
            m.z_high.to_string(),
            m.sigma_floor.to_string(),
            m.eps_f.to_string(),
            path(&self.image),
            path(&self.prob_map),
            path(&self.superpixels),
            path(&self.dataset_dir),
            path(&self.out_dir),
            self.seed.to_string(),
            self.phantom_count.to_string(),
            self.phantom_width.to_string(),
            self.phantom_height.to_string(),
            self.noise_sigma.to_string(),
            self.phantom_distractor.to_string(),
            fmt_list(&self.sweep_alpha),
            fmt_list(&self.sweep_beta),
            fmt_list(&self.sweep_gamma),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn background_name(variant: BackgroundVariant) -> &'static str {
    match variant {
        BackgroundVariant::Full => "full",
        BackgroundVariant::NcSquared => "nc2",
    }
}

fn strip_prefix(e: TseError) -> String {
    match e {
        TseError::Config(m) => m,
        other => other.to_string(),
    }
}
