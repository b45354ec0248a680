//! Precision/recall, F-measure, MAE and P-R curves over 8-bit saliency maps.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Result, TseError};
use crate::ingest::{Image, Mask};

pub const THETA_SQ: f64 = 0.3;
pub const CURVE_LEN: usize = 256;

/// Pixels strictly above `threshold`.
pub fn binarize(sm: &Image, threshold: u8) -> Mask {
    Mask {
        width: sm.width(),
        height: sm.height(),
        bits: sm.pixels().iter().map(|&v| v > threshold).collect(),
    }
}

fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(TseError::contract(format!(
            "dimension mismatch: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Empty prediction gives precision 0; empty ground truth gives recall 0.
pub fn precision_recall(sm_bin: &Mask, gt: &Mask) -> Result<(f64, f64)> {
    check_same((sm_bin.width, sm_bin.height), (gt.width, gt.height))?;
    let hit = sm_bin.bits.iter().zip(&gt.bits).filter(|(&a, &b)| a && b).count();
    Ok(ratio_pair(hit, sm_bin.count(), gt.count()))
}

fn ratio_pair(hit: usize, predicted: usize, truth: usize) -> (f64, f64) {
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (frac(hit, predicted), frac(hit, truth))
}

pub fn f_measure(precision: f64, recall: f64, theta_sq: f64) -> f64 {
    let den = theta_sq * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + theta_sq) * precision * recall / den
    }
}

/// Mean absolute difference between two maps with values in [0, 1].
pub fn mae(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TseError::contract(format!(
            "map lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(TseError::contract("empty maps"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn image_to_unit(sm: &Image) -> Vec<f64> {
    sm.pixels().iter().map(|&v| v as f64 / 255.0).collect()
}

pub fn mask_to_unit(mask: &Mask) -> Vec<f64> {
    mask.bits.iter().map(|&b| b as u8 as f64).collect()
}

/// MAE of an 8-bit saliency map (scaled to [0, 1]) against a mask.
pub fn mae_image(sm: &Image, gt: &Mask) -> Result<f64> {
    check_same((sm.width(), sm.height()), (gt.width, gt.height))?;
    mae(&image_to_unit(sm), &mask_to_unit(gt))
}

/// (precision, recall) for every threshold 0..=255, from value histograms.
pub fn pr_curve(sm: &Image, gt: &Mask) -> Result<Vec<(f64, f64)>> {
    check_same((sm.width(), sm.height()), (gt.width, gt.height))?;
    let mut inside = [0usize; 256];
    let mut all = [0usize; 256];
    for (&v, &g) in sm.pixels().iter().zip(&gt.bits) {
        all[v as usize] += 1;
        inside[v as usize] += g as usize;
    }
    let truth = gt.count();
    let (mut hit, mut predicted) = (0, 0);
    let mut curve = vec![(0.0, 0.0); CURVE_LEN];
    for t in (0..CURVE_LEN).rev() {
        curve[t] = ratio_pair(hit, predicted, truth);
        hit += inside[t];
        predicted += all[t];
    }
    Ok(curve)
}

/// Twice the mean value, rounded and capped at 255.
pub fn adaptive_threshold(sm: &Image) -> u8 {
    let mean = sm.pixels().iter().map(|&v| v as f64).sum::<f64>() / sm.len() as f64;
    (2.0 * mean).round().min(255.0) as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub pr_curve: Vec<(f64, f64)>,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mae: f64,
}

pub fn evaluate(sm: &Image, gt: &Mask, theta_sq: f64) -> Result<EvalReport> {
    let pr_curve = pr_curve(sm, gt)?;
    let (precision, recall) = precision_recall(&binarize(sm, adaptive_threshold(sm)), gt)?;
    Ok(EvalReport {
        pr_curve,
        precision,
        recall,
        f_measure: f_measure(precision, recall, theta_sq),
        mae: mae_image(sm, gt)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub ids: Vec<String>,
    pub per_image: Vec<EvalReport>,
    /// Pointwise mean of the per-image curves.
    pub pr_curve: Vec<(f64, f64)>,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mae: f64,
}

impl DatasetReport {
    /// Aggregates in the given order.
    pub fn from_reports(ids: Vec<String>, per_image: Vec<EvalReport>) -> Result<Self> {
        if per_image.is_empty() || ids.len() != per_image.len() {
            return Err(TseError::contract(
                "a dataset report needs one id per non-empty report list",
            ));
        }
        let k = per_image.len() as f64;
        let mean = |f: fn(&EvalReport) -> f64| per_image.iter().map(f).sum::<f64>() / k;
        let pr_curve = (0..CURVE_LEN)
            .map(|t| {
                let p = per_image.iter().map(|r| r.pr_curve[t].0).sum::<f64>() / k;
                let r = per_image.iter().map(|r| r.pr_curve[t].1).sum::<f64>() / k;
                (p, r)
            })
            .collect();
        Ok(Self {
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f_measure: mean(|r| r.f_measure),
            mae: mean(|r| r.mae),
            pr_curve,
            ids,
            per_image,
        })
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("image_id,precision,recall,f_measure,mae\n");
        for (id, r) in self.ids.iter().zip(&self.per_image) {
            out.push_str(&format!(
                "{id},{},{},{},{}\n",
                r.precision, r.recall, r.f_measure, r.mae
            ));
        }
        write_atomic(path.as_ref(), out.as_bytes())
    }

    pub fn write_pr_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("threshold,precision,recall\n");
        for (t, (p, r)) in self.pr_curve.iter().enumerate() {
            out.push_str(&format!("{t},{p},{r}\n"));
        }
        write_atomic(path.as_ref(), out.as_bytes())
    }
}

/// Evaluates `(id, saliency, ground truth)` triples in parallel.
pub fn evaluate_dataset(items: &[(String, Image, Mask)], theta_sq: f64) -> Result<DatasetReport> {
    let per_image = items
        .par_iter()
        .map(|(id, sm, gt)| evaluate(sm, gt, theta_sq).map_err(|e| TseError::contract(format!("{id}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    DatasetReport::from_reports(items.iter().map(|i| i.0.clone()).collect(), per_image)
}

/// Writes through a sibling temp file and renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| TseError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| TseError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| TseError::io(path, e))
}
