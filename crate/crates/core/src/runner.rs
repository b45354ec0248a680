//! Directory-level commands: single-image runs, phantom datasets, evaluation,
//! background-map ablation and the alpha/beta/gamma sweep.
//!
//! A dataset directory holds `<id>.image.pgm`, `<id>.prob.fplanes` and
//! `<id>.gt.pgm` per case. Saliency directories hold `<id>.saliency.pgm`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{background_name, PipelineConfig};
use crate::error::{Result, TseError};
use crate::eval::{evaluate, evaluate_dataset, write_atomic, DatasetReport, EvalReport};
use crate::ingest::phantom::random_layout;
use crate::ingest::{
    generate_phantom, load_image, load_mask, load_prob_map, save_image, save_label_map, save_mask, save_prob_map,
    Image, LabelMap, Mask, PhantomCase, PhantomConfig, Planes, ProbMap,
};
use crate::maps::BackgroundVariant;
use crate::optimizer::render_values;
use crate::pipeline::{finish, prepare, solve_prepared, unary_maps, Semantic};
use crate::superpixel::SuperpixelMap;

pub const IMAGE_SUFFIX: &str = ".image.pgm";
pub const PROB_SUFFIX: &str = ".prob.fplanes";
pub const GT_SUFFIX: &str = ".gt.pgm";
pub const SALIENCY_SUFFIX: &str = ".saliency.pgm";

/// Caps the global rayon pool from `TSE_THREADS`; returns the cap if one was set.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var("TSE_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| TseError::Config(format!("TSE_THREADS must be a positive integer, got `{raw}`")))?;
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TseError::io(dir, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| TseError::Config(format!("missing required key `{key}`")))
}

fn with_key<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| TseError::Config(format!("cannot read `{key}`: {e}")))
}

/// Files written by [`run_saliency`], relative to the output directory.
pub const SALIENCY_ARTIFACTS: &[&str] = &[
    "manifest.txt",
    "superpixels.fplanes",
    "sa.fplanes",
    "nsa.fplanes",
    "sp_prob.fplanes",
    "foreground.fplanes",
    "center.fplanes",
    "background.fplanes",
    "nc.fplanes",
    "saliency.fplanes",
    "energy.txt",
    "nsa.pgm",
    "foreground.pgm",
    "center.pgm",
    "background.pgm",
    "saliency.pgm",
];

#[derive(Clone, Debug)]
pub struct SaliencySummary {
    pub regions: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_energy: f64,
}

/// Runs the pipeline on `image` + `prob_map` (and optional `superpixels`) and
/// writes every intermediate map plus a manifest into `out`.
pub fn run_saliency(config: &PipelineConfig, out: &Path) -> Result<SaliencySummary> {
    let image = with_key("image", load_image(required(&config.image, "image")?))?;
    let prob = with_key("prob_map", load_prob_map(required(&config.prob_map, "prob_map")?))?;
    let superpixels = match &config.superpixels {
        Some(p) => Some(with_key("superpixels", SuperpixelMap::load(p))?),
        None => None,
    };
    let prepared = prepare(&image, Semantic::Probabilities(&prob), superpixels.as_ref(), config)?;
    let result = finish(&prepared, config, config.background)?;

    create_dir(out)?;
    let file = |name: &str| out.join(name);
    let planes = |name: &str, values: &[f64]| Planes::from_row(values).save(file(name));
    let sp = &prepared.spmap;
    write_atomic(&file("manifest.txt"), config.to_manifest().as_bytes())?;
    sp.save(file("superpixels.fplanes"))?;
    prepared.sa.layer_planes().save(file("sa.fplanes"))?;
    prepared.nsa.layer_planes().save(file("nsa.fplanes"))?;
    prepared.nsa.prob_planes().save(file("sp_prob.fplanes"))?;
    let maps = &result.maps;
    planes("foreground.fplanes", &maps.foreground)?;
    planes("center.fplanes", &maps.center)?;
    planes("background.fplanes", &maps.background)?;
    planes("nc.fplanes", &maps.nc)?;
    planes("saliency.fplanes", &result.solve.map.values)?;
    let trace: String = result.solve.energies.iter().map(|e| format!("{e:e}\n")).collect();
    write_atomic(&file("energy.txt"), trace.as_bytes())?;

    let codes: Vec<u32> = prepared.nsa.layer_of.iter().map(|l| l.code() as u32).collect();
    save_label_map(
        file("nsa.pgm"),
        &LabelMap::new(sp.width(), sp.height(), sp.paint(&codes))?,
    )?;
    save_image(file("foreground.pgm"), &render_values(&maps.foreground, sp)?)?;
    save_image(file("center.pgm"), &render_values(&maps.center, sp)?)?;
    save_image(file("background.pgm"), &render_values(&maps.background, sp)?)?;
    save_image(file("saliency.pgm"), &result.rendered)?;

    Ok(SaliencySummary {
        regions: sp.len(),
        iterations: result.solve.iterations,
        converged: result.solve.converged,
        final_energy: *result
            .solve
            .energies
            .last()
            .expect("trace starts with the initial energy"),
    })
}

/// One labeled case held in memory.
#[derive(Clone, Debug)]
pub struct Case {
    pub id: String,
    pub image: Image,
    pub prob: ProbMap,
    pub ground_truth: Mask,
}

impl From<(String, PhantomCase)> for Case {
    fn from((id, p): (String, PhantomCase)) -> Self {
        Self {
            id,
            image: p.image,
            prob: p.prob_map,
            ground_truth: p.ground_truth,
        }
    }
}

/// Phantom `k` of a run uses seed `base_seed + k` for both layout and noise.
pub fn phantom_cases(config: &PipelineConfig, with_distractor: bool) -> Result<Vec<Case>> {
    (0..config.phantom_count as u64)
        .into_par_iter()
        .map(|k| {
            let seed = config.seed.wrapping_add(k);
            let (tumor, distractor) = random_layout(seed, with_distractor);
            let pc = PhantomConfig {
                distractor,
                ..PhantomConfig::default()
            };
            let case = generate_phantom(
                config.phantom_width,
                config.phantom_height,
                &tumor,
                config.noise_sigma,
                seed,
                &pc,
            )?;
            Ok((format!("phantom{seed:06}"), case).into())
        })
        .collect()
}

pub fn write_cases(cases: &[Case], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    cases.par_iter().try_for_each(|c| {
        save_image(dir.join(format!("{}{IMAGE_SUFFIX}", c.id)), &c.image)?;
        save_prob_map(dir.join(format!("{}{PROB_SUFFIX}", c.id)), &c.prob)?;
        save_mask(dir.join(format!("{}{GT_SUFFIX}", c.id)), &c.ground_truth)
    })
}

/// Ids of files in `dir` ending with `suffix`, sorted.
fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| TseError::io(dir, e))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| TseError::io(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            if !id.is_empty() {
                ids.insert(id.to_string());
            }
        }
    }
    Ok(ids)
}

fn mismatch(left: (&Path, &BTreeSet<String>), right: (&Path, &BTreeSet<String>)) -> Option<String> {
    let only_left: Vec<_> = left.1.difference(right.1).cloned().collect();
    let only_right: Vec<_> = right.1.difference(left.1).cloned().collect();
    if only_left.is_empty() && only_right.is_empty() {
        return None;
    }
    Some(format!(
        "unmatched files; only in {}: [{}]; only in {}: [{}]",
        left.0.display(),
        only_left.join(", "),
        right.0.display(),
        only_right.join(", ")
    ))
}

pub fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    let images = ids_with_suffix(dir, IMAGE_SUFFIX)?;
    if images.is_empty() {
        return Err(TseError::contract(format!(
            "no *{IMAGE_SUFFIX} files in {}",
            dir.display()
        )));
    }
    for suffix in [PROB_SUFFIX, GT_SUFFIX] {
        let other = ids_with_suffix(dir, suffix)?;
        if let Some(m) = mismatch((dir, &images), (dir, &other)) {
            return Err(TseError::contract(format!("{suffix}: {m}")));
        }
    }
    images
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|id| {
            let path = |s: &str| dir.join(format!("{id}{s}"));
            Ok(Case {
                image: load_image(path(IMAGE_SUFFIX))?,
                prob: load_prob_map(path(PROB_SUFFIX))?,
                ground_truth: load_mask(path(GT_SUFFIX))?,
                id,
            })
        })
        .collect()
}

/// Cases from `dataset_dir` if configured, otherwise freshly generated phantoms.
pub fn dataset_cases(config: &PipelineConfig, with_distractor: bool) -> Result<Vec<Case>> {
    match &config.dataset_dir {
        Some(dir) => load_cases(dir),
        None => phantom_cases(config, with_distractor),
    }
}

/// Saliency for every case with one background variant, in case order.
pub fn saliency_batch(cases: &[Case], config: &PipelineConfig, variant: BackgroundVariant) -> Result<Vec<Image>> {
    cases
        .par_iter()
        .map(|c| {
            let p = prepare(&c.image, Semantic::Probabilities(&c.prob), None, config)
                .map_err(|e| TseError::contract(format!("{}: {e}", c.id)))?;
            finish(&p, config, variant)
                .map(|r| r.rendered)
                .map_err(|e| TseError::contract(format!("{}: {e}", c.id)))
        })
        .collect()
}

/// Writes `<id>.saliency.pgm` for each case plus the manifest.
pub fn write_saliency_batch(cases: &[Case], maps: &[Image], config: &PipelineConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_atomic(&out.join("manifest.txt"), config.to_manifest().as_bytes())?;
    cases
        .par_iter()
        .zip(maps)
        .try_for_each(|(c, m)| save_image(out.join(format!("{}{SALIENCY_SUFFIX}", c.id)), m))
}

/// Matches `<id>.saliency.pgm` against `<id>.gt.pgm`, then writes `summary.csv`
/// and `pr_curve.csv`. Nothing is written unless every file matches and loads.
pub fn run_eval(config: &PipelineConfig, saliency_dir: &Path, gt_dir: &Path, out: &Path) -> Result<DatasetReport> {
    let sal = ids_with_suffix(saliency_dir, SALIENCY_SUFFIX)?;
    let gt = ids_with_suffix(gt_dir, GT_SUFFIX)?;
    if let Some(m) = mismatch((saliency_dir, &sal), (gt_dir, &gt)) {
        return Err(TseError::contract(m));
    }
    if sal.is_empty() {
        return Err(TseError::contract(format!(
            "no *{SALIENCY_SUFFIX} / *{GT_SUFFIX} pairs in {} and {}",
            saliency_dir.display(),
            gt_dir.display()
        )));
    }
    let items = sal
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|id| {
            let sm = load_image(saliency_dir.join(format!("{id}{SALIENCY_SUFFIX}")))?;
            let gt = load_mask(gt_dir.join(format!("{id}{GT_SUFFIX}")))?;
            Ok((id, sm, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_dataset(&items, config.theta_sq)?;
    create_dir(out)?;
    report.write_summary_csv(out.join("summary.csv"))?;
    report.write_pr_curve_csv(out.join("pr_curve.csv"))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub ids: Vec<String>,
    pub nc2: Vec<EvalReport>,
    pub full: Vec<EvalReport>,
}

impl AblationReport {
    pub fn mean(reports: &[EvalReport], f: fn(&EvalReport) -> f64) -> f64 {
        reports.iter().map(f).sum::<f64>() / reports.len() as f64
    }

    pub fn mean_f_gain(&self) -> f64 {
        Self::mean(&self.full, |r| r.f_measure) - Self::mean(&self.nc2, |r| r.f_measure)
    }
}

/// Runs both background variants on identical inputs and evaluates each.
pub fn ablation(cases: &[Case], config: &PipelineConfig) -> Result<AblationReport> {
    if cases.is_empty() {
        return Err(TseError::contract("ablation needs at least one case"));
    }
    let pairs = cases
        .par_iter()
        .map(|c| {
            let tag = |e: TseError| TseError::contract(format!("{}: {e}", c.id));
            let p = prepare(&c.image, Semantic::Probabilities(&c.prob), None, config).map_err(tag)?;
            let mut out = Vec::with_capacity(2);
            for variant in [BackgroundVariant::NcSquared, BackgroundVariant::Full] {
                let r = finish(&p, config, variant).map_err(tag)?;
                out.push(evaluate(&r.rendered, &c.ground_truth, config.theta_sq)?);
            }
            let full = out.pop().expect("two variants");
            Ok((out.pop().expect("two variants"), full))
        })
        .collect::<Result<Vec<_>>>()?;
    let (nc2, full) = pairs.into_iter().unzip();
    Ok(AblationReport {
        ids: cases.iter().map(|c| c.id.clone()).collect(),
        nc2,
        full,
    })
}

/// `ablation.csv` (metric rows, one column per variant) and
/// `ablation_images.csv` (per-image F-measure and MAE for both variants).
pub fn write_ablation(report: &AblationReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    let (a, b) = (
        background_name(BackgroundVariant::NcSquared),
        background_name(BackgroundVariant::Full),
    );
    let mut summary = format!("metric,bg_{a},bg_{b}\n");
    type Metric = (&'static str, fn(&EvalReport) -> f64);
    let metrics: [Metric; 4] = [
        ("precision", |r| r.precision),
        ("recall", |r| r.recall),
        ("f_measure", |r| r.f_measure),
        ("mae", |r| r.mae),
    ];
    for (name, f) in metrics {
        summary.push_str(&format!(
            "{name},{},{}\n",
            AblationReport::mean(&report.nc2, f),
            AblationReport::mean(&report.full, f)
        ));
    }
    let mut per_image = format!("image_id,bg_{a}_f_measure,bg_{b}_f_measure,bg_{a}_mae,bg_{b}_mae\n");
    for ((id, n), f) in report.ids.iter().zip(&report.nc2).zip(&report.full) {
        per_image.push_str(&format!("{id},{},{},{},{}\n", n.f_measure, f.f_measure, n.mae, f.mae));
    }
    write_atomic(&out.join("ablation.csv"), summary.as_bytes())?;
    write_atomic(&out.join("ablation_images.csv"), per_image.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mae: f64,
}

/// Dataset scores for every (alpha, beta, gamma) in the configured grids.
/// Maps and weights are built once per image; only the solve repeats.
pub fn sweep(cases: &[Case], config: &PipelineConfig) -> Result<Vec<SweepPoint>> {
    if cases.is_empty() {
        return Err(TseError::contract("sweep needs at least one case"));
    }
    let grid: Vec<(f64, f64, f64)> = config
        .sweep_alpha
        .iter()
        .flat_map(|&a| {
            config
                .sweep_beta
                .iter()
                .flat_map(move |&b| config.sweep_gamma.iter().map(move |&g| (a, b, g)))
        })
        .collect();
    let per_case = cases
        .par_iter()
        .map(|c| {
            let tag = |e: TseError| TseError::contract(format!("{}: {e}", c.id));
            let p = prepare(&c.image, Semantic::Probabilities(&c.prob), None, config).map_err(tag)?;
            let (maps, lw) = unary_maps(&p, config, config.background).map_err(tag)?;
            grid.iter()
                .map(|&(alpha, beta, gamma)| {
                    let energy = crate::optimizer::EnergyParams {
                        alpha,
                        beta,
                        gamma,
                        ..config.energy.clone()
                    };
                    let r = solve_prepared(&p, maps.clone(), lw.clone(), &energy).map_err(tag)?;
                    evaluate(&r.rendered, &c.ground_truth, config.theta_sq)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &(alpha, beta, gamma))| {
            let reports: Vec<EvalReport> = per_case.iter().map(|r| r[g].clone()).collect();
            SweepPoint {
                alpha,
                beta,
                gamma,
                precision: AblationReport::mean(&reports, |r| r.precision),
                recall: AblationReport::mean(&reports, |r| r.recall),
                f_measure: AblationReport::mean(&reports, |r| r.f_measure),
                mae: AblationReport::mean(&reports, |r| r.mae),
            }
        })
        .collect())
}

pub fn write_sweep(points: &[SweepPoint], out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut csv = String::from("alpha,beta,gamma,precision,recall,f_measure,mae\n");
    for p in points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.alpha, p.beta, p.gamma, p.precision, p.recall, p.f_measure, p.mae
        ));
    }
    write_atomic(&out.join("sweep.csv"), csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mismatch_lists_both_sides() {
        let a: BTreeSet<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
        let b: BTreeSet<String> = ["y", "z"].iter().map(|s| s.to_string()).collect();
        let m = mismatch((Path::new("A"), &a), (Path::new("B"), &b)).unwrap();
        assert!(m.contains("only in A: [x]") && m.contains("only in B: [z]"), "{m}");
        assert!(mismatch((Path::new("A"), &a), (Path::new("A"), &a)).is_none());
    }

    #[test]
    fn missing_input_names_the_key() {
        let cfg = PipelineConfig::default();
        let err = run_saliency(&cfg, Path::new("unused")).unwrap_err().to_string();
        assert!(err.contains("`image`"), "{err}");
        let cfg = PipelineConfig {
            image: Some("/nonexistent/a.pgm".into()),
            ..PipelineConfig::default()
        };
        let err = run_saliency(&cfg, Path::new("unused")).unwrap_err().to_string();
        assert!(err.contains("`image`"), "{err}");
    }
}
