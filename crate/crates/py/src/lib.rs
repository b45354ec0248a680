//! Python bindings: images and maps cross the boundary as NumPy arrays.

use numpy::ndarray::{Array1, Array2, Array3};
use numpy::{IntoPyArray, PyArray1, PyArray2, PyArray3, PyReadonlyArray1, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tse_core::config::PipelineConfig;
use tse_core::eval::{self, EvalReport};
use tse_core::ingest::phantom::random_layout;
use tse_core::ingest::{self as io, Image, Mask, PhantomConfig, ProbMap, CLASS_COUNT};
use tse_core::maps::UnaryMaps;
use tse_core::optimizer::{self, BackgroundConstraint, EnergyParams, PairwiseWeights};
use tse_core::pipeline::{estimate_saliency as estimate, Semantic};
use tse_core::TseError;

fn py_err(e: TseError) -> PyErr {
    match e {
        TseError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_image(a: &PyReadonlyArray2<'_, u8>) -> PyResult<Image> {
    let v = a.as_array();
    let (h, w) = v.dim();
    Image::new(w, h, v.iter().copied().collect()).map_err(py_err)
}

fn image_array<'py>(py: Python<'py>, img: &Image) -> Bound<'py, PyArray2<u8>> {
    Array2::from_shape_vec((img.height(), img.width()), img.pixels().to_vec())
        .expect("image buffer matches its shape")
        .into_pyarray(py)
}

fn to_mask(a: &PyReadonlyArray2<'_, bool>) -> PyResult<Mask> {
    let v = a.as_array();
    let (h, w) = v.dim();
    Mask::new(w, h, v.iter().copied().collect()).map_err(py_err)
}

fn mask_array<'py>(py: Python<'py>, m: &Mask) -> Bound<'py, PyArray2<bool>> {
    Array2::from_shape_vec((m.height, m.width), m.bits.clone())
        .expect("mask buffer matches its shape")
        .into_pyarray(py)
}

fn to_prob(a: &PyReadonlyArray3<'_, f32>) -> PyResult<ProbMap> {
    let v = a.as_array();
    let (c, h, w) = v.dim();
    if c != CLASS_COUNT {
        return Err(PyValueError::new_err(format!(
            "probability map needs {CLASS_COUNT} planes, got {c}"
        )));
    }
    ProbMap::new(w, h, v.iter().copied().collect()).map_err(py_err)
}

fn prob_array<'py>(py: Python<'py>, p: &ProbMap) -> Bound<'py, PyArray3<f32>> {
    let data: Vec<f32> = (0..CLASS_COUNT).flat_map(|k| p.plane(k).to_vec()).collect();
    Array3::from_shape_vec((CLASS_COUNT, p.height(), p.width()), data)
        .expect("plane buffer matches its shape")
        .into_pyarray(py)
}

fn vec_array<'py>(py: Python<'py>, v: &[f64]) -> Bound<'py, PyArray1<f64>> {
    Array1::from(v.to_vec()).into_pyarray(py)
}

/// Pipeline configuration; the same `key = value` format as the CLI.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**settings))]
    fn new(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = PipelineConfig::default();
        if let Some(settings) = settings {
            for (k, v) in settings.iter() {
                let key: String = k.extract()?;
                inner.set(&key, &v.str()?.to_string()).map_err(py_err)?;
            }
        }
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PipelineConfig::parse(text).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PipelineConfig::load(path).map_err(py_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn manifest(&self) -> String {
        self.inner.to_manifest()
    }

    fn __repr__(&self) -> String {
        let e = &self.inner.energy;
        format!("Config(alpha={}, beta={}, gamma={})", e.alpha, e.beta, e.gamma)
    }
}

/// Result of one pipeline run. Per-region vectors share the region order of
/// `superpixels`.
#[pyclass(name = "SaliencyResult", skip_from_py_object)]
struct PySaliencyResult {
    #[pyo3(get)]
    saliency: Py<PyArray2<u8>>,
    #[pyo3(get)]
    superpixels: Py<PyArray2<u32>>,
    #[pyo3(get)]
    region_saliency: Py<PyArray1<f64>>,
    #[pyo3(get)]
    foreground: Py<PyArray1<f64>>,
    #[pyo3(get)]
    center: Py<PyArray1<f64>>,
    #[pyo3(get)]
    background: Py<PyArray1<f64>>,
    #[pyo3(get)]
    nc: Py<PyArray1<f64>>,
    /// Refined layer per region: 1 skin, 2 fat, 3 mammary, 4 muscle.
    #[pyo3(get)]
    layers: Vec<u8>,
    #[pyo3(get)]
    adaptive_center: (f64, f64),
    #[pyo3(get)]
    energies: Vec<f64>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
}

#[pymethods]
impl PySaliencyResult {
    fn __repr__(&self) -> String {
        format!(
            "SaliencyResult(regions={}, iterations={}, converged={})",
            self.layers.len(),
            self.iterations,
            self.converged
        )
    }
}

/// Runs the whole pipeline on a grayscale image (H, W) and a class
/// probability map (4, H, W).
#[pyfunction]
#[pyo3(signature = (image, prob_map, config=None))]
fn estimate_saliency(
    py: Python<'_>,
    image: PyReadonlyArray2<'_, u8>,
    prob_map: PyReadonlyArray3<'_, f32>,
    config: Option<PyConfig>,
) -> PyResult<PySaliencyResult> {
    let img = to_image(&image)?;
    let prob = to_prob(&prob_map)?;
    let config = config.map(|c| c.inner).unwrap_or_default();
    let (prepared, result) = py
        .detach(|| estimate(&img, Semantic::Probabilities(&prob), None, &config))
        .map_err(py_err)?;
    let sp = &prepared.spmap;
    let labels = Array2::from_shape_vec((sp.height(), sp.width()), sp.region_of().to_vec()).expect("label shape");
    let maps = &result.maps;
    Ok(PySaliencyResult {
        saliency: image_array(py, &result.rendered).unbind(),
        superpixels: labels.into_pyarray(py).unbind(),
        region_saliency: vec_array(py, &result.solve.map.values).unbind(),
        foreground: vec_array(py, &maps.foreground).unbind(),
        center: vec_array(py, &maps.center).unbind(),
        background: vec_array(py, &maps.background).unbind(),
        nc: vec_array(py, &maps.nc).unbind(),
        layers: prepared.nsa.layer_of.iter().map(|l| l.code()).collect(),
        adaptive_center: (maps.adaptive_center[0], maps.adaptive_center[1]),
        energies: result.solve.energies.clone(),
        iterations: result.solve.iterations,
        converged: result.solve.converged,
    })
}

/// Synthetic layered phantom. Returns a dict with `image`, `ground_truth`,
/// `prob_map` and `tumor_center`.
#[pyfunction]
#[pyo3(signature = (seed, width=256, height=256, noise_sigma=10.0, distractor=false))]
fn generate_phantom<'py>(
    py: Python<'py>,
    seed: u64,
    width: usize,
    height: usize,
    noise_sigma: f64,
    distractor: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let (tumor, d) = random_layout(seed, distractor);
    let cfg = PhantomConfig {
        distractor: d,
        ..PhantomConfig::default()
    };
    let case = io::generate_phantom(width, height, &tumor, noise_sigma, seed, &cfg).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("image", image_array(py, &case.image))?;
    out.set_item("ground_truth", mask_array(py, &case.ground_truth))?;
    out.set_item("prob_map", prob_array(py, &case.prob_map))?;
    out.set_item("tumor_center", case.tumor_center)?;
    Ok(out)
}

#[pyfunction]
fn load_image<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray2<u8>>> {
    Ok(image_array(py, &io::load_image(path).map_err(py_err)?))
}

#[pyfunction]
fn save_image(path: &str, image: PyReadonlyArray2<'_, u8>) -> PyResult<()> {
    io::save_image(path, &to_image(&image)?).map_err(py_err)
}

#[pyfunction]
fn load_mask<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray2<bool>>> {
    Ok(mask_array(py, &io::load_mask(path).map_err(py_err)?))
}

#[pyfunction]
fn load_prob_map<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray3<f32>>> {
    Ok(prob_array(py, &io::load_prob_map(path).map_err(py_err)?))
}

#[pyfunction]
fn save_prob_map(path: &str, prob_map: PyReadonlyArray3<'_, f32>) -> PyResult<()> {
    io::save_prob_map(path, &to_prob(&prob_map)?).map_err(py_err)
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("precision", r.precision)?;
    out.set_item("recall", r.recall)?;
    out.set_item("f_measure", r.f_measure)?;
    out.set_item("mae", r.mae)?;
    out.set_item("pr_curve", r.pr_curve.clone())?;
    Ok(out)
}

/// Precision, recall and F-measure at the adaptive threshold, MAE and the
/// 256-point P-R curve for one saliency map.
#[pyfunction]
#[pyo3(signature = (saliency, ground_truth, theta_sq=eval::THETA_SQ))]
fn evaluate<'py>(
    py: Python<'py>,
    saliency: PyReadonlyArray2<'_, u8>,
    ground_truth: PyReadonlyArray2<'_, bool>,
    theta_sq: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = eval::evaluate(&to_image(&saliency)?, &to_mask(&ground_truth)?, theta_sq).map_err(py_err)?;
    report_dict(py, &r)
}

#[pyfunction]
#[pyo3(signature = (precision, recall, theta_sq=eval::THETA_SQ))]
fn f_measure(precision: f64, recall: f64, theta_sq: f64) -> f64 {
    eval::f_measure(precision, recall, theta_sq)
}

struct Problem {
    maps: UnaryMaps,
    w: PairwiseWeights,
    b: BackgroundConstraint,
    params: EnergyParams,
}

fn problem(
    foreground: PyReadonlyArray1<'_, f64>,
    center: PyReadonlyArray1<'_, f64>,
    background: PyReadonlyArray1<'_, f64>,
    weights: PyReadonlyArray2<'_, f64>,
    pinned: Option<Vec<bool>>,
    config: Option<PyConfig>,
) -> PyResult<Problem> {
    let vec = |a: PyReadonlyArray1<'_, f64>| a.as_array().to_vec();
    let (f, c, t) = (vec(foreground), vec(center), vec(background));
    let wv = weights.as_array();
    let (rows, cols) = wv.dim();
    if rows != cols {
        return Err(PyValueError::new_err(format!(
            "weights must be square, got {rows}x{cols}"
        )));
    }
    let w = PairwiseWeights::from_dense(rows, wv.iter().copied().collect()).map_err(py_err)?;
    let b = match pinned {
        Some(p) => BackgroundConstraint { pinned: p },
        None => BackgroundConstraint::none(rows),
    };
    Ok(Problem {
        maps: UnaryMaps {
            nc: t.clone(),
            foreground: f,
            center: c,
            background: t,
            adaptive_center: [0.5, 0.5],
        },
        w,
        b,
        params: config.map(|c| c.inner.energy).unwrap_or_default(),
    })
}

/// Energy of a saliency vector for explicit unary maps and a dense weight matrix.
#[pyfunction]
#[pyo3(signature = (s, foreground, center, background, weights, pinned=None, config=None))]
fn energy(
    s: Vec<f64>,
    foreground: PyReadonlyArray1<'_, f64>,
    center: PyReadonlyArray1<'_, f64>,
    background: PyReadonlyArray1<'_, f64>,
    weights: PyReadonlyArray2<'_, f64>,
    pinned: Option<Vec<bool>>,
    config: Option<PyConfig>,
) -> PyResult<f64> {
    let p = problem(foreground, center, background, weights, pinned, config)?;
    optimizer::energy(&s, &p.maps, &p.w, &p.b, &p.params).map_err(py_err)
}

/// Minimizes the energy; returns `(s, energies)`.
#[pyfunction]
#[pyo3(signature = (foreground, center, background, weights, pinned=None, config=None))]
fn solve<'py>(
    py: Python<'py>,
    foreground: PyReadonlyArray1<'_, f64>,
    center: PyReadonlyArray1<'_, f64>,
    background: PyReadonlyArray1<'_, f64>,
    weights: PyReadonlyArray2<'_, f64>,
    pinned: Option<Vec<bool>>,
    config: Option<PyConfig>,
) -> PyResult<(Bound<'py, PyArray1<f64>>, Vec<f64>)> {
    let p = problem(foreground, center, background, weights, pinned, config)?;
    let out = optimizer::solve(&p.maps, &p.w, &p.b, &p.params).map_err(py_err)?;
    Ok((vec_array(py, &out.map.values), out.energies))
}

#[pymodule]
fn tse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySaliencyResult>()?;
    m.add_function(wrap_pyfunction!(estimate_saliency, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(load_mask, m)?)?;
    m.add_function(wrap_pyfunction!(load_prob_map, m)?)?;
    m.add_function(wrap_pyfunction!(save_prob_map, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(f_measure, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add("THETA_SQ", eval::THETA_SQ)?;
    Ok(())
}
