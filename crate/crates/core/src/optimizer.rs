//! The saliency energy over S in [0,1]^N with pinned background regions:
//!
//! `E(S) = S.(-a ln C - b ln F) + g (1-S).(-ln T) + sum_i sum_j (s_i - s_j)^2 w_ij`
//!
//! minimized by projected gradient descent with Barzilai-Borwein trial steps
//! and halving backtracking, so every accepted iterate lowers the energy.

use rayon::prelude::*;

use crate::anatomy::AnatomyLabeling;
use crate::error::{Result, TseError};
use crate::ingest::Image;
use crate::layer::Layer;
use crate::maps::UnaryMaps;
use crate::superpixel::{RegionGraph, SuperpixelMap};

pub const BRUTE_FORCE_MAX_N: usize = 5;
/// Below this many regions the energy is evaluated on one thread.
const PARALLEL_MIN_N: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairwiseMode {
    /// Every region pair.
    Dense,
    /// Only regions sharing an edge.
    Adjacent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub eps_log: f64,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub pairwise: PairwiseMode,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 51.0,
            gamma: 6.0,
            sigma1_sq: 0.5,
            sigma2_sq: 0.5,
            eps_log: 1e-6,
            step: 1e-3,
            max_iters: 500,
            tol: 1e-4,
            pairwise: PairwiseMode::Adjacent,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return Err(TseError::contract("alpha, beta and gamma must be non-negative"));
        }
        if !(self.sigma1_sq > 0.0 && self.sigma2_sq > 0.0 && self.eps_log > 0.0 && self.step > 0.0) {
            return Err(TseError::contract("sigma values, eps_log and step must be positive"));
        }
        Ok(())
    }
}

/// Symmetric pairwise weights with a zero diagonal, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseWeights {
    n: usize,
    w: Vec<f64>,
}

impl PairwiseWeights {
    pub fn from_dense(n: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != n * n {
            return Err(TseError::contract("weight matrix is not n x n"));
        }
        for i in 0..n {
            if w[i * n + i] != 0.0 {
                return Err(TseError::contract(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if w[i * n + j] != w[j * n + i] || w[i * n + j] < 0.0 {
                    return Err(TseError::contract(format!(
                        "weights ({i}, {j}) not symmetric and non-negative"
                    )));
                }
            }
        }
        Ok(Self { n, w })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }
}

pub fn pairwise_weights(graph: &RegionGraph, params: &EnergyParams) -> PairwiseWeights {
    let n = graph.len();
    let mut w = vec![0.0; n * n];
    w.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        let ri = &graph.regions[i];
        let mut fill = |j: usize| {
            let rj = &graph.regions[j];
            let r = (-(ri.intensity - rj.intensity).abs() / params.sigma1_sq).exp();
            let d = (ri.center[0] - rj.center[0]).hypot(ri.center[1] - rj.center[1]);
            row[j] = r * (-d / params.sigma2_sq).exp();
        };
        match params.pairwise {
            PairwiseMode::Dense => (0..n).filter(|&j| j != i).for_each(&mut fill),
            PairwiseMode::Adjacent => graph.adjacency[i].iter().copied().for_each(&mut fill),
        }
    });
    PairwiseWeights { n, w }
}

/// Regions whose saliency is pinned to zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackgroundConstraint {
    pub pinned: Vec<bool>,
}

impl BackgroundConstraint {
    pub fn none(n: usize) -> Self {
        Self { pinned: vec![false; n] }
    }
}

/// Pins the skin layer; if every region is skin nothing is pinned.
pub fn build_constraint(nsa: &AnatomyLabeling) -> BackgroundConstraint {
    let pinned: Vec<bool> = nsa.layer_of.iter().map(|&l| l == Layer::Skin).collect();
    if pinned.iter().all(|&p| p) {
        BackgroundConstraint::none(pinned.len())
    } else {
        BackgroundConstraint { pinned }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
}

impl SaliencyMap {
    /// Paints region saliency over pixels, min-max scaled to [0, 255].
    pub fn render(&self, spmap: &SuperpixelMap) -> Result<Image> {
        render_values(&self.values, spmap)
    }
}

pub fn render_values(values: &[f64], spmap: &SuperpixelMap) -> Result<Image> {
    if values.len() != spmap.len() {
        return Err(TseError::contract("one value per region required for rendering"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<u8> = values
        .iter()
        .map(|&v| {
            let u = if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                v.clamp(0.0, 1.0)
            };
            (u * 255.0).round() as u8
        })
        .collect();
    Image::new(spmap.width(), spmap.height(), spmap.paint(&scaled))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub map: SaliencyMap,
    /// Energy at the start and after every accepted iteration.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Unary coefficients and weights bound together for repeated evaluation.
struct EnergyModel<'a> {
    /// Coefficient of s_i: -a ln c_i - b ln f_i.
    salient: Vec<f64>,
    /// Coefficient of (1 - s_i): -g ln t_i.
    background: Vec<f64>,
    w: &'a PairwiseWeights,
    pinned: &'a [bool],
}

impl<'a> EnergyModel<'a> {
    fn new(
        maps: &UnaryMaps,
        w: &'a PairwiseWeights,
        b: &'a BackgroundConstraint,
        params: &EnergyParams,
    ) -> Result<Self> {
        let n = w.len();
        if maps.foreground.len() != n || maps.center.len() != n || maps.background.len() != n || b.pinned.len() != n {
            return Err(TseError::contract(format!(
                "maps, weights and constraint disagree on N = {n}"
            )));
        }
        let ln = |v: f64| v.max(params.eps_log).ln();
        let salient = (0..n)
            .map(|i| -params.alpha * ln(maps.center[i]) - params.beta * ln(maps.foreground[i]))
            .collect();
        let background = maps.background.iter().map(|&t| -params.gamma * ln(t)).collect();
        Ok(Self {
            salient,
            background,
            w,
            pinned: &b.pinned,
        })
    }

    fn check_feasible(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.w.len() {
            return Err(TseError::contract("saliency vector has the wrong length"));
        }
        for (i, &v) in s.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(TseError::contract(format!("s[{i}] = {v} outside [0, 1]")));
            }
            if self.pinned[i] && v != 0.0 {
                return Err(TseError::contract(format!("pinned region {i} has s = {v}")));
            }
        }
        Ok(())
    }

    fn pair_row(&self, s: &[f64], i: usize) -> f64 {
        let si = s[i];
        s.iter()
            .zip(self.w.row(i))
            .map(|(&sj, &w)| (si - sj) * (si - sj) * w)
            .sum()
    }

    fn energy(&self, s: &[f64]) -> f64 {
        let unary: f64 = (0..s.len())
            .map(|i| s[i] * self.salient[i] + (1.0 - s[i]) * self.background[i])
            .sum();
        // both branches add the rows left to right
        let pair: f64 = if s.len() < PARALLEL_MIN_N {
            (0..s.len()).map(|i| self.pair_row(s, i)).sum()
        } else {
            let rows: Vec<f64> = (0..s.len()).into_par_iter().map(|i| self.pair_row(s, i)).collect();
            rows.iter().sum()
        };
        unary + pair
    }

    fn gradient_at(&self, s: &[f64], i: usize) -> f64 {
        let si = s[i];
        let coupling: f64 = s.iter().zip(self.w.row(i)).map(|(&sj, &w)| (si - sj) * w).sum();
        self.salient[i] - self.background[i] + 4.0 * coupling
    }

    fn gradient(&self, s: &[f64]) -> Vec<f64> {
        if s.len() < PARALLEL_MIN_N {
            (0..s.len()).map(|i| self.gradient_at(s, i)).collect()
        } else {
            (0..s.len()).into_par_iter().map(|i| self.gradient_at(s, i)).collect()
        }
    }

    fn project(&self, s: &mut [f64]) {
        for (v, &p) in s.iter_mut().zip(self.pinned) {
            *v = if p { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    /// Largest violation of the box KKT conditions: |g| inside, and only the
    /// inward-pointing part of g at a bound.
    fn stationarity(&self, s: &[f64], g: &[f64]) -> f64 {
        (0..s.len())
            .filter(|&i| !self.pinned[i])
            .map(|i| match s[i] {
                v if v <= 0.0 => (-g[i]).max(0.0),
                v if v >= 1.0 => g[i].max(0.0),
                _ => g[i].abs(),
            })
            .fold(0.0, f64::max)
    }
}

pub fn energy(
    s: &[f64],
    maps: &UnaryMaps,
    w: &PairwiseWeights,
    b: &BackgroundConstraint,
    params: &EnergyParams,
) -> Result<f64> {
    let model = EnergyModel::new(maps, w, b, params)?;
    model.check_feasible(s)?;
    Ok(model.energy(s))
}

/// Analytic gradient of the energy (pins are ignored; the gradient is defined
/// on the whole box).
pub fn energy_gradient(s: &[f64], maps: &UnaryMaps, w: &PairwiseWeights, params: &EnergyParams) -> Result<Vec<f64>> {
    let free = BackgroundConstraint::none(w.len());
    let model = EnergyModel::new(maps, w, &free, params)?;
    if s.len() != w.len() {
        return Err(TseError::contract("saliency vector has the wrong length"));
    }
    Ok(model.gradient(s))
}

const MAX_HALVINGS: usize = 60;
const STEP_RANGE: (f64, f64) = (1e-12, 1e12);

pub fn solve(
    maps: &UnaryMaps,
    w: &PairwiseWeights,
    b: &BackgroundConstraint,
    params: &EnergyParams,
) -> Result<SolveOutcome> {
    params.validate()?;
    let model = EnergyModel::new(maps, w, b, params)?;
    if b.pinned.iter().all(|&p| p) {
        return Err(TseError::contract("every region is pinned, nothing to optimize"));
    }
    let mut s = maps.foreground.clone();
    model.project(&mut s);
    let mut e = model.energy(&s);
    if !e.is_finite() {
        return Err(TseError::contract(format!("initial energy is {e}")));
    }
    let mut g = model.gradient(&s);
    let mut step = params.step;
    let mut energies = vec![e];
    let mut converged = model.stationarity(&s, &g) < params.tol;
    let mut iterations = 0;
    let mut trial = vec![0.0; s.len()];

    while !converged && iterations < params.max_iters {
        let mut accepted = false;
        let mut moved = true;
        let mut e_new = e;
        for _ in 0..MAX_HALVINGS {
            for i in 0..s.len() {
                trial[i] = s[i] - step * g[i];
            }
            model.project(&mut trial);
            if trial == s {
                moved = false;
                break;
            }
            e_new = model.energy(&trial);
            if e_new <= e {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent left at machine precision, or the step no longer moves the point
            converged = !moved || step <= STEP_RANGE.0;
            break;
        }
        iterations += 1;
        let g_new = model.gradient(&trial);
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..s.len() {
            let ds = trial[i] - s[i];
            ss += ds * ds;
            sy += ds * (g_new[i] - g[i]);
        }
        step = if sy > 0.0 { ss / sy } else { step * 2.0 }.clamp(STEP_RANGE.0, STEP_RANGE.1);
        std::mem::swap(&mut s, &mut trial);
        g = g_new;
        e = e_new;
        energies.push(e);
        converged = model.stationarity(&s, &g) < params.tol;
    }
    Ok(SolveOutcome {
        map: SaliencyMap { values: s },
        energies,
        iterations,
        converged,
    })
}

/// Exhaustive minimum of the energy over the grid `{0, step, .., 1}^free`.
///
/// The energy is an exact convex quadratic in any single coordinate, so the
/// innermost coordinate is minimized in closed form over its grid (both ends
/// plus the grid points bracketing the parabola's vertex); every other free
/// coordinate is enumerated.
pub fn brute_force_solve(
    maps: &UnaryMaps,
    w: &PairwiseWeights,
    b: &BackgroundConstraint,
    params: &EnergyParams,
    grid_step: f64,
) -> Result<SaliencyMap> {
    let n = w.len();
    if n > BRUTE_FORCE_MAX_N {
        return Err(TseError::contract(format!(
            "brute force supports N <= {BRUTE_FORCE_MAX_N}, got {n}"
        )));
    }
    let steps = (1.0 / grid_step).round() as usize;
    if steps < 2 || ((steps as f64) * grid_step - 1.0).abs() > 1e-9 {
        return Err(TseError::contract(format!("grid step {grid_step} must divide 1")));
    }
    let model = EnergyModel::new(maps, w, b, params)?;
    let free: Vec<usize> = (0..n).filter(|&i| !b.pinned[i]).collect();
    let mut s = vec![0.0; n];
    let Some((&last, outer)) = free.split_last() else {
        return Ok(SaliencyMap { values: s });
    };
    let value = |k: usize| k as f64 / steps as f64;
    let mut idx = vec![0usize; outer.len()];
    let mut best = (f64::INFINITY, s.clone());
    let at = |s: &mut Vec<f64>, x: f64| {
        s[last] = x;
        model.energy(s)
    };
    // the energy is a parabola in the last coordinate whose curvature does not
    // depend on the others, so one probe fixes it for the whole grid
    let curvature = 4.0 * (at(&mut s, 1.0) - 2.0 * at(&mut s, 0.5) + at(&mut s, 0.0));
    loop {
        for (&i, &k) in outer.iter().zip(&idx) {
            s[i] = value(k);
        }
        let (e0, e1) = (at(&mut s, 0.0), at(&mut s, 1.0));
        for (e, k) in [(e0, 0), (e1, steps)] {
            if e < best.0 {
                best.0 = e;
                s[last] = value(k);
                best.1.copy_from_slice(&s);
            }
        }
        if curvature > 0.0 {
            let slope0 = e1 - e0 - curvature / 2.0;
            let x = (-slope0 / curvature).clamp(0.0, 1.0) * steps as f64;
            let (lo, hi) = (x.floor() as usize, (x.ceil() as usize).min(steps));
            for k in lo..=hi {
                if k == 0 || k == steps {
                    continue;
                }
                let e = at(&mut s, value(k));
                if e < best.0 {
                    best.0 = e;
                    best.1.copy_from_slice(&s);
                }
            }
        }
        // odometer over the outer coordinates
        let mut d = 0;
        loop {
            if d == idx.len() {
                return Ok(SaliencyMap { values: best.1 });
            }
            idx[d] += 1;
            if idx[d] <= steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}
