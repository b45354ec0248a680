#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tse_core::anatomy::{AnatomyLabeling, LabelSource};
use tse_core::layer::Layer;
use tse_core::maps::UnaryMaps;
use tse_core::optimizer::{BackgroundConstraint, EnergyParams, PairwiseWeights, SolveOutcome};
use tse_core::superpixel::{Region, RegionGraph};

/// `rows x cols` blocks of 4x8 pixels with 4-neighbor adjacency.
pub fn block_graph(rows: usize, cols: usize, intensity: &[f64]) -> RegionGraph {
    let (bw, bh) = (4usize, 8usize);
    let mut regions = Vec::new();
    let mut adjacency = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            regions.push(Region {
                area: bw * bh,
                intensity: intensity[id],
                center: [(c as f64 + 0.5) / cols as f64, (r as f64 + 0.5) / rows as f64],
                touches_border: r == 0 || c == 0 || r + 1 == rows || c + 1 == cols,
                rows: (r * bh..(r + 1) * bh).map(|v| v as u32).collect(),
                cols: (c * bw..(c + 1) * bw).map(|v| v as u32).collect(),
            });
            let mut adj = Vec::new();
            if r > 0 {
                adj.push(id - cols);
            }
            if c > 0 {
                adj.push(id - 1);
            }
            if c + 1 < cols {
                adj.push(id + 1);
            }
            if r + 1 < rows {
                adj.push(id + cols);
            }
            adjacency.push(adj);
        }
    }
    RegionGraph {
        width: cols * bw,
        height: rows * bh,
        regions,
        adjacency,
    }
}

/// Semantic labeling with one-hot probabilities.
pub fn labeling(layers: &[Layer]) -> AnatomyLabeling {
    AnatomyLabeling {
        layer_of: layers.to_vec(),
        prob: layers
            .iter()
            .map(|l| {
                let mut p = [0.0; 4];
                p[l.index()] = 1.0;
                p
            })
            .collect(),
        source: LabelSource::Semantic,
    }
}

pub fn unary(f: Vec<f64>, c: Vec<f64>, t: Vec<f64>) -> UnaryMaps {
    UnaryMaps {
        nc: t.clone(),
        foreground: f,
        center: c,
        background: t,
        adaptive_center: [0.5, 0.5],
    }
}

/// A random energy instance: unary maps in (0.02, 1], a symmetric weight
/// matrix on a random scale, and an optional pin on region 0.
pub struct Instance {
    pub maps: UnaryMaps,
    pub w: PairwiseWeights,
    pub b: BackgroundConstraint,
    pub params: EnergyParams,
}

pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, allow_pin: bool) -> Instance {
    let draw = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(0.02..=1.0)).collect::<Vec<f64>>();
    let (f, c, t) = (draw(rng), draw(rng), draw(rng));
    let scale = [1.0, 10.0, 100.0][rng.random_range(0..3)];
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.7) {
                let v = scale * rng.random::<f64>();
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }
    let mut b = BackgroundConstraint::none(n);
    if allow_pin && n > 1 && rng.random_bool(0.2) {
        b.pinned[0] = true;
    }
    let params = EnergyParams {
        alpha: rng.random_range(0.0..=10.0),
        beta: rng.random_range(1.0..=151.0),
        gamma: rng.random_range(1.0..=21.0),
        ..EnergyParams::default()
    };
    Instance {
        maps: unary(f, c, t),
        w: PairwiseWeights::from_dense(n, w).unwrap(),
        b,
        params,
    }
}

/// Largest relative energy increase between consecutive accepted iterations.
pub fn worst_energy_increase(outcome: &SolveOutcome) -> f64 {
    outcome
        .energies
        .windows(2)
        .map(|p| (p[1] - p[0]) / p[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max)
}
