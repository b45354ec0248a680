//! The three unary inputs of the saliency energy: foreground F, adaptive
//! center distance C, and background T (plus the boundary connectivity it
//! is built from).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::anatomy::{affinity, layer_valid, AnatomyLabeling, LayerFlag};
use crate::error::{Result, TseError};
use crate::ingest::CLASS_COUNT;
use crate::layer::Layer;
use crate::superpixel::RegionGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct MapParams {
    /// Z-function lower knee as `mean + z_low * stdev` of the layer.
    pub z_low: f64,
    /// Z-function upper knee as `mean + z_high * stdev` of the layer.
    pub z_high: f64,
    /// Lower bound on the layer spread used to place the knees; 0 disables it.
    pub sigma_floor: f64,
    /// Foreground value assigned to dark layers and step-function misses.
    pub eps_f: f64,
    pub sigma3_sq: f64,
    pub validity_fraction: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            z_low: -2.0,
            z_high: -1.0,
            sigma_floor: 0.03,
            eps_f: 0.01,
            sigma3_sq: 0.1,
            validity_fraction: 0.75,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackgroundVariant {
    /// `t_i = nc_i^2`.
    NcSquared,
    /// Boundary connectivity weighted by mammary probability and center distance.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnaryMaps {
    pub foreground: Vec<f64>,
    pub center: Vec<f64>,
    pub background: Vec<f64>,
    pub adaptive_center: [f64; 2],
    pub nc: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub layer_w: [f64; CLASS_COUNT],
    pub region_w: Vec<f64>,
    pub mammary_valid: bool,
}

/// Z-shaped membership: 1 at or below `a`, 0 at or above `b`, two quadratic
/// pieces meeting at 0.5 on the midpoint.
pub fn z_function(x: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        1.0
    } else if x >= b {
        0.0
    } else if x <= (a + b) / 2.0 {
        let t = (x - a) / (b - a);
        1.0 - 2.0 * t * t
    } else {
        let t = (x - b) / (b - a);
        2.0 * t * t
    }
}

fn weighted_mean_std(members: &[usize], graph: &RegionGraph) -> (f64, f64) {
    let total: f64 = members.iter().map(|&i| graph.regions[i].area as f64).sum();
    let mean = members
        .iter()
        .map(|&i| graph.regions[i].intensity * graph.regions[i].area as f64)
        .sum::<f64>()
        / total;
    let var = members
        .iter()
        .map(|&i| {
            let d = graph.regions[i].intensity - mean;
            d * d * graph.regions[i].area as f64
        })
        .sum::<f64>()
        / total;
    (mean, var.sqrt())
}

fn max_normalize(values: &mut [f64]) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
}

pub fn foreground_map(
    graph: &RegionGraph,
    nsa: &AnatomyLabeling,
    flags: &[LayerFlag; CLASS_COUNT],
    params: &MapParams,
) -> Result<Vec<f64>> {
    if nsa.len() != graph.len() {
        return Err(TseError::contract("labeling and graph cover different regions"));
    }
    let mut f = vec![0.0; graph.len()];
    for layer in Layer::ALL {
        let members = nsa.members(layer);
        if members.is_empty() {
            continue;
        }
        if flags[layer.index()] == LayerFlag::Dark {
            members.iter().for_each(|&i| f[i] = params.eps_f);
            continue;
        }
        let (mean, std) = weighted_mean_std(&members, graph);
        let std = std.max(params.sigma_floor);
        let (a, b) = (mean + params.z_low * std, mean + params.z_high * std);
        for &i in &members {
            let v = graph.regions[i].intensity;
            f[i] = if b > a {
                z_function(v, a, b)
            } else if v < mean {
                1.0
            } else {
                params.eps_f
            };
        }
    }
    if f.iter().all(|&v| v == 0.0) {
        // no region stands out anywhere: no foreground evidence either way
        f.fill(1.0);
    }
    max_normalize(&mut f);
    Ok(f)
}

/// Foreground-weighted centroid of region centers.
pub fn adaptive_center(foreground: &[f64], graph: &RegionGraph) -> Result<[f64; 2]> {
    let total: f64 = foreground.iter().sum();
    if !(total > 0.0) {
        return Err(TseError::contract("foreground map sums to zero"));
    }
    let mut ac = [0.0; 2];
    for (f, r) in foreground.iter().zip(&graph.regions) {
        ac[0] += f * r.center[0];
        ac[1] += f * r.center[1];
    }
    Ok(ac.map(|v| v / total))
}

pub fn center_map(ac: [f64; 2], graph: &RegionGraph, sigma3_sq: f64) -> Vec<f64> {
    graph
        .regions
        .iter()
        .map(|r| {
            let d = (r.center[0] - ac[0]).hypot(r.center[1] - ac[1]);
            (-d / sigma3_sq).exp()
        })
        .collect()
}

#[derive(PartialEq)]
struct Frontier {
    strength: f64,
    region: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.strength
            .total_cmp(&other.strength)
            .then(other.region.cmp(&self.region))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Widest-path connectivity to the image border: the best achievable minimum
/// edge affinity over paths from each region to any border region.
pub fn nc_boundary_map(graph: &RegionGraph) -> Vec<f64> {
    let n = graph.len();
    let mut best = vec![0.0f64; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for (i, r) in graph.regions.iter().enumerate() {
        if r.touches_border {
            best[i] = 1.0;
            heap.push(Frontier {
                strength: 1.0,
                region: i,
            });
        }
    }
    while let Some(Frontier { strength, region }) = heap.pop() {
        if done[region] {
            continue;
        }
        done[region] = true;
        let v = graph.regions[region].intensity;
        for &j in &graph.adjacency[region] {
            if done[j] {
                continue;
            }
            let s = strength.min(affinity(v, graph.regions[j].intensity));
            if s > best[j] {
                best[j] = s;
                heap.push(Frontier { strength: s, region: j });
            }
        }
    }
    best
}

pub fn layer_weights(nsa: &AnatomyLabeling, graph: &RegionGraph, validity_fraction: f64) -> LayerWeights {
    let mammary = Layer::Mammary.index();
    let mut layer_w = [0.0; CLASS_COUNT];
    for layer in Layer::ALL {
        let members = nsa.members(layer);
        if !members.is_empty() {
            layer_w[layer.index()] = members.iter().map(|&i| nsa.prob[i][mammary]).sum::<f64>() / members.len() as f64;
        }
    }
    let mammary_valid = layer_valid(&nsa.members(Layer::Mammary), graph, validity_fraction);
    let region_w = if mammary_valid {
        (0..nsa.len())
            .map(|i| nsa.prob[i][mammary].max(layer_w[nsa.layer_of[i].index()]))
            .collect()
    } else {
        vec![1.0; nsa.len()]
    };
    LayerWeights {
        layer_w,
        region_w,
        mammary_valid,
    }
}

/// Center factor used by the full background map: saturates to 1 for close
/// regions of a dark mammary layer or of normal non-mammary layers.
pub fn center_factor(c: f64, layer: Layer, flag: LayerFlag) -> f64 {
    let saturate = match layer {
        Layer::Mammary => flag == LayerFlag::Dark && c > 0.5,
        _ => flag == LayerFlag::Normal && c >= 0.75,
    };
    if saturate {
        1.0
    } else {
        c
    }
}

pub fn background_map(
    nc: &[f64],
    weights: &LayerWeights,
    center: &[f64],
    flags: &[LayerFlag; CLASS_COUNT],
    nsa: &AnatomyLabeling,
    variant: BackgroundVariant,
) -> Vec<f64> {
    let mut t: Vec<f64> = (0..nc.len())
        .map(|i| {
            let nc2 = nc[i] * nc[i];
            match variant {
                BackgroundVariant::NcSquared => nc2,
                BackgroundVariant::Full => {
                    let layer = nsa.layer_of[i];
                    let c = center_factor(center[i], layer, flags[layer.index()]);
                    1.0 - (1.0 - nc2) * weights.region_w[i] * c
                }
            }
        })
        .collect();
    max_normalize(&mut t);
    t
}

/// Builds all unary maps for one labeled region graph.
pub fn build_unary_maps(
    graph: &RegionGraph,
    nsa: &AnatomyLabeling,
    flags: &[LayerFlag; CLASS_COUNT],
    params: &MapParams,
    variant: BackgroundVariant,
) -> Result<(UnaryMaps, LayerWeights)> {
    let foreground = foreground_map(graph, nsa, flags, params)?;
    let ac = adaptive_center(&foreground, graph)?;
    let center = center_map(ac, graph, params.sigma3_sq);
    let nc = nc_boundary_map(graph);
    let weights = layer_weights(nsa, graph, params.validity_fraction);
    let background = background_map(&nc, &weights, &center, flags, nsa, variant);
    Ok((
        UnaryMaps {
            foreground,
            center,
            background,
            adaptive_center: ac,
            nc,
        },
        weights,
    ))
}
