//! Quick-shift mode seeking over (x, y, intensity), constrained to tiles.
//!
//! Each pixel gets a density from Gaussian weights over a square window of
//! radius `kernel_size` in joint (x, y, scaled intensity) space, then links
//! to its nearest strictly-higher-density pixel within `max_dist`. Equal
//! densities are ordered by row-major index, earlier counts as higher.
//! Links may not leave the pixel's `max_dist`-sized tile, which bounds region
//! size on flat images where plain mode seeking collapses into one tree.
//! Trees are split into 4-connected components and fragments smaller than a
//! quarter tile are merged into their most similar neighbor.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rayon::prelude::*;

use super::{neighbors4, SuperpixelMap, MIN_REGIONS};
use crate::error::{Result, TseError};
use crate::ingest::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentParams {
    /// Window radius (pixels) and bandwidth of the density estimate.
    pub kernel_size: usize,
    /// Maximum joint-space link length; also the tile side.
    pub max_dist: f64,
    /// Joint-space units per ten gray levels.
    pub intensity_weight: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            max_dist: 10.0,
            intensity_weight: 4.0,
        }
    }
}

pub fn segment(image: &Image, params: &SegmentParams) -> Result<SuperpixelMap> {
    if params.kernel_size < 1 {
        return Err(TseError::contract("kernel_size must be at least 1"));
    }
    if !(params.max_dist > 0.0) || !(params.intensity_weight >= 0.0) {
        return Err(TseError::contract(
            "max_dist must be positive and intensity_weight non-negative",
        ));
    }
    let (w, h) = (image.width(), image.height());
    let scale = params.intensity_weight / 10.0;
    let density = estimate_density(image, params.kernel_size, scale);
    let parent = link_parents(image, &density, params, scale);
    let roots = resolve_roots(&parent);
    let (labels, n) = split_components(&roots, w, h);
    let min_area = ((params.max_dist * params.max_dist / 4.0).floor() as usize).max(1);
    let (labels, n) = merge_small(image, labels, n, min_area);
    Ok(SuperpixelMap::from_parts_unchecked(w, h, labels, n))
}

fn estimate_density(image: &Image, k: usize, scale: f64) -> Vec<f64> {
    let (w, h) = (image.width(), image.height());
    let bw2 = 2.0 * (k * k) as f64;
    let tone: Vec<f64> = (0..256)
        .map(|d| {
            let t = d as f64 * scale;
            (-t * t / bw2).exp()
        })
        .collect();
    let ki = k as isize;
    let side = 2 * k + 1;
    let spatial: Vec<f64> = (0..side * side)
        .map(|i| {
            let dx = (i % side) as f64 - k as f64;
            let dy = (i / side) as f64 - k as f64;
            (-(dx * dx + dy * dy) / bw2).exp()
        })
        .collect();
    let px = image.pixels();
    (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            let v = px[p] as i16;
            let mut acc = 0.0;
            for dy in -ki..=ki {
                let yy = y + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -ki..=ki {
                    let xx = x + dx;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let q = yy as usize * w + xx as usize;
                    let s = spatial[(dy + ki) as usize * side + (dx + ki) as usize];
                    acc += s * tone[(px[q] as i16 - v).unsigned_abs() as usize];
                }
            }
            acc
        })
        .collect()
}

fn tile_sides(params: &SegmentParams, w: usize, h: usize) -> (usize, usize) {
    let base = (params.max_dist.round() as usize).max(1);
    (base.min(w.div_ceil(2)), base.min(h.div_ceil(2)))
}

fn link_parents(image: &Image, density: &[f64], params: &SegmentParams, scale: f64) -> Vec<usize> {
    let (w, h) = (image.width(), image.height());
    let (tw, th) = tile_sides(params, w, h);
    let reach = params.max_dist.floor() as isize;
    let max_d2 = params.max_dist * params.max_dist;
    let px = image.pixels();
    let higher = |q: usize, p: usize| density[q] > density[p] || (density[q] == density[p] && q < p);
    (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let (tx0, ty0) = (x / tw * tw, y / th * th);
            let (tx1, ty1) = ((tx0 + tw).min(w), (ty0 + th).min(h));
            let x_lo = (x as isize - reach).max(tx0 as isize) as usize;
            let x_hi = ((x as isize + reach) as usize).min(tx1 - 1);
            let y_lo = (y as isize - reach).max(ty0 as isize) as usize;
            let y_hi = ((y as isize + reach) as usize).min(ty1 - 1);
            let mut best = p;
            let mut best_d2 = f64::INFINITY;
            for yy in y_lo..=y_hi {
                for xx in x_lo..=x_hi {
                    let q = yy * w + xx;
                    if q == p || !higher(q, p) {
                        continue;
                    }
                    let dx = xx as f64 - x as f64;
                    let dy = yy as f64 - y as f64;
                    let dv = (px[q] as f64 - px[p] as f64) * scale;
                    let d2 = dx * dx + dy * dy + dv * dv;
                    if d2 <= max_d2 && d2 < best_d2 {
                        best = q;
                        best_d2 = d2;
                    }
                }
            }
            best
        })
        .collect()
}

fn resolve_roots(parent: &[usize]) -> Vec<usize> {
    let mut root = vec![usize::MAX; parent.len()];
    let mut chain = Vec::new();
    for start in 0..parent.len() {
        let mut p = start;
        while root[p] == usize::MAX && parent[p] != p {
            chain.push(p);
            p = parent[p];
        }
        let r = if root[p] != usize::MAX { root[p] } else { p };
        root[p] = r;
        for q in chain.drain(..) {
            root[q] = r;
        }
    }
    root
}

/// Relabels pixels so each 4-connected run of a common key is its own region,
/// numbered in scan order of first appearance.
fn split_components(key: &[usize], w: usize, h: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![u32::MAX; key.len()];
    let mut queue = VecDeque::new();
    let mut n = 0u32;
    for start in 0..key.len() {
        if labels[start] != u32::MAX {
            continue;
        }
        labels[start] = n;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(p, w, h) {
                if labels[q] == u32::MAX && key[q] == key[start] {
                    labels[q] = n;
                    queue.push_back(q);
                }
            }
        }
        n += 1;
    }
    (labels, n as usize)
}

fn merge_small(image: &Image, labels: Vec<u32>, n: usize, min_area: usize) -> (Vec<u32>, usize) {
    let (w, h) = (image.width(), image.height());
    let mut area = vec![0usize; n];
    let mut sum = vec![0.0f64; n];
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (p, &l) in labels.iter().enumerate() {
        let l = l as usize;
        area[l] += 1;
        sum[l] += image.pixels()[p] as f64;
        for q in neighbors4(p, w, h) {
            let m = labels[q] as usize;
            if m != l {
                adj[l].insert(m);
            }
        }
    }

    let mut target: Vec<usize> = (0..n).collect();
    let mut alive = n;
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..n)
        .filter(|&r| area[r] < min_area)
        .map(|r| Reverse((area[r], r)))
        .collect();
    while let Some(Reverse((a, r))) = heap.pop() {
        if alive <= MIN_REGIONS {
            break;
        }
        if target[r] != r || area[r] != a || a >= min_area {
            continue;
        }
        let mean = sum[r] / a as f64;
        let Some(into) = adj[r].iter().copied().min_by(|&i, &j| {
            let di = (sum[i] / area[i] as f64 - mean).abs();
            let dj = (sum[j] / area[j] as f64 - mean).abs();
            di.total_cmp(&dj).then(i.cmp(&j))
        }) else {
            continue;
        };
        target[r] = into;
        area[into] += a;
        sum[into] += sum[r];
        let moved = std::mem::take(&mut adj[r]);
        for m in moved {
            adj[m].remove(&r);
            if m != into {
                adj[m].insert(into);
                adj[into].insert(m);
            }
        }
        alive -= 1;
        if area[into] < min_area {
            heap.push(Reverse((area[into], into)));
        }
    }

    let resolve = |mut r: usize| {
        while target[r] != r {
            r = target[r];
        }
        r
    };
    let merged: Vec<usize> = labels.iter().map(|&l| resolve(l as usize)).collect();
    let mut renumber = vec![u32::MAX; n];
    let mut next = 0u32;
    let out = merged
        .iter()
        .map(|&r| {
            if renumber[r] == u32::MAX {
                renumber[r] = next;
                next += 1;
            }
            renumber[r]
        })
        .collect();
    (out, next as usize)
}
