//! Anatomy layers: non-semantic horizontal banding, semantic layer
//! refinement, and per-layer dark/smooth classification.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use crate::error::{Result, TseError};
use crate::ingest::{Planes, CLASS_COUNT};
use crate::layer::Layer;
use crate::superpixel::{RegionGraph, RegionLabels};

pub const MIN_BANDING_HEIGHT: usize = 24;
pub const MIN_BANDS: usize = 3;
pub const MAX_BANDS: usize = 5;

/// Intensity affinity between regions, shared with the boundary map.
pub(crate) fn affinity(a: f64, b: f64) -> f64 {
    (-(a - b).abs() / 0.5).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnatomyParams {
    /// A layer is valid when it covers strictly more than this fraction of columns.
    pub validity_fraction: f64,
    pub dark_intensity: f64,
    pub dark_fraction: f64,
    pub smooth_intensity: f64,
    pub smooth_fraction: f64,
    /// Adjacent regions closer than this in mean intensity seed the same band.
    pub link_tol: f64,
    /// Clusters covering no more than this fraction of columns are absorbed.
    pub band_min_coverage: f64,
    /// Adjacent bands merge while the variance increase stays below this.
    pub ward_tol: f64,
}

impl Default for AnatomyParams {
    fn default() -> Self {
        Self {
            validity_fraction: 0.75,
            dark_intensity: 0.25,
            dark_fraction: 0.6,
            smooth_intensity: 0.6,
            smooth_fraction: 0.8,
            link_tol: 0.03,
            band_min_coverage: 0.5,
            ward_tol: 2e-4,
        }
    }
}

/// Ordered (top to bottom) disjoint horizontal bands covering every region.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDecomposition {
    layers: Vec<Vec<usize>>,
}

impl LayerDecomposition {
    /// Wraps explicit bands. Checks they partition `0..n`; ordering is the caller's.
    pub fn from_layers(layers: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (k, layer) in layers.iter().enumerate() {
            if layer.is_empty() {
                return Err(TseError::contract(format!("band {k} is empty")));
            }
            for &i in layer {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(TseError::contract(format!("region {i} repeated or out of range")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(TseError::contract(format!("region {i} belongs to no band")));
        }
        let mut layers = layers;
        layers.iter_mut().for_each(|l| l.sort_unstable());
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn count(&self) -> usize {
        self.layers.len()
    }

    pub fn band_of(&self, n: usize) -> Vec<usize> {
        let mut out = vec![0; n];
        for (k, layer) in self.layers.iter().enumerate() {
            for &i in layer {
                out[i] = k;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSource {
    Semantic,
    Refined,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnatomyLabeling {
    pub layer_of: Vec<Layer>,
    /// Per-region class probabilities (columns of SP').
    pub prob: Vec<[f64; CLASS_COUNT]>,
    pub source: LabelSource,
}

impl AnatomyLabeling {
    pub fn semantic(labels: RegionLabels) -> Self {
        Self {
            layer_of: labels.layer_of,
            prob: labels.prob,
            source: LabelSource::Semantic,
        }
    }

    pub fn len(&self) -> usize {
        self.layer_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layer_of.is_empty()
    }

    pub fn members(&self, layer: Layer) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.layer_of[i] == layer).collect()
    }

    /// Single plane of layer codes (1..=4), one entry per region.
    pub fn layer_planes(&self) -> Planes {
        let codes: Vec<f64> = self.layer_of.iter().map(|l| l.code() as f64).collect();
        Planes::from_row(&codes)
    }

    /// Four planes of per-region class probabilities.
    pub fn prob_planes(&self) -> Planes {
        let n = self.len();
        let mut data = vec![0.0f32; CLASS_COUNT * n];
        for (i, p) in self.prob.iter().enumerate() {
            for k in 0..CLASS_COUNT {
                data[k * n + i] = p[k] as f32;
            }
        }
        Planes {
            count: CLASS_COUNT,
            width: n,
            height: 1,
            data,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum LayerFlag {
    Smooth = -1,
    Normal = 0,
    Dark = 1,
}

pub fn layer_valid(members: &[usize], graph: &RegionGraph, validity_fraction: f64) -> bool {
    graph.column_coverage(members.iter().copied()) as f64 > validity_fraction * graph.width as f64
}

pub fn classify_layer_flag(members: &[usize], graph: &RegionGraph, params: &AnatomyParams) -> Result<LayerFlag> {
    if members.is_empty() {
        return Err(TseError::contract("cannot classify an empty layer"));
    }
    let total: f64 = members.iter().map(|&i| graph.regions[i].area as f64).sum();
    let fraction = |pred: &dyn Fn(f64) -> bool| {
        members
            .iter()
            .map(|&i| &graph.regions[i])
            .filter(|r| pred(r.intensity))
            .map(|r| r.area as f64)
            .sum::<f64>()
            / total
    };
    if fraction(&|v| v < params.dark_intensity) > params.dark_fraction {
        Ok(LayerFlag::Dark)
    } else if fraction(&|v| v > params.smooth_intensity) > params.smooth_fraction {
        Ok(LayerFlag::Smooth)
    } else {
        Ok(LayerFlag::Normal)
    }
}

/// Flags for all four layers of a labeling; empty layers are `Normal`.
pub fn layer_flags(labels: &AnatomyLabeling, graph: &RegionGraph, params: &AnatomyParams) -> [LayerFlag; CLASS_COUNT] {
    Layer::ALL.map(|l| {
        let members = labels.members(l);
        classify_layer_flag(&members, graph, params).unwrap_or(LayerFlag::Normal)
    })
}

/// Applies the refinement rule chain (skin, fat, muscle, then mammary takes
/// the rest). A region claimed by two rules stays with the earlier one.
pub fn refine_layers(
    sa: &AnatomyLabeling,
    ncl: &LayerDecomposition,
    graph: &RegionGraph,
    validity_fraction: f64,
) -> Result<AnatomyLabeling> {
    let n = sa.len();
    if graph.len() != n || ncl.layers().iter().flatten().any(|&i| i >= n) {
        return Err(TseError::contract(
            "semantic labels, bands and graph cover different regions",
        ));
    }
    let bands = ncl.layers();
    let (first, last) = (&bands[0], &bands[bands.len() - 1]);
    let mut out: Vec<Option<Layer>> = vec![None; n];
    let claim = |out: &mut [Option<Layer>], set: &[bool], layer: Layer| {
        for (slot, _) in out.iter_mut().zip(set).filter(|(s, &m)| m && s.is_none()) {
            *slot = Some(layer);
        }
    };

    let mut skin = vec![false; n];
    for &i in first.iter().chain(last) {
        skin[i] = sa.layer_of[i] == Layer::Skin;
    }
    claim(&mut out, &skin, Layer::Skin);

    let fat = extended_layer(sa, bands, graph, validity_fraction, Layer::Fat);
    claim(&mut out, &fat, Layer::Fat);

    let muscle = extended_layer(sa, bands, graph, validity_fraction, Layer::Muscle);
    claim(&mut out, &muscle, Layer::Muscle);

    Ok(AnatomyLabeling {
        layer_of: out.into_iter().map(|l| l.unwrap_or(Layer::Mammary)).collect(),
        prob: sa.prob.clone(),
        source: LabelSource::Refined,
    })
}

/// Fat grows upward and muscle downward from the band that holds most of the
/// semantic layer; invalid layers fall back to the first/last band.
fn extended_layer(
    sa: &AnatomyLabeling,
    bands: &[Vec<usize>],
    graph: &RegionGraph,
    validity_fraction: f64,
    layer: Layer,
) -> Vec<bool> {
    let n = sa.len();
    let members = sa.members(layer);
    let mut candidate = vec![false; n];
    let excluded: &[Layer] = if layer_valid(&members, graph, validity_fraction) {
        let home = host_band(&members, bands, n);
        let outer: Vec<&Vec<usize>> = match layer {
            Layer::Fat => bands[..home].iter().collect(),
            _ => bands[home + 1..].iter().collect(),
        };
        for &i in outer.into_iter().flatten().chain(&members) {
            candidate[i] = true;
        }
        match layer {
            Layer::Fat => &[Layer::Skin, Layer::Mammary, Layer::Muscle],
            _ => &[Layer::Skin, Layer::Fat, Layer::Mammary],
        }
    } else {
        match layer {
            Layer::Fat => {
                bands[0].iter().for_each(|&i| candidate[i] = true);
                &[Layer::Skin, Layer::Mammary, Layer::Muscle]
            }
            _ => {
                bands[bands.len() - 1].iter().for_each(|&i| candidate[i] = true);
                &[Layer::Skin]
            }
        }
    };
    for (i, c) in candidate.iter_mut().enumerate() {
        if excluded.contains(&sa.layer_of[i]) {
            *c = false;
        }
    }
    candidate
}

/// Band with the largest overlap with `members`, lower index on ties.
fn host_band(members: &[usize], bands: &[Vec<usize>], n: usize) -> usize {
    let mut is_member = vec![false; n];
    members.iter().for_each(|&i| is_member[i] = true);
    let overlaps: Vec<usize> = bands
        .iter()
        .map(|b| b.iter().filter(|&&i| is_member[i]).count())
        .collect();
    let best = overlaps.iter().copied().max().unwrap_or(0);
    overlaps.iter().position(|&o| o == best).unwrap_or(0)
}

struct Cluster {
    members: Vec<usize>,
    area: f64,
    intensity_sum: f64,
    cols: Vec<bool>,
    neighbors: BTreeSet<usize>,
}

impl Cluster {
    fn mean(&self) -> f64 {
        self.intensity_sum / self.area
    }

    fn coverage(&self) -> usize {
        self.cols.iter().filter(|&&c| c).count()
    }
}

struct Banding {
    clusters: Vec<Option<Cluster>>,
    alive: usize,
}

impl Banding {
    fn alive_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.clusters.len()).filter(|&c| self.clusters[c].is_some())
    }

    fn get(&self, c: usize) -> &Cluster {
        self.clusters[c].as_ref().expect("live cluster")
    }

    fn merge(&mut self, keep: usize, gone: usize) {
        let g = self.clusters[gone].take().expect("live cluster");
        for &m in &g.neighbors {
            if m != keep {
                let other = self.clusters[m].as_mut().expect("live neighbor");
                other.neighbors.remove(&gone);
                other.neighbors.insert(keep);
            }
        }
        let k = self.clusters[keep].as_mut().expect("live cluster");
        k.members.extend(g.members);
        k.area += g.area;
        k.intensity_sum += g.intensity_sum;
        for (a, b) in k.cols.iter_mut().zip(g.cols) {
            *a |= b;
        }
        k.neighbors.extend(g.neighbors);
        k.neighbors.remove(&keep);
        k.neighbors.remove(&gone);
        self.alive -= 1;
    }
}

/// Splits the region graph into 3 to 5 horizontal bands of similar intensity.
///
/// Adjacent regions with close mean intensity are linked into clusters,
/// clusters that do not span enough columns are absorbed into their most
/// similar neighbor, and the remaining bands are merged pairwise by smallest
/// variance increase until the increase exceeds `ward_tol` (bounded to 3..=5).
/// Fewer than three bands triggers an even split by centroid row.
pub fn decompose_nc_layers(graph: &RegionGraph, params: &AnatomyParams) -> Result<LayerDecomposition> {
    if graph.height < MIN_BANDING_HEIGHT {
        return Err(TseError::contract(format!(
            "image height {} is below the {MIN_BANDING_HEIGHT} rows needed for banding",
            graph.height
        )));
    }
    let n = graph.len();
    if n < MIN_BANDS {
        return Err(TseError::contract(format!("{n} regions cannot form {MIN_BANDS} bands")));
    }
    let intensity = graph.intensities();

    let mut edges: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| graph.adjacency[i].iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
        .map(|(i, j)| ((intensity[i] - intensity[j]).abs(), i, j))
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut uf = UnionFind::new(n);
    for &(d, i, j) in &edges {
        if d > params.link_tol {
            break;
        }
        uf.union(i, j);
    }

    let total_area = (graph.width * graph.height) as f64;
    let mut id_of_root = vec![usize::MAX; n];
    let mut clusters: Vec<Option<Cluster>> = Vec::new();
    let mut cluster_of = vec![0; n];
    for i in 0..n {
        let r = uf.find(i);
        if id_of_root[r] == usize::MAX {
            id_of_root[r] = clusters.len();
            clusters.push(Some(Cluster {
                members: Vec::new(),
                area: 0.0,
                intensity_sum: 0.0,
                cols: vec![false; graph.width],
                neighbors: BTreeSet::new(),
            }));
        }
        let c = id_of_root[r];
        cluster_of[i] = c;
        let region = &graph.regions[i];
        let cl = clusters[c].as_mut().expect("fresh cluster");
        cl.members.push(i);
        cl.area += region.area as f64 / total_area;
        cl.intensity_sum += region.intensity * region.area as f64 / total_area;
        for &col in &region.cols {
            cl.cols[col as usize] = true;
        }
    }
    for i in 0..n {
        for &j in &graph.adjacency[i] {
            let (a, b) = (cluster_of[i], cluster_of[j]);
            if a != b {
                clusters[a].as_mut().expect("live").neighbors.insert(b);
            }
        }
    }
    let alive = clusters.len();
    let mut banding = Banding { clusters, alive };

    let min_cover = params.band_min_coverage * graph.width as f64;
    while banding.alive > 1 {
        let narrow = banding
            .alive_ids()
            .filter(|&c| banding.get(c).coverage() as f64 <= min_cover)
            .min_by(|&a, &b| banding.get(a).area.total_cmp(&banding.get(b).area).then(a.cmp(&b)));
        let Some(c) = narrow else { break };
        let mean = banding.get(c).mean();
        let into = banding
            .get(c)
            .neighbors
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (banding.get(a).mean() - mean).abs();
                let db = (banding.get(b).mean() - mean).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("connected region graph");
        banding.merge(into, c);
    }

    while banding.alive > MIN_BANDS {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in banding.alive_ids() {
            let ca = banding.get(a);
            for &b in ca.neighbors.range(a + 1..) {
                let cb = banding.get(b);
                let d = ca.mean() - cb.mean();
                let cost = ca.area * cb.area / (ca.area + cb.area) * d * d;
                if best.is_none_or(|(c, _, _)| cost < c) {
                    best = Some((cost, a, b));
                }
            }
        }
        let Some((cost, a, b)) = best else { break };
        if banding.alive <= MAX_BANDS && cost >= params.ward_tol {
            break;
        }
        banding.merge(a, b);
    }

    let mut layers: Vec<Vec<usize>> = if banding.alive < MIN_BANDS {
        even_split(graph)
    } else {
        banding.clusters.into_iter().flatten().map(|c| c.members).collect()
    };
    let key = |layer: &Vec<usize>| {
        layer
            .iter()
            .map(|&i| {
                let rows = &graph.regions[i].rows;
                rows.iter().map(|&r| r as f64).sum::<f64>() / rows.len() as f64
            })
            .sum::<f64>()
            / layer.len() as f64
    };
    layers.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal));
    LayerDecomposition::from_layers(layers, n)
}

fn even_split(graph: &RegionGraph) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut band: Vec<usize> = graph
        .regions
        .iter()
        .map(|r| ((r.center[1] * MIN_BANDS as f64) as usize).min(MIN_BANDS - 1))
        .collect();
    if (0..MIN_BANDS).any(|b| !band.contains(&b)) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            graph.regions[a].center[1]
                .total_cmp(&graph.regions[b].center[1])
                .then(a.cmp(&b))
        });
        for (rank, &i) in order.iter().enumerate() {
            band[i] = rank * MIN_BANDS / n;
        }
    }

    // move stray components of a band into the neighboring band they touch most
    for _ in 0..n {
        let mut moved = false;
        for b in 0..MIN_BANDS {
            let comps = band_components(graph, &band, b);
            if comps.len() <= 1 {
                continue;
            }
            let area = |c: &Vec<usize>| c.iter().map(|&i| graph.regions[i].area).sum::<usize>();
            let keep = (0..comps.len())
                .max_by(|&x, &y| area(&comps[x]).cmp(&area(&comps[y])).then(y.cmp(&x)))
                .unwrap_or(0);
            for (ci, comp) in comps.iter().enumerate() {
                if ci == keep {
                    continue;
                }
                let mut touches = [0usize; MIN_BANDS];
                for &i in comp {
                    for &j in &graph.adjacency[i] {
                        if band[j] != b {
                            touches[band[j]] += 1;
                        }
                    }
                }
                let best = touches.iter().copied().max().unwrap_or(0);
                if best == 0 {
                    continue;
                }
                let target = touches.iter().position(|&t| t == best).unwrap_or(b);
                comp.iter().for_each(|&i| band[i] = target);
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    (0..MIN_BANDS)
        .map(|b| (0..n).filter(|&i| band[i] == b).collect())
        .collect()
}

fn band_components(graph: &RegionGraph, band: &[usize], b: usize) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in (0..n).filter(|&i| band[i] == b) {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &graph.adjacency[i] {
                if band[j] == b && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                    queue.push_back(j);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // lower index stays root so results do not depend on edge order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superpixel::Region;

    /// Regions laid out as `rows x cols` equal blocks of 4x8 pixels.
    pub(crate) fn block_graph(rows: usize, cols: usize, intensity: &[f64]) -> RegionGraph {
        let (bw, bh) = (4usize, 8usize);
        let (w, h) = (cols * bw, rows * bh);
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
            width: w,
            height: h,
            regions,
            adjacency,
        }
    }

    #[test]
    fn validity_is_strict() {
        // 4 columns of blocks, 16 pixel columns; 3 blocks = exactly 75%
        let g = block_graph(3, 4, &[0.5; 12]);
        assert!(layer_valid(&[0, 1, 2, 3], &g, 0.75));
        assert!(!layer_valid(&[0, 1, 2], &g, 0.75));
        assert!(!layer_valid(&[], &g, 0.75));
    }

    #[test]
    fn flags() {
        let p = AnatomyParams::default();
        let dark = block_graph(3, 1, &[0.1; 3]);
        assert_eq!(classify_layer_flag(&[0, 1, 2], &dark, &p).unwrap(), LayerFlag::Dark);
        let bright = block_graph(3, 1, &[0.9; 3]);
        assert_eq!(classify_layer_flag(&[0, 1, 2], &bright, &p).unwrap(), LayerFlag::Smooth);
        let mid = block_graph(3, 1, &[0.4; 3]);
        assert_eq!(classify_layer_flag(&[0, 1, 2], &mid, &p).unwrap(), LayerFlag::Normal);
        assert!(classify_layer_flag(&[], &mid, &p).is_err());
    }

    #[test]
    fn constant_graph_splits_evenly_into_three() {
        let g = block_graph(6, 4, &[0.5; 24]);
        let d = decompose_nc_layers(&g, &AnatomyParams::default()).unwrap();
        assert_eq!(d.count(), 3);
        assert_eq!(d.layers()[0], (0..8).collect::<Vec<_>>());
        assert_eq!(d.layers()[2], (16..24).collect::<Vec<_>>());
    }

    #[test]
    fn crisp_rows_become_bands() {
        let row_values = [0.8, 0.45, 0.55, 0.3];
        let vals: Vec<f64> = (0..16).map(|i| row_values[i / 4]).collect();
        let g = block_graph(4, 4, &vals);
        let d = decompose_nc_layers(&g, &AnatomyParams::default()).unwrap();
        assert_eq!(d.count(), 4);
        for (k, layer) in d.layers().iter().enumerate() {
            assert_eq!(*layer, (4 * k..4 * k + 4).collect::<Vec<_>>());
        }
    }

    #[test]
    fn short_images_are_rejected() {
        let g = block_graph(2, 4, &[0.5; 8]);
        assert!(decompose_nc_layers(&g, &AnatomyParams::default()).is_err());
    }
}
