use super::SuperpixelMap;
use crate::error::{Result, TseError};
use crate::ingest::{Image, LabelMap, ProbMap, CLASS_COUNT};
use crate::layer::Layer;

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub area: usize,
    /// Mean intensity scaled to [0, 1].
    pub intensity: f64,
    /// Area centroid of pixel centers, (x / width, y / height).
    pub center: [f64; 2],
    pub touches_border: bool,
    /// Sorted rows the region occupies.
    pub rows: Vec<u32>,
    /// Sorted columns the region occupies.
    pub cols: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionGraph {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
    /// Sorted neighbor lists (regions sharing a pixel edge).
    pub adjacency: Vec<Vec<usize>>,
}

impl RegionGraph {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.intensity).collect()
    }

    pub fn are_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Number of distinct image columns covered by the given regions.
    pub fn column_coverage(&self, members: impl IntoIterator<Item = usize>) -> usize {
        let mut covered = vec![false; self.width];
        for i in members {
            for &c in &self.regions[i].cols {
                covered[c as usize] = true;
            }
        }
        covered.iter().filter(|&&c| c).count()
    }
}

pub fn build_region_graph(image: &Image, spmap: &SuperpixelMap) -> Result<RegionGraph> {
    let (w, h) = (image.width(), image.height());
    if spmap.width() != w || spmap.height() != h {
        return Err(TseError::contract(format!(
            "superpixel map is {}x{}, image is {w}x{h}",
            spmap.width(),
            spmap.height()
        )));
    }
    let n = spmap.len();
    let mut area = vec![0usize; n];
    let mut sum = vec![0u64; n];
    let mut sx = vec![0.0f64; n];
    let mut sy = vec![0.0f64; n];
    let mut border = vec![false; n];
    let mut rows = vec![vec![false; h]; n];
    let mut cols = vec![vec![false; w]; n];
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    let labels = spmap.region_of();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let r = labels[p] as usize;
            area[r] += 1;
            sum[r] += image.pixels()[p] as u64;
            sx[r] += x as f64 + 0.5;
            sy[r] += y as f64 + 0.5;
            rows[r][y] = true;
            cols[r][x] = true;
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                border[r] = true;
            }
            if x + 1 < w {
                link(&mut adjacency, r, labels[p + 1] as usize);
            }
            if y + 1 < h {
                link(&mut adjacency, r, labels[p + w] as usize);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    let set_bits = |bits: &[bool]| {
        bits.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
            .collect::<Vec<_>>()
    };
    let regions = (0..n)
        .map(|r| {
            let a = area[r] as f64;
            Region {
                area: area[r],
                intensity: sum[r] as f64 / a / 255.0,
                center: [sx[r] / a / w as f64, sy[r] / a / h as f64],
                touches_border: border[r],
                rows: set_bits(&rows[r]),
                cols: set_bits(&cols[r]),
            }
        })
        .collect();
    Ok(RegionGraph {
        width: w,
        height: h,
        regions,
        adjacency,
    })
}

fn link(adjacency: &mut [Vec<usize>], a: usize, b: usize) {
    if a != b {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
}

/// Per-region semantic labels and class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionLabels {
    pub layer_of: Vec<Layer>,
    /// Mean class probability per region, indexed by `Layer::index`.
    pub prob: Vec<[f64; CLASS_COUNT]>,
}

fn check_dims(w: usize, h: usize, spmap: &SuperpixelMap) -> Result<()> {
    if spmap.width() != w || spmap.height() != h {
        return Err(TseError::contract(format!(
            "label map is {w}x{h}, superpixel map is {}x{}",
            spmap.width(),
            spmap.height()
        )));
    }
    Ok(())
}

fn vote_winner(votes: &[usize; CLASS_COUNT]) -> Layer {
    let mut best = 0;
    for k in 1..CLASS_COUNT {
        if votes[k] > votes[best] {
            best = k;
        }
    }
    Layer::ALL[best]
}

/// Averages class probabilities per region; the region label is the majority
/// of per-pixel argmax labels, ties toward the lower class.
pub fn regionize_probs(prob: &ProbMap, spmap: &SuperpixelMap) -> Result<RegionLabels> {
    check_dims(prob.width(), prob.height(), spmap)?;
    let n = spmap.len();
    let mut votes = vec![[0usize; CLASS_COUNT]; n];
    let mut sums = vec![[0.0f64; CLASS_COUNT]; n];
    let mut area = vec![0usize; n];
    for (p, &r) in spmap.region_of().iter().enumerate() {
        let r = r as usize;
        area[r] += 1;
        votes[r][prob.argmax(p).index()] += 1;
        for (k, s) in sums[r].iter_mut().enumerate() {
            *s += prob.get(k, p) as f64;
        }
    }
    let prob = sums.iter().zip(&area).map(|(s, &a)| s.map(|v| v / a as f64)).collect();
    Ok(RegionLabels {
        layer_of: votes.iter().map(vote_winner).collect(),
        prob,
    })
}

/// Region labels from a hard class map (codes 1..=4); probabilities are the
/// per-region vote fractions.
pub fn regionize_labels(labels: &LabelMap, spmap: &SuperpixelMap) -> Result<RegionLabels> {
    check_dims(labels.width, labels.height, spmap)?;
    labels.check_range(1, CLASS_COUNT as u32)?;
    let n = spmap.len();
    let mut votes = vec![[0usize; CLASS_COUNT]; n];
    for (&l, &r) in labels.labels.iter().zip(spmap.region_of()) {
        votes[r as usize][l as usize - 1] += 1;
    }
    let prob = votes
        .iter()
        .map(|v| {
            let total: usize = v.iter().sum();
            v.map(|c| c as f64 / total as f64)
        })
        .collect();
    Ok(RegionLabels {
        layer_of: votes.iter().map(vote_winner).collect(),
        prob,
    })
}
