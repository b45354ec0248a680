//! Superpixel segmentation and the region graph built on top of it.

mod graph;
mod quickshift;

pub use graph::{build_region_graph, regionize_labels, regionize_probs, Region, RegionGraph, RegionLabels};
pub use quickshift::{segment, SegmentParams};

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Result, TseError};
use crate::ingest::Planes;

pub const MIN_REGIONS: usize = 4;

/// Partition of the pixel grid into connected regions `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    region_of: Vec<u32>,
    n: usize,
}

impl SuperpixelMap {
    /// Validates and wraps a label array: every index in `0..n` present,
    /// every region 4-connected, at least four regions.
    pub fn from_labels(width: usize, height: usize, region_of: Vec<u32>) -> Result<Self> {
        if region_of.len() != width * height {
            return Err(TseError::contract(format!(
                "{} region labels for a {width}x{height} grid",
                region_of.len()
            )));
        }
        let n = region_of.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; n];
        for &r in &region_of {
            seen[r as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(TseError::contract(format!("region {missing} has no pixels")));
        }
        if n < MIN_REGIONS {
            return Err(TseError::contract(format!(
                "superpixel map has {n} regions, at least {MIN_REGIONS} required"
            )));
        }
        let map = Self {
            width,
            height,
            region_of,
            n,
        };
        if let Some(r) = map.first_disconnected_region() {
            return Err(TseError::contract(format!("region {r} is not 4-connected")));
        }
        Ok(map)
    }

    pub(crate) fn from_parts_unchecked(width: usize, height: usize, region_of: Vec<u32>, n: usize) -> Self {
        Self {
            width,
            height,
            region_of,
            n,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn region_of(&self) -> &[u32] {
        &self.region_of
    }

    pub fn region_at(&self, x: usize, y: usize) -> usize {
        self.region_of[y * self.width + x] as usize
    }

    /// Paints one value per region over its pixels.
    pub fn paint<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.region_of.iter().map(|&r| values[r as usize]).collect()
    }

    fn first_disconnected_region(&self) -> Option<usize> {
        let mut visited = vec![false; self.region_of.len()];
        let mut started = vec![false; self.n];
        let mut queue = VecDeque::new();
        for start in 0..self.region_of.len() {
            if visited[start] {
                continue;
            }
            let r = self.region_of[start] as usize;
            if started[r] {
                return Some(r);
            }
            started[r] = true;
            visited[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbors4(p, self.width, self.height) {
                    if !visited[q] && self.region_of[q] as usize == r {
                        visited[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        None
    }

    pub fn to_planes(&self) -> Planes {
        Planes {
            count: 1,
            width: self.width,
            height: self.height,
            data: self.region_of.iter().map(|&r| r as f32).collect(),
        }
    }

    pub fn from_planes(planes: &Planes) -> Result<Self> {
        if planes.count != 1 {
            return Err(TseError::format(
                0,
                format!("superpixel file needs 1 plane, found {}", planes.count),
            ));
        }
        let labels = planes
            .data
            .iter()
            .enumerate()
            .map(|(p, &v)| {
                if v >= 0.0 && v.fract() == 0.0 && v < (1u32 << 24) as f32 {
                    Ok(v as u32)
                } else {
                    Err(TseError::contract(format!("pixel {p} holds non-index value {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_labels(planes.width, planes.height, labels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_planes(&Planes::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_planes().save(path)
    }
}

pub(crate) fn neighbors4(p: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % width, p / width);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < width).then(|| p + 1);
    let up = (y > 0).then(|| p - width);
    let down = (y + 1 < height).then(|| p + width);
    [up, left, right, down].into_iter().flatten()
}
