//! Point sets: the toy stand-in for generated images.
//!
//! A continuous state vector of dimension 3*M encodes M points, each with a
//! 2-D position and one attribute channel (the "color" analog). Modes are
//! single-linkage clusters of the positions at a fixed radius.

use crate::{Error, Result};

pub const POINT_DIM: usize = 3;

/// One generated sample set: M points of (x, y, attribute).
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; POINT_DIM]>,
}

impl PointSet {
    pub fn from_state(state: &[f64]) -> Result<Self> {
        if state.is_empty() || state.len() % POINT_DIM != 0 {
            return Err(Error::InvalidInput(format!(
                "state length {} is not a positive multiple of {}",
                state.len(),
                POINT_DIM
            )));
        }
        let points = state
            .chunks_exact(POINT_DIM)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(PointSet { points })
    }

    pub fn to_state(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * POINT_DIM);
        for p in &self.points {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned half-plane regions of the canvas (plus the vacuous one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Left,
    Right,
    Top,
    Bottom,
    Any,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Left => x < 0.0,
            Region::Right => x > 0.0,
            Region::Top => y > 0.0,
            Region::Bottom => y < 0.0,
            Region::Any => true,
        }
    }
}

/// Single-linkage clusters at `radius` over point positions: connected
/// components of the graph with an edge wherever two points are within
/// `radius`. Clusters are ordered by their lowest member index and each
/// cluster lists member indices in ascending order.
pub fn cluster_components(ps: &PointSet, radius: f64) -> Vec<Vec<usize>> {
    let n = ps.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let r2 = radius * radius;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = ps.points[i][0] - ps.points[j][0];
            let dy = ps.points[i][1] - ps.points[j][1];
            if dx * dx + dy * dy <= r2 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // lower root wins: deterministic labels
                    let (lo, hi) = if ri < rj { (ri, rj) } else { (rj, ri) };
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_to_cluster: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_to_cluster[r] {
            Some(c) => clusters[c].push(i),
            None => {
                root_to_cluster[r] = Some(clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    clusters
}

/// Centroid of a cluster's positions.
pub fn cluster_centroid(ps: &PointSet, members: &[usize]) -> (f64, f64) {
    let mut cx = 0.0;
    let mut cy = 0.0;
    for &i in members {
        cx += ps.points[i][0];
        cy += ps.points[i][1];
    }
    let n = members.len() as f64;
    (cx / n, cy / n)
}

pub fn cluster_mean_attr(ps: &PointSet, members: &[usize]) -> f64 {
    members.iter().map(|&i| ps.points[i][2]).sum::<f64>() / members.len() as f64
}
