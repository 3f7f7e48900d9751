//! Fixed summary statistics of a sample set.
//!
//! This vector is the toy stand-in for feeding a generated image back into
//! the language model: cluster count, region occupancy, moments, attribute
//! mean, and the two largest cluster centroids. It also serves as the
//! reference conditioning for editing.

use crate::rewards::points::{cluster_centroid, cluster_components, PointSet};

pub const SUMMARY_DIM: usize = 14;

pub fn summary_features(samples: &PointSet, cluster_radius: f64) -> Vec<f64> {
    let mut f = vec![0.0; SUMMARY_DIM];
    if samples.is_empty() {
        return f;
    }
    let n = samples.len() as f64;
    let clusters = cluster_components(samples, cluster_radius);
    f[0] = clusters.len() as f64 / 4.0;
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    let mut mean_a = 0.0;
    for p in &samples.points {
        if p[0] < 0.0 {
            f[1] += 1.0;
        }
        if p[0] > 0.0 {
            f[2] += 1.0;
        }
        if p[1] > 0.0 {
            f[3] += 1.0;
        }
        if p[1] < 0.0 {
            f[4] += 1.0;
        }
        mean_x += p[0];
        mean_y += p[1];
        mean_a += p[2];
    }
    f[1] /= n;
    f[2] /= n;
    f[3] /= n;
    f[4] /= n;
    f[5] = mean_x / n;
    f[6] = mean_y / n;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for p in &samples.points {
        var_x += (p[0] - f[5]) * (p[0] - f[5]);
        var_y += (p[1] - f[6]) * (p[1] - f[6]);
    }
    f[7] = (var_x / n).sqrt();
    f[8] = (var_y / n).sqrt();
    f[9] = mean_a / n;
    // two largest clusters by size; ties resolved by cluster order, which
    // is already lowest-member-index first
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(clusters[i].len()));
    for (slot, &ci) in order.iter().take(2).enumerate() {
        let (cx, cy) = cluster_centroid(samples, &clusters[ci]);
        f[10 + 2 * slot] = cx;
        f[11 + 2 * slot] = cy;
    }
    f
}
