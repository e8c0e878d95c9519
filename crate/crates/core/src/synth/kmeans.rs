//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares of the final assignment.
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after every assignment step.
    pub wcss_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            // all remaining points coincide with a center
            rng.gen_range(0..points.len())
        };
        let c = points[idx].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

pub fn kmeans_cluster(points: &[Vec<f64>], k: usize, rng: &mut SimRng) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k-means needs K >= 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!("K = {k} exceeds {} points", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have differing dimensions"));
    }

    let mut centers = plus_plus_init(points, k, rng);
    let mut labels = vec![0; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut wcss = 0.0;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (j, d) = nearest(p, &centers);
            *l = j;
            wcss += d;
        }
        history.push(wcss);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            // an empty cluster keeps its center
            if counts[j] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        if shift < SHIFT_TOL || iterations >= MAX_ITERATIONS {
            break;
        }
    }
    let mut wcss = 0.0;
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let (j, d) = nearest(p, &centers);
        *l = j;
        wcss += d;
    }
    Ok(KMeansResult { labels, centers, wcss, iterations, wcss_history: history })
}

/// Maps every k-means cluster to the reference label most common inside it
/// (ties to the smaller label) and returns the relabelled assignment.
pub fn align_labels(labels: &[usize], reference: &[usize], k: usize) -> Vec<usize> {
    let mut votes = vec![vec![0usize; k]; k];
    for (&l, &r) in labels.iter().zip(reference) {
        if l < k && r < k {
            votes[l][r] += 1;
        }
    }
    let mapping: Vec<usize> = votes
        .iter()
        .map(|row| {
            let mut best = 0;
            for (r, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = r;
                }
            }
            best
        })
        .collect();
    labels.iter().map(|&l| mapping[l]).collect()
}
