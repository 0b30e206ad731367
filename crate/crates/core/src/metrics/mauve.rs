//! MAUVE: joint k-means quantization of two embedding sets and the area
//! under the scaled KL divergence frontier.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MauveConfig {
    /// Defaults to `min(⌊n/10⌋, 128)` with `n` the balanced per-side size.
    pub num_clusters: Option<usize>,
    pub scale: f64,
    pub grid: usize,
    pub max_iter: usize,
}

impl Default for MauveConfig {
    fn default() -> Self {
        MauveConfig {
            num_clusters: None,
            scale: 5.0,
            grid: 99,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MauveResult {
    pub score: f64,
    pub num_clusters: usize,
    /// Points per side after balancing.
    pub points_per_side: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Lloyd's algorithm with k-means++ seeding; returns the assignment.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || points.len() < k {
        return Err(Error::invalid(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d2.iter()
                .position(|&w| {
                    u -= w;
                    u < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|x| x / n as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Area under the frontier `(e^{−c·KL(Q‖R_λ)}, e^{−c·KL(P‖R_λ)})`,
/// `R_λ = λP + (1−λ)Q`, `λ = i/(grid+1)`, closed with (0,1) and (1,0).
pub fn frontier_area(p: &[f64], q: &[f64], scale: f64, grid: usize) -> f64 {
    let mut pts = vec![(0.0, 1.0), (1.0, 0.0)];
    for i in 1..=grid {
        let l = i as f64 / (grid + 1) as f64;
        let r: Vec<f64> = p.iter().zip(q).map(|(a, b)| l * a + (1.0 - l) * b).collect();
        pts.push(((-scale * kl(q, &r)).exp(), (-scale * kl(p, &r)).exp()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let area: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1)).sum();
    area.clamp(0.0, 1.0)
}

/// Cluster histogram with `1/k` added to every count.
fn smoothed_histogram(assign: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![1.0 / k as f64; k];
    for &a in assign {
        h[a] += 1.0;
    }
    let total = assign.len() as f64 + 1.0;
    h.into_iter().map(|x| x / total).collect()
}

pub fn mauve(emb_p: &[Vec<f64>], emb_q: &[Vec<f64>], config: &MauveConfig, seed: u64) -> Result<MauveResult> {
    if emb_p.is_empty() || emb_q.is_empty() {
        return Err(Error::invalid("mauve needs two non-empty embedding sets"));
    }
    let n = emb_p.len().min(emb_q.len());
    let mut rng = rng_for(seed, "mauve", 0);
    let mut balance = |emb: &[Vec<f64>]| -> Vec<Vec<f64>> {
        if emb.len() == n {
            return emb.to_vec();
        }
        let mut idx: Vec<usize> = (0..emb.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        idx.into_iter().map(|i| emb[i].clone()).collect()
    };
    let p = balance(emb_p);
    let q = balance(emb_q);
    let k = config.num_clusters.unwrap_or((n / 10).min(128)).max(1);
    if n < k {
        return Err(Error::invalid(format!("{n} points per side, fewer than {k} clusters")));
    }
    // Cluster the union in a canonical order so swapping P and Q gives the
    // same partition.
    let mut joint: Vec<(&Vec<f64>, bool)> = p.iter().map(|x| (x, false)).chain(q.iter().map(|x| (x, true))).collect();
    joint.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let points: Vec<Vec<f64>> = joint.iter().map(|(x, _)| (*x).clone()).collect();
    let assign = kmeans(&points, k, config.max_iter, &mut rng)?;
    let side = |s: bool| -> Vec<usize> { assign.iter().zip(&joint).filter(|(_, j)| j.1 == s).map(|(&a, _)| a).collect() };
    let hp = smoothed_histogram(&side(false), k);
    let hq = smoothed_histogram(&side(true), k);
    Ok(MauveResult {
        score: frontier_area(&hp, &hq, config.scale, config.grid),
        num_clusters: k,
        points_per_side: n,
    })
}
