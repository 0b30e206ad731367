//! Two-sample classifier test: logistic regression on embeddings, scored by
//! held-out AUC.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub step: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            train_fraction: 0.7,
            iterations: 500,
            step: 0.1,
        }
    }
}

const MIN_PER_SIDE: usize = 20;

/// AUC from the Mann-Whitney statistic with midranks for ties. `labels`
/// are `true` for the positive class.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Held-out AUC of a logistic regression separating real (0) from synth (1).
pub fn classifier_auc(real: &[Vec<f64>], synth: &[Vec<f64>], config: &ClassifierConfig, seed: u64) -> Result<f64> {
    if real.len() < MIN_PER_SIDE || synth.len() < MIN_PER_SIDE {
        return Err(Error::invalid(format!("classifier test needs at least {MIN_PER_SIDE} points per side")));
    }
    let dim = real[0].len();
    if real.iter().chain(synth).any(|x| x.len() != dim) {
        return Err(Error::invalid("embeddings differ in length"));
    }
    let mut train: Vec<(&[f64], bool)> = Vec::new();
    let mut test: Vec<(&[f64], bool)> = Vec::new();
    // stratified split so both classes appear on both sides
    for (side, (points, label)) in [(real, false), (synth, true)].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.shuffle(&mut rng_for(seed, "classifier-split", side as u64));
        let cut = ((points.len() as f64) * config.train_fraction).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            let item = (points[i].as_slice(), label);
            if k < cut {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    let has_both = |s: &[(&[f64], bool)]| s.iter().any(|x| x.1) && s.iter().any(|x| !x.1);
    if !has_both(&train) || !has_both(&test) {
        return Err(Error::invalid("split left a single class on one side"));
    }
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for (x, _) in &train {
        for (m, v) in mean.iter_mut().zip(*x) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for (x, _) in &train {
        for ((s, v), m) in std.iter_mut().zip(*x).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    let z = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| z(x)).collect();
    let ys: Vec<f64> = train.iter().map(|(_, y)| f64::from(u8::from(*y))).collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    for _ in 0..config.iterations {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let err = sigmoid(b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()) - y;
            gb += err;
            for (g, v) in gw.iter_mut().zip(x) {
                *g += err * v;
            }
        }
        b -= config.step * gb / n;
        for (wi, g) in w.iter_mut().zip(gw) {
            *wi -= config.step * g / n;
        }
    }
    let scores: Vec<f64> = test
        .iter()
        .map(|(x, _)| b + w.iter().zip(z(x)).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    let labels: Vec<bool> = test.iter().map(|(_, y)| *y).collect();
    auc(&scores, &labels)
}
