//! Classification metrics and the rank-correlation trend test.

use crate::error::{Error, Result};

fn check_inputs(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<()> {
    if preds.is_empty() || labels.is_empty() {
        return Err(Error::contract("metrics need non-empty inputs"));
    }
    if preds.len() != labels.len() {
        return Err(Error::contract("preds and labels differ in length"));
    }
    if preds.iter().chain(labels).any(|&v| v >= num_classes) {
        return Err(Error::contract("class id out of range"));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_inputs(preds, labels, num_classes)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

struct ClassCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
    present: bool,
}

fn per_class_counts(preds: &[usize], labels: &[usize], num_classes: usize) -> Vec<ClassCounts> {
    (0..num_classes)
        .map(|c| {
            let tp = preds
                .iter()
                .zip(labels)
                .filter(|(&p, &l)| p == c && l == c)
                .count();
            let fp = preds
                .iter()
                .zip(labels)
                .filter(|(&p, &l)| p == c && l != c)
                .count();
            let fn_ = preds
                .iter()
                .zip(labels)
                .filter(|(&p, &l)| p != c && l == c)
                .count();
            ClassCounts {
                tp,
                fp,
                fn_,
                present: tp + fp + fn_ > 0,
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1. Classes absent from both predictions
/// and labels are skipped rather than scored 0/0.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_inputs(preds, labels, num_classes)?;
    let counts = per_class_counts(preds, labels, num_classes);
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in counts.iter().filter(|c| c.present) {
        let denom = 2 * c.tp + c.fp + c.fn_;
        sum += if denom == 0 {
            0.0
        } else {
            2.0 * c.tp as f64 / denom as f64
        };
        n += 1;
    }
    if n == 0 {
        return Err(Error::contract("no class present in either stream"));
    }
    Ok(sum / n as f64)
}

/// Unweighted mean of per-class intersection-over-union.
pub fn jaccard(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_inputs(preds, labels, num_classes)?;
    let counts = per_class_counts(preds, labels, num_classes);
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in counts.iter().filter(|c| c.present) {
        let denom = c.tp + c.fp + c.fn_;
        sum += c.tp as f64 / denom as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::contract("no class present in either stream"));
    }
    Ok(sum / n as f64)
}

/// Spearman rank correlation with average ranks for ties. Used as a trend
/// test: a negative value over a trajectory tail means it is decreasing.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::contract("spearman needs two equal series of len >= 2"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::contract("spearman undefined for a constant series"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}
