//! Brute-force reference implementations used to check the optimized code.
//! They share no code with the library.

#![allow(dead_code)]

/// Mean of the `min(k, N)` smallest squared distances, by direct differences
/// and a full sort.
pub fn knn_naive(queries: &[Vec<f32>], bank: &[Vec<f32>], k: usize) -> Vec<f64> {
    queries
        .iter()
        .map(|q| {
            let mut d: Vec<f64> = bank
                .iter()
                .map(|m| {
                    q.iter()
                        .zip(m)
                        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                        .sum()
                })
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = k.min(d.len());
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

fn dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Covering radius of `centers` over `points`.
pub fn radius_of(points: &[Vec<f32>], centers: &[usize]) -> f64 {
    points
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|&c| dist(p, &points[c]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Optimal k-center radius over all subsets of size `m`.
pub fn optimal_k_center_radius(points: &[Vec<f32>], m: usize) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let centers: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        best = best.min(radius_of(points, &centers));
    }
    best
}

/// AUROC by counting every positive/negative pair, ties counting one half.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    wins / (n_pos as f64 * (labels.len() - n_pos) as f64)
        * if pairs == 0 { f64::NAN } else { 1.0 }
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

fn counts_at(scores: &[f64], labels: &[bool], t: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (s, l) in scores.iter().zip(labels) {
        if *s >= t {
            if *l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Average precision from the confusion counts at every distinct threshold.
pub fn average_precision_exhaustive(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in distinct_desc(scores) {
        let (tp, fp) = counts_at(scores, labels, t);
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Best F1 = 2PR / (P + R) over every distinct threshold.
pub fn f1_max_exhaustive(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let mut best = 0.0f64;
    for t in distinct_desc(scores) {
        let (tp, fp) = counts_at(scores, labels, t);
        if tp == 0 {
            continue;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / n_pos as f64;
        best = best.max(2.0 * p * r / (p + r));
    }
    best
}
