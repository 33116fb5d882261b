//! Brute-force retrieval metrics and answer likelihoods.

use mdst::ader::{rank_of, ranking};
use mdst::train_eval::metrics::{compute_ndcg, MetricsReport};
use rand::Rng;

use super::rng;

/// Position of `gt` after a full insertion sort by (score desc, index asc).
pub fn brute_rank(scores: &[f64], gt: usize) -> usize {
    let mut order: Vec<usize> = Vec::new();
    for i in 0..scores.len() {
        let mut at = order.len();
        for (p, &j) in order.iter().enumerate() {
            if scores[i] > scores[j] {
                at = p;
                break;
            }
        }
        order.insert(at, i);
    }
    order.iter().position(|&j| j == gt).unwrap() + 1
}

/// NDCG@K with K the number of relevant candidates, by explicit loops.
pub fn brute_ndcg(scores: &[f64], relevance: &[f64]) -> Option<f64> {
    let k = relevance.iter().filter(|&&r| r > 0.0).count();
    if k == 0 {
        return None;
    }
    let mut dcg = 0.0;
    for c in 0..scores.len() {
        let pos = brute_rank(scores, c);
        if pos <= k {
            dcg += relevance[c] / ((pos + 1) as f64).log2();
        }
    }
    let mut rest = relevance.to_vec();
    let mut idcg = 0.0;
    for pos in 1..=k {
        let mut best = 0;
        for j in 1..rest.len() {
            if rest[j] > rest[best] {
                best = j;
            }
        }
        idcg += rest[best] / ((pos + 1) as f64).log2();
        rest[best] = f64::NEG_INFINITY;
    }
    Some(dcg / idcg)
}

/// Worst deviation between library metrics and brute force on one random
/// batch of rounds (ties in scores included on purpose).
pub fn metric_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let rounds = r.random_range(1..=20);
    let mut ranks = Vec::new();
    let mut ndcgs = Vec::new();
    let mut brute_ranks = Vec::new();
    let mut brute_ndcgs = Vec::new();
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        let n = r.random_range(1..=30);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..8u8)) * 0.5).collect();
        let gt = r.random_range(0..n);
        let relevance: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.3) { [0.5, 1.0][r.random_range(0..2)] } else { 0.0 })
            .collect();
        let rank = rank_of(&scores, gt);
        let order = ranking(&scores);
        worst = worst.max((order.iter().position(|&j| j == gt).unwrap() + 1).abs_diff(rank) as f64);
        ranks.push(rank);
        brute_ranks.push(brute_rank(&scores, gt));
        match (compute_ndcg(&order, &relevance), brute_ndcg(&scores, &relevance)) {
            (Some(a), Some(b)) => {
                ndcgs.push(a);
                brute_ndcgs.push(b);
            }
            (None, None) => {}
            _ => return f64::INFINITY,
        }
    }
    let report = MetricsReport::from_ranks(&ranks, &ndcgs, 0);
    let n = brute_ranks.len() as f64;
    let mut mrr = 0.0;
    let mut mean = 0.0;
    let mut hits = [0.0; 3];
    for &rank in &brute_ranks {
        mrr += 1.0 / rank as f64;
        mean += rank as f64;
        for (h, k) in hits.iter_mut().zip([1, 5, 10]) {
            if rank <= k {
                *h += 1.0;
            }
        }
    }
    let ndcg = if brute_ndcgs.is_empty() {
        None
    } else {
        Some(brute_ndcgs.iter().sum::<f64>() / brute_ndcgs.len() as f64)
    };
    let pairs = [
        (report.mrr, mrr / n),
        (report.mean, mean / n),
        (report.r1, hits[0] / n),
        (report.r5, hits[1] / n),
        (report.r10, hits[2] / n),
    ];
    for (a, b) in pairs {
        worst = worst.max((a - b).abs());
    }
    match (report.ndcg, ndcg) {
        (Some(a), Some(b)) => worst.max((a - b).abs()),
        (None, None) => worst,
        _ => f64::INFINITY,
    }
}
