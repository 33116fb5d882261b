//! Retrieval metrics over candidate rankings.

use serde::{Deserialize, Serialize};

/// NDCG over the top `K` positions, `K` = number of candidates with positive
/// relevance, gain = relevance, discount `1/log2(1+pos)`. `None` when no
/// candidate is relevant.
pub fn compute_ndcg(ranking: &[usize], relevance: &[f64]) -> Option<f64> {
    let k = relevance.iter().filter(|&&r| r > 0.0).count();
    if k == 0 {
        return None;
    }
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranking.iter().take(k).enumerate().map(|(i, &c)| relevance[c] * discount(i)).sum();
    let mut ideal: Vec<f64> = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &r)| r * discount(i)).sum();
    Some(dcg / idcg)
}

/// Per-round ranking outcomes; merging two accumulators is concatenation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingAccumulator {
    pub ranks: Vec<usize>,
    pub ndcgs: Vec<f64>,
    pub skipped: usize,
}

impl RankingAccumulator {
    pub fn merge(&mut self, other: RankingAccumulator) {
        self.ranks.extend(other.ranks);
        self.ndcgs.extend(other.ndcgs);
        self.skipped += other.skipped;
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_ranks(&self.ranks, &self.ndcgs, self.skipped)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mean: f64,
    pub ndcg: Option<f64>,
    pub jacc: Option<f64>,
    pub avg_len: Option<f64>,
    pub rounds_evaluated: usize,
    pub ndcg_rounds: usize,
    pub rounds_skipped: usize,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[usize], ndcgs: &[f64], skipped: usize) -> Self {
        let n = ranks.len() as f64;
        let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let (mrr, r1, r5, r10, mean) = if ranks.is_empty() {
            (0.0, 0.0, 0.0, 0.0, 0.0)
        } else {
            (
                ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
                frac(1),
                frac(5),
                frac(10),
                ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
            )
        };
        let ndcg = (!ndcgs.is_empty()).then(|| ndcgs.iter().sum::<f64>() / ndcgs.len() as f64);
        Self {
            mrr,
            r1,
            r5,
            r10,
            mean,
            ndcg,
            jacc: None,
            avg_len: None,
            rounds_evaluated: ranks.len(),
            ndcg_rounds: ndcgs.len(),
            rounds_skipped: skipped,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Aligned text table, one row per named report, columns
/// `MRR R@1 R@5 R@10 Mean NDCG` (rates shown ×100), plus JACC when present.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let with_jacc = rows.iter().any(|(_, r)| r.jacc.is_some());
    let with_rank = rows.iter().any(|(_, r)| r.rounds_evaluated > 0);
    let name_w = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(5);
    let mut header = vec![format!("{:<name_w$}", "model")];
    if with_rank {
        for h in ["MRR↑", "R@1↑", "R@5↑", "R@10↑", "Mean↓", "NDCG↑"] {
            header.push(format!("{h:>8}"));
        }
    }
    if with_jacc {
        header.push(format!("{:>8}", "JACC↑"));
        header.push(format!("{:>8}", "AvgLen"));
    }
    let mut out = header.join(" ").trim_end().to_string();
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>8}", "-"), |x| format!("{x:>8.2}"));
    for (name, r) in rows {
        let mut line = vec![format!("{name:<name_w$}")];
        if with_rank {
            let has = r.rounds_evaluated > 0;
            let pct = |x: f64| has.then_some(100.0 * x);
            line.push(cell(pct(r.mrr)));
            line.push(cell(pct(r.r1)));
            line.push(cell(pct(r.r5)));
            line.push(cell(pct(r.r10)));
            line.push(cell(has.then_some(r.mean)));
            line.push(cell(r.ndcg.map(|x| 100.0 * x)));
        }
        if with_jacc {
            line.push(cell(r.jacc));
            line.push(cell(r.avg_len));
        }
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
