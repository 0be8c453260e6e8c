use serde::{Deserialize, Serialize};

use super::corpus::LabeledQuery;
use super::BenchError;

/// Ranking quality over a query set. Every metric lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub n_agents: usize,
    pub n_queries: usize,
    pub top1_accuracy: f64,
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
}

fn dcg<'a>(rels: impl Iterator<Item = &'a f64>) -> f64 {
    rels.enumerate().map(|(i, r)| r / ((i + 2) as f64).log2()).sum()
}

/// `rankings[i]` is the ranked agent list returned for `queries[i]`.
pub fn compute_metrics(
    method: &str,
    n_agents: usize,
    rankings: &[Vec<String>],
    queries: &[LabeledQuery],
) -> Result<MetricsReport, BenchError> {
    if rankings.len() < queries.len() {
        return Err(BenchError::MissingRanking(rankings.len()));
    }
    let (mut top1, mut mrr, mut ndcg, mut r5, mut r10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (q, ranking) in queries.iter().zip(rankings) {
        let rank = ranking.iter().position(|id| *id == q.target_id).map(|p| p + 1);
        if let Some(r) = rank {
            if r == 1 {
                top1 += 1.0;
            }
            if r <= 5 {
                r5 += 1.0;
            }
            if r <= 10 {
                r10 += 1.0;
                mrr += 1.0 / r as f64;
            }
        }
        let gains: Vec<f64> = ranking.iter().take(10).map(|id| q.relevance_of(id)).collect();
        let mut ideal: Vec<f64> = q.relevance.values().copied().filter(|&r| r > 0.0).collect();
        ideal.sort_by(|a, b| b.total_cmp(a));
        ideal.truncate(10);
        let idcg = dcg(ideal.iter());
        if idcg > 0.0 {
            ndcg += dcg(gains.iter()) / idcg;
        }
    }
    let n = queries.len();
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(MetricsReport {
        method: method.to_string(),
        n_agents,
        n_queries: n,
        top1_accuracy: mean(top1),
        mrr_at_10: mean(mrr),
        ndcg_at_10: mean(ndcg),
        recall_at_5: mean(r5),
        recall_at_10: mean(r10),
    })
}
