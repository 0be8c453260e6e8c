use std::collections::HashMap;

use super::BenchError;
use crate::embed::{dot, l2_norm, tokenize};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Okapi BM25 over lowercase alphanumeric tokens.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    doc_lens: Vec<f64>,
    avg_len: f64,
    doc_freq: HashMap<String, usize>,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(docs: &[(String, S)]) -> Self {
        Self::with_params(docs, BM25_K1, BM25_B)
    }

    pub fn with_params<S: AsRef<str>>(docs: &[(String, S)], k1: f64, b: f64) -> Self {
        let mut term_freqs = Vec::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for (_, text) in docs {
            let tokens = tokenize(text.as_ref());
            doc_lens.push(tokens.len() as f64);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            doc_lens.iter().sum::<f64>() / docs.len() as f64
        };
        Bm25Index {
            ids: docs.iter().map(|(id, _)| id.clone()).collect(),
            term_freqs,
            doc_lens,
            avg_len,
            doc_freq,
            k1,
            b,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every document, in insertion order. Repeated query terms
    /// count once per occurrence.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms = tokenize(query);
        let idfs: Vec<f64> = terms.iter().map(|t| self.idf(t)).collect();
        self.term_freqs
            .iter()
            .zip(&self.doc_lens)
            .map(|(tf, &len)| {
                let norm = self.k1 * (1.0 - self.b + self.b * len / self.avg_len.max(f64::MIN_POSITIVE));
                terms
                    .iter()
                    .zip(&idfs)
                    .map(|(t, idf)| {
                        let f = tf.get(t).copied().unwrap_or(0) as f64;
                        idf * f * (self.k1 + 1.0) / (f + norm)
                    })
                    .sum()
            })
            .collect()
    }

    /// Top `n` documents by score, ties broken by id.
    pub fn search(&self, query: &str, n: usize) -> Vec<(String, f64)> {
        let scores = self.scores(query);
        top_n(self.ids.iter().zip(scores), n)
    }
}

fn top_n<'a>(scored: impl Iterator<Item = (&'a String, f64)>, n: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(&String, f64)> = scored.collect();
    let order = |a: &(&String, f64), b: &(&String, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0));
    if n < all.len() && n > 0 {
        all.select_nth_unstable_by(n - 1, order);
        all.truncate(n);
    }
    all.sort_by(order);
    all.truncate(n);
    all.into_iter().map(|(id, s)| (id.clone(), s)).collect()
}

pub fn bm25_search(index: &Bm25Index, task_text: &str, n: usize) -> Vec<(String, f64)> {
    index.search(task_text, n)
}

/// Exact top `n` by cosine over uncompressed embeddings, ties broken by id.
pub fn flat_dense_search(
    ids: &[String],
    embeddings: &[Vec<f64>],
    query: &[f64],
    n: usize,
) -> Result<Vec<(String, f64)>, BenchError> {
    let qn = l2_norm(query);
    let mut scores = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        if e.len() != query.len() {
            return Err(BenchError::DimensionMismatch {
                expected: e.len(),
                got: query.len(),
            });
        }
        let denom = qn * l2_norm(e);
        scores.push(if denom == 0.0 { 0.0 } else { dot(query, e) / denom });
    }
    Ok(top_n(ids.iter().zip(scores), n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<(String, &'static str)> {
        vec![
            ("d1".into(), "route planning for robots"),
            ("d2".into(), "image captioning"),
            ("d3".into(), "route optimization route search"),
            ("d4".into(), "speech transcription and translation"),
            ("d5".into(), "planning"),
        ]
    }

    #[test]
    fn hand_computed_scores() {
        // N = 5, lengths 4, 2, 5, 4, 1, avgdl = 3.2, df(route) = df(planning) = 2.
        // Reference values computed independently in Python.
        let expected = [1.5408249777428638, 0.0, 1.1005892698163313, 0.0, 1.2037695138616122];
        let s = Bm25Index::new(&toy()).scores("route planning");
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn repeated_unique_term_wins() {
        let idx = Bm25Index::new(&toy());
        assert_eq!(idx.search("captioning captioning", 5)[0].0, "d2");
    }

    #[test]
    fn no_overlap_orders_by_id() {
        let idx = Bm25Index::new(&toy());
        let r = idx.search("quantum chemistry", 5);
        assert!(r.iter().all(|(_, s)| *s == 0.0));
        let ids: Vec<&str> = r.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2", "d3", "d4", "d5"]);
    }

    #[test]
    fn dense_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let ids: Vec<String> = (0..100).map(|i| format!("a{i:03}")).collect();
        let embs: Vec<Vec<f64>> = (0..100).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        for _ in 0..20 {
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = flat_dense_search(&ids, &embs, &q, 10).unwrap();
            let mut all: Vec<(f64, &String)> = ids
                .iter()
                .zip(&embs)
                .map(|(id, e)| (dot(&q, e) / (l2_norm(&q) * l2_norm(e)), id))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
            let want: Vec<&String> = all.iter().take(10).map(|x| x.1).collect();
            let got_ids: Vec<&String> = got.iter().map(|x| &x.0).collect();
            assert_eq!(got_ids, want);
        }
    }

    #[test]
    fn dense_edge_cases() {
        let ids: Vec<String> = vec!["b".into(), "a".into(), "c".into()];
        let embs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        assert_eq!(flat_dense_search(&ids, &embs, &[1.0, 0.0], 1).unwrap()[0].0, "b");
        // Orthogonal to everything stored: all zero, ordered by id.
        let ortho = vec![vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 2.0]];
        let r = flat_dense_search(&ids, &ortho, &[1.0, 0.0], 3).unwrap();
        let got: Vec<&str> = r.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(got, ["a", "b", "c"]);
        assert!(r.iter().all(|(_, s)| *s == 0.0));
        assert!(matches!(
            flat_dense_search(&ids, &embs, &[1.0], 1),
            Err(BenchError::DimensionMismatch { .. })
        ));
    }
}
