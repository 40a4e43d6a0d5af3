use std::collections::BTreeMap;

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    // `rank` is 0-based; position i = rank + 1 is discounted by log2(i + 1).
    ((rank + 2) as f64).log2()
}

/// NDCG@k of `ranked` against graded judgments. `None` when no judged
/// document has a positive grade, so the query has no ideal gain.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], judged: &BTreeMap<String, u32>, k: usize) -> Option<f64> {
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() || k == 0 {
        return None;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, &g)| gain(g) / discount(i)).sum();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| judged.get(d.as_ref()).map_or(0.0, |&g| gain(g) / discount(i)))
        .sum();
    Some(dcg / idcg)
}
