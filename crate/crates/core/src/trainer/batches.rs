use rand::seq::SliceRandom;
use rand::Rng;

/// Seeded shuffle of `0..n` cut into batches of `batch_size`; the last
/// batch may be short.
pub fn build_batches<R: Rng>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
