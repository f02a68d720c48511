use crate::descriptor::BitStatistics;

/// Picks the bit whose mean over the node's descriptors is closest to 0.5.
///
/// Indices in `forbidden` (the ancestors' split bits) are skipped. Returns
/// `None` when every candidate is further than `delta_max` from 0.5 or when
/// no index is left. Ties go to the smallest index.
pub fn select_split_bit(stats: &BitStatistics, forbidden: &[u32], delta_max: f64) -> Option<u32> {
    if stats.total == 0 {
        return None;
    }
    let total = u64::from(stats.total);
    // |0.5 - c/n| = |n - 2c| / 2n, so compare the integer numerators.
    let mut best: Option<(u64, u32)> = None;
    for (k, &c) in stats.counts.iter().enumerate() {
        let k = k as u32;
        if forbidden.contains(&k) {
            continue;
        }
        let imbalance = total.abs_diff(2 * u64::from(c));
        if best.is_none_or(|(b, _)| imbalance < b) {
            best = Some((imbalance, k));
            if imbalance == 0 {
                break;
            }
        }
    }
    let (imbalance, k) = best?;
    let deviation = imbalance as f64 / (2.0 * total as f64);
    (deviation <= delta_max).then_some(k)
}
