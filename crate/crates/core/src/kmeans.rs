//! Deterministic one-dimensional Lloyd k-means.
//!
//! Centers start at `k` equally spaced order statistics (minimum through
//! maximum). Points go to the nearest center, ties to the lower center
//! index. Iteration stops when assignments no longer change or after
//! `max_iter` rounds. A center that loses all its points keeps its value.
//!
//! On sorted input every cluster is a contiguous run, so assignment is a
//! binary search per center boundary and a center update is a difference of
//! prefix sums; one round costs `O(k log n)` after an `O(n)` setup.

/// Iteration budget used throughout the crate.
pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans1d {
    pub centers: Vec<f64>,
    /// Cluster index of each input value, in input order.
    pub assignments: Vec<usize>,
    /// Number of points per cluster (zero for clusters that ended up empty).
    pub sizes: Vec<usize>,
    pub iterations: usize,
}

impl KMeans1d {
    pub fn n_nonempty(&self) -> usize {
        self.sizes.iter().filter(|&&s| s > 0).count()
    }
}

/// Initial centers: order statistics at ranks `round(j (n-1) / (k-1))`; the
/// median rank when `k == 1`.
pub fn quantile_init(sorted: &[f64], k: usize) -> Vec<f64> {
    let n = sorted.len();
    if k == 1 {
        return vec![sorted[(n - 1) / 2]];
    }
    (0..k)
        .map(|j| {
            let rank = (j as f64 * (n - 1) as f64 / (k - 1) as f64).round() as usize;
            sorted[rank.min(n - 1)]
        })
        .collect()
}

/// k-means on values already sorted ascending.
///
/// # Panics
/// If `sorted` is empty or `k == 0`.
pub fn kmeans_1d_sorted(sorted: &[f64], k: usize, max_iter: usize) -> KMeans1d {
    assert!(!sorted.is_empty() && k > 0, "k-means needs data and k >= 1");
    let n = sorted.len();
    // compensated prefix sums keep run means correctly rounded in practice
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push((0.0, 0.0));
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &v in sorted {
        let t = hi + v;
        lo += if hi.abs() >= v.abs() { (hi - t) + v } else { (v - t) + hi };
        hi = t;
        prefix.push((hi, lo));
    }

    let mut centers = quantile_init(sorted, k);
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        let next = cluster_ranges(sorted, &centers);
        iterations += 1;
        if next == ranges {
            break;
        }
        ranges = next;
        for (c, &(a, b)) in ranges.iter().enumerate() {
            if b > a {
                let sum = (prefix[b].0 - prefix[a].0) + (prefix[b].1 - prefix[a].1);
                centers[c] = sum / (b - a) as f64;
            }
        }
    }
    if ranges.is_empty() {
        ranges = cluster_ranges(sorted, &centers);
    }

    let sizes: Vec<usize> = ranges.iter().map(|&(a, b)| b - a).collect();
    let mut assignments = vec![0; n];
    for (c, &(a, b)) in ranges.iter().enumerate() {
        assignments[a..b].fill(c);
    }
    KMeans1d {
        centers,
        assignments,
        sizes,
        iterations,
    }
}

/// k-means on arbitrary-order values; sorts a copy (stable by position).
pub fn kmeans_1d(values: &[f64], k: usize, max_iter: usize) -> KMeans1d {
    if values.is_sorted_by(|a, b| a <= b) {
        return kmeans_1d_sorted(values, k, max_iter);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut km = kmeans_1d_sorted(&sorted, k, max_iter);
    let mut assignments = vec![0; values.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = km.assignments[pos];
    }
    km.assignments = assignments;
    km
}

/// `ranges[c]` is the run of sorted points nearest to center `c` (empty
/// runs are `(p, p)`). Only neighbours in center order compete; among equal
/// centers the lowest index takes everything.
fn cluster_ranges(sorted: &[f64], centers: &[f64]) -> Vec<(usize, usize)> {
    let n = sorted.len();
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    order.dedup_by(|b, a| centers[*a] == centers[*b]);
    // dedup keeps the first (lowest index) of each run of equal centers
    let mut ranges = vec![(n, n); centers.len()];
    let mut lo = 0;
    for pair in order.windows(2) {
        let (li, ri) = (pair[0], pair[1]);
        let (left, right) = (centers[li], centers[ri]);
        let split = lo
            + sorted[lo..].partition_point(|&x| {
                let (dl, dr) = ((x - left).abs(), (x - right).abs());
                dl < dr || (dl == dr && li < ri)
            });
        ranges[li] = (lo, split);
        lo = split;
    }
    ranges[*order.last().expect("k >= 1")] = (lo, n);
    ranges
}
