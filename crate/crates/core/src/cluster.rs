//! One-dimensional k-means helpers.

use rand::Rng;

/// K-means++ seeding. Returns at most `k` centers; fewer when the data has
/// fewer distinct values.
pub fn kmeans_pp<R: Rng>(xs: &[f64], k: usize, rng: &mut R) -> Vec<f64> {
    if xs.is_empty() || k == 0 {
        return Vec::new();
    }
    let first = xs[rng.random_range(0..xs.len())];
    let mut centers = vec![first];
    centers.extend(kmeans_pp_extend(xs, &centers, k - 1, rng));
    centers
}

/// Draws up to `extra` further centers by D^2 sampling against `existing`.
pub fn kmeans_pp_extend<R: Rng>(xs: &[f64], existing: &[f64], extra: usize, rng: &mut R) -> Vec<f64> {
    let mut d2: Vec<f64> = xs
        .iter()
        .map(|x| existing.iter().map(|c| (x - c).powi(2)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut added = Vec::new();
    while added.len() < extra {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = xs.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // Floating round-off can leave `pick` on a zero-weight point.
        if d2[pick] <= 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).unwrap();
        }
        let c = xs[pick];
        added.push(c);
        for (i, x) in xs.iter().enumerate() {
            d2[i] = d2[i].min((x - c).powi(2));
        }
    }
    added
}

/// Index of the nearest center; ties go to the lower index.
pub fn nearest(x: f64, centers: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = (x - c).abs();
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

/// Lloyd iterations from the given centroids. Empty clusters keep their
/// centroid. Returns the final centroids and per-point assignments.
pub fn lloyd(xs: &[f64], init: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, Vec<usize>) {
    let mut centers = init.to_vec();
    let mut assign: Vec<usize> = xs.iter().map(|&x| nearest(x, &centers)).collect();
    for _ in 0..max_iter {
        let mut sum = vec![0.0; centers.len()];
        let mut cnt = vec![0usize; centers.len()];
        for (x, &a) in xs.iter().zip(&assign) {
            sum[a] += x;
            cnt[a] += 1;
        }
        let mut moved: f64 = 0.0;
        for j in 0..centers.len() {
            if cnt[j] > 0 {
                let c = sum[j] / cnt[j] as f64;
                moved = moved.max((c - centers[j]).abs());
                centers[j] = c;
            }
        }
        for (i, &x) in xs.iter().enumerate() {
            assign[i] = nearest(x, &centers);
        }
        if moved <= tol {
            break;
        }
    }
    (centers, assign)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pp_stops_at_distinct_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = kmeans_pp(&[1.0, 1.0, 2.0, 2.0], 5, &mut rng);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn lloyd_separates_two_groups() {
        let xs = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let (c, a) = lloyd(&xs, &[0.0, 0.1], 50, 1e-6);
        assert!((c[0] - 0.1).abs() < 1e-12 || (c[1] - 0.1).abs() < 1e-12);
        assert_eq!(a[0], a[2]);
        assert_ne!(a[0], a[3]);
    }
}
