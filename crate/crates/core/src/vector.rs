//! Small dense-vector helpers shared by the estimator and the optimizers.

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, v: &mut [f64]) {
    for x in v {
        *x *= alpha;
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sums equal-length vectors along a fixed binary tree (split at the
/// midpoint), so the rounding pattern depends only on `items.len()`.
pub fn pairwise_sum(items: &[Vec<f64>], dim: usize) -> Vec<f64> {
    match items.len() {
        0 => vec![0.0; dim],
        1 => items[0].clone(),
        n => {
            let (lo, hi) = items.split_at(n / 2);
            let mut left = pairwise_sum(lo, dim);
            let right = pairwise_sum(hi, dim);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}
