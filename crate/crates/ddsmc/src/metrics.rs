//! Distances between sample sets and between discrete distributions.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::{substream, Domain};
use crate::{Error, Result, Scalar};

pub const DEFAULT_PROJECTIONS: usize = 100;
pub const DEFAULT_PROJECTION_SEED: u64 = 1234;

/// `num` unit directions in `R^dim`, drawn from normalized Gaussians.
pub fn projection_directions(dim: usize, num: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..num)
        .map(|l| {
            let mut rng = substream(seed, 0, Domain::Projection, l as u64);
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|a| a / norm).collect();
                }
            }
        })
        .collect()
}

/// Squared 2-Wasserstein distance between two empirical measures on the line,
/// by matching quantile functions. Inputs must be sorted.
pub fn wasserstein2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    }
    // Walk the merged breakpoints k/n and l/m of both quantile functions.
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (a[i] - b[j]).powi(2) * (next - u);
        u = next;
        // Compare in integers so equal breakpoints advance together.
        match ((i + 1) * m).cmp(&((j + 1) * n)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    total
}

/// Sliced 2-Wasserstein distance along the given unit directions: the square
/// root of the mean squared one-dimensional distance.
pub fn sliced_wasserstein_with<T: Scalar>(
    s1: &[Vec<T>],
    s2: &[Vec<T>],
    directions: &[Vec<f64>],
) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::param("sample sets must be nonempty"));
    }
    if directions.is_empty() {
        return Err(Error::param("need at least one projection"));
    }
    let dim = s1[0].len();
    for x in s1.iter().chain(s2) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
    }
    let project = |s: &[Vec<T>], dir: &[f64]| {
        let mut p: Vec<f64> = s
            .iter()
            .map(|x| x.iter().zip(dir).map(|(a, d)| a.to_f64().unwrap() * d).sum())
            .collect();
        p.sort_by(f64::total_cmp);
        p
    };
    let mut total = 0.0;
    for dir in directions {
        if dir.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: dir.len(),
            });
        }
        total += wasserstein2_sq_sorted(&project(s1, dir), &project(s2, dir));
    }
    Ok((total / directions.len() as f64).sqrt())
}

/// Sliced 2-Wasserstein distance with `num_projections` random directions
/// drawn from `seed`.
pub fn sliced_wasserstein<T: Scalar>(
    s1: &[Vec<T>],
    s2: &[Vec<T>],
    num_projections: usize,
    seed: u64,
) -> Result<f64> {
    let dim = s1.first().map_or(0, Vec::len);
    sliced_wasserstein_with(s1, s2, &projection_directions(dim, num_projections, seed))
}

/// Total variation distance `0.5 * sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_are_zero() {
        let s: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i) as f64 * 0.01]).collect();
        assert_eq!(sliced_wasserstein(&s, &s, 100, 1234).unwrap(), 0.0);
    }

    #[test]
    fn translation_gives_shift_length_in_1d() {
        let a: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.1]).collect();
        let b: Vec<Vec<f64>> = a.iter().map(|x| vec![x[0] + 2.0]).collect();
        let d = sliced_wasserstein(&a, &b, 10, 7).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unequal_sizes_use_quantiles() {
        // {0, 1} vs {0, 0.5, 1}: quantiles differ by 0.5 on a third of [0,1]
        // in two places, squared 0.25 * (1/6 + 1/6).
        let w = wasserstein2_sq_sorted(&[0.0, 1.0], &[0.0, 0.5, 1.0]);
        assert!((w - 0.25 / 3.0).abs() < 1e-15);
        let w2 = wasserstein2_sq_sorted(&[1.0, 1.0, 1.0], &[0.0]);
        assert!((w2 - 1.0).abs() < 1e-15);
        // Replicating a set does not change its distribution.
        let a = [0.1, 0.4, 0.9];
        let aa = [0.1, 0.1, 0.4, 0.4, 0.9, 0.9];
        assert!(wasserstein2_sq_sorted(&a, &aa) < 1e-30);
    }

    #[test]
    fn directions_are_unit_and_seeded() {
        let d1 = projection_directions(5, 10, 3);
        assert_eq!(d1, projection_directions(5, 10, 3));
        assert_ne!(d1, projection_directions(5, 10, 4));
        for d in &d1 {
            assert!((d.iter().map(|a| a * a).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn rejects_mismatched_dims() {
        let a = vec![vec![0.0, 1.0]];
        let b = vec![vec![0.0]];
        assert!(sliced_wasserstein(&a, &b, 5, 1).is_err());
    }
}
