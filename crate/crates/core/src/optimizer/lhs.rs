//! Latin hypercube sampling on the unit cube.

use rand::seq::SliceRandom;
use rand::Rng;

/// `n` points in `[0,1]^d`: per dimension, a random permutation assigns each
/// point to one of the `n` equal strata, jittered uniformly within it.
pub fn lhs(n: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(n >= 1 && d >= 1, "lhs needs n >= 1 and d >= 1");
    let mut points = vec![vec![0.0; d]; n];
    for dim in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            point[dim] = (s as f64 + u) / n as f64;
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn strata_covered(points: &[Vec<f64>], dim: usize) -> bool {
        let n = points.len();
        let mut seen = vec![false; n];
        for p in points {
            let s = ((p[dim] * n as f64) as usize).min(n - 1);
            if seen[s] {
                return false;
            }
            seen[s] = true;
        }
        seen.iter().all(|&b| b)
    }

    #[test]
    fn four_by_two_hits_every_quartile() {
        let pts = lhs(4, 2, &mut rng::seeded(1));
        for dim in 0..2 {
            assert!(strata_covered(&pts, dim));
        }
    }

    #[test]
    fn single_point_in_unit_cube() {
        let pts = lhs(1, 5, &mut rng::seeded(2));
        assert_eq!(pts.len(), 1);
        assert!(pts[0].iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn fixed_seed_reproduces() {
        let a = lhs(9, 3, &mut rng::seeded(42));
        let b = lhs(9, 3, &mut rng::seeded(42));
        assert_eq!(a, b);
    }
}
