use super::{restrict, space_dist, ParabolicCylinder, Point, SpaceTimeField};
use crate::error::{param, Error, Result};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// Regions with at most this many nodes are evaluated over all node pairs.
pub const EXACT_NODE_LIMIT: usize = 20_000;
/// Number of pairs drawn for larger regions.
pub const SUBSAMPLE_PAIRS: usize = 1_000_000;
const SUBSAMPLE_SEED: u64 = 0x5eed_401d;

/// Denominator used in the difference quotients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HolderMode {
    /// `d^α` with `d` the Euclidean distance in space-time.
    Isotropic,
    /// `|x - y|^α + |t - s|^{α/2}`.
    Parabolic,
    /// `(|x - y| + |t - s|^{1/2})^α`, the parabolic distance raised to `α`.
    ParabolicDistance,
}

impl HolderMode {
    pub fn denominator(self, a: &Point, ta: f64, b: &Point, tb: f64, dim: usize, alpha: f64) -> f64 {
        let dx = space_dist(a, b, dim);
        let dt = (ta - tb).abs();
        match self {
            HolderMode::Isotropic => (dx * dx + dt * dt).sqrt().powf(alpha),
            HolderMode::Parabolic => dx.powf(alpha) + dt.powf(alpha / 2.0),
            HolderMode::ParabolicDistance => (dx + dt.sqrt()).powf(alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub sup: f64,
    pub seminorm: f64,
    /// `sup + seminorm`.
    pub norm: f64,
    pub nodes: usize,
    pub pairs: usize,
    /// False when the seminorm came from the stratified pair subsample.
    pub exact: bool,
}

/// One sample of a (possibly vector-valued) function at a space-time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Point,
    pub t: f64,
    pub value: Vec<f64>,
}

fn vec_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Hölder norm of sampled values. Vector values use the Euclidean norm of differences.
pub fn holder_from_samples(samples: &[Sample], dim: usize, alpha: f64, mode: HolderMode) -> Result<HolderEstimate> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(param("alpha", format!("must lie in (0, 1], got {alpha}")));
    }
    if samples.len() < 2 {
        return Err(Error::EmptyRegion(format!("need at least 2 samples, got {}", samples.len())));
    }
    let sup = samples.iter().map(|s| s.value.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let quotient = |a: &Sample, b: &Sample| -> f64 {
        let den = mode.denominator(&a.x, a.t, &b.x, b.t, dim, alpha);
        if den > 0.0 {
            vec_dist(&a.value, &b.value) / den
        } else {
            0.0
        }
    };
    let m = samples.len();
    let (seminorm, pairs, exact) = if m <= EXACT_NODE_LIMIT {
        let mut best: f64 = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                best = best.max(quotient(&samples[i], &samples[j]));
            }
        }
        (best, m * (m - 1) / 2, true)
    } else {
        // each first index is drawn from its own stratum so that every node is visited
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
        let mut best: f64 = 0.0;
        for k in 0..SUBSAMPLE_PAIRS {
            let lo = k * m / SUBSAMPLE_PAIRS;
            let hi = ((k + 1) * m / SUBSAMPLE_PAIRS).max(lo + 1);
            let i = rng.random_range(lo..hi);
            let j = rng.random_range(0..m);
            best = best.max(quotient(&samples[i], &samples[j]));
        }
        (best, SUBSAMPLE_PAIRS, false)
    };
    Ok(HolderEstimate { sup, seminorm, norm: sup + seminorm, nodes: m, pairs, exact })
}

/// Discrete Hölder norm of `u` over the nodes in `region`.
pub fn discrete_holder_norm(u: &SpaceTimeField, alpha: f64, region: &ParabolicCylinder, mode: HolderMode) -> Result<HolderEstimate> {
    let g = u.grid();
    let view = restrict(g, region);
    if view.len() < 2 {
        return Err(Error::EmptyRegion(format!(
            "cylinder of radius {} at ({:?}, {}) holds {} node(s)",
            region.r,
            &region.center[..g.dim()],
            region.t,
            view.len()
        )));
    }
    let samples: Vec<Sample> = view
        .nodes
        .iter()
        .map(|&(n, s)| Sample { x: g.coords(s), t: g.t(n), value: vec![u.get(n, s)] })
        .collect();
    holder_from_samples(&samples, g.dim(), alpha, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    #[test]
    fn constant_field_has_zero_seminorm() {
        let g = Grid::new(1, -1.0, 1.0, 11, 0.0, 1.0, 11).unwrap();
        let u = SpaceTimeField::from_fn(g, |_, _| 7.0).unwrap();
        let q = ParabolicCylinder::new([0.0, 0.0], 0.5, 0.6).unwrap();
        for mode in [HolderMode::Isotropic, HolderMode::Parabolic] {
            let h = discrete_holder_norm(&u, 0.5, &q, mode).unwrap();
            assert_eq!(h.seminorm, 0.0);
            assert_eq!(h.norm, 7.0);
            assert!(h.exact);
        }
    }

    #[test]
    fn linear_in_x_matches_brute_force_on_five_by_five() {
        let g = Grid::new(1, 0.0, 1.0, 5, 0.0, 1.0, 5).unwrap();
        let u = SpaceTimeField::from_fn(g, |p, _| p[0]).unwrap();
        let q = ParabolicCylinder::new([0.5, 0.0], 0.5, f64::INFINITY).unwrap();
        let h = discrete_holder_norm(&u, 0.5, &q, HolderMode::Isotropic).unwrap();
        let mut brute: f64 = 0.0;
        for a in 0..25 {
            for b in 0..25 {
                let (xa, ta, xb, tb) = (g.x(a % 5), g.t(a / 5), g.x(b % 5), g.t(b / 5));
                let d = ((xa - xb).powi(2) + (ta - tb).powi(2)).sqrt();
                if d > 0.0 {
                    brute = brute.max((xa - xb).abs() / d.sqrt());
                }
            }
        }
        assert_eq!(h.seminorm, brute);
        // farthest purely spatial pair gives |x - y|^{1/2} = 1
        assert!((h.seminorm - 1.0).abs() < 1e-15);
        assert_eq!(h.sup, 1.0);
    }

    #[test]
    fn parabolic_mode_on_time_field_gives_root_width() {
        let g = Grid::new(1, -1.0, 1.0, 9, 0.0, 1.0, 17).unwrap();
        let u = SpaceTimeField::from_fn(g, |_, t| t).unwrap();
        let q = ParabolicCylinder::new([0.0, 0.0], 0.5, f64::INFINITY).unwrap();
        let h = discrete_holder_norm(&u, 1.0, &q, HolderMode::Parabolic).unwrap();
        assert!((h.seminorm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_region_is_an_error() {
        let g = Grid::new(1, -1.0, 1.0, 9, 0.0, 1.0, 9).unwrap();
        let u = SpaceTimeField::zeros(g);
        let q = ParabolicCylinder::new([0.1, 0.0], 0.1, 1e-3).unwrap();
        assert!(matches!(discrete_holder_norm(&u, 0.5, &q, HolderMode::Parabolic), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn large_regions_use_subsample() {
        let g = Grid::new(2, -1.0, 1.0, 41, 0.0, 1.0, 21).unwrap();
        let u = SpaceTimeField::from_fn(g, |p, t| p[0] + 0.5 * p[1] - t).unwrap();
        let q = ParabolicCylinder::new([0.0, 0.0], 0.5, f64::INFINITY).unwrap();
        let h = discrete_holder_norm(&u, 1.0, &q, HolderMode::Isotropic).unwrap();
        assert!(!h.exact);
        assert_eq!(h.pairs, SUBSAMPLE_PAIRS);
        // Lipschitz constant of the linear function is |(1, 0.5, -1)| = 1.5
        assert!(h.seminorm <= 1.5 + 1e-12 && h.seminorm > 1.3);
    }

    proptest! {
        #[test]
        fn parabolic_modes_within_factor_two(
            coeffs in proptest::collection::vec(-2.0..2.0f64, 6),
            alpha in 0.1..0.95f64,
        ) {
            let g = Grid::new(1, -1.0, 1.0, 9, 0.0, 1.0, 9).unwrap();
            let u = SpaceTimeField::from_fn(g, |p, t| {
                coeffs[0] * (2.0 * p[0]).sin() + coeffs[1] * t.sqrt() + coeffs[2] * p[0].abs()
                    + coeffs[3] * (3.0 * t).cos() * p[0] + coeffs[4] * p[0] * p[0] + coeffs[5]
            }).unwrap();
            let q = ParabolicCylinder::new([0.0, 0.0], 0.5, f64::INFINITY).unwrap();
            let sum = discrete_holder_norm(&u, alpha, &q, HolderMode::Parabolic).unwrap().seminorm;
            let dist = discrete_holder_norm(&u, alpha, &q, HolderMode::ParabolicDistance).unwrap().seminorm;
            // (a + b)^α <= a^α + b^α <= 2 (a + b)^α
            prop_assert!(sum <= dist * (1.0 + 1e-12));
            prop_assert!(dist <= 2.0 * sum * (1.0 + 1e-12));
        }
    }
}
