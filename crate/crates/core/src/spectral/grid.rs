//! Discretizations of the unit sphere and nearest-node lookup.

use std::f64::consts::{PI, TAU};

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::{substream, TAG_GRID};

/// Nodes on the unit sphere with equal quadrature weights.
///
/// * `d = 1`: the two points `+1, -1`.
/// * `d = 2`: `G` equiangular nodes starting at angle 0, so `e_1` is a node.
/// * `d = 3`: a Fibonacci lattice on the upper hemisphere plus antipodes.
/// * `d > 3`: a seeded cloud of normalized Gaussians plus antipodes.
///
/// Every grid is centrally symmetric: node `i + G/2` is `-node i`.
pub struct SphereGrid {
    pub d: usize,
    /// Row-major `G x d`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub seed: u64,
    locator: Locator,
}

enum Locator {
    Sign,
    Angle,
    Tree(Box<ImmutableKdTree<f64, 3>>),
    Scan,
}

impl std::fmt::Debug for SphereGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereGrid").field("d", &self.d).field("size", &self.len()).finish()
    }
}

impl SphereGrid {
    pub fn new(d: usize, g: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if d == 1 {
            return Ok(Self::finish(1, vec![1.0, -1.0], seed, Locator::Sign));
        }
        if g < 4 || g % 2 == 1 {
            return Err(Error::Config(format!("grid size must be even and at least 4, got {g}")));
        }
        let half = g / 2;
        let mut upper: Vec<f64> = Vec::with_capacity(half * d);
        match d {
            2 => {
                for k in 0..half {
                    let (s, c) = (TAU * k as f64 / g as f64).sin_cos();
                    upper.extend([c, s]);
                }
            }
            3 => {
                let golden = PI * (3.0 - 5f64.sqrt());
                for i in 0..half {
                    let z = 1.0 - (2 * i + 1) as f64 / g as f64;
                    let r = (1.0 - z * z).sqrt();
                    let (s, c) = (golden * i as f64).sin_cos();
                    upper.extend([r * c, r * s, z]);
                }
            }
            _ => {
                let mut rng = substream(seed, TAG_GRID, d as u64);
                for _ in 0..half {
                    let v: Vec<f64> = loop {
                        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        if dot(&v, &v) > 0.0 {
                            break v;
                        }
                    };
                    let n = dot(&v, &v).sqrt();
                    upper.extend(v.iter().map(|x| x / n));
                }
            }
        }
        let mut nodes = upper.clone();
        nodes.extend(upper.iter().map(|x| -x));
        let locator = match d {
            2 => Locator::Angle,
            3 => {
                let pts: Vec<[f64; 3]> = nodes.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
                let tree = ImmutableKdTree::new_from_slice(&pts)
                    .map_err(|e| Error::Config(format!("cannot index sphere grid: {e:?}")))?;
                Locator::Tree(Box::new(tree))
            }
            _ => Locator::Scan,
        };
        Ok(Self::finish(d, nodes, seed, locator))
    }

    fn finish(d: usize, nodes: Vec<f64>, seed: u64, locator: Locator) -> Self {
        let g = nodes.len() / d;
        Self { d, nodes, weights: vec![1.0 / g as f64; g], seed, locator }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.d..(i + 1) * self.d]
    }

    /// Index of the antipodal node.
    pub fn antipode(&self, i: usize) -> usize {
        let h = self.len() / 2;
        if i < h {
            i + h
        } else {
            i - h
        }
    }

    /// Nearest node to the unit vector `v`.
    pub fn nearest(&self, v: &[f64]) -> usize {
        match &self.locator {
            Locator::Sign => usize::from(v[0] < 0.0),
            Locator::Angle => {
                let g = self.len() as f64;
                // node i sits at angle 2 pi i / G, antipodes included
                let k = (v[1].atan2(v[0]) * g / TAU).round();
                k.rem_euclid(g) as usize % self.len()
            }
            Locator::Tree(tree) => {
                tree.query(&[v[0], v[1], v[2]]).nearest_one::<SquaredEuclidean<f64>>().execute().item as usize
            }
            Locator::Scan => {
                let mut best = (f64::NEG_INFINITY, 0);
                for (i, p) in self.nodes.chunks_exact(self.d).enumerate() {
                    let c = dot(p, v);
                    if c > best.0 {
                        best = (c, i);
                    }
                }
                best.1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::uniform_sphere;

    #[test]
    fn nodes_are_unit_and_weights_sum_to_one() {
        for (d, g) in [(1, 2), (2, 64), (3, 1000), (5, 200)] {
            let grid = SphereGrid::new(d, g, 3).unwrap();
            for i in 0..grid.len() {
                assert!((dot(grid.node(i), grid.node(i)).sqrt() - 1.0).abs() < 1e-12);
            }
            assert!((grid.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grids_are_centrally_symmetric() {
        for (d, g) in [(2, 10), (3, 50), (4, 30)] {
            let grid = SphereGrid::new(d, g, 0).unwrap();
            for i in 0..grid.len() {
                let j = grid.antipode(i);
                assert!(grid.node(i).iter().zip(grid.node(j)).all(|(a, b)| *a == -*b));
                assert_eq!(grid.nearest(grid.node(j)), j);
            }
        }
    }

    #[test]
    fn circle_nodes_are_equiangular() {
        let grid = SphereGrid::new(2, 12, 0).unwrap();
        assert_eq!(grid.node(0), [1.0, 0.0]);
        for i in 0..12 {
            let p = grid.node(i);
            let a = p[1].atan2(p[0]).rem_euclid(TAU);
            assert!((a - TAU * i as f64 / 12.0).abs() < 1e-12, "{i}: {a}");
        }
    }

    #[test]
    fn locators_agree_with_brute_force() {
        let mut rng = substream(1, 2, 3);
        for (d, g) in [(2, 64), (3, 400)] {
            let grid = SphereGrid::new(d, g, 0).unwrap();
            for _ in 0..2000 {
                let v = uniform_sphere(&mut rng, d);
                let got = grid.nearest(v.as_slice());
                let best = (0..grid.len()).map(|i| dot(grid.node(i), v.as_slice())).fold(f64::MIN, f64::max);
                assert!(dot(grid.node(got), v.as_slice()) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn odd_grid_is_rejected() {
        assert!(SphereGrid::new(2, 7, 0).is_err());
    }
}
