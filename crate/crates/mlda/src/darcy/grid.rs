//! Uniform vertex-centered grids on the unit square. Node (i, j) sits at
//! (i·h, j·h) with h = 1/(m−1); the node index is j·m + i (x fastest).
//! Level sizes follow m_ℓ = 4^ℓ (m_0 − 1) + 1, so consecutive levels nest
//! with a 4:1 index stride and all coarse nodes coincide with fine nodes.

use nalgebra::DVector;

use crate::error::{MldaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLevel {
    pub level: usize,
    /// Nodes per side.
    pub m: usize,
}

impl GridLevel {
    pub fn new(level: usize, m: usize) -> Result<Self> {
        if m < 3 {
            return Err(MldaError::config(format!(
                "grid needs at least 3 nodes per side, got {m}"
            )));
        }
        Ok(Self { level, m })
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.m * self.m
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.m && j < self.m);
        j * self.m + i
    }

    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.spacing();
        (i as f64 * h, j as f64 * h)
    }

    /// 1D trapezoid quadrature weights: h·[½, 1, …, 1, ½].
    pub fn weights_1d(&self) -> DVector<f64> {
        let h = self.spacing();
        DVector::from_fn(self.m, |i, _| {
            if i == 0 || i == self.m - 1 {
                0.5 * h
            } else {
                h
            }
        })
    }

    /// 2D trapezoid weights over all nodes, tensor product of the 1D rule.
    pub fn quadrature_weights(&self) -> DVector<f64> {
        let w1 = self.weights_1d();
        DVector::from_fn(self.n_nodes(), |n, _| {
            let i = n % self.m;
            let j = n / self.m;
            w1[i] * w1[j]
        })
    }

    /// Index stride mapping this (coarse) grid's nodes onto a finer one.
    pub fn stride_to(&self, fine: &GridLevel) -> Result<usize> {
        let (mc, mf) = (self.m - 1, fine.m - 1);
        if mf % mc != 0 {
            return Err(MldaError::config(format!(
                "grids with {} and {} nodes per side do not nest",
                self.m, fine.m
            )));
        }
        Ok(mf / mc)
    }
}

/// Levels 0 (coarsest, m_0 nodes per side) through L, m_ℓ = 4^ℓ(m_0−1)+1.
pub fn build_grid_hierarchy(m0: usize, n_levels: usize) -> Result<Vec<GridLevel>> {
    if n_levels == 0 {
        return Err(MldaError::config("hierarchy needs at least one level"));
    }
    if m0 < 3 {
        return Err(MldaError::config(format!(
            "coarsest grid needs at least 3 nodes per side, got {m0}"
        )));
    }
    (0..n_levels)
        .map(|level| {
            let factor = 4usize.checked_pow(level as u32).ok_or_else(|| {
                MldaError::config(format!("grid refinement overflows at level {level}"))
            })?;
            let m = factor
                .checked_mul(m0 - 1)
                .and_then(|v| v.checked_add(1))
                .ok_or_else(|| {
                    MldaError::config(format!("grid refinement overflows at level {level}"))
                })?;
            GridLevel::new(level, m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hierarchy_follows_refinement_formula() {
        let grids = build_grid_hierarchy(5, 3).unwrap();
        assert_eq!(
            grids.iter().map(|g| g.m).collect::<Vec<_>>(),
            vec![5, 17, 65]
        );
        assert_eq!(grids[0].stride_to(&grids[2]).unwrap(), 16);
        assert_eq!(grids[1].stride_to(&grids[2]).unwrap(), 4);
    }

    #[test]
    fn weights_sum_to_domain_measure() {
        let grid = GridLevel::new(0, 9).unwrap();
        let w1: f64 = grid.weights_1d().sum();
        assert!((w1 - 1.0).abs() < 1e-14);
        let w2: f64 = grid.quadrature_weights().sum();
        assert!((w2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn nodes_nest_exactly() {
        let grids = build_grid_hierarchy(5, 2).unwrap();
        let stride = grids[0].stride_to(&grids[1]).unwrap();
        for j in 0..grids[0].m {
            for i in 0..grids[0].m {
                let (xc, yc) = grids[0].node_coords(i, j);
                let (xf, yf) = grids[1].node_coords(i * stride, j * stride);
                assert!((xc - xf).abs() < 1e-15 && (yc - yf).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(build_grid_hierarchy(2, 3).is_err());
        assert!(build_grid_hierarchy(5, 0).is_err());
        let a = GridLevel::new(0, 5).unwrap();
        let b = GridLevel::new(1, 12).unwrap();
        assert!(a.stride_to(&b).is_err(), "11 not divisible by 4");
    }
}
