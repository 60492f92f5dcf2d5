//! Pointwise pressure observations via bilinear interpolation on the grid.
//! The default layout is the interior lattice {a/(G+1)}×{b/(G+1)}, a,b = 1..G
//! (G = 5 gives the 25 points {1/6, …, 5/6}²), ordered with x fastest.

use nalgebra::DVector;

use super::grid::GridLevel;
use crate::error::{MldaError, Result};

/// Precomputed interpolation stencils: each observation point reads at most
/// four nodes with fixed bilinear weights.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    pub points: Vec<(f64, f64)>,
    n_nodes: usize,
    stencils: Vec<[(usize, f64); 4]>,
}

impl ObservationOperator {
    pub fn new(grid: &GridLevel, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(MldaError::config("observation layout has no points"));
        }
        let m = grid.m;
        let h = grid.spacing();
        let mut stencils = Vec::with_capacity(points.len());
        for &(x, y) in &points {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(MldaError::config(format!(
                    "observation point ({x}, {y}) lies outside the unit square"
                )));
            }
            let cell = |c: f64| -> (usize, f64) {
                let scaled = c / h;
                let mut i0 = scaled.floor() as usize;
                if i0 >= m - 1 {
                    i0 = m - 2; // clamp so x = 1 interpolates within the last cell
                }
                (i0, scaled - i0 as f64)
            };
            let (i0, fx) = cell(x);
            let (j0, fy) = cell(y);
            let node = |i: usize, j: usize| j * m + i;
            stencils.push([
                (node(i0, j0), (1.0 - fx) * (1.0 - fy)),
                (node(i0 + 1, j0), fx * (1.0 - fy)),
                (node(i0, j0 + 1), (1.0 - fx) * fy),
                (node(i0 + 1, j0 + 1), fx * fy),
            ]);
        }
        Ok(Self {
            points,
            n_nodes: grid.n_nodes(),
            stencils,
        })
    }

    /// The standard G×G interior lattice.
    pub fn lattice(grid: &GridLevel, per_axis: usize) -> Result<Self> {
        if per_axis == 0 {
            return Err(MldaError::config("observation lattice needs >= 1 point per axis"));
        }
        let denom = (per_axis + 1) as f64;
        let mut points = Vec::with_capacity(per_axis * per_axis);
        for b in 1..=per_axis {
            for a in 1..=per_axis {
                points.push((a as f64 / denom, b as f64 / denom));
            }
        }
        Self::new(grid, points)
    }

    pub fn n_observations(&self) -> usize {
        self.stencils.len()
    }
}

/// Apply the operator to a nodal pressure field.
pub fn observe(pressure: &DVector<f64>, operator: &ObservationOperator) -> Result<DVector<f64>> {
    if pressure.len() != operator.n_nodes {
        return Err(MldaError::config(format!(
            "pressure field has {} nodes, operator expects {}",
            pressure.len(),
            operator.n_nodes
        )));
    }
    Ok(DVector::from_fn(operator.n_observations(), |p, _| {
        operator.stencils[p]
            .iter()
            .map(|&(node, w)| w * pressure[node])
            .sum()
    }))
}
