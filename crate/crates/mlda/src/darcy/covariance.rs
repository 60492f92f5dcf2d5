//! Squared-exponential covariance and its truncated Karhunen–Loève
//! decomposition. The expansion is computed once on the finest grid and
//! restricted to coarser grids by nodal injection, so a single θ describes
//! the same random field on every level.
//!
//! The discrete KL problem is the generalized eigenproblem C W φ = μ φ with
//! trapezoid quadrature weights W and normalization φᵀWφ = 1, solved via the
//! symmetric form S = W^{1/2} C W^{1/2}.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::grid::GridLevel;
use crate::error::{MldaError, Result};
use crate::kernel::ParameterVector;

/// c(x, y) = σ² exp(−‖x−y‖² / (2λ²)) sampled at all node pairs.
pub fn build_covariance_matrix(grid: &GridLevel, sigma: f64, lambda: f64) -> Result<DMatrix<f64>> {
    validate_kernel_params(sigma, lambda)?;
    let m = grid.m;
    let h = grid.spacing();
    let n = grid.n_nodes();
    let inv_two_lambda2 = 1.0 / (2.0 * lambda * lambda);
    let var = sigma * sigma;
    let mut cov = DMatrix::zeros(n, n);
    for b in 0..n {
        let (ib, jb) = (b % m, b / m);
        for a in 0..n {
            let (ia, ja) = (a % m, a / m);
            let dx = (ia as f64 - ib as f64) * h;
            let dy = (ja as f64 - jb as f64) * h;
            cov[(a, b)] = var * (-(dx * dx + dy * dy) * inv_two_lambda2).exp();
        }
    }
    Ok(cov)
}

fn validate_kernel_params(sigma: f64, lambda: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MldaError::config(format!("sigma must be positive, got {sigma}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(MldaError::config(format!(
            "correlation length must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Leading eigenpairs of the field: eigenvalues in non-increasing order and
/// modes as columns of an n×R matrix, W-orthonormal (φᵀWφ = 1).
#[derive(Debug, Clone)]
pub struct KlBasis {
    /// Nodes per side of the grid the modes are sampled on.
    pub m: usize,
    pub eigenvalues: DVector<f64>,
    pub modes: DMatrix<f64>,
}

impl KlBasis {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Fix the sign so the first component exceeding a relative threshold is
/// positive; keeps eigenvectors deterministic across solvers.
fn fix_sign(column: &mut DVector<f64>) {
    let max_abs = column.amax();
    if max_abs == 0.0 {
        return;
    }
    let tol = 1e-8 * max_abs;
    for &v in column.iter() {
        if v.abs() > tol {
            if v < 0.0 {
                *column *= -1.0;
            }
            return;
        }
    }
}

/// Dense-matrix KL: eigendecomposition of W^{1/2} C W^{1/2}, back-transformed
/// to W-orthonormal modes. Cubic in the node count — intended for coarse
/// grids and as the reference for the tensor fast path.
pub fn kl_decompose(
    covariance: &DMatrix<f64>,
    weights: &DVector<f64>,
    n_modes: usize,
) -> Result<KlBasis> {
    let n = weights.len();
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(MldaError::config("covariance/weight dimension mismatch"));
    }
    if n_modes == 0 || n_modes > n {
        return Err(MldaError::config(format!(
            "requested {n_modes} modes from an {n}-node grid"
        )));
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(MldaError::config("quadrature weights must be positive"));
    }
    let sqrt_w = weights.map(f64::sqrt);
    let mut s = covariance.clone();
    for b in 0..n {
        for a in 0..n {
            s[(a, b)] *= sqrt_w[a] * sqrt_w[b];
        }
    }
    // Symmetrize against round-off before the eigensolver.
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut eigenvalues = DVector::zeros(n_modes);
    let mut modes = DMatrix::zeros(n, n_modes);
    for (r, &src) in order.iter().take(n_modes).enumerate() {
        let lambda = eig.eigenvalues[src];
        if lambda <= 0.0 {
            return Err(MldaError::numerical(
                "kl_decompose",
                format!("non-positive eigenvalue {lambda} at mode {r}"),
            ));
        }
        eigenvalues[r] = lambda;
        let mut phi = DVector::from_fn(n, |a, _| eig.eigenvectors[(a, src)] / sqrt_w[a]);
        fix_sign(&mut phi);
        modes.set_column(r, &phi);
    }
    let m = (n as f64).sqrt().round() as usize;
    Ok(KlBasis {
        m,
        eigenvalues,
        modes,
    })
}

/// One-dimensional eigenpairs of exp(−Δ²/(2λ²)) on the grid's 1D rule,
/// W-orthonormal, all m of them, sorted non-increasing.
///
/// The smooth kernel is numerically rank-deficient: trailing eigenvalues sit
/// at ±machine-epsilon. They are clamped to zero here — the tensor selection
/// below never picks them while genuinely positive products remain, and it
/// reports an error if a zero would be selected.
fn kl_decompose_1d(grid: &GridLevel, lambda: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = grid.m;
    let h = grid.spacing();
    let w = grid.weights_1d();
    let sqrt_w = w.map(f64::sqrt);
    let inv_two_lambda2 = 1.0 / (2.0 * lambda * lambda);
    let mut s = DMatrix::zeros(m, m);
    for b in 0..m {
        for a in 0..m {
            let d = (a as f64 - b as f64) * h;
            s[(a, b)] = (-d * d * inv_two_lambda2).exp() * sqrt_w[a] * sqrt_w[b];
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut mu = DVector::zeros(m);
    let mut psi = DMatrix::zeros(m, m);
    for (r, &src) in order.iter().enumerate() {
        mu[r] = eig.eigenvalues[src].max(0.0);
        let mut col = DVector::from_fn(m, |a, _| eig.eigenvectors[(a, src)] / sqrt_w[a]);
        fix_sign(&mut col);
        psi.set_column(r, &col);
    }
    Ok((mu, psi))
}

/// Tensor-product KL for the separable squared-exponential kernel:
/// C = σ² C₁ ⊗ C₁, so 2D eigenvalues are σ²·μ_a·μ_b with modes
/// ψ_a(x)ψ_b(y). Only the 1D problem (m×m) is ever solved densely.
///
/// The top R products all lie in the leading K×K block with K = min(m, R):
/// if a ≥ R then the a+1 products μ_{a'}·μ_b (a' ≤ a) are all at least
/// μ_a·μ_b, pushing its rank past R. Ties (μ_aμ_b = μ_bμ_a bitwise, since
/// multiplication commutes) are broken by row-major (a, b) generation order
/// under a stable sort, keeping the basis deterministic.
pub fn kl_decompose_tensor(
    grid: &GridLevel,
    sigma: f64,
    lambda: f64,
    n_modes: usize,
) -> Result<KlBasis> {
    validate_kernel_params(sigma, lambda)?;
    let m = grid.m;
    let n = grid.n_nodes();
    if n_modes == 0 || n_modes > n {
        return Err(MldaError::config(format!(
            "requested {n_modes} modes from an {n}-node grid"
        )));
    }
    let (mu, psi) = kl_decompose_1d(grid, lambda)?;
    let var = sigma * sigma;

    let k = m.min(n_modes);
    let mut products: Vec<(usize, f64)> = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            products.push((a * k + b, var * mu[a] * mu[b]));
        }
    }
    products.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());

    let mut eigenvalues = DVector::zeros(n_modes);
    let mut modes = DMatrix::zeros(n, n_modes);
    for (r, &(code, value)) in products.iter().take(n_modes).enumerate() {
        if value <= 0.0 {
            return Err(MldaError::numerical(
                "kl_decompose_tensor",
                format!(
                    "only {r} of the requested {n_modes} modes are numerically \
                     resolvable at this grid and correlation length"
                ),
            ));
        }
        let (a, b) = (code / k, code % k);
        eigenvalues[r] = value;
        // φ_{ab}(x_i, y_j) = ψ_a(x_i)·ψ_b(y_j); node index j·m + i.
        let mut phi = DVector::zeros(n);
        for j in 0..m {
            let pj = psi[(j, b)];
            for i in 0..m {
                phi[j * m + i] = psi[(i, a)] * pj;
            }
        }
        fix_sign(&mut phi);
        modes.set_column(r, &phi);
    }
    Ok(KlBasis {
        m,
        eigenvalues,
        modes,
    })
}

/// Sample the basis at the coarse grid's nodes (which coincide with fine
/// nodes). Eigenvalues are unchanged: the restricted columns represent the
/// same L²-normalized eigenfunctions, merely tabulated on fewer points.
pub fn restrict_basis(basis: &KlBasis, fine: &GridLevel, coarse: &GridLevel) -> Result<KlBasis> {
    if basis.m != fine.m {
        return Err(MldaError::config(format!(
            "basis is sampled on an {}-node-per-side grid, not {}",
            basis.m, fine.m
        )));
    }
    let stride = coarse.stride_to(fine)?;
    let mc = coarse.m;
    let r = basis.n_modes();
    let mut modes = DMatrix::zeros(mc * mc, r);
    for col in 0..r {
        for j in 0..mc {
            for i in 0..mc {
                modes[(j * mc + i, col)] =
                    basis.modes[((j * stride) * fine.m + i * stride, col)];
            }
        }
    }
    Ok(KlBasis {
        m: mc,
        eigenvalues: basis.eigenvalues.clone(),
        modes,
    })
}

/// log k(x) = Σ_r √λ_r θ_r φ_r(x) as a nodal vector.
pub fn log_permeability_field(basis: &KlBasis, theta: &ParameterVector) -> Result<DVector<f64>> {
    if theta.len() != basis.n_modes() {
        return Err(MldaError::config(format!(
            "theta has {} entries but the basis holds {} modes",
            theta.len(),
            basis.n_modes()
        )));
    }
    let scaled = DVector::from_fn(theta.len(), |r, _| basis.eigenvalues[r].sqrt() * theta[r]);
    Ok(&basis.modes * scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::darcy::grid::build_grid_hierarchy;
    use rand::SeedableRng;

    const SIGMA: f64 = 2.0;
    const LAMBDA: f64 = 0.3;

    #[test]
    fn covariance_is_symmetric_with_constant_diagonal() {
        let grid = GridLevel::new(0, 7).unwrap();
        let c = build_covariance_matrix(&grid, SIGMA, LAMBDA).unwrap();
        for a in 0..c.nrows() {
            assert_eq!(c[(a, a)], SIGMA * SIGMA);
            for b in 0..a {
                assert_eq!(c[(a, b)], c[(b, a)]);
            }
        }
        // Distance 1 apart: correlation exp(-1/(2·0.09)) = exp(-5.5...).
        let far = c[(0, grid.m - 1)];
        let expected = SIGMA * SIGMA * (-1.0 / (2.0 * LAMBDA * LAMBDA)).exp();
        assert!((far - expected).abs() < 1e-15);
    }

    #[test]
    fn dense_modes_are_weight_orthonormal() {
        let grid = GridLevel::new(0, 9).unwrap();
        let c = build_covariance_matrix(&grid, SIGMA, LAMBDA).unwrap();
        let w = grid.quadrature_weights();
        let basis = kl_decompose(&c, &w, 12).unwrap();
        for p in 0..12 {
            for q in 0..=p {
                let ip: f64 = (0..w.len())
                    .map(|a| basis.modes[(a, p)] * w[a] * basis.modes[(a, q)])
                    .sum();
                let expected = if p == q { 1.0 } else { 0.0 };
                assert!(
                    (ip - expected).abs() < 1e-9,
                    "W-inner product ({p},{q}) = {ip}"
                );
            }
        }
    }

    #[test]
    fn dense_satisfies_generalized_eigen_equation() {
        let grid = GridLevel::new(0, 9).unwrap();
        let c = build_covariance_matrix(&grid, SIGMA, LAMBDA).unwrap();
        let w = grid.quadrature_weights();
        let basis = kl_decompose(&c, &w, 6).unwrap();
        for r in 0..6 {
            let phi = basis.modes.column(r);
            let wphi = DVector::from_fn(w.len(), |a, _| w[a] * phi[a]);
            let lhs = &c * wphi;
            let scale = basis.eigenvalues[r] * phi.amax();
            let err = (&lhs - basis.eigenvalues[r] * phi).amax();
            assert!(err < 1e-9 * scale.max(1.0), "mode {r}: residual {err}");
        }
    }

    #[test]
    fn tensor_matches_dense_on_coarse_grids() {
        for m in [5usize, 9, 17] {
            let grid = GridLevel::new(0, m).unwrap();
            let c = build_covariance_matrix(&grid, SIGMA, LAMBDA).unwrap();
            let w = grid.quadrature_weights();
            let r = 8;
            let dense = kl_decompose(&c, &w, r).unwrap();
            let tensor = kl_decompose_tensor(&grid, SIGMA, LAMBDA, r).unwrap();
            for k in 0..r {
                let rel = (dense.eigenvalues[k] - tensor.eigenvalues[k]).abs()
                    / dense.eigenvalues[k];
                assert!(rel < 1e-9, "m={m} eigenvalue {k}: rel err {rel}");
            }
            // Compare total projectors Φ Λ Φᵀ (basis-independent even under
            // eigenvalue ties, unlike individual sign-fixed columns).
            let recon = |b: &KlBasis| {
                let lam = DMatrix::from_diagonal(&b.eigenvalues);
                &b.modes * lam * b.modes.transpose()
            };
            let diff = (recon(&dense) - recon(&tensor)).amax();
            assert!(diff < 1e-8 * SIGMA * SIGMA, "m={m}: projector diff {diff}");
        }
    }

    #[test]
    fn tensor_eigenvalues_never_increase() {
        let grid = GridLevel::new(2, 65).unwrap();
        let basis = kl_decompose_tensor(&grid, SIGMA, LAMBDA, 24).unwrap();
        for r in 1..24 {
            assert!(
                basis.eigenvalues[r] <= basis.eigenvalues[r - 1],
                "eigenvalue {r} increased"
            );
            assert!(basis.eigenvalues[r] > 0.0);
        }
    }

    #[test]
    fn eigenvalue_sum_approaches_total_variance() {
        // Σ over all n modes of λ_r = trace(W^{1/2} C W^{1/2}) = σ²·Σw = σ².
        let grid = GridLevel::new(0, 9).unwrap();
        let n = grid.n_nodes();
        let basis = kl_decompose_tensor(&grid, SIGMA, LAMBDA, n).unwrap();
        let total: f64 = basis.eigenvalues.iter().sum();
        assert!((total - SIGMA * SIGMA).abs() < 1e-10, "trace identity: {total}");
    }

    #[test]
    fn restriction_matches_fine_values_exactly() {
        let grids = build_grid_hierarchy(5, 3).unwrap();
        let fine = kl_decompose_tensor(&grids[2], SIGMA, LAMBDA, 10).unwrap();
        let mid = restrict_basis(&fine, &grids[2], &grids[1]).unwrap();
        let coarse = restrict_basis(&fine, &grids[2], &grids[0]).unwrap();
        assert_eq!(mid.eigenvalues, fine.eigenvalues);
        // Restriction composes: restricting the restriction equals
        // restricting straight to the coarsest grid.
        let coarse_via_mid = restrict_basis(&mid, &grids[1], &grids[0]).unwrap();
        assert_eq!(coarse_via_mid.modes, coarse.modes);
        let s02 = grids[0].stride_to(&grids[2]).unwrap();
        for col in 0..10 {
            for j in 0..grids[0].m {
                for i in 0..grids[0].m {
                    let c = coarse.modes[(j * grids[0].m + i, col)];
                    let f = fine.modes[((j * s02) * grids[2].m + i * s02, col)];
                    assert_eq!(c, f);
                }
            }
        }
    }

    #[test]
    fn field_variance_matches_truncated_spectrum() {
        // Var[log k(x)] = Σ_r λ_r φ_r(x)²; check against a Monte Carlo
        // estimate over prior draws of θ.
        use rand_distr::{Distribution, StandardNormal};
        let grid = GridLevel::new(0, 5).unwrap();
        let r = 12;
        let basis = kl_decompose_tensor(&grid, SIGMA, LAMBDA, r).unwrap();
        let node = grid.node_index(2, 1);
        let exact: f64 = (0..r)
            .map(|k| basis.eigenvalues[k] * basis.modes[(node, k)].powi(2))
            .sum();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let n_draws = 20000;
        let mut sum_sq = 0.0;
        for _ in 0..n_draws {
            let theta =
                ParameterVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
            let field = log_permeability_field(&basis, &theta).unwrap();
            sum_sq += field[node] * field[node];
        }
        let mc = sum_sq / n_draws as f64;
        // Var of x² estimator: 2·exact²/n; allow 4 sigma.
        let tol = 4.0 * (2.0 / n_draws as f64).sqrt() * exact;
        assert!((mc - exact).abs() < tol, "MC {mc} vs exact {exact}");
    }

    #[test]
    fn log_field_is_linear_in_theta() {
        let grid = GridLevel::new(0, 5).unwrap();
        let basis = kl_decompose_tensor(&grid, SIGMA, LAMBDA, 6).unwrap();
        let theta_a = ParameterVector::from_fn(6, |r, _| 0.3 * r as f64 - 1.0);
        let theta_b = ParameterVector::from_fn(6, |r, _| (r as f64).sin());
        let fa = log_permeability_field(&basis, &theta_a).unwrap();
        let fb = log_permeability_field(&basis, &theta_b).unwrap();
        let fsum = log_permeability_field(&basis, &(&theta_a + &theta_b)).unwrap();
        assert!((&fa + &fb - fsum).amax() < 1e-12);
        let zero = log_permeability_field(&basis, &ParameterVector::zeros(6)).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let grid = GridLevel::new(0, 5).unwrap();
        assert!(build_covariance_matrix(&grid, -1.0, 0.3).is_err());
        assert!(build_covariance_matrix(&grid, 2.0, 0.0).is_err());
        assert!(kl_decompose_tensor(&grid, SIGMA, LAMBDA, 0).is_err());
        assert!(kl_decompose_tensor(&grid, SIGMA, LAMBDA, 26).is_err());
        let c = build_covariance_matrix(&grid, SIGMA, LAMBDA).unwrap();
        let w = grid.quadrature_weights();
        assert!(kl_decompose(&c, &w, 26).is_err());
        let basis = kl_decompose_tensor(&grid, SIGMA, LAMBDA, 6).unwrap();
        assert!(log_permeability_field(&basis, &ParameterVector::zeros(5)).is_err());
        let fine = GridLevel::new(1, 17).unwrap();
        assert!(restrict_basis(&basis, &fine, &grid).is_err(), "m mismatch");
    }
}
