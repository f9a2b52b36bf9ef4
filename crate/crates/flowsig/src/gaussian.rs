//! Linear-Gaussian Bayesian inference with rank-deficient covariance support.
//!
//! Covariances arising from route-constrained flows are typically singular
//! (flows live in an affine subspace), so every inversion here is performed
//! in a reduced coordinate system spanned by the covariance range. The
//! reduction is an orthonormal transform x̃ = C(x − μ); results are mapped
//! back with x = Cᵀx̃ + μ.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Symmetry tolerance for covariance validation.
const SYMMETRY_TOL: f64 = 1e-10;
/// Most negative eigenvalue a covariance may carry before rejection.
const PSD_TOL: f64 = -1e-8;

/// A multivariate Gaussian N(mean, cov). The covariance may be
/// rank-deficient.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Validates symmetry (1e-10), near-positive-semidefiniteness
    /// (eigenvalues ≥ −1e-8) and dimension agreement.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianDist::new",
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        let scale = cov.amax().max(1.0);
        for i in 0..cov.nrows() {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidParams(format!(
                        "covariance not symmetric at ({i},{j}): {} vs {}",
                        cov[(i, j)],
                        cov[(j, i)]
                    )));
                }
            }
        }
        let sym = symmetrize(&cov);
        if !sym.is_empty() {
            let min_eig = sym
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if min_eig < PSD_TOL * scale {
                return Err(Error::InvalidParams(format!(
                    "covariance has eigenvalue {min_eig:.3e} below tolerance"
                )));
            }
        }
        Ok(Self { mean, cov: sym })
    }

    /// Point mass at `mean` (zero covariance).
    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// A factor F with FFᵀ = cov (eigenvalue square root; negative noise
    /// eigenvalues are clipped to zero). Used for sampling.
    pub fn sqrt_factor(&self) -> DMatrix<f64> {
        psd_sqrt(&self.cov)
    }
}

/// A linear-Gaussian observation model y = Ax + b + ε, ε ~ N(0, noise_cov).
#[derive(Debug, Clone)]
pub struct LinearGaussianObs {
    pub map_a: DMatrix<f64>,
    pub offset_b: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
}

impl LinearGaussianObs {
    pub fn new(map_a: DMatrix<f64>, offset_b: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let p = map_a.nrows();
        if offset_b.len() != p {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianObs offset",
                expected: p,
                got: offset_b.len(),
            });
        }
        if noise_cov.nrows() != p || noise_cov.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianObs noise",
                expected: p,
                got: noise_cov.nrows(),
            });
        }
        Ok(Self {
            map_a,
            offset_b,
            noise_cov,
        })
    }

    /// Identity observation of an m-dimensional state with the given noise.
    pub fn identity(noise_cov: DMatrix<f64>) -> Self {
        let m = noise_cov.nrows();
        Self {
            map_a: DMatrix::identity(m, m),
            offset_b: DVector::zeros(m),
            noise_cov,
        }
    }
}

/// Orthonormal reduction of a rank-deficient Gaussian: x̃ = C(x − μ) with
/// full-rank reduced covariance CΣCᵀ.
#[derive(Debug, Clone)]
pub struct ReducedSpace {
    /// Rows form an orthonormal basis of the retained directions.
    pub transform_c: DMatrix<f64>,
    pub center_mu: DVector<f64>,
    /// Full-rank covariance in reduced coordinates.
    pub reduced_cov: DMatrix<f64>,
}

impl ReducedSpace {
    pub fn reduced_dim(&self) -> usize {
        self.transform_c.nrows()
    }

    /// Map a full-space vector into reduced coordinates: C(x − μ).
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.center_mu.len() {
            return Err(Error::DimensionMismatch {
                context: "ReducedSpace::project",
                expected: self.center_mu.len(),
                got: x.len(),
            });
        }
        Ok(&self.transform_c * (x - &self.center_mu))
    }
}

/// Numerical-rank cutoff: dim · λ_max · 1e-10.
pub fn default_cutoff(cov: &DMatrix<f64>) -> f64 {
    cov.nrows().max(1) as f64 * cov.amax() * 1e-10
}

/// (M + Mᵀ)/2. Applied after every update to control asymmetry drift.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue square root of a PSD matrix; negative eigenvalues clip to 0.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(cov).symmetric_eigen();
    let mut vecs = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        vecs.column_mut(j).scale_mut(s);
    }
    vecs
}

/// Orthonormal row basis for the range of a symmetric PSD matrix, keeping
/// directions with eigenvalue > cutoff. Rows are ordered by decreasing
/// eigenvalue; signs are normalized for reproducibility. Returns the basis
/// together with the retained eigenvalues, or None if nothing survives.
pub(crate) fn span_basis(mat: &DMatrix<f64>, cutoff: f64) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let eig = symmetrize(mat).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&j| eig.eigenvalues[j] > cutoff)
        .collect();
    if kept.is_empty() {
        return None;
    }
    let n = mat.nrows();
    let mut basis = DMatrix::zeros(kept.len(), n);
    let mut values = Vec::with_capacity(kept.len());
    for (row, &j) in kept.iter().enumerate() {
        let v = eig.eigenvectors.column(j);
        // flip so the largest-magnitude component is positive
        let pivot = v.iter().cloned().fold(0.0f64, |acc, x| {
            if x.abs() > acc.abs() {
                x
            } else {
                acc
            }
        });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[(row, i)] = sign * v[i];
        }
        values.push(eig.eigenvalues[j]);
    }
    Some((basis, values))
}

/// Singular-value dimension reduction of a Gaussian onto the directions with
/// singular value above `cutoff`.
pub fn reduce(dist: &GaussianDist, cutoff: f64) -> Result<ReducedSpace> {
    let (basis, _) = span_basis(dist.cov(), cutoff).ok_or(Error::ZeroRank { cutoff })?;
    let reduced_cov = symmetrize(&(&basis * dist.cov() * basis.transpose()));
    Ok(ReducedSpace {
        transform_c: basis,
        center_mu: dist.mean().clone(),
        reduced_cov,
    })
}

/// Reverse transformation Cᵀx̃ + μ back into the original space.
pub fn restore(space: &ReducedSpace, x_reduced: &DVector<f64>) -> Result<DVector<f64>> {
    if x_reduced.len() != space.reduced_dim() {
        return Err(Error::DimensionMismatch {
            context: "restore",
            expected: space.reduced_dim(),
            got: x_reduced.len(),
        });
    }
    Ok(space.transform_c.transpose() * x_reduced + &space.center_mu)
}

/// Posterior N(x | y) for the linear-Gaussian model.
///
/// Equivalent to N(x; Σ{AᵀL(y−b) + Λμ}, Σ) with Σ = (Λ + AᵀLA)⁻¹ when all
/// covariances are invertible; computed in reduced coordinates so that
/// rank-deficient priors and noise with matching spans are handled. Fails
/// with `SingularCovariance` when the noise is singular along a direction
/// in which the prior predictive actually varies.
pub fn posterior(
    prior: &GaussianDist,
    obs: &LinearGaussianObs,
    y: &DVector<f64>,
) -> Result<GaussianDist> {
    if obs.map_a.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "posterior map",
            expected: prior.dim(),
            got: obs.map_a.ncols(),
        });
    }
    if y.len() != obs.offset_b.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior observation",
            expected: obs.offset_b.len(),
            got: y.len(),
        });
    }

    // Deterministic prior: nothing to update.
    let space = match reduce(prior, default_cutoff(prior.cov())) {
        Ok(s) => s,
        Err(Error::ZeroRank { .. }) => return Ok(prior.clone()),
        Err(e) => return Err(e),
    };
    let c = &space.transform_c;
    let a_red = &obs.map_a * c.transpose(); // p×r
    let b_red = &obs.map_a * prior.mean() + &obs.offset_b;

    // Span of the observation marginal: directions of y that carry signal
    // or noise. Components outside it are deterministic and uninformative.
    let marginal_cov = &obs.noise_cov + &a_red * &space.reduced_cov * a_red.transpose();
    let (w, _) = match span_basis(&marginal_cov, default_cutoff(&marginal_cov)) {
        Some(b) => b,
        None => return Ok(prior.clone()),
    };
    let a_w = &w * &a_red; // q×r
    let resid = &w * (y - &b_red); // q
    let noise_w = symmetrize(&(&w * &obs.noise_cov * w.transpose()));

    let noise_chol = noise_w.clone().cholesky().ok_or_else(|| {
        Error::SingularCovariance(
            "noise covariance singular on the informative span; rank reduction failed to \
             produce an invertible matrix"
                .to_string(),
        )
    })?;

    let prior_prec = space
        .reduced_cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("reduced prior covariance not PD".to_string()))?
        .inverse();

    // Information-form update in reduced coordinates (prior mean is 0 there).
    let linv_aw = noise_chol.solve(&a_w);
    let post_prec = symmetrize(&(&prior_prec + a_w.transpose() * &linv_aw));
    let post_chol = post_prec
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("posterior precision not PD".to_string()))?;
    let post_cov_red = symmetrize(&post_chol.inverse());
    let info = a_w.transpose() * noise_chol.solve(&resid);
    let post_mean_red = &post_cov_red * info;

    let mean = prior.mean() + c.transpose() * post_mean_red;
    let cov = symmetrize(&(c.transpose() * post_cov_red * c));
    GaussianDist::new(mean, cov)
}

/// Marginal (prior predictive) of y: N(Aμ + b, L⁻¹ + AΛ⁻¹Aᵀ). The
/// covariance form needs no inversion, so rank deficiency is harmless here.
pub fn marginal(prior: &GaussianDist, obs: &LinearGaussianObs) -> Result<GaussianDist> {
    if obs.map_a.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            context: "marginal map",
            expected: prior.dim(),
            got: obs.map_a.ncols(),
        });
    }
    let mean = &obs.map_a * prior.mean() + &obs.offset_b;
    let cov = symmetrize(&(&obs.noise_cov + &obs.map_a * prior.cov() * obs.map_a.transpose()));
    GaussianDist::new(mean, cov)
}
