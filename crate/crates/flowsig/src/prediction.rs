//! Outcome-flow prediction from beliefs and a signal policy.
//!
//! Given population belief parameters and a committed Gaussian signal, this
//! module predicts the deterministic large-population outcome flow: the
//! posterior-mean beliefs induced across the population map to expected
//! route costs, each agent picks the cheapest route of its OD pair, and the
//! per-route choice probabilities are orthant probabilities of the cost
//! differences.
//!
//! Two flow-space Gaussians appear:
//! * [`aggregate_flow_belief`] — the population mixture of posterior
//!   *beliefs* N(μ̄, Σ̄), which includes each agent's own posterior
//!   covariance;
//! * [`posterior_mean_spread`] — the population spread of posterior *means*
//!   N(μ̄, Σ̄ − Σ), which is what argmin-of-expected-cost choices actually
//!   depend on and therefore what feeds the choice probabilities. An
//!   agent-level sampler reproduces these probabilities exactly.
//!
//! All inversions run in the reduced coordinate system spanned by
//! Σ₀ + Σ_s, so rank-deficient covariances (route-constrained flows) work
//! throughout.

use crate::error::{Error, Result};
use crate::game::{FlowVector, GameDefinition};
use crate::gaussian::{span_basis, symmetrize, GaussianDist};
use crate::mvncdf::{orthant_prefactored, psd_cholesky};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Population belief parameters: prior means are drawn per agent from
/// N(μ_h, Σ_h); every agent shares the prior covariance Σ₀.
#[derive(Debug, Clone)]
pub struct BeliefParams {
    pub mu_h: DVector<f64>,
    pub sigma_h: DMatrix<f64>,
    pub sigma_0: DMatrix<f64>,
}

impl BeliefParams {
    pub fn new(mu_h: DVector<f64>, sigma_h: DMatrix<f64>, sigma_0: DMatrix<f64>) -> Result<Self> {
        let m = mu_h.len();
        for (name, mat) in [("sigma_h", &sigma_h), ("sigma_0", &sigma_0)] {
            if mat.nrows() != m || mat.ncols() != m {
                return Err(Error::DimensionMismatch {
                    context: "BeliefParams",
                    expected: m,
                    got: mat.nrows(),
                });
            }
            // reuse the GaussianDist validation for symmetry/PSD
            GaussianDist::new(DVector::zeros(m), mat.clone())
                .map_err(|e| Error::InvalidParams(format!("{name}: {e}")))?;
        }
        Ok(Self {
            mu_h,
            sigma_h,
            sigma_0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_h.len()
    }
}

/// The committed signal distribution N(μ_s, Σ_s). The same Σ_s plays both
/// roles: commitment noise in agents' updates and the draw covariance.
#[derive(Debug, Clone)]
pub struct SignalPolicy {
    pub mu_s: DVector<f64>,
    pub sigma_s: DMatrix<f64>,
}

impl SignalPolicy {
    pub fn new(mu_s: DVector<f64>, sigma_s: DMatrix<f64>) -> Result<Self> {
        let m = mu_s.len();
        if sigma_s.nrows() != m || sigma_s.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "SignalPolicy",
                expected: m,
                got: sigma_s.nrows(),
            });
        }
        GaussianDist::new(DVector::zeros(m), sigma_s.clone())
            .map_err(|e| Error::InvalidParams(format!("sigma_s: {e}")))?;
        Ok(Self { mu_s, sigma_s })
    }
}

/// Controls for the MVN CDF evaluations inside the prediction pipeline.
#[derive(Debug, Clone, Copy)]
pub struct CdfControl {
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for CdfControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            seed: 0,
        }
    }
}

/// Per-pair route choice probabilities. `raw_residuals[k]` records how far
/// the unnormalized probabilities of pair k summed from 1 before the
/// conservation renormalization.
#[derive(Debug, Clone)]
pub struct ChoiceProbabilities {
    pub per_pair: Vec<Vec<f64>>,
    pub raw_residuals: Vec<f64>,
}

impl ChoiceProbabilities {
    /// Flatten to global route order.
    pub fn flat(&self) -> Vec<f64> {
        self.per_pair.iter().flatten().cloned().collect()
    }
}

/// Reduced-space belief/signal combination shared by the prediction ops.
struct BeliefReduction {
    /// Orthonormal rows spanning range(Σ₀ + Σ_s); empty means fully
    /// deterministic beliefs.
    basis: Option<DMatrix<f64>>,
    /// Reduced gain K = Σ₀(Σ₀+Σ_s)⁻¹.
    gain_r: DMatrix<f64>,
    sigma_s_r: DMatrix<f64>,
    sigma_h_r: DMatrix<f64>,
}

impl BeliefReduction {
    fn build(beliefs: &BeliefParams, sigma_s: &DMatrix<f64>) -> Result<Self> {
        let m = beliefs.dim();
        if sigma_s.nrows() != m {
            return Err(Error::DimensionMismatch {
                context: "belief/signal dimensions",
                expected: m,
                got: sigma_s.nrows(),
            });
        }
        let total = &beliefs.sigma_0 + sigma_s;
        let cutoff = crate::gaussian::default_cutoff(&total);
        let Some((basis, _)) = span_basis(&total, cutoff) else {
            return Ok(Self {
                basis: None,
                gain_r: DMatrix::zeros(0, 0),
                sigma_s_r: DMatrix::zeros(0, 0),
                sigma_h_r: DMatrix::zeros(0, 0),
            });
        };
        let total_r = symmetrize(&(&basis * &total * basis.transpose()));
        let sigma_0_r = symmetrize(&(&basis * &beliefs.sigma_0 * basis.transpose()));
        let sigma_s_r = symmetrize(&(&basis * sigma_s * basis.transpose()));
        let sigma_h_r = symmetrize(&(&basis * &beliefs.sigma_h * basis.transpose()));
        let chol = total_r.clone().cholesky().ok_or_else(|| {
            Error::SingularCovariance("Σ₀+Σ_s not PD on its own span".to_string())
        })?;
        // K = Σ₀ T⁻¹; solve Tᵀ Kᵀ = Σ₀ᵀ with T symmetric
        let gain_r = chol.solve(&sigma_0_r).transpose();
        Ok(Self {
            basis: Some(basis),
            gain_r,
            sigma_s_r,
            sigma_h_r,
        })
    }

    /// μ̄ = μ_h + K(μ_s − μ_h), embedded in full space.
    fn mean_bar(&self, beliefs: &BeliefParams, mu_s: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            None => beliefs.mu_h.clone(),
            Some(c) => {
                let delta_r = c * (mu_s - &beliefs.mu_h);
                &beliefs.mu_h + c.transpose() * (&self.gain_r * delta_r)
            }
        }
    }

    /// Population spread of posterior means: KΣ_sKᵀ + (I−K)Σ_h(I−K)ᵀ,
    /// reduced coordinates.
    fn spread_r(&self) -> DMatrix<f64> {
        let r = self.gain_r.nrows();
        let eye = DMatrix::identity(r, r);
        let one_minus_k = &eye - &self.gain_r;
        symmetrize(
            &(&self.gain_r * &self.sigma_s_r * self.gain_r.transpose()
                + &one_minus_k * &self.sigma_h_r * one_minus_k.transpose()),
        )
    }

    /// Per-agent posterior covariance Σ = KΣ_s, reduced coordinates.
    fn posterior_cov_r(&self) -> DMatrix<f64> {
        symmetrize(&(&self.gain_r * &self.sigma_s_r))
    }

    fn embed(&self, reduced: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
        match &self.basis {
            None => DMatrix::zeros(m, m),
            Some(c) => symmetrize(&(c.transpose() * reduced * c)),
        }
    }
}

/// Orthonormal rows spanning the signal-responsive flow directions,
/// range(Σ₀ + Σ_s). None when both covariances vanish.
pub(crate) fn reduction_basis(
    beliefs: &BeliefParams,
    sigma_s: &DMatrix<f64>,
) -> Result<Option<DMatrix<f64>>> {
    Ok(BeliefReduction::build(beliefs, sigma_s)?.basis)
}

/// Full-space posterior gain K = Σ₀(Σ₀+Σ_s)⁻¹: an agent's posterior mean
/// is μ₀ᵢ + K(s − μ₀ᵢ). Computed on the joint span.
pub(crate) fn agent_gain(beliefs: &BeliefParams, sigma_s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = beliefs.dim();
    let red = BeliefReduction::build(beliefs, sigma_s)?;
    Ok(match &red.basis {
        None => DMatrix::zeros(m, m),
        Some(c) => c.transpose() * &red.gain_r * c,
    })
}

/// The population mixture of posterior beliefs about the flow,
/// N(f; μ̄, Σ̄) with μ̄ = ΣΣ_s⁻¹μ_s + ΣΣ₀⁻¹μ_h and
/// Σ̄ = Σ₁ + (ΣΣ₀⁻¹)Σ_h(ΣΣ₀⁻¹)ᵀ, Σ₁ = Σ + Σ(ΣΣ_s⁻¹)ᵀ,
/// Σ = (Σ_s⁻¹+Σ₀⁻¹)⁻¹ — computed in reduced space when rank-deficient.
pub fn aggregate_flow_belief(
    beliefs: &BeliefParams,
    policy: &SignalPolicy,
) -> Result<GaussianDist> {
    let red = BeliefReduction::build(beliefs, &policy.sigma_s)?;
    let m = beliefs.dim();
    let mean = red.mean_bar(beliefs, &policy.mu_s);
    if red.basis.is_none() {
        // fully deterministic prior and signal: only the prior-mean spread
        // remains
        return GaussianDist::new(mean, beliefs.sigma_h.clone());
    }
    let cov_r = red.posterior_cov_r() + red.spread_r();
    GaussianDist::new(mean, red.embed(&cov_r, m))
}

/// The population spread of posterior means, N(f; μ̄, Σ̄ − Σ). This is the
/// distribution that argmin-of-expected-cost route choices sample from.
pub fn posterior_mean_spread(
    beliefs: &BeliefParams,
    policy: &SignalPolicy,
) -> Result<GaussianDist> {
    let red = BeliefReduction::build(beliefs, &policy.sigma_s)?;
    let m = beliefs.dim();
    let mean = red.mean_bar(beliefs, &policy.mu_s);
    if red.basis.is_none() {
        return GaussianDist::new(mean, beliefs.sigma_h.clone());
    }
    let cov_r = red.spread_r();
    GaussianDist::new(mean, red.embed(&cov_r, m))
}

/// Push a flow-space Gaussian through the affine cost map into route-cost
/// space: N(φ; Dᵀ(Λμ̄ + b), Dᵀ(ΛΣ̄Λᵀ)D).
pub fn route_cost_distribution(
    game: &GameDefinition,
    flow_belief: &GaussianDist,
) -> Result<GaussianDist> {
    if flow_belief.dim() != game.num_edges() {
        return Err(Error::DimensionMismatch {
            context: "route_cost_distribution",
            expected: game.num_edges(),
            got: flow_belief.dim(),
        });
    }
    let d_t_lambda = game.incidence().transpose() * game.cost_slope();
    let mean = &d_t_lambda * flow_belief.mean() + game.incidence().transpose() * game.cost_offset();
    let cov = symmetrize(&(&d_t_lambda * flow_belief.cov() * d_t_lambda.transpose()));
    GaussianDist::new(mean, cov)
}

/// Cost-comparison matrix B_rk: one row per competing route of pair k, with
/// +1 in column `route` and −1 in the competitor's column. Columns of other
/// pairs stay zero.
pub fn comparison_matrix(
    game: &GameDefinition,
    pair: usize,
    route: usize,
) -> Result<DMatrix<f64>> {
    let (lo, hi) = game.route_range(pair);
    if route < lo || route >= hi {
        return Err(Error::UnknownRoute { route, pair });
    }
    let competitors: Vec<usize> = (lo..hi).filter(|&r| r != route).collect();
    let mut b = DMatrix::zeros(competitors.len(), game.num_routes());
    for (row, &other) in competitors.iter().enumerate() {
        b[(row, route)] = 1.0;
        b[(row, other)] = -1.0;
    }
    Ok(b)
}

/// Precomputed prediction context for one (game, beliefs, Σ_s) triple.
///
/// Only the signal mean varies along fixed-point iterations and Jacobian
/// columns, and the cost covariance does not depend on it, so the per-route
/// comparison covariances are factored once.
pub struct FlowPredictor<'g> {
    game: &'g GameDefinition,
    ctrl: CdfControl,
    center: DVector<f64>,
    /// Full-space gain: μ̄ = center + gain·(μ_s − center).
    gain: DMatrix<f64>,
    /// Route-cost map Dᵀ Λ.
    cost_map: DMatrix<f64>,
    /// Constant part of route costs Dᵀ b.
    cost_base: DVector<f64>,
    /// Per pair, per route: competitor list and Cholesky factor of the
    /// comparison covariance B Σ_φ Bᵀ.
    comparisons: Vec<Vec<RouteComparison>>,
}

struct RouteComparison {
    route: usize,
    competitors: Vec<usize>,
    chol: DMatrix<f64>,
}

impl<'g> FlowPredictor<'g> {
    pub fn new(
        game: &'g GameDefinition,
        beliefs: &BeliefParams,
        sigma_s: &DMatrix<f64>,
        ctrl: CdfControl,
    ) -> Result<Self> {
        let m = game.num_edges();
        if beliefs.dim() != m {
            return Err(Error::DimensionMismatch {
                context: "FlowPredictor beliefs",
                expected: m,
                got: beliefs.dim(),
            });
        }
        let red = BeliefReduction::build(beliefs, sigma_s)?;
        let gain = match &red.basis {
            None => DMatrix::zeros(m, m),
            Some(c) => c.transpose() * &red.gain_r * c,
        };
        let spread = match &red.basis {
            None => beliefs.sigma_h.clone(),
            Some(_) => red.embed(&red.spread_r(), m),
        };
        let cost_map = game.incidence().transpose() * game.cost_slope();
        let cost_base = game.incidence().transpose() * game.cost_offset();
        let sigma_phi = symmetrize(&(&cost_map * &spread * cost_map.transpose()));

        let mut comparisons = Vec::with_capacity(game.num_pairs());
        for k in 0..game.num_pairs() {
            let (lo, hi) = game.route_range(k);
            let mut pair_cmp = Vec::with_capacity(hi - lo);
            for route in lo..hi {
                let competitors: Vec<usize> = (lo..hi).filter(|&r| r != route).collect();
                let dim = competitors.len();
                let chol = if dim == 0 {
                    DMatrix::zeros(0, 0)
                } else {
                    let mut cov = DMatrix::zeros(dim, dim);
                    for (i, &a) in competitors.iter().enumerate() {
                        for (j, &bq) in competitors.iter().enumerate() {
                            cov[(i, j)] = sigma_phi[(route, route)] - sigma_phi[(route, bq)]
                                - sigma_phi[(a, route)]
                                + sigma_phi[(a, bq)];
                        }
                    }
                    let tol = (dim as f64) * cov.amax().max(1e-300) * 1e-13;
                    psd_cholesky(&symmetrize(&cov), tol)?
                };
                pair_cmp.push(RouteComparison {
                    route,
                    competitors,
                    chol,
                });
            }
            comparisons.push(pair_cmp);
        }

        Ok(Self {
            game,
            ctrl,
            center: beliefs.mu_h.clone(),
            gain,
            cost_map,
            cost_base,
            comparisons,
        })
    }

    /// Route choice probabilities for a signal mean.
    pub fn choice_probabilities(&self, mu_s: &DVector<f64>) -> Result<ChoiceProbabilities> {
        if mu_s.len() != self.game.num_edges() {
            return Err(Error::DimensionMismatch {
                context: "choice_probabilities",
                expected: self.game.num_edges(),
                got: mu_s.len(),
            });
        }
        let mean_bar = &self.center + &self.gain * (mu_s - &self.center);
        let mu_phi = &self.cost_map * mean_bar + &self.cost_base;

        let results: Vec<Result<(Vec<f64>, f64)>> = self
            .comparisons
            .par_iter()
            .map(|pair_cmp| {
                if pair_cmp.len() == 1 {
                    return Ok((vec![1.0], 0.0));
                }
                let mut raw = Vec::with_capacity(pair_cmp.len());
                for cmp in pair_cmp {
                    // upper limit 0 minus the comparison mean Bμ_φ
                    let b = DVector::from_iterator(
                        cmp.competitors.len(),
                        cmp.competitors
                            .iter()
                            .map(|&other| mu_phi[other] - mu_phi[cmp.route]),
                    );
                    raw.push(orthant_prefactored(
                        &cmp.chol,
                        &b,
                        self.ctrl.rel_tol,
                        self.ctrl.seed,
                    )?);
                }
                let sum: f64 = raw.iter().sum();
                if sum <= 0.0 {
                    // all-zero mass can only arise from extreme means; fall
                    // back to uniform to keep conservation exact
                    let u = 1.0 / raw.len() as f64;
                    return Ok((vec![u; raw.len()], sum - 1.0));
                }
                let probs = raw.iter().map(|p| p / sum).collect();
                Ok((probs, sum - 1.0))
            })
            .collect();

        let mut per_pair = Vec::with_capacity(results.len());
        let mut raw_residuals = Vec::with_capacity(results.len());
        for r in results {
            let (p, resid) = r?;
            per_pair.push(p);
            raw_residuals.push(resid);
        }
        Ok(ChoiceProbabilities {
            per_pair,
            raw_residuals,
        })
    }

    /// Predicted outcome flow ĥ_rk = n_k p_rk, f̂ = Dĥ.
    pub fn predict(&self, mu_s: &DVector<f64>) -> Result<FlowVector> {
        let probs = self.choice_probabilities(mu_s)?;
        let mut h = DVector::zeros(self.game.num_routes());
        for (k, pair) in probs.per_pair.iter().enumerate() {
            let n_k = self.game.od_pairs()[k].agents as f64;
            let (lo, _) = self.game.route_range(k);
            for (i, p) in pair.iter().enumerate() {
                h[lo + i] = n_k * p;
            }
        }
        FlowVector::from_route_flows(self.game, h)
    }
}

/// Per-pair route choice probabilities p_rk = P(B_rk φ ≤ 0) with the costs
/// distributed per the population posterior-mean spread. Single-route pairs
/// get probability 1 without any CDF evaluation; per-pair probabilities are
/// renormalized to sum to one and the raw residual is reported.
pub fn route_choice_probabilities(
    game: &GameDefinition,
    beliefs: &BeliefParams,
    policy: &SignalPolicy,
    ctrl: CdfControl,
) -> Result<ChoiceProbabilities> {
    FlowPredictor::new(game, beliefs, &policy.sigma_s, ctrl)?.choice_probabilities(&policy.mu_s)
}

/// The law-of-large-numbers outcome flow: ĥ_rk = n_k p_rk, f̂ = Dĥ.
pub fn predict_outcome_flow(
    game: &GameDefinition,
    beliefs: &BeliefParams,
    policy: &SignalPolicy,
    ctrl: CdfControl,
) -> Result<FlowVector> {
    FlowPredictor::new(game, beliefs, &policy.sigma_s, ctrl)?.predict(&policy.mu_s)
}
