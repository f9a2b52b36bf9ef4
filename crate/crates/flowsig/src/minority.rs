//! Two-route scalar specialization: closed-form outcome map, closed-form
//! repeated-play variance bound, sender utility, and the embedding into the
//! general game pipeline.
//!
//! The state is the route-1 population fraction ω ∈ [0,1]; edge flows are
//! f = n(ω, 1−ω) and the normalized costs are c(ω) = (2ω−1, 1−2ω), so the
//! crowded route always costs more. Beliefs about ω embed into edge space
//! as rank-1 anticorrelated covariances.

use crate::error::{Error, Result};
use crate::game::{GameDefinition, OdPair};
use crate::mvncdf::norm_cdf;
use crate::prediction::BeliefParams;
use nalgebra::{DMatrix, DVector};

/// Scalar parameters of the two-route game.
#[derive(Debug, Clone, Copy)]
pub struct MgParams {
    /// Mean of the population's prior beliefs about ω.
    pub mu_h: f64,
    /// Deviation of prior means across the population.
    pub sigma_h: f64,
    /// Each agent's own prior deviation.
    pub sigma_0: f64,
    /// Committed signal deviation.
    pub sigma_s: f64,
    /// Number of agents.
    pub n: usize,
}

impl MgParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu_h) {
            return Err(Error::InvalidParams(format!(
                "mu_h {} outside [0,1]",
                self.mu_h
            )));
        }
        for (name, v) in [
            ("sigma_h", self.sigma_h),
            ("sigma_0", self.sigma_0),
            ("sigma_s", self.sigma_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be > 0")));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Scalar pieces of the belief combination shared by the closed forms.
struct ScalarPieces {
    /// Posterior variance σ² = σ₀²σ_s²/(σ₀²+σ_s²).
    sig2: f64,
    /// Signal gain K = σ²/σ_s².
    gain: f64,
}

fn pieces(sigma_0: f64, sigma_s: f64) -> ScalarPieces {
    let v0 = sigma_0 * sigma_0;
    let vs = sigma_s * sigma_s;
    let sig2 = v0 * vs / (v0 + vs);
    ScalarPieces {
        sig2,
        gain: sig2 / vs,
    }
}

/// The scalar outcome map: the fraction choosing route 1 when the sender
/// commits to N(μ_s, σ_s²).
///
/// A receiver's posterior mean of ω is σ²(s/σ_s² + μ₀ᵢ/σ₀²); route 1 is
/// chosen when it is below 1/2. Across the population this mean is Gaussian
/// with mean Kμ_s + (1−K)μ_h and variance σ⁴/σ_s² + (σ⁴/σ₀⁴)σ_h², so the
/// outcome is the matching normal CDF at 1/2, evaluated in closed form.
pub fn mg_self_map(params: &MgParams, mu_s: f64) -> Result<f64> {
    params.validate()?;
    if !(0.0..=1.0).contains(&mu_s) {
        return Err(Error::InvalidParams(format!("mu_s {mu_s} outside [0,1]")));
    }
    let p = pieces(params.sigma_0, params.sigma_s);
    let v0 = params.sigma_0 * params.sigma_0;
    let vh = params.sigma_h * params.sigma_h;
    let mean = p.gain * mu_s + (1.0 - p.gain) * params.mu_h;
    let var = p.sig2 * p.sig2 / (params.sigma_s * params.sigma_s)
        + (p.sig2 * p.sig2 / (v0 * v0)) * vh;
    Ok(norm_cdf((0.5 - mean) / var.sqrt()))
}

/// Closed-form signal-deviation threshold for repeated play:
/// σ_s² = [−4πσ₀⁴ + √(16π²σ₀⁸ + 8π(σ₀²+σ_h²)σ₀⁴)] / [4π(σ₀²+σ_h²)].
///
/// This is exactly the σ_s at which the worst-case slope of the
/// belief-mixture outcome map crosses 1.
pub fn mg_variance_bound(sigma_0: f64, sigma_h: f64) -> Result<f64> {
    if !(sigma_0 > 0.0 && sigma_h >= 0.0) || !sigma_0.is_finite() || !sigma_h.is_finite() {
        return Err(Error::InvalidParams(format!(
            "need sigma_0 > 0 and sigma_h ≥ 0, got {sigma_0}, {sigma_h}"
        )));
    }
    let pi = std::f64::consts::PI;
    let v0 = sigma_0 * sigma_0;
    let vh = sigma_h * sigma_h;
    let num = -4.0 * pi * v0 * v0
        + (16.0 * pi * pi * v0.powi(4) + 8.0 * pi * (v0 + vh) * v0 * v0).sqrt();
    let den = 4.0 * pi * (v0 + vh);
    Ok((num / den).sqrt())
}

/// Sender utility v(ω) = ω − ω², the negative of the (shifted, scaled)
/// total cost |c(ω)|².
pub fn mg_sender_utility(omega: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::OutOfRange(format!("omega {omega} outside [0,1]")));
    }
    Ok(omega - omega * omega)
}

/// The two-route game embedded in absolute flows, with beliefs in edge
/// space.
pub struct MgEmbedding {
    pub game: GameDefinition,
    pub beliefs: BeliefParams,
    /// Signal covariance in edge space, coupled to the ω-deviation σ_s.
    pub sigma_s: DMatrix<f64>,
}

impl MgEmbedding {
    /// Edge-space signal mean for a normalized ω-mean.
    pub fn mu_s_edge(&self, mu_s: f64) -> DVector<f64> {
        let n = self.game.num_agents() as f64;
        DVector::from_row_slice(&[mu_s * n, (1.0 - mu_s) * n])
    }

    /// Normalized route-1 fraction of an edge flow vector.
    pub fn omega_of(&self, edge_flow: &DVector<f64>) -> f64 {
        edge_flow[0] / self.game.num_agents() as f64
    }
}

/// Rank-1 anticorrelated edge covariance n²σ²·vvᵀ, v = (1, −1): the image
/// of a scalar variance over ω under f = n(ω, 1−ω).
fn anticorrelated(n: f64, sigma: f64) -> DMatrix<f64> {
    let s = n * n * sigma * sigma;
    DMatrix::from_row_slice(2, 2, &[s, -s, -s, s])
}

/// Build the general-pipeline instance: two parallel single-edge routes,
/// identity incidence, Λ = diag(2/n), b = (−1, −1) so that edge costs
/// reproduce c(ω) = (2ω−1, 1−2ω) in normalized flow.
pub fn mg_as_game(params: &MgParams) -> Result<MgEmbedding> {
    params.validate()?;
    let n = params.n as f64;
    let game = GameDefinition::new(
        vec![(0, 1), (0, 1)],
        vec![OdPair {
            origin: 0,
            destination: 1,
            agents: params.n,
        }],
        vec![vec![vec![0], vec![1]]],
        DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0 / n, 2.0 / n])),
        DVector::from_row_slice(&[-1.0, -1.0]),
    )?;
    let beliefs = BeliefParams::new(
        DVector::from_row_slice(&[params.mu_h * n, (1.0 - params.mu_h) * n]),
        anticorrelated(n, params.sigma_h),
        anticorrelated(n, params.sigma_0),
    )?;
    Ok(MgEmbedding {
        game,
        beliefs,
        sigma_s: anticorrelated(n, params.sigma_s),
    })
}
