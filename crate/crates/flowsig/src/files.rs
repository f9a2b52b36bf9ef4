//! Structured-text (TOML) schemas for game, belief and signal definitions.
//! All indices are 0-based; matrices are row-major arrays of rows.

use crate::error::{Error, Result};
use crate::game::{GameDefinition, OdPair};
use crate::prediction::BeliefParams;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// On-disk game definition.
///
/// ```toml
/// edges = [[0, 1], [1, 0]]
///
/// [cost]
/// lambda_diag = [2.5, 2.5]   # or a dense `lambda = [[...], ...]`
/// offset = [0.3, 0.3]
///
/// [[od_pairs]]
/// origin = 0
/// destination = 1
/// agents = 81
/// max_routes = 2             # enumerated when `routes` is absent
/// routes = [[0], [1]]        # optional explicit edge-index sequences
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameFile {
    pub edges: Vec<[usize; 2]>,
    pub cost: CostSection,
    pub od_pairs: Vec<OdPairSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_diag: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<Vec<f64>>>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdPairSection {
    pub origin: usize,
    pub destination: usize,
    pub agents: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_routes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub routes: Option<Vec<Vec<usize>>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::InvalidDefinition(format!(
                "{context}: row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl GameFile {
    pub fn to_game(&self) -> Result<GameDefinition> {
        let m = self.edges.len();
        let lambda = match (&self.cost.lambda_diag, &self.cost.lambda) {
            (Some(diag), None) => {
                if diag.len() != m {
                    return Err(Error::InvalidDefinition(format!(
                        "lambda_diag has {} entries for {m} edges",
                        diag.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_row_slice(diag))
            }
            (None, Some(rows)) => {
                let mat = matrix_from_rows(rows, "cost.lambda")?;
                if mat.nrows() != m {
                    return Err(Error::InvalidDefinition(format!(
                        "lambda is {}×{} for {m} edges",
                        mat.nrows(),
                        mat.ncols()
                    )));
                }
                mat
            }
            _ => {
                return Err(Error::InvalidDefinition(
                    "cost section needs exactly one of lambda_diag / lambda".into(),
                ))
            }
        };
        if self.cost.offset.len() != m {
            return Err(Error::InvalidDefinition(format!(
                "cost offset has {} entries for {m} edges",
                self.cost.offset.len()
            )));
        }
        let offset = DVector::from_row_slice(&self.cost.offset);
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let od_pairs: Vec<OdPair> = self
            .od_pairs
            .iter()
            .map(|p| OdPair {
                origin: p.origin,
                destination: p.destination,
                agents: p.agents,
            })
            .collect();

        let explicit: Vec<Option<&Vec<Vec<usize>>>> =
            self.od_pairs.iter().map(|p| p.routes.as_ref()).collect();
        if explicit.iter().all(|r| r.is_some()) {
            let routes = explicit
                .into_iter()
                .map(|r| r.unwrap().clone())
                .collect::<Vec<_>>();
            GameDefinition::new(edges, od_pairs, routes, lambda, offset)
        } else {
            // enumerate where routes are not given
            let mut routes = Vec::with_capacity(od_pairs.len());
            for (pair, section) in od_pairs.iter().zip(&self.od_pairs) {
                match &section.routes {
                    Some(r) => routes.push(r.clone()),
                    None => {
                        let count = section.max_routes.ok_or_else(|| {
                            Error::InvalidDefinition(format!(
                                "pair ({},{}) needs max_routes or explicit routes",
                                pair.origin, pair.destination
                            ))
                        })?;
                        routes.push(crate::game::enumerate_routes(
                            &edges,
                            pair.origin,
                            pair.destination,
                            count,
                        )?);
                    }
                }
            }
            GameDefinition::new(edges, od_pairs, routes, lambda, offset)
        }
    }

    /// Snapshot of an in-memory game, with routes written out explicitly.
    pub fn from_game(game: &GameDefinition) -> Self {
        let m = game.num_edges();
        let slope = game.cost_slope();
        let diagonal_only = (0..m)
            .all(|i| (0..m).all(|j| i == j || slope[(i, j)] == 0.0));
        let cost = if diagonal_only {
            CostSection {
                lambda_diag: Some((0..m).map(|i| slope[(i, i)]).collect()),
                lambda: None,
                offset: game.cost_offset().iter().cloned().collect(),
            }
        } else {
            CostSection {
                lambda_diag: None,
                lambda: Some(matrix_to_rows(slope)),
                offset: game.cost_offset().iter().cloned().collect(),
            }
        };
        GameFile {
            edges: game.edges().iter().map(|&(t, h)| [t, h]).collect(),
            cost,
            od_pairs: game
                .od_pairs()
                .iter()
                .enumerate()
                .map(|(k, p)| OdPairSection {
                    origin: p.origin,
                    destination: p.destination,
                    agents: p.agents,
                    max_routes: None,
                    routes: Some(game.routes_of(k).to_vec()),
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk belief parameters: `mu_h`, `sigma_h`, `sigma_0` (row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefsFile {
    pub mu_h: Vec<f64>,
    pub sigma_h: Vec<Vec<f64>>,
    pub sigma_0: Vec<Vec<f64>>,
}

impl BeliefsFile {
    pub fn to_beliefs(&self) -> Result<BeliefParams> {
        BeliefParams::new(
            DVector::from_row_slice(&self.mu_h),
            matrix_from_rows(&self.sigma_h, "sigma_h")?,
            matrix_from_rows(&self.sigma_0, "sigma_0")?,
        )
    }

    pub fn from_beliefs(beliefs: &BeliefParams) -> Self {
        Self {
            mu_h: beliefs.mu_h.iter().cloned().collect(),
            sigma_h: matrix_to_rows(&beliefs.sigma_h),
            sigma_0: matrix_to_rows(&beliefs.sigma_0),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk signal covariance (and optional mean): `sigma_s`, `mu_s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalFile {
    pub sigma_s: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_s: Option<Vec<f64>>,
}

impl SignalFile {
    pub fn sigma_s(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows(&self.sigma_s, "sigma_s")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
