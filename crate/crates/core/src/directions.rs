//! Latent-space directions regressed from feature-space coordinates, and
//! random baselines.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, Provenance};
use crate::linalg::{self, LeastSquares, LinalgError, Matrix};
use crate::pca::ComponentCoordinates;
use crate::rng::{self, Domain};
use crate::tensor::{self, TensorError};

#[derive(Debug, Error)]
pub enum DirectionError {
    #[error("regression needs more samples than components ({samples} <= {k})")]
    InsufficientData { samples: u64, k: usize },
    #[error("coordinate covariance is rank deficient; component {component} carries no signal")]
    DeadComponent { component: usize },
    #[error("direction {0} is the zero vector")]
    ZeroDirection(usize),
    #[error("requested {k} directions in {dim} dimensions")]
    TooManyDirections { k: usize, dim: usize },
    #[error("{0} latents but {1} coordinate vectors")]
    CountMismatch(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Columns `u_k` of a `d_z x K` matrix, in source component order.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalDirections {
    directions: Matrix,
    source_layer: String,
    fitted_from: u64,
    seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionsSidecar {
    pub source_layer: String,
    pub fitted_from: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl PrincipalDirections {
    pub fn new(
        directions: Matrix,
        source_layer: impl Into<String>,
        fitted_from: u64,
        seed: Option<u64>,
    ) -> Result<Self, DirectionError> {
        for k in 0..directions.cols() {
            if directions.column(k).iter().all(|&v| v == 0.0) {
                return Err(DirectionError::ZeroDirection(k));
            }
        }
        Ok(Self {
            directions,
            source_layer: source_layer.into(),
            fitted_from,
            seed,
        })
    }

    /// `d_z x K`.
    pub fn matrix(&self) -> &Matrix {
        &self.directions
    }

    pub fn direction(&self, k: usize) -> Vec<f64> {
        self.directions.column(k)
    }

    pub fn dim(&self) -> usize {
        self.directions.rows()
    }

    pub fn k(&self) -> usize {
        self.directions.cols()
    }

    pub fn source_layer(&self) -> &str {
        &self.source_layer
    }

    pub fn fitted_from(&self) -> u64 {
        self.fitted_from
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn save(&self, path: &Path, provenance: Option<Provenance>) -> Result<(), DirectionError> {
        let mut out = BufWriter::new(File::create(path)?);
        tensor::write_tensor(&self.directions.to_tensor(), &mut out)?;
        let sidecar = DirectionsSidecar {
            source_layer: self.source_layer.clone(),
            fitted_from: self.fitted_from,
            seed: self.seed,
            provenance,
        };
        artifact::write_json(&artifact::sidecar_path(path), &sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, DirectionsSidecar), DirectionError> {
        let sidecar: DirectionsSidecar = artifact::read_json(&artifact::sidecar_path(path))?;
        let t = tensor::read_tensor(&mut BufReader::new(File::open(path)?))?;
        let m = Matrix::from_tensor(&t)?;
        let dirs = Self::new(m, sidecar.source_layer.clone(), sidecar.fitted_from, sidecar.seed)?;
        Ok((dirs, sidecar))
    }
}

/// Streaming form of the regression `min_U sum_j ||U x_j - z_j||²`.
///
/// Rows `(x_jᵀ, z_jᵀ)` are absorbed into a least-squares factor, so the
/// latent set never has to be held in memory.
#[derive(Clone, Debug)]
pub struct DirectionRegression {
    k: usize,
    dim: usize,
    solver: LeastSquares,
}

impl DirectionRegression {
    pub fn new(k: usize, latent_dim: usize) -> Self {
        Self {
            k,
            dim: latent_dim,
            solver: LeastSquares::new(k, latent_dim),
        }
    }

    pub fn samples(&self) -> u64 {
        self.solver.rows_seen() as u64
    }

    pub fn push_batch<Z: AsRef<[f64]>>(
        &mut self,
        latents: &[Z],
        coords: &[ComponentCoordinates],
    ) -> Result<(), DirectionError> {
        if latents.len() != coords.len() {
            return Err(DirectionError::CountMismatch(latents.len(), coords.len()));
        }
        if latents.is_empty() {
            return Ok(());
        }
        let x = Matrix::from_rows(&coords.iter().map(|c| c.as_slice()).collect::<Vec<_>>())?;
        let z = Matrix::from_rows(&latents.iter().map(|z| z.as_ref()).collect::<Vec<_>>())?;
        if x.cols() != self.k || z.cols() != self.dim {
            return Err(LinalgError::DimensionMismatch {
                op: "DirectionRegression::push_batch",
                expected: format!("{} coordinates and {} latent entries", self.k, self.dim),
                found: format!("{} and {}", x.cols(), z.cols()),
            }
            .into());
        }
        self.solver.push(&x, &z)?;
        Ok(())
    }

    pub fn finish(&self, source_layer: impl Into<String>) -> Result<PrincipalDirections, DirectionError> {
        let n = self.samples();
        if n <= self.k as u64 {
            return Err(DirectionError::InsufficientData { samples: n, k: self.k });
        }
        // Solution is Uᵀ (K x d_z).
        let u_t = self.solver.solve().map_err(|e| match e {
            LinalgError::RankDeficient { column, .. } => DirectionError::DeadComponent { component: column },
            other => other.into(),
        })?;
        PrincipalDirections::new(u_t.transpose(), source_layer, n, None)
    }
}

/// Jointly regresses latent directions onto principal coordinates.
pub fn regress_directions<Z: AsRef<[f64]>>(
    latents: &[Z],
    coords: &[ComponentCoordinates],
    source_layer: &str,
) -> Result<PrincipalDirections, DirectionError> {
    if latents.len() != coords.len() {
        return Err(DirectionError::CountMismatch(latents.len(), coords.len()));
    }
    let k = coords.first().map_or(0, |c| c.len());
    let dim = latents.first().map_or(0, |z| z.as_ref().len());
    let mut reg = DirectionRegression::new(k, dim);
    reg.push_batch(latents, coords)?;
    reg.finish(source_layer)
}

/// `k` orthonormal directions from seeded standard-normal draws.
pub fn random_basis(dim: usize, k: usize, seed: u64) -> Result<PrincipalDirections, DirectionError> {
    if k > dim || k == 0 {
        return Err(DirectionError::TooManyDirections { k, dim });
    }
    let mut columns: Vec<Vec<f64>> = (0..k as u64)
        .map(|j| rng::normal_vector(seed, Domain::RandomBasis, j, dim))
        .collect();
    let mut redraw = k as u64;
    loop {
        let mut m = Matrix::from_columns(&columns)?;
        match linalg::orthonormalize_columns(&mut m) {
            Ok(()) => {
                return PrincipalDirections::new(m, "random", 0, Some(seed));
            }
            // A dependent draw has probability zero; replace it and retry.
            Err(j) => {
                columns[j] = rng::normal_vector(seed, Domain::RandomBasis, redraw, dim);
                redraw += 1;
            }
        }
    }
}
