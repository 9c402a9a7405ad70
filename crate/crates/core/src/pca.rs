//! Principal bases fitted from sample streams.
//!
//! Fitting uses a mean-tracked batch merge: each batch is centered on its own
//! mean and stacked under the running model (singular values times
//! components) together with one mean-shift row, and a thin SVD of the stack
//! yields the updated components. With `K = d` the merge is exact; for
//! `K < d` it discards the tail spectrum after every batch.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, Provenance};
use crate::linalg::{self, Matrix};
use crate::tensor::{self, TensorBlock, TensorError};

pub const DEFAULT_BATCH_SIZE: usize = 10_000;
/// Default component cap when analyzing large feature tensors.
pub const DEFAULT_FEATURE_K: usize = 128;
pub const SIGN_CONVENTION: &str = "maxabs-positive";

const ORTHONORMAL_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: u64, got: u64 },
    #[error("sample {sample} has non-finite coordinate {coordinate}")]
    NonFinite { sample: u64, coordinate: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("requested {k} components from {dim}-dimensional data")]
    InvalidComponentCount { k: usize, dim: usize },
    #[error("batch size must be positive")]
    InvalidBatchSize,
    #[error("prefix length {k_used} exceeds component count {k}")]
    PrefixTooLong { k_used: usize, k: usize },
    #[error("all explained variances are zero")]
    DegenerateSpectrum,
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean, orthonormal components (columns) and explained variances.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalBasis {
    mean: Vec<f64>,
    components: Matrix,
    variances: Vec<f64>,
    sample_count: u64,
}

/// Raw principal coordinates; divide entry `k` by `sqrt(lambda_k)` for
/// standard-deviation units.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCoordinates(pub Vec<f64>);

impl ComponentCoordinates {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    /// A single non-zero coordinate.
    pub fn axis(k: usize, index: usize, value: f64) -> Self {
        let mut v = vec![0.0; k];
        v[index] = value;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl PrincipalBasis {
    /// Validates shapes, ordering, and orthonormality.
    pub fn new(
        mean: Vec<f64>,
        components: Matrix,
        variances: Vec<f64>,
        sample_count: u64,
    ) -> Result<Self, PcaError> {
        let d = mean.len();
        let k = variances.len();
        if components.rows() != d || components.cols() != k {
            return Err(PcaError::InvalidBasis(format!(
                "components are {}x{}, expected {d}x{k}",
                components.rows(),
                components.cols()
            )));
        }
        if k > d {
            return Err(PcaError::InvalidComponentCount { k, dim: d });
        }
        if sample_count == 0 {
            return Err(PcaError::InvalidBasis("sample count must be positive".into()));
        }
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(PcaError::InvalidBasis("variances must be finite and non-negative".into()));
        }
        if variances.windows(2).any(|w| w[0] < w[1]) {
            return Err(PcaError::InvalidBasis("variances must be sorted descending".into()));
        }
        let gram = components.transpose().matmul(&components).expect("square");
        let off = gram.sub(&Matrix::identity(k)).expect("same shape").max_abs();
        if off > ORTHONORMAL_TOLERANCE {
            return Err(PcaError::InvalidBasis(format!(
                "components deviate from orthonormal by {off:e}"
            )));
        }
        Ok(Self {
            mean,
            components,
            variances,
            sample_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.variances.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `d x K`, one component per column.
    pub fn components(&self) -> &Matrix {
        &self.components
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.components.column(k)
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn std_dev(&self, k: usize) -> f64 {
        self.variances[k].sqrt()
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    /// `x = Vᵀ (v - mean)`.
    pub fn project(&self, v: &[f64]) -> Result<ComponentCoordinates, PcaError> {
        if v.len() != self.dim() {
            return Err(PcaError::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(ComponentCoordinates(
            self.components.tr_mul_vec(&centered).expect("checked"),
        ))
    }

    /// `mean + V[:, ..k_used] x[..k_used]`; `k_used = None` uses every
    /// component present in `x`.
    pub fn reconstruct(
        &self,
        x: &ComponentCoordinates,
        k_used: Option<usize>,
    ) -> Result<Vec<f64>, PcaError> {
        if x.len() > self.k() {
            return Err(PcaError::DimensionMismatch {
                expected: self.k(),
                found: x.len(),
            });
        }
        let k_used = k_used.unwrap_or(x.len());
        if k_used > self.k() {
            return Err(PcaError::PrefixTooLong {
                k_used,
                k: self.k(),
            });
        }
        if k_used > x.len() {
            return Err(PcaError::DimensionMismatch {
                expected: k_used,
                found: x.len(),
            });
        }
        let mut out = self.mean.clone();
        for i in 0..self.dim() {
            let row = self.components.row(i);
            let mut acc = 0.0;
            for k in 0..k_used {
                acc += row[k] * x.0[k];
            }
            out[i] += acc;
        }
        Ok(out)
    }

    /// Reduced-rank projection `V_K V_Kᵀ (v - mean) + mean`.
    pub fn reduce(&self, v: &[f64], k_used: usize) -> Result<Vec<f64>, PcaError> {
        let x = self.project(v)?;
        self.reconstruct(&x, Some(k_used))
    }

    /// `(count, cumulative fraction)` for `count = 1..=K`.
    pub fn variance_spectrum(&self) -> Result<Vec<(usize, f64)>, PcaError> {
        variance_spectrum(&self.variances)
    }

    /// Writes `mean`, `components`, `variances` to `path` and a JSON sidecar
    /// next to it.
    pub fn save(&self, path: &Path, created_from: &str, provenance: Option<Provenance>) -> Result<(), PcaError> {
        let mean = TensorBlock::from_f64(vec![self.dim()], &self.mean)?;
        let comps = self.components.to_tensor();
        let vars = TensorBlock::from_f64(vec![self.k()], &self.variances)?;
        let mut out = BufWriter::new(File::create(path)?);
        tensor::write_archive(&[&mean, &comps, &vars], &mut out)?;
        let sidecar = BasisSidecar {
            dim: self.dim(),
            k: self.k(),
            n: self.sample_count,
            sign_convention: SIGN_CONVENTION.into(),
            created_from: created_from.into(),
            provenance,
        };
        artifact::write_json(&artifact::sidecar_path(path), &sidecar)?;
        Ok(())
    }

    /// Loads a basis; the sidecar must agree with the tensors.
    pub fn load(path: &Path) -> Result<(Self, BasisSidecar), PcaError> {
        let sidecar: BasisSidecar = artifact::read_json(&artifact::sidecar_path(path))?;
        let mut input = BufReader::new(File::open(path)?);
        let tensors = tensor::read_archive(&mut input, 3)?;
        let (mean, comps, vars) = (&tensors[0], &tensors[1], &tensors[2]);
        if mean.dims() != [sidecar.dim] || vars.dims() != [sidecar.k] {
            return Err(PcaError::InvalidBasis(format!(
                "sidecar declares dim={} K={}, tensors are {:?} and {:?}",
                sidecar.dim,
                sidecar.k,
                mean.dims(),
                vars.dims()
            )));
        }
        if sidecar.sign_convention != SIGN_CONVENTION {
            return Err(PcaError::InvalidBasis(format!(
                "unknown sign convention {:?}",
                sidecar.sign_convention
            )));
        }
        let components = Matrix::from_tensor(comps)?;
        let mut variances = vars.to_f64();
        // f32 rounding can reorder exact ties; clamp to keep the invariant.
        for i in 1..variances.len() {
            if variances[i] > variances[i - 1] {
                variances[i] = variances[i - 1];
            }
        }
        let basis = Self::new(mean.to_f64(), components, variances, sidecar.n)?;
        Ok((basis, sidecar))
    }
}

/// JSON metadata stored next to a basis archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSidecar {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: u64,
    pub sign_convention: String,
    pub created_from: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

pub fn variance_spectrum(variances: &[f64]) -> Result<Vec<(usize, f64)>, PcaError> {
    let mut cumulative = Vec::with_capacity(variances.len());
    let mut acc = 0.0;
    for &v in variances {
        acc += v;
        cumulative.push(acc);
    }
    // `acc` is the same sum as the final cumulative entry, so it maps to 1.0 exactly.
    if !(acc > 0.0) {
        return Err(PcaError::DegenerateSpectrum);
    }
    Ok(cumulative
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c / acc))
        .collect())
}

/// Flips each column so its largest-magnitude entry is positive; ties go to
/// the lowest index.
pub fn apply_sign_convention(components: &mut Matrix) {
    for j in 0..components.cols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..components.rows() {
            let a = components[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if components[(best, j)] < 0.0 {
            for i in 0..components.rows() {
                components[(i, j)] = -components[(i, j)];
            }
        }
    }
}

/// Neumaier-compensated running sum per coordinate.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CompensatedSum {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl CompensatedSum {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            carry: vec![0.0; d],
        }
    }

    fn add(&mut self, v: &[f64]) {
        for ((s, c), &x) in self.sum.iter_mut().zip(self.carry.iter_mut()).zip(v) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }

    fn mean(&self, n: u64) -> Vec<f64> {
        let n = n as f64;
        self.sum
            .iter()
            .zip(&self.carry)
            .map(|(s, c)| (s + c) / n)
            .collect()
    }
}

/// Streaming PCA state. Feed batches with [`partial_fit`](Self::partial_fit),
/// then call [`finish`](Self::finish).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IncrementalPca {
    dim: usize,
    k: usize,
    n_seen: u64,
    sums: CompensatedSum,
    /// Rows are components, scaled by their singular values.
    scaled_components: Vec<Vec<f64>>,
}

impl IncrementalPca {
    pub fn new(dim: usize, k: usize) -> Result<Self, PcaError> {
        if k == 0 || k > dim {
            return Err(PcaError::InvalidComponentCount { k, dim });
        }
        Ok(Self {
            dim,
            k,
            n_seen: 0,
            sums: CompensatedSum::new(dim),
            scaled_components: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn samples_seen(&self) -> u64 {
        self.n_seen
    }

    /// Current running mean.
    pub fn mean(&self) -> Vec<f64> {
        if self.n_seen == 0 {
            vec![0.0; self.dim]
        } else {
            self.sums.mean(self.n_seen)
        }
    }

    /// Merges one batch into the model.
    pub fn partial_fit<S: AsRef<[f64]>>(&mut self, batch: &[S]) -> Result<(), PcaError> {
        let m = batch.len();
        if m == 0 {
            return Ok(());
        }
        for (i, s) in batch.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != self.dim {
                return Err(PcaError::DimensionMismatch {
                    expected: self.dim,
                    found: s.len(),
                });
            }
            if let Some(c) = s.iter().position(|v| !v.is_finite()) {
                return Err(PcaError::NonFinite {
                    sample: self.n_seen + i as u64,
                    coordinate: c,
                });
            }
        }

        let mut batch_sum = CompensatedSum::new(self.dim);
        for s in batch {
            batch_sum.add(s.as_ref());
        }
        let batch_mean = batch_sum.mean(m as u64);
        let old_mean = self.mean();
        let n = self.n_seen;
        let prior = self.scaled_components.len();
        let shift_row = n > 0;
        let rows = prior + m + usize::from(shift_row);

        let mut stacked = DMatrix::<f64>::zeros(rows, self.dim);
        for (r, comp) in self.scaled_components.iter().enumerate() {
            for (c, &v) in comp.iter().enumerate() {
                stacked[(r, c)] = v;
            }
        }
        for (r, s) in batch.iter().enumerate() {
            for (c, (&v, &mu)) in s.as_ref().iter().zip(&batch_mean).enumerate() {
                stacked[(prior + r, c)] = v - mu;
            }
        }
        if shift_row {
            let weight = ((n as f64 * m as f64) / (n + m as u64) as f64).sqrt();
            for c in 0..self.dim {
                stacked[(rows - 1, c)] = weight * (old_mean[c] - batch_mean[c]);
            }
        }

        self.scaled_components = top_scaled_components(stacked, self.k);
        self.n_seen += m as u64;
        for s in batch {
            self.sums.add(s.as_ref());
        }
        Ok(())
    }

    /// Produces the basis; needs at least `K + 1` samples.
    pub fn finish(&self) -> Result<PrincipalBasis, PcaError> {
        let needed = self.k as u64 + 1;
        if self.n_seen < needed {
            return Err(PcaError::InsufficientData {
                needed,
                got: self.n_seen,
            });
        }
        let denom = (self.n_seen - 1) as f64;
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(self.k);
        let mut variances = Vec::with_capacity(self.k);
        for row in &self.scaled_components {
            let s = linalg::norm(row);
            if s == 0.0 {
                continue;
            }
            columns.push(row.iter().map(|v| v / s).collect());
            variances.push(s * s / denom);
        }
        complete_orthonormal(&mut columns, self.dim, self.k);
        variances.resize(self.k, 0.0);

        // Stable sort keeps discovery order among ties.
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]));
        let variances: Vec<f64> = order.iter().map(|&i| variances[i]).collect();
        let ordered: Vec<&Vec<f64>> = order.iter().map(|&i| &columns[i]).collect();
        let mut components = Matrix::from_fn(self.dim, self.k, |i, j| ordered[j][i]);
        apply_sign_convention(&mut components);
        PrincipalBasis::new(self.mean(), components, variances, self.n_seen)
    }

    /// Serializes the exact `f64` state as JSON.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), PcaError> {
        artifact::write_json(path, self)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, PcaError> {
        let state: Self = artifact::read_json(path)?;
        if state.k == 0 || state.k > state.dim || state.sums.sum.len() != state.dim {
            return Err(PcaError::InvalidBasis("corrupt checkpoint".into()));
        }
        Ok(state)
    }
}

/// Thin SVD of `stacked`, returning up to `k` rows `s_i * v_iᵀ` ordered by
/// descending singular value.
fn top_scaled_components(stacked: DMatrix<f64>, k: usize) -> Vec<Vec<f64>> {
    let dim = stacked.ncols();
    // Tall stacks are reduced to their triangular factor first; the SVD of R
    // has the same singular values and right vectors.
    let reduced = if stacked.nrows() > 2 * dim {
        stacked.qr().r()
    } else {
        stacked
    };
    let svd = reduced.svd(false, true);
    let v_t = svd.v_t.expect("requested right vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order
        .into_iter()
        .take(k)
        .map(|i| {
            let s = svd.singular_values[i];
            v_t.row(i).iter().map(|v| v * s).collect()
        })
        .collect()
}

/// Extends `columns` with unit vectors orthogonal to all previous ones until
/// there are `k`, drawing candidates from the canonical basis.
fn complete_orthonormal(columns: &mut Vec<Vec<f64>>, dim: usize, k: usize) {
    let mut candidate = 0;
    while columns.len() < k && candidate < dim {
        let mut v = vec![0.0; dim];
        v[candidate] = 1.0;
        candidate += 1;
        for _pass in 0..2 {
            for c in columns.iter() {
                let d = linalg::dot(c, &v);
                for (x, y) in v.iter_mut().zip(c) {
                    *x -= d * y;
                }
            }
        }
        let n = linalg::norm(&v);
        if n > 1e-6 {
            columns.push(v.into_iter().map(|x| x / n).collect());
        }
    }
}

/// Fits a `k`-component basis, feeding `batch_size` samples at a time.
pub fn fit_pca<I, S>(samples: I, k: usize, batch_size: usize) -> Result<PrincipalBasis, PcaError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[f64]>,
{
    if batch_size == 0 {
        return Err(PcaError::InvalidBatchSize);
    }
    let mut iter = samples.into_iter().peekable();
    let dim = match iter.peek() {
        Some(s) => s.as_ref().len(),
        None => return Err(PcaError::InsufficientData { needed: k as u64 + 1, got: 0 }),
    };
    let mut model = IncrementalPca::new(dim, k)?;
    let mut batch: Vec<S> = Vec::with_capacity(batch_size.min(1 << 16));
    for s in iter {
        batch.push(s);
        if batch.len() == batch_size {
            model.partial_fit(&batch)?;
            batch.clear();
        }
    }
    model.partial_fit(&batch)?;
    model.finish()
}
