//! Histograms, plug-in entropy and mutual information of principal
//! coordinates, and the independent-marginal replacement sampler.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact;
use crate::pca::{ComponentCoordinates, PcaError, PrincipalBasis};
use crate::rng::{self, Domain};
use crate::tensor::{self, TensorBlock, TensorError};

/// Joint bin count used unless the caller asks for more.
pub const DEFAULT_JOINT_BINS: usize = 100;
/// Components included in the pairwise matrix by default.
pub const DEFAULT_MI_COMPONENTS: usize = 32;

const SHARD: usize = 16_384;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("{n} samples cannot fill {bins} bins")]
    InsufficientData { n: usize, bins: usize },
    #[error("component {0} is constant; its histogram would have zero width")]
    Degenerate(usize),
    #[error("component {component} out of range for {count} coordinates")]
    ComponentOutOfRange { component: usize, count: usize },
    #[error("no histogram supplied for retained component {0}")]
    MissingHistogram(usize),
    #[error("sample {sample} has a non-finite value at component {component}")]
    NonFinite { sample: usize, component: usize },
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform-width bins over the observed `[min, max]` of one component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalHistogram {
    pub component: usize,
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
    pub n: u64,
}

/// Bin of `v` in `bins` uniform bins over `[min, max]`. A value on an
/// interior edge goes to the lower bin; `min` itself lands in bin 0.
fn bin_index(v: f64, min: f64, max: f64, bins: usize) -> usize {
    let t = (v - min) / (max - min) * bins as f64;
    (t.ceil() as isize - 1).clamp(0, bins as isize - 1) as usize
}

fn column_range(coords: &[ComponentCoordinates], j: usize) -> Result<(f64, f64), StatsError> {
    let (min, max) = coords
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let v = c.0[j];
            if v.is_finite() {
                Ok((v, v))
            } else {
                Err(StatsError::NonFinite {
                    sample: i,
                    component: j,
                })
            }
        })
        .try_reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| Ok((a.0.min(b.0), a.1.max(b.1))),
        )?;
    if min >= max {
        return Err(StatsError::Degenerate(j));
    }
    Ok((min, max))
}

fn check_inputs(coords: &[ComponentCoordinates], components: &[usize], bins: usize) -> Result<(), StatsError> {
    if bins < 2 {
        return Err(StatsError::TooFewBins(bins));
    }
    if coords.len() < bins {
        return Err(StatsError::InsufficientData { n: coords.len(), bins });
    }
    let count = coords.iter().map(|c| c.len()).min().unwrap_or(0);
    for &j in components {
        if j >= count {
            return Err(StatsError::ComponentOutOfRange { component: j, count });
        }
    }
    Ok(())
}

fn add_counts(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    a
}

impl MarginalHistogram {
    pub fn from_parts(component: usize, min: f64, max: f64, counts: Vec<u64>) -> Result<Self, StatsError> {
        if counts.is_empty() {
            return Err(StatsError::TooFewBins(0));
        }
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(StatsError::InvalidHistogram(format!("range [{min}, {max}]")));
        }
        let n = counts.iter().sum();
        if n == 0 {
            return Err(StatsError::InvalidHistogram("no samples".into()));
        }
        Ok(Self {
            component,
            min,
            max,
            counts,
            n,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins() as f64
    }

    /// `B + 1` edges from `min` to `max`.
    pub fn edges(&self) -> Vec<f64> {
        let b = self.bins();
        (0..=b)
            .map(|i| if i == b { self.max } else { self.min + self.width() * i as f64 })
            .collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Mean of the piecewise-uniform density the histogram describes.
    pub fn mean(&self) -> f64 {
        let w = self.width();
        let n = self.n as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(b, &c)| c as f64 * (self.min + w * (b as f64 + 0.5)))
            .sum::<f64>()
            / n
    }

    /// Variance of that density, including the within-bin uniform spread.
    pub fn variance(&self) -> f64 {
        let w = self.width();
        let m = self.mean();
        let n = self.n as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(b, &c)| {
                let d = self.min + w * (b as f64 + 0.5) - m;
                c as f64 * (d * d + w * w / 12.0)
            })
            .sum::<f64>()
            / n
    }

    /// Bin index `v` would fall into.
    pub fn bin_of(&self, v: f64) -> usize {
        if self.max == self.min {
            return 0;
        }
        bin_index(v, self.min, self.max, self.bins())
    }

    /// Inverse CDF: `u` in `[0, 1)` picks a bin, `t` in `[0, 1)` a point within it.
    pub fn quantile(&self, u: f64, t: f64) -> f64 {
        let target = u * self.n as f64;
        let mut cum = 0u64;
        let mut bin = self.bins() - 1;
        for (b, &c) in self.counts.iter().enumerate() {
            cum += c;
            if (cum as f64) > target {
                bin = b;
                break;
            }
        }
        self.min + self.width() * (bin as f64 + t)
    }
}

pub fn marginal_histogram(
    coords: &[ComponentCoordinates],
    j: usize,
    bins: usize,
) -> Result<MarginalHistogram, StatsError> {
    check_inputs(coords, &[j], bins)?;
    let (min, max) = column_range(coords, j)?;
    let counts = coords
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut c = vec![0u64; bins];
            for x in chunk {
                c[bin_index(x.0[j], min, max, bins)] += 1;
            }
            c
        })
        .reduce(|| vec![0u64; bins], add_counts);
    MarginalHistogram::from_parts(j, min, max, counts)
}

/// Plug-in entropy in bits; empty bins contribute nothing.
pub fn entropy(h: &MarginalHistogram) -> f64 {
    let n = h.n as f64;
    let mut acc = 0.0;
    for &c in &h.counts {
        if c > 0 {
            let p = c as f64 / n;
            acc -= p * p.log2();
        }
    }
    acc
}

/// Expected upward bias of the plug-in MI for independent variables.
pub fn plugin_mi_bias(joint_bins: usize, n: usize) -> f64 {
    let b = joint_bins as f64 - 1.0;
    b * b / (2.0 * n as f64 * std::f64::consts::LN_2)
}

/// Joint `bins x bins` counts of components `j` (rows) and `k` (columns).
pub fn joint_histogram(
    coords: &[ComponentCoordinates],
    j: usize,
    k: usize,
    bins: usize,
) -> Result<Vec<u64>, StatsError> {
    check_inputs(coords, &[j, k], bins)?;
    let (jmin, jmax) = column_range(coords, j)?;
    let (kmin, kmax) = column_range(coords, k)?;
    Ok(coords
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut c = vec![0u64; bins * bins];
            for x in chunk {
                let a = bin_index(x.0[j], jmin, jmax, bins);
                let b = bin_index(x.0[k], kmin, kmax, bins);
                c[a * bins + b] += 1;
            }
            c
        })
        .reduce(|| vec![0u64; bins * bins], add_counts))
}

/// Plug-in mutual information in bits with marginals taken from the joint.
///
/// The pair is evaluated in `(min, max)` order so `I(j, k)` and `I(k, j)`
/// are the same computation, and `I(j, j)` reduces term by term to the
/// entropy of `j`.
pub fn mutual_information(
    coords: &[ComponentCoordinates],
    j: usize,
    k: usize,
    joint_bins: usize,
) -> Result<f64, StatsError> {
    let (j, k) = (j.min(k), j.max(k));
    let joint = joint_histogram(coords, j, k, joint_bins)?;
    Ok(mi_from_joint(&joint, joint_bins))
}

fn mi_from_joint(joint: &[u64], bins: usize) -> f64 {
    let n: u64 = joint.iter().sum();
    let nf = n as f64;
    let mut row = vec![0u64; bins];
    let mut col = vec![0u64; bins];
    for a in 0..bins {
        for b in 0..bins {
            row[a] += joint[a * bins + b];
            col[b] += joint[a * bins + b];
        }
    }
    let log_row: Vec<f64> = row.iter().map(|&c| (c as f64 / nf).log2()).collect();
    let log_col: Vec<f64> = col.iter().map(|&c| (c as f64 / nf).log2()).collect();
    let mut acc = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let p = c as f64 / nf;
                acc += p * (p.log2() - log_row[a] - log_col[b]);
            }
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub n: u64,
    pub bins: usize,
    pub joint_bins: usize,
    /// `H_j` in bits for every coordinate.
    pub entropies: Vec<f64>,
    /// Components covered by `mutual_information`, in row order.
    pub mi_components: Vec<usize>,
    /// Symmetric matrix of `I_jk` in bits over `mi_components`.
    pub mutual_information: Vec<Vec<f64>>,
    /// Expected plug-in bias for an independent pair at this `N` and bin count.
    pub plugin_bias_bits: f64,
}

impl IndependenceReport {
    /// Entropy, MI for `mi_components`, and the plug-in bias estimate.
    pub fn compute(
        coords: &[ComponentCoordinates],
        bins: usize,
        joint_bins: usize,
        mi_components: &[usize],
    ) -> Result<Self, StatsError> {
        let k = coords.first().map_or(0, |c| c.len());
        let entropies = (0..k)
            .map(|j| marginal_histogram(coords, j, bins).map(|h| entropy(&h)))
            .collect::<Result<Vec<_>, _>>()?;
        check_inputs(coords, mi_components, joint_bins)?;
        let m = mi_components.len();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect();
        let values = pairs
            .par_iter()
            .map(|&(a, b)| mutual_information(coords, mi_components[a], mi_components[b], joint_bins))
            .collect::<Result<Vec<_>, _>>()?;
        let mut mi = vec![vec![0.0; m]; m];
        for (&(a, b), v) in pairs.iter().zip(values) {
            mi[a][b] = v;
            mi[b][a] = v;
        }
        Ok(Self {
            n: coords.len() as u64,
            bins,
            joint_bins,
            entropies,
            mi_components: mi_components.to_vec(),
            mutual_information: mi,
            plugin_bias_bits: plugin_mi_bias(joint_bins, coords.len()),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// One row per component: `j,entropy_bits,variance,cumulative_variance`.
    pub fn to_csv(&self, variances: &[f64]) -> String {
        let total: f64 = variances.iter().sum();
        let mut cum = 0.0;
        let mut out = String::from("j,entropy_bits,variance,cumulative_variance\n");
        for (j, h) in self.entropies.iter().enumerate() {
            let lambda = variances.get(j).copied().unwrap_or(f64::NAN);
            cum += lambda;
            let frac = if total > 0.0 { cum / total } else { f64::NAN };
            out.push_str(&format!("{j},{h},{lambda},{frac}\n"));
        }
        out
    }
}

/// Draws each coordinate independently from its marginal histogram and maps
/// the result back through the basis.
#[derive(Clone, Debug)]
pub struct ReplacementSampler<'a> {
    histograms: Vec<&'a MarginalHistogram>,
    basis: &'a PrincipalBasis,
}

impl<'a> ReplacementSampler<'a> {
    pub fn new(histograms: &'a [MarginalHistogram], basis: &'a PrincipalBasis) -> Result<Self, StatsError> {
        let ordered = (0..basis.k())
            .map(|j| {
                histograms
                    .iter()
                    .find(|h| h.component == j)
                    .ok_or(StatsError::MissingHistogram(j))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            histograms: ordered,
            basis,
        })
    }

    /// Coordinates of draw `index`.
    pub fn sample_coordinates(&self, seed: u64, index: u64) -> ComponentCoordinates {
        let mut rng = rng::stream(seed, Domain::Replacement, index);
        ComponentCoordinates(
            self.histograms
                .iter()
                .map(|h| {
                    let u: f64 = rng.random();
                    let t: f64 = rng.random();
                    h.quantile(u, t)
                })
                .collect(),
        )
    }

    pub fn sample(&self, seed: u64, index: u64) -> Vec<f64> {
        self.basis
            .reconstruct(&self.sample_coordinates(seed, index), None)
            .expect("one coordinate per component")
    }
}

/// A single replacement draw.
pub fn replacement_sample(
    histograms: &[MarginalHistogram],
    basis: &PrincipalBasis,
    seed: u64,
) -> Result<Vec<f64>, StatsError> {
    Ok(ReplacementSampler::new(histograms, basis)?.sample(seed, 0))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramEntry {
    component: usize,
    min: f64,
    max: f64,
    n: u64,
}

/// Writes one counts tensor per histogram plus a JSON sidecar with ranges.
pub fn save_histograms(path: &Path, histograms: &[MarginalHistogram]) -> Result<(), StatsError> {
    let tensors: Vec<TensorBlock> = histograms
        .iter()
        .map(|h| {
            let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
            TensorBlock::from_f64(vec![h.bins()], &counts)
        })
        .collect::<Result<_, _>>()?;
    let mut out = BufWriter::new(File::create(path)?);
    tensor::write_archive(&tensors.iter().collect::<Vec<_>>(), &mut out)?;
    let entries: Vec<HistogramEntry> = histograms
        .iter()
        .map(|h| HistogramEntry {
            component: h.component,
            min: h.min,
            max: h.max,
            n: h.n,
        })
        .collect();
    artifact::write_json(&artifact::sidecar_path(path), &entries)?;
    Ok(())
}

pub fn load_histograms(path: &Path) -> Result<Vec<MarginalHistogram>, StatsError> {
    let entries: Vec<HistogramEntry> = artifact::read_json(&artifact::sidecar_path(path))?;
    let tensors = tensor::read_archive(&mut BufReader::new(File::open(path)?), entries.len())?;
    entries
        .into_iter()
        .zip(tensors)
        .map(|(e, t)| {
            let counts: Vec<u64> = t.data().iter().map(|&c| c as u64).collect();
            let h = MarginalHistogram::from_parts(e.component, e.min, e.max, counts)?;
            if h.n != e.n {
                return Err(StatsError::InvalidHistogram(format!(
                    "component {} counts sum to {}, sidecar says {}",
                    e.component, h.n, e.n
                )));
            }
            Ok(h)
        })
        .collect()
}
