//! Streams batches into an incremental PCA, checkpoints halfway and resumes.

use layerpca::IncrementalPca;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0)?;
    let scales = [4.0, 2.0, 1.0, 0.5, 0.25];
    let batches: Vec<Vec<Vec<f64>>> = (0..8)
        .map(|_| (0..500).map(|_| scales.iter().map(|s| s * normal.sample(&mut rng)).collect()).collect())
        .collect();

    let path = std::env::temp_dir().join("layerpca-ipca.json");
    let mut pca = IncrementalPca::new(5, 3)?;
    for b in &batches[..4] {
        pca.partial_fit(b)?;
    }
    pca.save_checkpoint(&path)?;

    let mut resumed = IncrementalPca::load_checkpoint(&path)?;
    for b in &batches[4..] {
        resumed.partial_fit(b)?;
    }
    let basis = resumed.finish()?;
    println!("{} samples, variances {:.3?}", basis.sample_count(), basis.variances());
    Ok(())
}
