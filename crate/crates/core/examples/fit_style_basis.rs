//! Fits a principal basis of the mapped style vectors of the toy generator
//! and prints how quickly the variance is explained.

use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::{GeneratorDescriptor, LatentSpace, PrincipalBasis, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 7))?;
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 20_000, 16, 0).batch_size(2_000))?;

    for (k, frac) in fit.basis.variance_spectrum()?.iter().step_by(3) {
        println!("first {k:>2} components explain {:.1}%", 100.0 * frac);
    }

    let dir = std::env::temp_dir().join("layerpca-fit-example");
    let paths = fit.save(&dir)?;
    let (loaded, sidecar) = PrincipalBasis::load(&paths[0])?;
    // Files store single precision.
    let gap = loaded.mean().iter().zip(fit.basis.mean()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-5);
    println!("saved {} (fitted on {})", paths[0].display(), sidecar.created_from);
    Ok(())
}
