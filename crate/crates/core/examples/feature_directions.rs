//! Generators without a mapping network: PCA runs on the features of one
//! layer and each component is carried back to the input latent by linear
//! regression.

use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::toy::Tap;
use layerpca::{GeneratorDescriptor, LatentSpace, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Skip, 3))?;
    let space = FitSpace::Feature { layer: 1, tap: Tap::Post };
    let fit = pipeline_fit(&bridge, &FitConfig::new(space, 10_000, 6, 0))?;
    let dirs = fit.directions.expect("feature fits produce directions");

    println!("directions from {}", dirs.source_layer());
    for k in 0..6 {
        let d = dirs.direction(k);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("component {k}: variance {:.4}, |u| = {norm:.3}", fit.basis.variances()[k]);
    }
    Ok(())
}
