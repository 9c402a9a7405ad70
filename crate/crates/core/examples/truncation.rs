//! Pulls a sample toward the mean style vector and reports the distance
//! left at each psi.

use layerpca::edit::truncate;
use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::{GeneratorDescriptor, LatentSpace, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 1))?;
    let g = bridge.generator();
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 5_000, 16, 0))?;
    let state = g.initial_state(&g.sample_latents(1, 9)[0])?;
    let mean = fit.basis.mean();

    for psi in [1.0, 0.7, 0.5, 0.0] {
        let t = truncate(&state, psi, mean)?;
        let dist: f64 = t.per_layer()[0].iter().zip(mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("psi {psi:.1}: distance to mean {dist:.4}");
    }
    Ok(())
}
