//! Keeps a few principal coordinates of an anchor and redraws the rest,
//! which varies the sample while holding the fixed components in place.

use layerpca::edit::randomize_subset;
use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::{GeneratorDescriptor, LatentSpace, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 4))?;
    let g = bridge.generator();
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 5_000, 16, 0))?;
    let anchor = g.map_latent(&g.sample_latents(1, 3)[0])?;
    let fixed = [0, 1, 2];

    let a = fit.basis.project(&anchor)?;
    for seed in 0..3 {
        let w = randomize_subset(&fit.basis, &anchor, &fixed, seed)?;
        let x = fit.basis.project(&w)?;
        println!(
            "seed {seed}: kept {:.3?}, redrawn x3 {:+.3} (anchor {:+.3})",
            &x.0[..3],
            x.0[3],
            a.0[3]
        );
    }
    Ok(())
}
