//! Moves one principal component on coarse layers only, then mixes the fine
//! layers of a second sample in, and writes the three images as PNG.

use layerpca::edit::{apply_edit_layerwise, style_mix};
use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::session::encode_png;
use layerpca::{EditSpec, GeneratorDescriptor, LatentSpace, LayerRange, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 7))?;
    let g = bridge.generator();
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 10_000, 16, 0))?;

    let z = g.sample_latents(2, 42);
    let anchor = g.initial_state(&z[0])?;
    let donor = g.initial_state(&z[1])?;

    let coarse = EditSpec::new("coarse", 0, LayerRange::span(0, 1), LatentSpace::Style, 2.5);
    let edited = apply_edit_layerwise(&anchor, &coarse, &fit.basis, None)?;
    let mixed = style_mix(&edited, &donor, 4, 5)?;

    let dims = [3, 32, 32];
    let out = std::env::temp_dir();
    for (name, state) in [("anchor", &anchor), ("edited", &edited), ("mixed", &mixed)] {
        let path = out.join(format!("layerpca-{name}.png"));
        std::fs::write(&path, encode_png(&g.render(state)?, &dims))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
