//! Histogram entropies and pairwise mutual information of principal
//! coordinates, written as JSON and CSV.

use layerpca::pipeline::{pipeline_fit, sample_space, FitConfig, FitSpace};
use layerpca::stats::IndependenceReport;
use layerpca::{bridge_handshake, ComponentCoordinates, GeneratorDescriptor, LatentSpace, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 2))?;
    let fit = pipeline_fit(&bridge, &FitConfig::new(FitSpace::StyleW, 20_000, 16, 0))?;
    let desc = bridge_handshake(&bridge)?;
    let (_, w) = sample_space(&bridge, &desc, FitSpace::StyleW, 1, 0, 20_000)?;
    let coords: Vec<ComponentCoordinates> = w.iter().map(|v| fit.basis.project(v)).collect::<Result<_, _>>()?;

    let report = IndependenceReport::compute(&coords, 100, 30, &[0, 1, 2, 3])?;
    for (k, h) in report.entropies.iter().enumerate().take(4) {
        println!("H(x{k}) = {h:.3} bits");
    }
    println!("I(x0; x1) = {:.4} bits", report.mutual_information[0][1]);
    print!("{}", report.to_csv(fit.basis.variances()));
    Ok(())
}
