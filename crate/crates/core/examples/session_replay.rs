//! An editing session: push edits, preview an override, snapshot the stack
//! and restore it into a new session with an identical render.

use std::sync::Arc;

use layerpca::pipeline::{pipeline_fit, FitConfig, FitSpace};
use layerpca::session::Session;
use layerpca::{EditSpec, GeneratorDescriptor, LatentSpace, LayerRange, ToyBridge};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bridge = Arc::new(ToyBridge::new(GeneratorDescriptor::toy(LatentSpace::Style, 5))?);
    let fit = pipeline_fit(bridge.as_ref(), &FitConfig::new(FitSpace::StyleW, 5_000, 16, 0))?;
    let source = Some(("basis".to_string(), Arc::new(fit.basis) as _));

    let mut session = Session::new(bridge.clone(), source.clone(), 12)?;
    session.push_edit(EditSpec::new("tilt", 1, LayerRange::span(0, 2), LatentSpace::Style, 1.5))?;
    session.push_edit(EditSpec::new("tint", 4, LayerRange::span(4, 5), LatentSpace::Style, -2.0))?;

    let preview = EditSpec::new("try", 0, LayerRange::All, LatentSpace::Style, 3.0);
    let before = session.render(&[])?;
    let tried = session.render(&[preview])?;
    println!("override changed {} pixels", before.data.iter().zip(&tried.data).filter(|(a, b)| a != b).count());

    let snapshot = serde_json::to_string_pretty(&session.snapshot())?;
    println!("{snapshot}");
    let restored = Session::restore(&serde_json::from_str(&snapshot)?, bridge, source)?;
    assert_eq!(restored.render(&[])?.data, before.data);
    println!("restored session renders the same image");
    Ok(())
}
