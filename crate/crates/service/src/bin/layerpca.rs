use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use layerpca::bridge::{bridge_handshake, initial_state, ToyBridge};
use layerpca::edit::{apply_edits, LatentSpace, LayeredLatentState};
use layerpca::pca::{ComponentCoordinates, PrincipalBasis};
use layerpca::pipeline::{pipeline_fit, sample_space, FitConfig, FitSpace};
use layerpca::session::encode_png;
use layerpca::stats::{self, IndependenceReport};
use layerpca::tensor::{self, TensorBlock};
use layerpca::EditSpec;
use layerpca_service::{api, open_bridge, AppState, LoadedDirections};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "layerpca", version, about = "Principal-component controls for layered generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a basis (and latent directions for feature spaces) through a bridge.
    Fit {
        /// `http://host:port` or `toy:FAMILY[:SEED][:linear]`.
        #[arg(long)]
        endpoint: String,
        /// `style-w` or `feature@LAYER[:pre|post]`.
        #[arg(long, default_value = "style-w")]
        space: FitSpace,
        #[arg(short = 'N', default_value_t = 10_000)]
        n: u64,
        #[arg(short = 'K', default_value_t = 16)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = layerpca::pca::DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        /// Checkpoint file, written after each batch and resumed when present.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entropy and mutual information of principal coordinates.
    Stats {
        #[arg(long)]
        basis: PathBuf,
        /// `[N, K]` coordinates. Without it, samples are drawn from `--endpoint`.
        #[arg(long)]
        coords: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(short = 'N', default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value_t = stats::DEFAULT_JOINT_BINS)]
        joint_bins: usize,
        /// Leading components included in the MI matrix.
        #[arg(long, default_value_t = stats::DEFAULT_MI_COMPONENTS)]
        mi_components: usize,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also write the marginal histograms.
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
    /// Apply an edit set or edit list to a saved latent state.
    Edit {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value = "style")]
        space: LatentSpace,
        /// Edit set JSON, or one edit / a list of edits.
        #[arg(long)]
        spec: PathBuf,
        /// Basis or directions file the edits refer to.
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a latent state to PNG or GSPC (chosen by the `--out` extension).
    Render {
        #[arg(long)]
        endpoint: String,
        /// Saved state; without it the anchor of `--seed` is rendered.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the session API and bridge protocol.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Generator endpoint; defaults to the in-process style toy.
        #[arg(long, default_value = "toy:style")]
        bridge: String,
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Directory holding saved edit sets.
        #[arg(long)]
        editsets: Option<PathBuf>,
    },
    /// Serve the toy generator over the bridge protocol, or describe it.
    Toy {
        #[arg(long, default_value = "style")]
        family: LatentSpace,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        linear: bool,
        #[arg(long, default_value_t = 8700)]
        port: u16,
        /// Print the descriptor and exit.
        #[arg(long)]
        describe: bool,
        /// Write the unedited state of latent `--latent-seed` to this path and exit.
        #[arg(long)]
        write_state: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        latent_seed: u64,
    },
}

fn read_tensor(path: &Path) -> Result<TensorBlock> {
    Ok(tensor::read_tensor(&mut BufReader::new(File::open(path)?))?)
}

fn write_image(path: &Path, data: &[f64], dims: &[usize]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "png") {
        std::fs::write(path, encode_png(data, dims))?;
    } else {
        std::fs::write(path, TensorBlock::from_f64(dims.to_vec(), data)?.to_bytes()?)?;
    }
    Ok(())
}

fn parse_edits(text: &str) -> Result<Vec<EditSpec>> {
    if let Ok(set) = layerpca::EditSet::from_json(text) {
        return Ok(set.edits.iter().map(|e| e.spec()).collect());
    }
    let value: serde_json::Value = serde_json::from_str(text)?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    Ok(items
        .into_iter()
        .map(layerpca::editset::spec_from_json)
        .collect::<std::result::Result<_, _>>()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            endpoint,
            space,
            n,
            k,
            seed,
            batch_size,
            checkpoint,
            out,
        } => {
            let bridge = open_bridge(&endpoint)?;
            let mut cfg = FitConfig::new(space, n, k, seed).batch_size(batch_size);
            cfg.checkpoint = checkpoint;
            let fit = pipeline_fit(bridge.as_ref(), &cfg)?;
            for p in fit.save(&out)? {
                println!("wrote {}", p.display());
            }
            let spectrum = fit.basis.variance_spectrum()?;
            for (count, frac) in spectrum.iter().take(8) {
                println!("K={count:<4} explained {:.4}", frac);
            }
        }
        Command::Stats {
            basis,
            coords,
            endpoint,
            n,
            seed,
            bins,
            joint_bins,
            mi_components,
            json,
            csv,
            histograms,
        } => {
            let (b, sidecar) = PrincipalBasis::load(&basis)?;
            let coords: Vec<ComponentCoordinates> = match (coords, endpoint) {
                (Some(path), _) => read_tensor(&path)?.to_rows().into_iter().map(ComponentCoordinates).collect(),
                (None, Some(ep)) => {
                    let space: FitSpace = sidecar
                        .provenance
                        .as_ref()
                        .and_then(|p| p.space.as_deref())
                        .unwrap_or(&sidecar.created_from)
                        .parse()?;
                    let bridge = open_bridge(&ep)?;
                    let desc = bridge_handshake(bridge.as_ref())?;
                    let (_, x) = sample_space(bridge.as_ref(), &desc, space, seed, 0, n as usize)?;
                    x.iter().map(|v| b.project(v)).collect::<std::result::Result<_, _>>()?
                }
                (None, None) => return Err("stats needs --coords or --endpoint".into()),
            };
            let bias = stats::plugin_mi_bias(joint_bins, coords.len());
            if bias > 0.01 {
                eprintln!(
                    "warning: expected plug-in MI bias at {joint_bins} joint bins and N={} is {bias:.3} bits",
                    coords.len()
                );
            }
            let subset: Vec<usize> = (0..mi_components.min(b.k())).collect();
            let report = IndependenceReport::compute(&coords, bins, joint_bins, &subset)?;
            if let Some(p) = &histograms {
                let hs = (0..b.k())
                    .map(|j| stats::marginal_histogram(&coords, j, bins))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                stats::save_histograms(p, &hs)?;
            }
            if let Some(p) = &csv {
                std::fs::write(p, report.to_csv(b.variances()))?;
            }
            match &json {
                Some(p) => std::fs::write(p, report.to_json())?,
                None => println!("{}", report.to_json()),
            }
        }
        Command::Edit {
            state,
            space,
            spec,
            basis,
            out,
        } => {
            let s = LayeredLatentState::from_tensor(space, &read_tensor(&state)?)?;
            let specs = parse_edits(&std::fs::read_to_string(&spec)?)?;
            let source = LoadedDirections::load(&basis)?;
            let edited = apply_edits(&s, &specs, source.source.as_ref())?;
            std::fs::write(&out, edited.to_tensor().to_bytes()?)?;
            println!("applied {} edits, wrote {}", specs.len(), out.display());
        }
        Command::Render {
            endpoint,
            state,
            seed,
            out,
        } => {
            let bridge = open_bridge(&endpoint)?;
            let desc = bridge_handshake(bridge.as_ref())?;
            let s = match state {
                Some(p) => LayeredLatentState::from_tensor(desc.family, &read_tensor(&p)?)?,
                None => {
                    let z = bridge.sample(1, seed, 0)?.remove(0);
                    initial_state(bridge.as_ref(), &desc, &z)?
                }
            };
            let image = bridge.synthesize(&s)?;
            write_image(&out, &image, &desc.image_dims)?;
            println!("wrote {}", out.display());
        }
        Command::Serve {
            port,
            bridge,
            basis,
            editsets,
        } => {
            let bridge = open_bridge(&bridge)?;
            let directions = basis.as_deref().map(LoadedDirections::load).transpose()?;
            let state = AppState::new(bridge, directions, editsets).map_err(|e| e.message)?;
            let router = api::service_router(state).map_err(|e| e.message)?;
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            println!("serving on http://{addr}");
            tokio::runtime::Runtime::new()?.block_on(api::serve(router, addr))?;
        }
        Command::Toy {
            family,
            seed,
            linear,
            port,
            describe,
            write_state,
            latent_seed,
        } => {
            let desc = layerpca::GeneratorDescriptor::toy(family, seed).linear(linear);
            let bridge = Arc::new(ToyBridge::new(desc)?);
            if describe {
                println!("{}", serde_json::to_string_pretty(&bridge_handshake(bridge.as_ref())?)?);
                return Ok(());
            }
            if let Some(path) = write_state {
                let z = bridge.generator().sample_latents(1, latent_seed).remove(0);
                let s = bridge.generator().initial_state(&z)?;
                std::fs::write(&path, s.to_tensor().to_bytes()?)?;
                println!("wrote {}", path.display());
                return Ok(());
            }
            let router = layerpca_service::bridge_routes(bridge).map_err(|e| e.message)?;
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            println!("toy bridge on http://{addr}");
            tokio::runtime::Runtime::new()?.block_on(api::serve(router, addr))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
