//! Command-line front end: simulate single trajectories, generate datasets,
//! train and evaluate the neural nonlinearity, and render results to
//! WAV/CSV.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use modalode::dataset::{open_dataset, replay_bundle, DatasetManifest, TrajectoryBundle};
use modalode::error::Error;
use modalode::evaluation::{evaluate_model, parse_horizons};
use modalode::excitation::{
    desk_test_ranges, desk_train_ranges, paper_test_ranges, paper_train_ranges, ParameterRanges,
    PluckParams, DESK_MODE_COUNT,
};
use modalode::integrator::{rollout, SimulationGrid};
use modalode::modal::{build_modal_system, mode_shape_vector, ScaledStringParams, State};
use modalode::neural::MlpNetwork;
use modalode::nonlinearity::{CouplingTensor, LumpedNonlinearity};
use modalode::oscillator::{desk_oscillator_config, paper_oscillator_config, OscillatorConfig};
use modalode::render::{stft_magnitudes, write_signal_csv, write_stft_csv, write_wav, RenderOptions};
use modalode::training::{train, TrainingConfig};
use modalode::{generate_dataset, generate_oscillator_dataset, Nonlinearity, ZeroNonlinearity};

#[derive(Parser)]
#[command(name = "modalode", about = "Nonlinear string simulation and neural surrogate training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Published training setup: 100 modes, 2 s at 88.2 kHz, 60 trajectories.
    StringTrain,
    /// Published held-out setup: randomised string, 3 s at 96 kHz.
    StringTest,
    /// Reduced string training setup (16 modes, 0.25 s at 44.1 kHz).
    StringDeskTrain,
    /// Reduced held-out string setup at 48 kHz.
    StringDeskTest,
    /// Oscillator with cubic nonlinearity, published scale.
    OscCubic,
    /// Oscillator with sinh nonlinearity, published scale.
    OscSinh,
    /// Reduced cubic oscillator setup.
    OscDeskCubic,
    /// Reduced sinh oscillator setup.
    OscDeskSinh,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory with explicit parameters and save the bundle.
    Simulate {
        #[arg(long, default_value_t = 123.4)]
        gamma: f64,
        #[arg(long, default_value_t = 1.01)]
        kappa: f64,
        #[arg(long, default_value_t = 3.0)]
        sigma0: f64,
        #[arg(long, default_value_t = 2e-4)]
        sigma1: f64,
        #[arg(long, default_value_t = 100)]
        modes: usize,
        #[arg(long, default_value_t = 88_200.0)]
        sample_rate: f64,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.3)]
        excite_pos: f64,
        #[arg(long, default_value_t = 0.7)]
        output_pos: f64,
        #[arg(long, default_value_t = 2.5e4)]
        amplitude: f64,
        #[arg(long, default_value_t = 1e-3)]
        pluck_duration: f64,
        /// Run despite a failing linear stability check.
        #[arg(long)]
        force: bool,
        /// Output bundle path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a ground-truth dataset from a named profile or a JSON config.
    GenDataset {
        #[arg(long, conflicts_with = "config")]
        profile: Option<Profile>,
        /// JSON file holding either string parameter ranges (with a
        /// `mode_count` sibling field) or an oscillator configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the neural nonlinearity on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1.0)]
        segment_ms: f64,
        #[arg(long, default_value_t = 0.2)]
        validation_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        #[arg(long, default_value_t = 5)]
        hidden_layers: usize,
        /// Hidden width; defaults to the dataset's mode count.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        net_seed: u64,
    },
    /// Evaluate a trained model (or the linear baseline alone) on a dataset.
    Eval {
        /// Trained model file; omit to score only the linear baseline.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated horizon list, e.g. `100ms,full`.
        #[arg(long, default_value = "100ms,full")]
        horizons: String,
        #[arg(long)]
        force: bool,
        /// Report output path (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Optional directory for per-mode CSV tables.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Render a trajectory bundle to WAV/CSV/STFT.
    Render {
        #[arg(long)]
        bundle: PathBuf,
        /// Re-integrate with this model instead of using the stored signal.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        wav: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        stft: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        bit_depth: u16,
        #[arg(long, default_value_t = -1.0)]
        dbfs: f64,
        #[arg(long, default_value_t = 1024)]
        window: usize,
        #[arg(long, default_value_t = 256)]
        hop: usize,
        #[arg(long)]
        force: bool,
    },
    /// Sample a trained model's learned force over a displacement range
    /// and write it as CSV (one input axis per column for multi-mode nets).
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        q_min: f64,
        #[arg(long, default_value_t = 1.0)]
        q_max: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise a dataset directory, bundle, model, or tensor file.
    Inspect {
        path: PathBuf,
    },
}

fn load_model(path: &Path) -> Result<MlpNetwork, Error> {
    MlpNetwork::load(path)
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    out: &'a Path,
    modes: usize,
    steps: usize,
    sample_rate: f64,
    peak_displacement: f64,
}

fn cmd_simulate(
    scaled: ScaledStringParams,
    modes: usize,
    sample_rate: f64,
    duration: f64,
    excite_pos: f64,
    output_pos: f64,
    pluck: PluckParams,
    force: bool,
    out: &Path,
) -> Result<(), Error> {
    let system = build_modal_system(&scaled, modes)?;
    let phi_e = mode_shape_vector(excite_pos, modes)?;
    let phi_out = mode_shape_vector(output_pos, modes)?;
    let steps = (duration * sample_rate).round() as usize;
    let grid = SimulationGrid::from_rate(sample_rate, steps)?;
    let tensor = CouplingTensor::build(modes);
    let pluck_seq = pluck.sample_sequence(sample_rate, steps);
    let traj = rollout(&State::zero(modes), &system, &tensor, &pluck_seq, &phi_e, &grid, force)?;
    let w = traj.readout_series(&phi_out)?;
    let peak = w.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let bundle = TrajectoryBundle {
        system,
        scaled: Some(scaled),
        pluck,
        phi_e,
        phi_out,
        output_position: output_pos,
        sample_rate,
        seed: 0,
        trajectory_index: 0,
        q: traj.q,
        p: traj.p,
        w,
        pluck_seq,
    };
    bundle.save(out)?;
    let summary = SimulateSummary {
        out,
        modes,
        steps,
        sample_rate,
        peak_displacement: peak,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_gen_dataset(
    profile: Option<Profile>,
    config: Option<PathBuf>,
    seed: u64,
    out_dir: &Path,
) -> Result<(), Error> {
    #[derive(serde::Deserialize)]
    #[serde(tag = "kind", rename_all = "kebab-case")]
    enum FileConfig {
        String { ranges: ParameterRanges, mode_count: usize },
        Oscillator { config: OscillatorConfig },
    }

    let manifest = match (profile, config) {
        (Some(p), None) => match p {
            Profile::StringTrain => generate_dataset(&paper_train_ranges(seed), 100, "string-train", out_dir)?,
            Profile::StringTest => generate_dataset(&paper_test_ranges(seed), 100, "string-test", out_dir)?,
            Profile::StringDeskTrain => {
                generate_dataset(&desk_train_ranges(seed), DESK_MODE_COUNT, "string-desk-train", out_dir)?
            }
            Profile::StringDeskTest => {
                generate_dataset(&desk_test_ranges(seed), DESK_MODE_COUNT, "string-desk-test", out_dir)?
            }
            Profile::OscCubic => generate_oscillator_dataset(
                &paper_oscillator_config(LumpedNonlinearity::Cubic, seed),
                "osc-cubic",
                out_dir,
            )?,
            Profile::OscSinh => generate_oscillator_dataset(
                &paper_oscillator_config(LumpedNonlinearity::HyperbolicSine, seed),
                "osc-sinh",
                out_dir,
            )?,
            Profile::OscDeskCubic => generate_oscillator_dataset(
                &desk_oscillator_config(LumpedNonlinearity::Cubic, seed),
                "osc-desk-cubic",
                out_dir,
            )?,
            Profile::OscDeskSinh => generate_oscillator_dataset(
                &desk_oscillator_config(LumpedNonlinearity::HyperbolicSine, seed),
                "osc-desk-sinh",
                out_dir,
            )?,
        },
        (None, Some(path)) => {
            let f: FileConfig = serde_json::from_reader(File::open(&path)?)?;
            match f {
                FileConfig::String { ranges, mode_count } => {
                    generate_dataset(&ranges, mode_count, "custom", out_dir)?
                }
                FileConfig::Oscillator { config } => {
                    generate_oscillator_dataset(&config, "custom", out_dir)?
                }
            }
        }
        _ => {
            return Err(Error::InvalidParameter(
                "pass exactly one of --profile or --config".into(),
            ))
        }
    };
    println!(
        "{}",
        serde_json::json!({
            "out_dir": out_dir,
            "name": manifest.name,
            "trajectories": manifest.trajectory_count,
            "mode_count": manifest.mode_count(),
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    dataset: &Path,
    out_dir: &Path,
    config: TrainingConfig,
    hidden_layers: usize,
    width: Option<usize>,
    alpha: f64,
    net_seed: u64,
) -> Result<(), Error> {
    let (_, bundles) = open_dataset(dataset)?;
    let m = bundles[0].mode_count();
    let net = MlpNetwork::init(m, hidden_layers, width.unwrap_or(m), alpha, net_seed)?;
    std::fs::create_dir_all(out_dir)?;
    // echo the effective configuration next to the outputs
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(out_dir.join("train_config.json"))?),
        &serde_json::json!({
            "dataset": dataset,
            "training": config,
            "network": { "input": m, "hidden_layers": hidden_layers,
                          "width": width.unwrap_or(m), "alpha": alpha, "seed": net_seed },
        }),
    )?;
    let mut log = BufWriter::new(File::create(out_dir.join("log.jsonl"))?);
    let ckpt_dir = out_dir.join("checkpoints");
    let outcome = train(&config, &bundles, net, Some(&mut log), Some(&ckpt_dir))?;
    outcome.best_network.save(&out_dir.join("best.model"))?;
    outcome.final_network.save(&out_dir.join("final.model"))?;
    println!(
        "{}",
        serde_json::json!({
            "out_dir": out_dir,
            "epochs": config.epochs,
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
            "validation_trajectories": outcome.validation_trajectories,
        })
    );
    Ok(())
}

fn cmd_eval(
    model: Option<PathBuf>,
    dataset: &Path,
    horizons: &str,
    force: bool,
    out: &Path,
    csv_dir: Option<PathBuf>,
) -> Result<(), Error> {
    let (_, bundles) = open_dataset(dataset)?;
    let horizons = parse_horizons(horizons)?;
    let net;
    let nl: &dyn Nonlinearity = match model {
        Some(p) => {
            net = load_model(&p)?;
            &net
        }
        None => &ZeroNonlinearity,
    };
    let report = evaluate_model(nl, &bundles, &horizons, force)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out)?), &report)?;
    if let Some(dir) = csv_dir {
        std::fs::create_dir_all(&dir)?;
        for agg in &report.aggregates {
            modalode::render::write_csv(
                &dir.join(format!("per_mode_{}.csv", agg.horizon)),
                &["mode", "model_mse", "linear_mse"],
                agg.per_mode_model
                    .iter()
                    .zip(&agg.per_mode_linear)
                    .enumerate()
                    .map(|(i, (&a, &b))| vec![(i + 1) as f64, a, b]),
            )?;
        }
    }
    println!("{}", serde_json::to_string_pretty(&report.aggregates)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    bundle: &Path,
    model: Option<PathBuf>,
    wav: Option<PathBuf>,
    csv: Option<PathBuf>,
    stft: Option<PathBuf>,
    opts: RenderOptions,
    window: usize,
    hop: usize,
    force: bool,
) -> Result<(), Error> {
    let b = TrajectoryBundle::load(bundle)?;
    b.validate()?;
    let w = match model {
        Some(p) => {
            let net = load_model(&p)?;
            replay_bundle(&b, &net, force)?.1
        }
        None => b.w.clone(),
    };
    if wav.is_none() && csv.is_none() && stft.is_none() {
        return Err(Error::InvalidParameter("nothing to do: pass --wav, --csv, or --stft".into()));
    }
    if let Some(p) = wav {
        let gain = write_wav(&p, &w, b.sample_rate, &opts)?;
        log::info!("wrote {} (gain {gain:.3e})", p.display());
    }
    if let Some(p) = csv {
        write_signal_csv(&p, &w, b.sample_rate)?;
    }
    if let Some(p) = stft {
        let frames = stft_magnitudes(&w, window, hop)?;
        write_stft_csv(&p, &frames, b.sample_rate, window, hop)?;
    }
    println!(
        "{}",
        serde_json::json!({ "bundle": bundle, "steps": b.steps(), "sample_rate": b.sample_rate })
    );
    Ok(())
}

fn cmd_probe(model: &Path, q_min: f64, q_max: f64, points: usize, out: &Path) -> Result<(), Error> {
    if !(q_max > q_min) || points < 2 {
        return Err(Error::InvalidParameter("need q_max > q_min and points >= 2".into()));
    }
    let net = load_model(model)?;
    let d = net.dims()[0];
    let mut header = vec!["q".to_string()];
    header.extend((1..=d).map(|i| format!("f{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..points).map(|k| {
        let q = q_min + (q_max - q_min) * k as f64 / (points - 1) as f64;
        let mut row = Vec::with_capacity(d + 1);
        row.push(q);
        let mut f = vec![0.0; d];
        for i in 0..d {
            let mut input = vec![0.0; d];
            input[i] = q;
            net.forward_value(&input, &mut f).expect("matching dims");
            row.push(f[i]);
        }
        row
    });
    modalode::render::write_csv(out, &header, rows)?;
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), Error> {
    let summary = if path.is_dir() {
        let manifest = DatasetManifest::load(path)?;
        serde_json::json!({
            "type": "dataset",
            "name": manifest.name,
            "trajectories": manifest.trajectory_count,
            "mode_count": manifest.mode_count(),
            "source": manifest.source,
        })
    } else if let Ok(b) = TrajectoryBundle::load(path) {
        serde_json::json!({
            "type": "bundle",
            "mode_count": b.mode_count(),
            "steps": b.steps(),
            "sample_rate": b.sample_rate,
            "duration_s": b.steps() as f64 / b.sample_rate,
            "trajectory_index": b.trajectory_index,
            "pluck": b.pluck,
            "peak_output": b.w.iter().fold(0.0f64, |a, &v| a.max(v.abs())),
        })
    } else if let Ok(net) = MlpNetwork::load(path) {
        serde_json::json!({
            "type": "model",
            "dims": net.dims(),
            "parameters": net.parameter_count(),
            "ops_per_eval": net.count_ops(),
            "alpha": net.alpha,
        })
    } else if let Ok(t) = CouplingTensor::load(path) {
        serde_json::json!({
            "type": "coupling-tensor",
            "mode_count": t.mode_count(),
            "canonical_entries": t.canonical_entry_count(),
            "expanded_nonzeros": t.expanded_nonzero_count(),
        })
    } else {
        return Err(Error::Format(format!("unrecognised file: {}", path.display())));
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            gamma,
            kappa,
            sigma0,
            sigma1,
            modes,
            sample_rate,
            duration,
            excite_pos,
            output_pos,
            amplitude,
            pluck_duration,
            force,
            out,
        } => {
            let scaled = ScaledStringParams::from_scaled(gamma, kappa, sigma0, sigma1)?;
            let pluck = PluckParams { amplitude, duration: pluck_duration, position: excite_pos };
            pluck.validate()?;
            cmd_simulate(scaled, modes, sample_rate, duration, excite_pos, output_pos, pluck, force, &out)
        }
        Command::GenDataset { profile, config, seed, out_dir } => {
            cmd_gen_dataset(profile, config, seed, &out_dir)
        }
        Command::Train {
            dataset,
            out_dir,
            epochs,
            learning_rate,
            batch_size,
            segment_ms,
            validation_fraction,
            seed,
            checkpoint_every,
            hidden_layers,
            width,
            alpha,
            net_seed,
        } => {
            let config = TrainingConfig {
                segment_ms,
                epochs,
                learning_rate,
                batch_size,
                validation_fraction,
                seed,
                checkpoint_every,
            };
            cmd_train(&dataset, &out_dir, config, hidden_layers, width, alpha, net_seed)
        }
        Command::Eval { model, dataset, horizons, force, out, csv_dir } => {
            cmd_eval(model, &dataset, &horizons, force, &out, csv_dir)
        }
        Command::Render { bundle, model, wav, csv, stft, bit_depth, dbfs, window, hop, force } => {
            let opts = RenderOptions { normalize_dbfs: dbfs, bit_depth };
            cmd_render(&bundle, model, wav, csv, stft, opts, window, hop, force)
        }
        Command::Probe { model, q_min, q_max, points, out } => {
            cmd_probe(&model, q_min, q_max, points, &out)
        }
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // single machine-readable line on stderr
        eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
        std::process::exit(1);
    }
}
