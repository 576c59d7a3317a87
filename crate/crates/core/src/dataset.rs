//! Ground-truth dataset generation with the exact tensor nonlinearity, and
//! trajectory bundle persistence.
//!
//! A dataset directory holds `manifest.json` plus one `traj_####.bin` per
//! trajectory. A bundle file is a single JSON header line (metadata,
//! dimensions, body length and CRC-32) followed by a raw binary body of
//! little-endian f64 arrays in order: `q` (row-major step x mode), `p`,
//! `w`, pluck force sequence.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::{draw_trajectory_params, ParameterRanges, PluckParams};
use crate::integrator::{check_stability, rollout, Nonlinearity, SimulationGrid};
use crate::modal::{build_modal_system, mode_shape_vector, readout, ModalSystem, ScaledStringParams, State};
use crate::nonlinearity::CouplingTensor;
use crate::oscillator::OscillatorConfig;

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// A sampled ground-truth or predicted trajectory with its generating
/// parameters. `q` and `p` are row-major `steps x mode_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub system: ModalSystem,
    /// Scaled string parameters when the bundle came from the string model.
    pub scaled: Option<ScaledStringParams>,
    pub pluck: PluckParams,
    /// Excitation projection vector (mode shapes at x_e for strings, `[1]`
    /// for the lumped oscillator).
    pub phi_e: Vec<f64>,
    /// Readout projection vector.
    pub phi_out: Vec<f64>,
    pub output_position: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub trajectory_index: u64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub w: Vec<f64>,
    pub pluck_seq: Vec<f64>,
}

impl TrajectoryBundle {
    pub fn mode_count(&self) -> usize {
        self.system.mode_count()
    }

    pub fn steps(&self) -> usize {
        self.w.len()
    }

    pub fn grid(&self) -> SimulationGrid {
        SimulationGrid { dt: 1.0 / self.sample_rate, steps: self.steps() }
    }

    pub fn q_at(&self, n: usize) -> &[f64] {
        let m = self.mode_count();
        &self.q[n * m..(n + 1) * m]
    }

    pub fn p_at(&self, n: usize) -> &[f64] {
        let m = self.mode_count();
        &self.p[n * m..(n + 1) * m]
    }

    pub fn state_at(&self, n: usize) -> State {
        State { q: self.q_at(n).to_vec(), p: self.p_at(n).to_vec() }
    }

    /// Checks dimensional consistency, finiteness and the readout invariant
    /// `w[n] = phi_out^T q[n]`.
    pub fn validate(&self) -> Result<()> {
        let m = self.mode_count();
        let n = self.steps();
        if self.q.len() != n * m || self.p.len() != n * m || self.pluck_seq.len() != n {
            return Err(Error::Format("bundle array dimensions inconsistent".into()));
        }
        if self.phi_e.len() != m || self.phi_out.len() != m {
            return Err(Error::Format("projection vector length mismatch".into()));
        }
        if !self.q.iter().chain(&self.p).chain(&self.w).all(|v| v.is_finite()) {
            return Err(Error::Format("non-finite sample in bundle".into()));
        }
        for step in 0..n {
            let w = readout(self.q_at(step), &self.phi_out)?;
            if (w - self.w[step]).abs() > 1e-12 * w.abs().max(1.0) {
                return Err(Error::Format(format!("readout invariant violated at step {step}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let m = self.mode_count();
        let n = self.steps();
        let mut body = Vec::with_capacity(8 * (2 * n * m + 2 * n));
        for v in self.q.iter().chain(&self.p).chain(&self.w).chain(&self.pluck_seq) {
            body.extend_from_slice(&v.to_le_bytes());
        }
        let header = BundleHeader {
            version: BUNDLE_VERSION,
            mode_count: m,
            steps: n,
            sample_rate: self.sample_rate,
            system: self.system.clone(),
            scaled: self.scaled,
            pluck: self.pluck,
            phi_e: self.phi_e.clone(),
            phi_out: self.phi_out.clone(),
            output_position: self.output_position,
            seed: self.seed,
            trajectory_index: self.trajectory_index,
            body_len: body.len() as u64,
            body_crc32: crc32fast::hash(&body),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        w.write_all(&body)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let header: BundleHeader = crate::nonlinearity::read_json_header(&mut r)?;
        if header.version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {}", header.version)));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() as u64 != header.body_len {
            return Err(Error::Format(format!(
                "bundle body length {} does not match header {}",
                body.len(),
                header.body_len
            )));
        }
        if crc32fast::hash(&body) != header.body_crc32 {
            return Err(Error::Format("bundle body CRC-32 mismatch".into()));
        }
        let m = header.mode_count;
        let n = header.steps;
        let expected = 8 * (2 * n * m + 2 * n);
        if body.len() != expected {
            return Err(Error::Format("bundle body size inconsistent with dimensions".into()));
        }
        let mut cursor = 0usize;
        let mut take = |count: usize| -> Vec<f64> {
            let out = body[cursor..cursor + 8 * count]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += 8 * count;
            out
        };
        let q = take(n * m);
        let p = take(n * m);
        let w = take(n);
        let pluck_seq = take(n);
        Ok(Self {
            system: header.system,
            scaled: header.scaled,
            pluck: header.pluck,
            phi_e: header.phi_e,
            phi_out: header.phi_out,
            output_position: header.output_position,
            sample_rate: header.sample_rate,
            seed: header.seed,
            trajectory_index: header.trajectory_index,
            q,
            p,
            w,
            pluck_seq,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    version: u32,
    mode_count: usize,
    steps: usize,
    sample_rate: f64,
    system: ModalSystem,
    scaled: Option<ScaledStringParams>,
    pluck: PluckParams,
    phi_e: Vec<f64>,
    phi_out: Vec<f64>,
    output_position: f64,
    seed: u64,
    trajectory_index: u64,
    body_len: u64,
    body_crc32: u32,
}

/// What generated a dataset: string parameter ranges or an oscillator
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    String { ranges: ParameterRanges, mode_count: usize },
    Oscillator { config: OscillatorConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub trajectory_index: u64,
    pub gamma: f64,
    pub kappa: f64,
    pub excite_position: f64,
    pub output_position: f64,
    pub amplitude: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub format_version: u32,
    pub source: DatasetSource,
    pub trajectory_count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn mode_count(&self) -> usize {
        match &self.source {
            DatasetSource::String { mode_count, .. } => *mode_count,
            DatasetSource::Oscillator { .. } => 1,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let file = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file = File::open(dir.join("manifest.json"))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Validate drawn parameters against the declared ranges.
    pub fn check_ranges(&self) -> Result<()> {
        if let DatasetSource::String { ranges, .. } = &self.source {
            let within = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
            for e in &self.entries {
                let ok = within(e.gamma, ranges.gamma.lo, ranges.gamma.hi)
                    && within(e.kappa, ranges.kappa.lo, ranges.kappa.hi)
                    && within(e.excite_position, ranges.excite_position.lo, ranges.excite_position.hi)
                    && within(e.output_position, ranges.output_position.lo, ranges.output_position.hi)
                    && within(e.amplitude, ranges.amplitude.lo, ranges.amplitude.hi)
                    && within(e.duration, ranges.duration.lo, ranges.duration.hi);
                if !ok {
                    return Err(Error::Format(format!(
                        "manifest entry {} outside declared ranges",
                        e.trajectory_index
                    )));
                }
            }
        }
        Ok(())
    }
}

fn bundle_file_name(index: u64) -> String {
    format!("traj_{index:04}.bin")
}

/// Simulate one string trajectory from drawn parameters.
fn simulate_string_trajectory(
    ranges: &ParameterRanges,
    mode_count: usize,
    tensor: &CouplingTensor,
    index: u64,
) -> Result<TrajectoryBundle> {
    let mut rng = ranges.trajectory_rng(index);
    let draw = draw_trajectory_params(ranges, &mut rng)?;
    let system = build_modal_system(&draw.scaled, mode_count)?;
    let phi_e = mode_shape_vector(draw.pluck.position, mode_count)?;
    let phi_out = mode_shape_vector(draw.output_position, mode_count)?;
    let steps = ranges.steps();
    let grid = SimulationGrid::from_rate(ranges.sample_rate, steps)?;
    let pluck_seq = draw.pluck.sample_sequence(ranges.sample_rate, steps);
    let traj = rollout(&State::zero(mode_count), &system, tensor, &pluck_seq, &phi_e, &grid, false)?;
    let w = traj.readout_series(&phi_out)?;
    Ok(TrajectoryBundle {
        system,
        scaled: Some(draw.scaled),
        pluck: draw.pluck,
        phi_e,
        phi_out,
        output_position: draw.output_position,
        sample_rate: ranges.sample_rate,
        seed: ranges.seed,
        trajectory_index: index,
        q: traj.q,
        p: traj.p,
        w,
        pluck_seq,
    })
}

/// Generate a complete string dataset under `out_dir`, fully deterministic
/// under the seed in `ranges`. Trajectories are generated in parallel; the
/// stability gate runs once up front on the stiffest admissible system.
pub fn generate_dataset(
    ranges: &ParameterRanges,
    mode_count: usize,
    name: &str,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    ranges.validate()?;
    let stiffest = ScaledStringParams::from_scaled(ranges.gamma.hi, ranges.kappa.hi, ranges.sigma0, ranges.sigma1)?;
    let system = build_modal_system(&stiffest, mode_count)?;
    let report = check_stability(&system, 1.0 / ranges.sample_rate);
    if !report.stable {
        return Err(Error::Unstable { k_omega: 2.0 * report.margin });
    }
    std::fs::create_dir_all(out_dir)?;
    let tensor = CouplingTensor::build(mode_count);
    let entries: Vec<ManifestEntry> = (0..ranges.trajectory_count as u64)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&index| -> Result<ManifestEntry> {
            let bundle = simulate_string_trajectory(ranges, mode_count, &tensor, index)?;
            let file = bundle_file_name(index);
            bundle.save(&out_dir.join(&file))?;
            Ok(ManifestEntry {
                file,
                trajectory_index: index,
                gamma: bundle.system.gamma,
                kappa: bundle.scaled.map(|s| s.kappa).unwrap_or(0.0),
                excite_position: bundle.pluck.position,
                output_position: bundle.output_position,
                amplitude: bundle.pluck.amplitude,
                duration: bundle.pluck.duration,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        name: name.to_string(),
        format_version: MANIFEST_VERSION,
        source: DatasetSource::String { ranges: ranges.clone(), mode_count },
        trajectory_count: ranges.trajectory_count,
        entries,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Roll out a trajectory with an arbitrary nonlinearity using a stored
/// bundle's parameters and excitation; shared by evaluation and rendering.
pub fn replay_bundle(
    bundle: &TrajectoryBundle,
    nl: &dyn Nonlinearity,
    force: bool,
) -> Result<(crate::integrator::StateTrajectory, Vec<f64>)> {
    let grid = bundle.grid();
    let traj = rollout(
        &State::zero(bundle.mode_count()),
        &bundle.system,
        nl,
        &bundle.pluck_seq,
        &bundle.phi_e,
        &grid,
        force,
    )?;
    let w = traj.readout_series(&bundle.phi_out)?;
    Ok((traj, w))
}

/// Open a dataset directory: parse the manifest, verify that every
/// referenced file exists and parses, and check range conformance.
pub fn open_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrajectoryBundle>)> {
    let manifest = DatasetManifest::load(dir)?;
    manifest.check_ranges()?;
    let bundles: Vec<TrajectoryBundle> = manifest
        .entries
        .par_iter()
        .map(|e| TrajectoryBundle::load(&dir.join(&e.file)))
        .collect::<Result<Vec<_>>>()?;
    for b in &bundles {
        b.validate()?;
    }
    Ok((manifest, bundles))
}

/// Holds the per-file paths of a dataset without loading the bodies.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = DatasetManifest::load(dir)?;
    Ok(manifest.entries.iter().map(|e| dir.join(&e.file)).collect())
}
