//! Teacher-forced training of the neural nonlinearity: short segments are
//! re-integrated from ground-truth initial states with the network in place
//! of the exact coupling term, and the loss gradient is backpropagated
//! through the integrator stages exactly (discretise-then-optimise).

use std::io::Write as IoWrite;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrajectoryBundle;
use crate::error::{Error, Result};
use crate::modal::State;
use crate::neural::{AdamState, GradBuffer, MlpNetwork, Tape};

/// One teacher-forcing segment: re-integrated from the stored state at
/// `start`, with loss taken against steps `start+1 ..= start+len` of the
/// source trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub trajectory: usize,
    pub start: usize,
    pub len: usize,
    pub initial: State,
}

/// Segment start/length pairs partitioning a trajectory of `steps` samples
/// into windows of `segment_ms` milliseconds (truncated to whole steps),
/// with a shorter final remainder. Every step except the initial state is a
/// target of exactly one segment.
pub fn segment_starts(steps: usize, sample_rate: f64, segment_ms: f64) -> Result<Vec<(usize, usize)>> {
    if !(segment_ms > 0.0) || !(sample_rate > 0.0) {
        return Err(Error::InvalidParameter("segment_ms and sample_rate must be > 0".into()));
    }
    let seg = (segment_ms * sample_rate / 1000.0).floor() as usize;
    if seg == 0 {
        return Err(Error::InvalidParameter(format!(
            "segment of {segment_ms} ms holds no step at {sample_rate} Hz"
        )));
    }
    if steps < 2 {
        return Err(Error::InvalidParameter("trajectory too short to segment".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < steps - 1 {
        let len = seg.min(steps - 1 - start);
        out.push((start, len));
        start += len;
    }
    Ok(out)
}

/// Cut every trajectory into teacher-forcing segments.
pub fn segment_trajectories(bundles: &[TrajectoryBundle], segment_ms: f64) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for (t, b) in bundles.iter().enumerate() {
        for (start, len) in segment_starts(b.steps(), b.sample_rate, segment_ms)? {
            out.push(Segment { trajectory: t, start, len, initial: b.state_at(start) });
        }
    }
    Ok(out)
}

fn check_net_dims(net: &MlpNetwork, m: usize) -> Result<()> {
    if net.input_dim() != m || net.output_dim() != m {
        return Err(Error::DimensionMismatch { expected: m, got: net.input_dim() });
    }
    Ok(())
}

/// States and nonlinearity tapes from re-integrating one segment with the
/// network in place of the coupling term.
struct SegmentForward {
    /// `len + 1` states, the initial one included.
    states: Vec<State>,
    tapes: Vec<Tape>,
    loss: f64,
}

/// Forward re-integration of a segment. Mirrors the production Verlet step
/// exactly (a unit test pins the two paths together) while keeping the
/// network tapes needed for the backward sweep.
fn segment_forward(net: &MlpNetwork, seg: &Segment, bundle: &TrajectoryBundle) -> Result<SegmentForward> {
    let m = bundle.mode_count();
    check_net_dims(net, m)?;
    let sys = &bundle.system;
    let k = 1.0 / bundle.sample_rate;
    let half = 0.5 * k;
    let g2 = sys.gamma * sys.gamma;
    let phi_e = &bundle.phi_e;
    let norm = 1.0 / (2.0 * m as f64 * seg.len as f64);

    let mut states = Vec::with_capacity(seg.len + 1);
    let mut tapes = Vec::with_capacity(seg.len + 1);
    let (f0, tape0) = net.forward(&seg.initial.q)?;
    states.push(seg.initial.clone());
    tapes.push(tape0);
    let mut f_cur = f0;
    let mut loss = 0.0;

    for j in 0..seg.len {
        let n = seg.start + j;
        let cur = &states[j];
        let mut q_next = vec![0.0; m];
        let mut p_half = vec![0.0; m];
        for i in 0..m {
            let om2 = sys.omega[i] * sys.omega[i];
            let accel = -2.0 * sys.damping[i] * cur.p[i] - om2 * cur.q[i]
                + g2 * f_cur[i]
                + phi_e[i] * bundle.pluck_seq[n];
            p_half[i] = cur.p[i] + half * accel;
            q_next[i] = cur.q[i] + k * p_half[i];
        }
        let (f_next, tape_next) = net.forward(&q_next)?;
        let mut p_next = vec![0.0; m];
        for i in 0..m {
            let om2 = sys.omega[i] * sys.omega[i];
            let bracket =
                p_half[i] + half * (-om2 * q_next[i] + g2 * f_next[i] + phi_e[i] * bundle.pluck_seq[n + 1]);
            p_next[i] = bracket / (1.0 + k * sys.damping[i]);
        }
        let next = State { q: q_next, p: p_next };
        if !next.is_finite() {
            return Err(Error::Diverged { step: n + 1 });
        }
        let tq = bundle.q_at(n + 1);
        let tp = bundle.p_at(n + 1);
        for i in 0..m {
            let dq = next.q[i] - tq[i];
            let dp = next.p[i] - tp[i];
            loss += norm * (dq * dq + dp * dp);
        }
        states.push(next);
        tapes.push(tape_next);
        f_cur = f_next;
    }
    Ok(SegmentForward { states, tapes, loss })
}

/// Teacher-forcing loss of one segment: mean squared full-state error over
/// the segment's target steps, normalised by `2 * mode_count * len`.
pub fn segment_loss(net: &MlpNetwork, seg: &Segment, bundle: &TrajectoryBundle) -> Result<f64> {
    Ok(segment_forward(net, seg, bundle)?.loss)
}

/// Loss and exact parameter gradient of one segment, backpropagating
/// through every integrator stage. Gradients are accumulated into `grads`.
pub fn segment_grad_into(
    net: &MlpNetwork,
    seg: &Segment,
    bundle: &TrajectoryBundle,
    grads: &mut GradBuffer,
) -> Result<f64> {
    let fwd = segment_forward(net, seg, bundle)?;
    let m = bundle.mode_count();
    let sys = &bundle.system;
    let k = 1.0 / bundle.sample_rate;
    let half = 0.5 * k;
    let g2 = sys.gamma * sys.gamma;
    let norm = 1.0 / (2.0 * m as f64 * seg.len as f64);

    // Loss adjoint of a predicted state: d loss / d state.
    let loss_adjoint = |j: usize, qbar: &mut [f64], pbar: &mut [f64]| {
        let n = seg.start + j;
        let tq = bundle.q_at(n);
        let tp = bundle.p_at(n);
        let s = &fwd.states[j];
        for i in 0..m {
            qbar[i] += 2.0 * norm * (s.q[i] - tq[i]);
            pbar[i] += 2.0 * norm * (s.p[i] - tp[i]);
        }
    };

    let mut qbar = vec![0.0; m];
    let mut pbar = vec![0.0; m];
    let mut fbar = vec![0.0; m];
    loss_adjoint(seg.len, &mut qbar, &mut pbar);

    for j in (0..seg.len).rev() {
        // Third stage: p^{n+1} = D [p_half + (k/2)(-Omega^2 q^{n+1}
        // + gamma^2 f(q^{n+1}) + phi F^{n+1})], D = 1/(1 + k sigma).
        let mut phalf_bar = vec![0.0; m];
        for i in 0..m {
            let d = 1.0 / (1.0 + k * sys.damping[i]);
            let a = d * pbar[i];
            phalf_bar[i] = a;
            qbar[i] += -half * sys.omega[i] * sys.omega[i] * a;
            fbar[i] += half * g2 * a;
        }
        // The single evaluation f(q^{n+1}) feeds this step's third stage
        // and the next step's first stage; both uses are now in fbar.
        let grad_input = net.backward_into(&fwd.tapes[j + 1], &fbar, grads)?;
        for i in 0..m {
            qbar[i] += grad_input[i];
        }
        // Second stage: q^{n+1} = q^n + k p_half.
        for i in 0..m {
            phalf_bar[i] += k * qbar[i];
        }
        // First stage: p_half = (1 - k sigma) p^n
        // + (k/2)(-Omega^2 q^n + gamma^2 f(q^n) + phi F^n).
        for i in 0..m {
            let a = phalf_bar[i];
            pbar[i] = (1.0 - k * sys.damping[i]) * a;
            qbar[i] += -half * sys.omega[i] * sys.omega[i] * a;
            fbar[i] = half * g2 * a;
        }
        if j > 0 {
            loss_adjoint(j, &mut qbar, &mut pbar);
        }
    }
    // f(q^0) still depends on the parameters even though q^0 is data.
    net.backward_into(&fwd.tapes[0], &fbar, grads)?;
    Ok(fwd.loss)
}

/// Convenience wrapper allocating a fresh gradient buffer.
pub fn segment_grad(net: &MlpNetwork, seg: &Segment, bundle: &TrajectoryBundle) -> Result<(f64, GradBuffer)> {
    let mut grads = GradBuffer::zeros_like(net);
    let loss = segment_grad_into(net, seg, bundle, &mut grads)?;
    Ok((loss, grads))
}

/// Loss value reported for a segment whose rollout diverged.
pub const DIVERGED_LOSS_SENTINEL: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Teacher-forcing segment duration in milliseconds.
    pub segment_ms: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of trajectories held out for validation.
    pub validation_fraction: f64,
    /// Seed for the split and segment shuffling (independent of the
    /// network's own initialisation seed).
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.segment_ms > 0.0) {
            return Err(Error::InvalidParameter("segment_ms must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be positive and finite".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidParameter("validation_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// The published training hyperparameters: 1 ms segments, 5000 epochs,
/// Adam at 1e-3, batches of 32, 20% of trajectories held out.
pub fn paper_train_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        segment_ms: 1.0,
        epochs: 5000,
        learning_rate: 1e-3,
        batch_size: 32,
        validation_fraction: 0.2,
        seed,
        checkpoint_every: 0,
    }
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-segment loss; absent for the pre-training record.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    /// Training segments skipped this epoch because their rollout diverged.
    pub skipped: usize,
    /// Whether this epoch's validation loss is the best so far.
    pub best: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Network with the lowest validation loss seen.
    pub best_network: MlpNetwork,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Network state after the final epoch.
    pub final_network: MlpNetwork,
    pub records: Vec<EpochRecord>,
    /// Trajectory indices of the validation split.
    pub validation_trajectories: Vec<usize>,
}

fn mean_val_loss(net: &MlpNetwork, segments: &[Segment], bundles: &[TrajectoryBundle]) -> f64 {
    if segments.is_empty() {
        return f64::NAN;
    }
    let losses: Vec<f64> = segments
        .par_iter()
        .map(|s| segment_loss(net, s, &bundles[s.trajectory]).unwrap_or(DIVERGED_LOSS_SENTINEL))
        .collect();
    losses.iter().sum::<f64>() / losses.len() as f64
}

/// Train a network on a dataset of ground-truth bundles.
///
/// The split is at trajectory level so validation segments never share a
/// trajectory with training segments. Per-batch gradients are averaged over
/// the batch; segments whose rollout diverges under the current network are
/// skipped and counted, and the epoch fails if more than half of the
/// training set diverges. The run is deterministic in (config, bundles,
/// initial network).
pub fn train(
    config: &TrainingConfig,
    bundles: &[TrajectoryBundle],
    mut net: MlpNetwork,
    mut log: Option<&mut dyn IoWrite>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if bundles.len() < 2 {
        return Err(Error::InvalidParameter("training needs at least 2 trajectories".into()));
    }
    let m = bundles[0].mode_count();
    for b in bundles {
        if b.mode_count() != m {
            return Err(Error::DimensionMismatch { expected: m, got: b.mode_count() });
        }
    }
    check_net_dims(&net, m)?;

    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..bundles.len()).collect();
    order.shuffle(&mut split_rng);
    let n_val = ((config.validation_fraction * bundles.len() as f64).round() as usize)
        .clamp(1, bundles.len() - 1);
    let val_traj: Vec<usize> = order[..n_val].to_vec();
    let is_val = |t: usize| val_traj.contains(&t);

    let all_segments = segment_trajectories(bundles, config.segment_ms)?;
    let mut train_segments: Vec<Segment> = Vec::new();
    let mut val_segments: Vec<Segment> = Vec::new();
    for s in all_segments {
        if is_val(s.trajectory) {
            val_segments.push(s);
        } else {
            train_segments.push(s);
        }
    }

    let mut adam = AdamState::new(&net, config.learning_rate);
    let mut records = Vec::with_capacity(config.epochs + 1);
    let mut best_network = net.clone();
    let mut best_val_loss = mean_val_loss(&net, &val_segments, bundles);
    let mut best_epoch = 0;
    records.push(EpochRecord { epoch: 0, train_loss: None, val_loss: best_val_loss, skipped: 0, best: true });
    if let Some(w) = log.as_deref_mut() {
        serde_json::to_writer(&mut *w, records.last().unwrap())?;
        writeln!(w)?;
    }

    let mut indices: Vec<usize> = (0..train_segments.len()).collect();
    for epoch in 1..=config.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(config.seed);
        epoch_rng.set_stream(epoch as u64);
        indices.shuffle(&mut epoch_rng);

        let mut skipped = 0usize;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in indices.chunks(config.batch_size) {
            let results: Vec<Result<(f64, GradBuffer)>> = batch
                .par_iter()
                .map(|&si| {
                    let s = &train_segments[si];
                    segment_grad(&net, s, &bundles[s.trajectory])
                })
                .collect();
            let mut grads = GradBuffer::zeros_like(&net);
            let mut used = 0usize;
            for r in results {
                match r {
                    Ok((loss, g)) => {
                        grads.add_assign(&g);
                        loss_sum += loss;
                        loss_count += 1;
                        used += 1;
                    }
                    Err(Error::Diverged { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                continue;
            }
            grads.scale(1.0 / used as f64);
            adam.step(&mut net, &grads)?;
        }
        if skipped * 2 > train_segments.len() {
            return Err(Error::TrainingCollapsed { epoch, skipped, total: train_segments.len() });
        }
        let train_loss = (loss_count > 0).then(|| loss_sum / loss_count as f64);
        let val_loss = mean_val_loss(&net, &val_segments, bundles);
        let best = val_loss.is_finite() && val_loss < best_val_loss;
        if best {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_network = net.clone();
        }
        records.push(EpochRecord { epoch, train_loss, val_loss, skipped, best });
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, records.last().unwrap())?;
            writeln!(w)?;
        }
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                net.save(&dir.join(format!("ckpt_{epoch:05}.model")))?;
                adam.save(&dir.join(format!("ckpt_{epoch:05}.adam")))?;
            }
        }
    }

    Ok(TrainOutcome {
        best_network,
        best_epoch,
        best_val_loss,
        final_network: net,
        records,
        validation_trajectories: val_traj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{Interval, PluckParams};
    use crate::integrator::{rollout, SimulationGrid};
    use crate::modal::{build_modal_system, mode_shape_vector, ScaledStringParams};
    use crate::nonlinearity::CouplingTensor;

    fn tiny_bundle(mode_count: usize, steps: usize, seed: u64) -> TrajectoryBundle {
        let scaled = ScaledStringParams::from_scaled(123.4, 1.01, 3.0, 2e-4).unwrap();
        let system = build_modal_system(&scaled, mode_count).unwrap();
        let phi_e = mode_shape_vector(0.3, mode_count).unwrap();
        let phi_out = mode_shape_vector(0.7, mode_count).unwrap();
        let sample_rate = 44_100.0;
        let pluck = PluckParams { amplitude: 2.0e4 + 500.0 * seed as f64, duration: 1e-3, position: 0.3 };
        let pluck_seq = pluck.sample_sequence(sample_rate, steps);
        let tensor = CouplingTensor::build(mode_count);
        let grid = SimulationGrid::from_rate(sample_rate, steps).unwrap();
        let traj = rollout(&State::zero(mode_count), &system, &tensor, &pluck_seq, &phi_e, &grid, false).unwrap();
        let w = traj.readout_series(&phi_out).unwrap();
        TrajectoryBundle {
            system,
            scaled: Some(scaled),
            pluck,
            phi_e,
            phi_out,
            output_position: 0.7,
            sample_rate,
            seed,
            trajectory_index: seed,
            q: traj.q,
            p: traj.p,
            w,
            pluck_seq,
        }
    }

    #[test]
    fn paper_scale_segmentation_counts() {
        // 2 s at 88.2 kHz, 1 ms segments: 88 steps per full segment,
        // 2004 full segments plus a 47-target remainder
        let starts = segment_starts(176_400, 88_200.0, 1.0).unwrap();
        assert_eq!(starts.len(), 2005);
        assert!(starts[..2004].iter().all(|&(_, len)| len == 88));
        assert_eq!(starts[2004], (2004 * 88, 47));
        let covered: usize = starts.iter().map(|&(_, len)| len).sum();
        assert_eq!(covered, 176_399);
        // segments tile the target range without overlap
        for w in starts.windows(2) {
            assert_eq!(w[0].0 + w[0].1, w[1].0);
        }
    }

    #[test]
    fn segment_initial_states_match_source_bitwise() {
        let b = tiny_bundle(2, 300, 1);
        let segs = segment_trajectories(std::slice::from_ref(&b), 1.0).unwrap();
        for s in &segs {
            let re = b.state_at(s.start);
            assert!(s.initial.q.iter().zip(&re.q).all(|(a, b)| a.to_bits() == b.to_bits()));
            assert!(s.initial.p.iter().zip(&re.p).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn taped_forward_matches_production_rollout() {
        let b = tiny_bundle(3, 200, 2);
        let net = MlpNetwork::init(3, 2, 16, 0.01, 11).unwrap();
        let segs = segment_trajectories(std::slice::from_ref(&b), 1.0).unwrap();
        let seg = &segs[1];
        let fwd = segment_forward(&net, seg, &b).unwrap();
        let grid = SimulationGrid { dt: 1.0 / b.sample_rate, steps: seg.len + 1 };
        let traj = rollout(
            &seg.initial,
            &b.system,
            &net,
            &b.pluck_seq[seg.start..=seg.start + seg.len],
            &b.phi_e,
            &grid,
            false,
        )
        .unwrap();
        for j in 0..=seg.len {
            assert_eq!(fwd.states[j].q, traj.q_at(j));
            assert_eq!(fwd.states[j].p, traj.p_at(j));
        }
    }

    #[test]
    fn perfect_network_replica_gives_near_zero_loss() {
        // a network cannot equal the tensor, but the loss must vanish when
        // targets come from the same nonlinearity that re-integrates them:
        // regenerate the bundle with the network itself as ground truth
        let net = MlpNetwork::init(2, 2, 8, 0.01, 4).unwrap();
        let mut b = tiny_bundle(2, 150, 3);
        let grid = b.grid();
        let traj = rollout(&State::zero(2), &b.system, &net, &b.pluck_seq, &b.phi_e, &grid, false).unwrap();
        b.w = traj.readout_series(&b.phi_out).unwrap();
        b.q = traj.q;
        b.p = traj.p;
        let segs = segment_trajectories(std::slice::from_ref(&b), 1.0).unwrap();
        for s in &segs {
            let loss = segment_loss(&net, s, &b).unwrap();
            assert!(loss < 1e-28, "loss {loss} not at round-off level");
        }
    }

    /// Bundle whose states are O(1): free nonlinear ringing from a strongly
    /// displaced initial state, so loss gradients are far above the noise
    /// floor of central differences.
    fn ringing_bundle(mode_count: usize, steps: usize) -> TrajectoryBundle {
        let scaled = ScaledStringParams::from_scaled(123.4, 1.01, 3.0, 2e-4).unwrap();
        let system = build_modal_system(&scaled, mode_count).unwrap();
        let phi_e = mode_shape_vector(0.3, mode_count).unwrap();
        let phi_out = mode_shape_vector(0.7, mode_count).unwrap();
        let sample_rate = 44_100.0;
        // displacements around 0.3 keep the network input O(1) while the
        // loss stays small enough for well-conditioned finite differences
        let initial = State {
            q: (0..mode_count).map(|i| 0.3 / (i + 1) as f64).collect(),
            p: (0..mode_count).map(|i| 0.5 * (i as f64 - 0.5)).collect(),
        };
        let pluck_seq = vec![0.0; steps];
        let tensor = CouplingTensor::build(mode_count);
        let grid = SimulationGrid::from_rate(sample_rate, steps).unwrap();
        let traj = rollout(&initial, &system, &tensor, &pluck_seq, &phi_e, &grid, false).unwrap();
        let w = traj.readout_series(&phi_out).unwrap();
        TrajectoryBundle {
            system,
            scaled: Some(scaled),
            pluck: PluckParams { amplitude: 1.0, duration: 1e-3, position: 0.3 },
            phi_e,
            phi_out,
            output_position: 0.7,
            sample_rate,
            seed: 0,
            trajectory_index: 0,
            q: traj.q,
            p: traj.p,
            w,
            pluck_seq,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let b = ringing_bundle(2, 64);
        let mut net = MlpNetwork::init(2, 1, 8, 0.01, 9).unwrap();
        let seg = Segment { trajectory: 0, start: 8, len: 8, initial: b.state_at(8) };
        let (_, grads) = segment_grad(&net, &seg, &b).unwrap();

        let flat: Vec<f64> = grads.iter().copied().collect();
        // the loss is O(100) here, so the finite-difference step must stay
        // large enough that round-off in the loss does not dominate
        let h = 1e-4;
        let mut checked = 0usize;
        let total = net.parameter_count();
        for pi in (0..total).step_by(total / 25 + 1) {
            let orig = net.param(pi);
            net.set_param(pi, orig + h);
            let lp = segment_loss(&net, &seg, &b).unwrap();
            net.set_param(pi, orig - h);
            let lm = segment_loss(&net, &seg, &b).unwrap();
            net.set_param(pi, orig);
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(flat[pi].abs()).max(1e-12);
            assert!(
                (fd - flat[pi]).abs() / scale < 1e-5,
                "param {pi}: analytic {} vs finite-diff {fd}",
                flat[pi]
            );
            checked += 1;
        }
        assert!(checked >= 20);
    }

    #[test]
    fn zero_coupling_strength_gives_zero_gradient() {
        let mut b = tiny_bundle(2, 64, 6);
        b.system.gamma = 0.0;
        // regenerate targets under gamma = 0 so the forward pass is clean
        let grid = b.grid();
        let traj = rollout(
            &State::zero(2),
            &b.system,
            &crate::integrator::ZeroNonlinearity,
            &b.pluck_seq,
            &b.phi_e,
            &grid,
            false,
        )
        .unwrap();
        b.q = traj.q;
        b.p = traj.p;
        b.w = b.phi_out.iter().map(|_| 0.0).collect::<Vec<_>>(); // unused here
        let net = MlpNetwork::init(2, 1, 8, 0.01, 2).unwrap();
        let seg = Segment { trajectory: 0, start: 0, len: 16, initial: b.state_at(0) };
        let (loss, grads) = segment_grad(&net, &seg, &b).unwrap();
        assert!(loss < 1e-25);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    fn osc_bundles(n: usize) -> Vec<TrajectoryBundle> {
        let cfg = crate::oscillator::OscillatorConfig {
            omega0: 400.0,
            gamma: 110.0,
            nonlinearity: crate::nonlinearity::LumpedNonlinearity::Cubic,
            amplitude: Interval { lo: 4e5, hi: 8e5 },
            duration: Interval { lo: 0.5e-3, hi: 1.5e-3 },
            sample_rate: 44_100.0,
            sim_duration: 0.02,
            trajectory_count: n,
            seed: 42,
        };
        let dir = tempfile::tempdir().unwrap();
        crate::oscillator::generate_oscillator_dataset(&cfg, "osc", dir.path()).unwrap();
        let (_, bundles) = crate::dataset::open_dataset(dir.path()).unwrap();
        bundles
    }

    #[test]
    fn training_runs_deterministically_and_improves() {
        let bundles = osc_bundles(4);
        let config = TrainingConfig {
            segment_ms: 1.0,
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 8,
            validation_fraction: 0.25,
            seed: 1,
            checkpoint_every: 0,
        };
        let net = MlpNetwork::init(1, 2, 16, 0.01, 3).unwrap();
        let mut log1 = Vec::new();
        let out1 = train(&config, &bundles, net.clone(), Some(&mut log1), None).unwrap();
        let mut log2 = Vec::new();
        let out2 = train(&config, &bundles, net, Some(&mut log2), None).unwrap();
        assert_eq!(out1.records, out2.records);
        assert_eq!(log1, log2);
        assert_eq!(out1.validation_trajectories.len(), 1);
        // the JSONL log parses line by line
        let lines: Vec<EpochRecord> = String::from_utf8(log1)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines, out1.records);
        // training reduces validation loss on this easy problem
        let first = out1.records[0].val_loss;
        assert!(out1.best_val_loss < first, "no improvement: {} -> {}", first, out1.best_val_loss);
    }

    #[test]
    fn checkpoints_are_written_and_loadable() {
        let bundles = osc_bundles(3);
        let config = TrainingConfig {
            segment_ms: 1.0,
            epochs: 4,
            learning_rate: 1e-3,
            batch_size: 8,
            validation_fraction: 0.34,
            seed: 2,
            checkpoint_every: 2,
        };
        let net = MlpNetwork::init(1, 1, 8, 0.01, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train(&config, &bundles, net, None, Some(dir.path())).unwrap();
        for epoch in [2, 4] {
            let p = dir.path().join(format!("ckpt_{epoch:05}.model"));
            MlpNetwork::load(&p).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let ok = paper_train_config(0);
        ok.validate().unwrap();
        assert_eq!(ok.epochs, 5000);
        assert_eq!(ok.batch_size, 32);
        let mut bad = paper_train_config(0);
        bad.validation_fraction = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = paper_train_config(0);
        bad.learning_rate = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = paper_train_config(0);
        bad.segment_ms = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn divergent_network_segments_are_skipped_or_collapse() {
        let bundles = osc_bundles(3);
        let mut net = MlpNetwork::init(1, 1, 8, 0.01, 5).unwrap();
        // blow up the output layer so rollouts diverge immediately
        let total = net.parameter_count();
        for pi in 0..total {
            net.set_param(pi, 1e12);
        }
        let config = TrainingConfig {
            segment_ms: 1.0,
            epochs: 1,
            learning_rate: 1e-3,
            batch_size: 8,
            validation_fraction: 0.34,
            seed: 3,
            checkpoint_every: 0,
        };
        let err = train(&config, &bundles, net, None, None);
        assert!(matches!(err, Err(Error::TrainingCollapsed { .. })));
    }
}
