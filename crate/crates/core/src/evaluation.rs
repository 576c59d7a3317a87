//! Free-running evaluation: roll the learned (or baseline) model out from
//! silence under the stored excitation and score it against ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{replay_bundle, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::integrator::{Nonlinearity, StateTrajectory, ZeroNonlinearity};

/// Evaluation horizon: an initial window in milliseconds or the full
/// trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    Millis(f64),
    Full,
}

impl Horizon {
    pub fn steps(&self, total_steps: usize, sample_rate: f64) -> usize {
        match self {
            Horizon::Millis(ms) => ((ms * sample_rate / 1000.0).round() as usize).clamp(1, total_steps),
            Horizon::Full => total_steps,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Horizon::Millis(ms) => format!("{ms}ms"),
            Horizon::Full => "full".into(),
        }
    }
}

/// Parse a horizon list like `100ms,full`.
pub fn parse_horizons(spec: &str) -> Result<Vec<Horizon>> {
    spec.split(',')
        .map(|tok| {
            let tok = tok.trim();
            if tok.eq_ignore_ascii_case("full") {
                Ok(Horizon::Full)
            } else if let Some(ms) = tok.strip_suffix("ms") {
                let v: f64 = ms
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad horizon '{tok}'")))?;
                if !(v > 0.0) {
                    return Err(Error::InvalidParameter(format!("horizon '{tok}' must be > 0")));
                }
                Ok(Horizon::Millis(v))
            } else {
                Err(Error::InvalidParameter(format!("bad horizon '{tok}' (use e.g. 100ms or full)")))
            }
        })
        .collect()
}

/// Relative MSE as a numerator/denominator pair, so per-trajectory values
/// can be aggregated as a ratio of sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelMse {
    pub num: f64,
    pub den: f64,
}

impl RelMse {
    pub fn value(&self) -> Result<f64> {
        if self.den == 0.0 {
            return Err(Error::InvalidParameter("relative MSE undefined: reference signal is zero".into()));
        }
        Ok(self.num / self.den)
    }

    pub fn zero() -> Self {
        RelMse { num: 0.0, den: 0.0 }
    }

    pub fn accumulate(&mut self, other: &RelMse) {
        self.num += other.num;
        self.den += other.den;
    }
}

/// Relative displacement-field MSE over all modes and the first
/// `horizon_steps` steps: `sum ||q_pred - q||^2 / sum ||q||^2`.
pub fn rel_mse_displacement(pred: &StateTrajectory, truth: &TrajectoryBundle, horizon_steps: usize) -> Result<RelMse> {
    let m = truth.mode_count();
    if pred.mode_count != m {
        return Err(Error::DimensionMismatch { expected: m, got: pred.mode_count });
    }
    let steps = horizon_steps.min(truth.steps()).min(pred.steps());
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in pred.q[..steps * m].iter().zip(&truth.q[..steps * m]) {
        let d = a - b;
        num += d * d;
        den += b * b;
    }
    Ok(RelMse { num, den })
}

/// Relative MSE of the scalar readout over the first `horizon_steps` steps.
pub fn rel_mse_output(pred_w: &[f64], truth_w: &[f64], horizon_steps: usize) -> Result<RelMse> {
    let steps = horizon_steps.min(pred_w.len()).min(truth_w.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in pred_w[..steps].iter().zip(&truth_w[..steps]) {
        let d = a - b;
        num += d * d;
        den += b * b;
    }
    Ok(RelMse { num, den })
}

/// Per-mode mean squared displacement and velocity errors over the first
/// `horizon_steps` steps.
pub fn per_mode_mse(
    pred: &StateTrajectory,
    truth: &TrajectoryBundle,
    horizon_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = truth.mode_count();
    if pred.mode_count != m {
        return Err(Error::DimensionMismatch { expected: m, got: pred.mode_count });
    }
    let steps = horizon_steps.min(truth.steps()).min(pred.steps());
    if steps == 0 {
        return Err(Error::InvalidParameter("empty horizon".into()));
    }
    let mut dq = vec![0.0; m];
    let mut dp = vec![0.0; m];
    for n in 0..steps {
        let (pq, pp) = (pred.q_at(n), pred.p_at(n));
        let (tq, tp) = (truth.q_at(n), truth.p_at(n));
        for i in 0..m {
            let a = pq[i] - tq[i];
            let b = pp[i] - tp[i];
            dq[i] += a * a;
            dp[i] += b * b;
        }
    }
    let inv = 1.0 / steps as f64;
    dq.iter_mut().for_each(|v| *v *= inv);
    dp.iter_mut().for_each(|v| *v *= inv);
    Ok((dq, dp))
}

/// Roll out the linear system (nonlinearity dropped) under the bundle's
/// excitation.
pub fn linear_baseline(bundle: &TrajectoryBundle, force: bool) -> Result<(StateTrajectory, Vec<f64>)> {
    replay_bundle(bundle, &ZeroNonlinearity, force)
}

/// Metrics of one predictor on one trajectory at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub displacement: RelMse,
    pub output: RelMse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: String,
    pub model: PredictorMetrics,
    pub linear: PredictorMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEval {
    pub trajectory_index: u64,
    pub diverged: bool,
    pub horizons: Vec<HorizonMetrics>,
}

/// Ratio-of-sums aggregate plus the mean of per-trajectory ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ratio_of_sums: f64,
    pub mean_of_ratios: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonAggregate {
    pub horizon: String,
    pub model_displacement: Aggregate,
    pub model_output: Aggregate,
    pub linear_displacement: Aggregate,
    pub linear_output: Aggregate,
    /// Per-mode displacement MSE averaged over trajectories.
    pub per_mode_model: Vec<f64>,
    pub per_mode_linear: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trajectory_count: usize,
    pub diverged_count: usize,
    pub trajectories: Vec<TrajectoryEval>,
    pub aggregates: Vec<HorizonAggregate>,
}

struct TrajectoryOutcome {
    eval: TrajectoryEval,
    /// Per-horizon per-mode displacement MSE for model and baseline.
    per_mode: Vec<(Vec<f64>, Vec<f64>)>,
}

fn eval_one(
    bundle: &TrajectoryBundle,
    model: &dyn Nonlinearity,
    horizons: &[Horizon],
    force: bool,
) -> Result<TrajectoryOutcome> {
    let (lin, lin_w) = linear_baseline(bundle, force)?;
    match replay_bundle(bundle, model, force) {
        Ok((pred, pred_w)) => {
            let mut hs = Vec::with_capacity(horizons.len());
            let mut per_mode = Vec::with_capacity(horizons.len());
            for h in horizons {
                let steps = h.steps(bundle.steps(), bundle.sample_rate);
                hs.push(HorizonMetrics {
                    horizon: h.label(),
                    model: PredictorMetrics {
                        displacement: rel_mse_displacement(&pred, bundle, steps)?,
                        output: rel_mse_output(&pred_w, &bundle.w, steps)?,
                    },
                    linear: PredictorMetrics {
                        displacement: rel_mse_displacement(&lin, bundle, steps)?,
                        output: rel_mse_output(&lin_w, &bundle.w, steps)?,
                    },
                });
                per_mode.push((per_mode_mse(&pred, bundle, steps)?.0, per_mode_mse(&lin, bundle, steps)?.0));
            }
            Ok(TrajectoryOutcome {
                eval: TrajectoryEval { trajectory_index: bundle.trajectory_index, diverged: false, horizons: hs },
                per_mode,
            })
        }
        Err(Error::Diverged { .. }) => Ok(TrajectoryOutcome {
            eval: TrajectoryEval { trajectory_index: bundle.trajectory_index, diverged: true, horizons: Vec::new() },
            per_mode: Vec::new(),
        }),
        Err(e) => Err(e),
    }
}

/// Evaluate a model against every trajectory of a dataset. Divergent
/// rollouts are flagged and excluded from the aggregates; the call fails if
/// every trajectory diverges.
pub fn evaluate_model(
    model: &dyn Nonlinearity,
    bundles: &[TrajectoryBundle],
    horizons: &[Horizon],
    force: bool,
) -> Result<EvalReport> {
    if bundles.is_empty() || horizons.is_empty() {
        return Err(Error::InvalidParameter("evaluation needs >= 1 trajectory and >= 1 horizon".into()));
    }
    let m = bundles[0].mode_count();
    let outcomes: Vec<TrajectoryOutcome> = bundles
        .par_iter()
        .map(|b| eval_one(b, model, horizons, force))
        .collect::<Result<Vec<_>>>()?;

    let diverged_count = outcomes.iter().filter(|o| o.eval.diverged).count();
    if diverged_count == bundles.len() {
        return Err(Error::Diverged { step: 0 });
    }

    let mut aggregates = Vec::with_capacity(horizons.len());
    for (hi, h) in horizons.iter().enumerate() {
        let mut sums = [RelMse::zero(); 4];
        let mut ratio_acc = [0.0f64; 4];
        let mut per_mode_model = vec![0.0; m];
        let mut per_mode_linear = vec![0.0; m];
        let mut used = 0usize;
        for o in outcomes.iter().filter(|o| !o.eval.diverged) {
            let hm = &o.eval.horizons[hi];
            let parts = [hm.model.displacement, hm.model.output, hm.linear.displacement, hm.linear.output];
            for (s, p) in sums.iter_mut().zip(&parts) {
                s.accumulate(p);
            }
            for (r, p) in ratio_acc.iter_mut().zip(&parts) {
                *r += p.value()?;
            }
            for (acc, v) in per_mode_model.iter_mut().zip(&o.per_mode[hi].0) {
                *acc += v;
            }
            for (acc, v) in per_mode_linear.iter_mut().zip(&o.per_mode[hi].1) {
                *acc += v;
            }
            used += 1;
        }
        let inv = 1.0 / used as f64;
        per_mode_model.iter_mut().for_each(|v| *v *= inv);
        per_mode_linear.iter_mut().for_each(|v| *v *= inv);
        let agg = |i: usize| -> Result<Aggregate> {
            Ok(Aggregate { ratio_of_sums: sums[i].value()?, mean_of_ratios: ratio_acc[i] * inv })
        };
        aggregates.push(HorizonAggregate {
            horizon: h.label(),
            model_displacement: agg(0)?,
            model_output: agg(1)?,
            linear_displacement: agg(2)?,
            linear_output: agg(3)?,
            per_mode_model,
            per_mode_linear,
        });
    }

    Ok(EvalReport {
        trajectory_count: bundles.len(),
        diverged_count,
        trajectories: outcomes.into_iter().map(|o| o.eval).collect(),
        aggregates,
    })
}
