//! Raised-cosine pluck forcing and randomised dataset parameter draws.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::modal::ScaledStringParams;

/// Raised-cosine pluck starting at t = 0.
///
/// The force is `f_amp/2 * (1 - cos(pi t / T_e))` on `[0, T_e]` and zero
/// elsewhere. Note the pulse reaches its maximum `f_amp` exactly at
/// `t = T_e` and then drops to zero; the discontinuity is part of the
/// definition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluckParams {
    /// Peak force amplitude in scaled force units.
    pub amplitude: f64,
    /// Pulse duration in s.
    pub duration: f64,
    /// Excitation position on the scaled domain (0, 1).
    pub position: f64,
}

impl PluckParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) || !(self.duration > 0.0) {
            return Err(Error::InvalidParameter("pluck amplitude and duration must be > 0".into()));
        }
        if !(self.position > 0.0 && self.position < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "pluck position {} outside (0, 1)",
                self.position
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            0.0
        } else {
            0.5 * self.amplitude * (1.0 - (PI * t / self.duration).cos())
        }
    }

    /// Sample the force on the integer time grid `t_n = n / fs`.
    pub fn sample_sequence(&self, sample_rate: f64, steps: usize) -> Vec<f64> {
        (0..steps).map(|n| self.value(n as f64 / sample_rate)).collect()
    }
}

/// Closed interval for a uniformly drawn parameter, serialised as `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(v: Interval) -> Self {
        [v.lo, v.hi]
    }
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo <= self.hi) {
            return Err(Error::InvalidParameter(format!("interval {name}: lo {} > hi {}", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Ranges and point values driving dataset generation, round-trippable
/// through a JSON configuration file. All quantities are in scaled string
/// units (gamma, kappa, sigma in 1/s; positions on [0, 1]; amplitudes in
/// scaled force units; durations in s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRanges {
    pub gamma: Interval,
    pub kappa: Interval,
    pub sigma0: f64,
    pub sigma1: f64,
    pub excite_position: Interval,
    pub output_position: Interval,
    pub amplitude: Interval,
    pub duration: Interval,
    /// Sampling rate in Hz.
    pub sample_rate: f64,
    /// Simulation duration in s.
    pub sim_duration: f64,
    pub trajectory_count: usize,
    pub seed: u64,
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<()> {
        self.gamma.validate("gamma")?;
        self.kappa.validate("kappa")?;
        self.excite_position.validate("excite_position")?;
        self.output_position.validate("output_position")?;
        self.amplitude.validate("amplitude")?;
        self.duration.validate("duration")?;
        if !(self.gamma.lo > 0.0) {
            return Err(Error::InvalidParameter("gamma must be > 0".into()));
        }
        if self.kappa.lo < 0.0 || self.sigma0 < 0.0 || self.sigma1 < 0.0 {
            return Err(Error::InvalidParameter("kappa, sigma0, sigma1 must be >= 0".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.sim_duration > 0.0) {
            return Err(Error::InvalidParameter("sample_rate and sim_duration must be > 0".into()));
        }
        if self.trajectory_count == 0 {
            return Err(Error::InvalidParameter("trajectory_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of time steps per trajectory, initial state included.
    pub fn steps(&self) -> usize {
        (self.sim_duration * self.sample_rate).round() as usize
    }

    /// RNG stream for one trajectory: seed selects the generator, the
    /// trajectory index selects an independent stream.
    pub fn trajectory_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// Parameters drawn for a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDraw {
    pub scaled: ScaledStringParams,
    pub pluck: PluckParams,
    pub output_position: f64,
}

/// Draw one trajectory's parameters. Each ranged quantity is drawn
/// independently and uniformly; the draw order (gamma, kappa, x_e, x_o,
/// amplitude, duration) is part of the reproducibility contract.
pub fn draw_trajectory_params(ranges: &ParameterRanges, rng: &mut impl Rng) -> Result<TrajectoryDraw> {
    ranges.validate()?;
    let gamma = ranges.gamma.draw(rng);
    let kappa = ranges.kappa.draw(rng);
    let x_e = ranges.excite_position.draw(rng);
    let x_o = ranges.output_position.draw(rng);
    let amplitude = ranges.amplitude.draw(rng);
    let duration = ranges.duration.draw(rng);
    let scaled = ScaledStringParams::from_scaled(gamma, kappa, ranges.sigma0, ranges.sigma1)?;
    let pluck = PluckParams { amplitude, duration, position: x_e };
    pluck.validate()?;
    Ok(TrajectoryDraw { scaled, pluck, output_position: x_o })
}

/// The published training-column ranges: a fixed 61.72 Hz string excited by
/// randomised plucks, 2 s at 88.2 kHz, 60 trajectories.
pub fn paper_train_ranges(seed: u64) -> ParameterRanges {
    ParameterRanges {
        gamma: Interval::point(123.4),
        kappa: Interval::point(1.01),
        sigma0: 3.0,
        sigma1: 2e-4,
        excite_position: Interval { lo: 0.1, hi: 0.9 },
        output_position: Interval { lo: 0.1, hi: 0.9 },
        amplitude: Interval { lo: 2e4, hi: 3e4 },
        duration: Interval { lo: 0.5e-3, hi: 1.5e-3 },
        sample_rate: 88_200.0,
        sim_duration: 2.0,
        trajectory_count: 60,
        seed,
    }
}

/// The published test-column ranges: randomised gamma/kappa (fundamentals of
/// roughly 65-123 Hz), 3 s at 96 kHz.
pub fn paper_test_ranges(seed: u64) -> ParameterRanges {
    ParameterRanges {
        gamma: Interval { lo: 130.0, hi: 246.0 },
        kappa: Interval { lo: 1.01, hi: 1.1 },
        sigma0: 2.0,
        sigma1: 2e-4,
        excite_position: Interval { lo: 0.1, hi: 0.9 },
        output_position: Interval { lo: 0.1, hi: 0.9 },
        amplitude: Interval { lo: 2e4, hi: 3e4 },
        duration: Interval { lo: 0.5e-3, hi: 1.5e-3 },
        sample_rate: 96_000.0,
        sim_duration: 3.0,
        trajectory_count: 60,
        seed,
    }
}

/// Mode count paired with the desk-scale ranges below.
pub const DESK_MODE_COUNT: usize = 16;

/// Reduced training ranges sized to run in minutes on a laptop: the same
/// string as the published training column, truncated to 16 modes, excited
/// harder so the cubic coupling stays clearly visible over 0.25 s at
/// 44.1 kHz.
pub fn desk_train_ranges(seed: u64) -> ParameterRanges {
    ParameterRanges {
        gamma: Interval::point(123.4),
        kappa: Interval::point(1.01),
        sigma0: 3.0,
        sigma1: 2e-4,
        excite_position: Interval { lo: 0.1, hi: 0.9 },
        output_position: Interval { lo: 0.1, hi: 0.9 },
        amplitude: Interval { lo: 1e4, hi: 2e4 },
        duration: Interval { lo: 0.5e-3, hi: 1.5e-3 },
        sample_rate: 44_100.0,
        sim_duration: 0.25,
        trajectory_count: 8,
        seed,
    }
}

/// Desk-scale held-out ranges: unseen plucks on the same string, sampled at
/// 48 kHz to exercise rate transfer.
pub fn desk_test_ranges(seed: u64) -> ParameterRanges {
    ParameterRanges {
        sample_rate: 48_000.0,
        trajectory_count: 4,
        ..desk_train_ranges(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pluck() -> PluckParams {
        PluckParams { amplitude: 2.5e4, duration: 1e-3, position: 0.3 }
    }

    #[test]
    fn pluck_closed_form_points() {
        let p = pluck();
        assert_eq!(p.value(0.0), 0.0);
        assert_relative_eq!(p.value(p.duration), p.amplitude, max_relative = 1e-12);
        assert_relative_eq!(p.value(p.duration / 2.0), p.amplitude / 2.0, max_relative = 1e-12);
        assert_eq!(p.value(-1e-9), 0.0);
        assert_eq!(p.value(p.duration + 1e-9), 0.0);
    }

    #[test]
    fn pluck_support_and_bound() {
        let p = pluck();
        let seq = p.sample_sequence(88_200.0, 1024);
        // non-zero only after index 0 while n/fs <= T_e
        let nonzero = seq.iter().filter(|v| **v != 0.0).count();
        let expected = (0..1024).filter(|&n| {
            let t = n as f64 / 88_200.0;
            t > 0.0 && t <= p.duration
        }).count();
        assert_eq!(nonzero, expected);
        assert_eq!(expected, 88); // floor(88.2) samples inside (0, 1 ms]
        assert!(seq.iter().all(|&v| v <= p.amplitude + 1e-12));
    }

    #[test]
    fn denser_grid_contains_coarser_samples() {
        let p = pluck();
        let coarse = p.sample_sequence(44_100.0, 128);
        let dense = p.sample_sequence(88_200.0, 256);
        for (n, &v) in coarse.iter().enumerate() {
            assert_eq!(dense[2 * n], v);
        }
        assert_eq!(p.sample_sequence(88_200.0, 1), vec![0.0]);
    }

    #[test]
    fn degenerate_interval_and_determinism() {
        let ranges = paper_train_ranges(42);
        let mut rng = ranges.trajectory_rng(0);
        let d1 = draw_trajectory_params(&ranges, &mut rng).unwrap();
        assert_eq!(d1.scaled.gamma, 123.4);
        assert_eq!(d1.scaled.kappa, 1.01);
        assert!((0.1..0.9).contains(&d1.pluck.position));
        assert!((2e4..3e4).contains(&d1.pluck.amplitude));
        assert!((0.5e-3..1.5e-3).contains(&d1.pluck.duration));
        let mut rng2 = ranges.trajectory_rng(0);
        let d2 = draw_trajectory_params(&ranges, &mut rng2).unwrap();
        assert_eq!(d1, d2);
        // distinct streams give distinct draws
        let mut rng3 = ranges.trajectory_rng(1);
        let d3 = draw_trajectory_params(&ranges, &mut rng3).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn excitation_position_draws_are_uniform() {
        // Kolmogorov-Smirnov test of 10000 x_e draws against U[0.1, 0.9].
        let ranges = paper_train_ranges(9);
        let n = 10_000usize;
        let mut xs: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = ranges.trajectory_rng(i as u64);
                draw_trajectory_params(&ranges, &mut rng).unwrap().pluck.position
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d_stat: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let cdf = ((x - 0.1) / 0.8).clamp(0.0, 1.0);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d_stat = d_stat.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        // critical value at significance 0.01
        let crit = 1.63 / (n as f64).sqrt();
        assert!(d_stat < crit, "KS statistic {d_stat} >= {crit}");
    }

    #[test]
    fn ranges_round_trip_json() {
        let ranges = paper_test_ranges(7);
        let text = serde_json::to_string_pretty(&ranges).unwrap();
        let back: ParameterRanges = serde_json::from_str(&text).unwrap();
        assert_eq!(ranges, back);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut ranges = paper_train_ranges(1);
        ranges.amplitude = Interval { lo: 3e4, hi: 2e4 };
        assert!(ranges.validate().is_err());
        let mut ranges = paper_train_ranges(1);
        ranges.trajectory_count = 0;
        assert!(ranges.validate().is_err());
    }
}
