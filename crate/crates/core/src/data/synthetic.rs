//! Synthetic traffic with known structure.
//!
//! Each node carries a daily cycle with a node-specific phase, a weekday
//! modulation, a short cycle whose period can switch between regimes,
//! morning and evening rush hours on weekdays whose size and timing differ
//! per node, and pulses that start at random times on random nodes and
//! travel around a ring road, one hop every `hop_delay` steps. Pulses travel clockwise before noon and
//! counter-clockwise after, and their hop gain follows the time of day, so
//! which neighbour matters changes over the day.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::PredefinedGraph;
use super::meta::{Calendar, SeriesMeta};
use super::series::RawSeries;
use crate::error::{Error, Result};
use crate::numerics::rng::{stream_rng, Stream};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub len: usize,
    pub sample_rate_minutes: u32,
    pub base_level: f64,
    pub daily_amplitude: f64,
    /// Relative amplitude change per weekday.
    pub weekday_modulation: f64,
    pub fast_period: usize,
    /// Further periods for the short cycle. When non-empty, every block of
    /// `regime_len` steps draws its period from these and `fast_period`.
    pub alt_fast_periods: Vec<usize>,
    pub regime_len: usize,
    pub fast_amplitude: f64,
    /// Peak height of the weekday rush hours; 0 disables them.
    pub rush_amplitude: f64,
    /// Expected pulses per step across the whole network.
    pub pulse_rate: f64,
    pub pulse_amplitude: f64,
    pub hop_delay: usize,
    /// Mean fraction of a pulse passed to the next node; 0 disables coupling.
    pub coupling: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_nodes: 8,
            len: 1000,
            sample_rate_minutes: 30,
            base_level: 100.0,
            daily_amplitude: 40.0,
            weekday_modulation: 0.15,
            fast_period: 8,
            alt_fast_periods: Vec::new(),
            regime_len: 16,
            fast_amplitude: 8.0,
            rush_amplitude: 30.0,
            pulse_rate: 0.05,
            pulse_amplitude: 20.0,
            hop_delay: 2,
            coupling: 0.9,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Pure per-node sinusoids: no pulses, no noise, no weekday effect.
    pub fn clean() -> Self {
        SyntheticSpec {
            weekday_modulation: 0.0,
            fast_amplitude: 0.0,
            rush_amplitude: 0.0,
            pulse_rate: 0.0,
            coupling: 0.0,
            noise_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.n_nodes < 2 {
            return bad("need at least two nodes");
        }
        if self.len == 0 {
            return bad("len must be positive");
        }
        let reals = [
            self.base_level,
            self.daily_amplitude,
            self.weekday_modulation,
            self.fast_amplitude,
            self.rush_amplitude,
            self.pulse_rate,
            self.pulse_amplitude,
            self.coupling,
            self.noise_std,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return bad("all amplitudes and rates must be finite");
        }
        if self.sample_rate_minutes == 0 || 1440 % self.sample_rate_minutes != 0 {
            return bad("sample rate must divide a day");
        }
        if self.fast_period == 0 || self.hop_delay == 0 || self.regime_len == 0 || self.alt_fast_periods.contains(&0) {
            return bad("periods and delays must be positive");
        }
        if !(0.0..=1.0).contains(&self.coupling) || !(0.0..1.0).contains(&self.weekday_modulation)
        {
            return bad("coupling in [0, 1], weekday modulation in [0, 1)");
        }
        if self.pulse_rate < 0.0 || self.noise_std < 0.0 {
            return bad("rates and noise must be non-negative");
        }
        Ok(())
    }

    /// Ring road `0 - 1 - ... - (n-1) - 0`.
    pub fn graph(&self) -> PredefinedGraph {
        let n = self.n_nodes;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        PredefinedGraph::from_edges(n, &edges).expect("ring edges are in range")
    }

    pub fn generate(&self) -> Result<(RawSeries, PredefinedGraph)> {
        self.validate()?;
        let (n, len) = (self.n_nodes, self.len);
        let cal = Calendar::new(self.sample_rate_minutes as usize, None);
        let per_day = cal.steps_per_day() as f64;
        let mut rng = stream_rng(self.seed, Stream::Synthetic, 0);

        let phase: Vec<f64> = (0..n).map(|i| TAU * i as f64 / n as f64 * 0.25).collect();
        let fast_phase: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * TAU).collect();
        let offset: Vec<f64> = (0..n).map(|i| 10.0 * (i as f64 / n as f64 - 0.5)).collect();
        // Rush hours centred at 08:00 and 17:30, shifted by up to ±1 h per node.
        let rush_scale: Vec<f64> = (0..n).map(|i| 0.3 + 1.4 * i as f64 / (n - 1) as f64).collect();
        let rush_shift: Vec<f64> = (0..n).map(|_| rng.random_range(-60.0..=60.0)).collect();
        let weekday: Vec<f64> = (0..7)
            .map(|d| 1.0 + self.weekday_modulation * (TAU * d as f64 / 7.0).sin())
            .collect();

        // Short-cycle phase, advanced step by step so period switches stay continuous.
        let periods: Vec<usize> = std::iter::once(self.fast_period).chain(self.alt_fast_periods.iter().copied()).collect();
        let mut fast = Vec::with_capacity(len);
        let (mut theta, mut period) = (0.0, self.fast_period);
        for s in 0..len {
            if periods.len() > 1 && s % self.regime_len == 0 {
                period = periods[rng.random_range(0..periods.len())];
            }
            fast.push(theta);
            theta = (theta + TAU / period as f64) % TAU;
        }

        // Pulse field: each pulse is a short bump that hops downstream.
        let mut pulse = vec![0.0; len * n];
        let shape = [0.5, 1.0, 0.8, 0.4];
        let hops = if self.coupling > 0.0 { n - 1 } else { 0 };
        for s in 0..len {
            if self.pulse_rate == 0.0 || rng.random::<f64>() >= self.pulse_rate {
                continue;
            }
            let origin = rng.random_range(0..n);
            let mut amp = self.pulse_amplitude * (0.5 + rng.random::<f64>());
            let clockwise = cal.time_of_day(s) * 2 < cal.steps_per_day();
            for hop in 0..=hops {
                let start = s + hop * self.hop_delay;
                if start >= len {
                    break;
                }
                let node = if clockwise { (origin + hop) % n } else { (origin + n - hop) % n };
                for (k, &w) in shape.iter().enumerate() {
                    if start + k < len {
                        pulse[(start + k) * n + node] += amp * w;
                    }
                }
                let tod = cal.time_of_day(start) as f64 / per_day;
                let gain = self.coupling * (0.75 + 0.25 * (TAU * tod).sin());
                amp *= gain;
            }
        }

        let noise = Normal::new(0.0, self.noise_std.max(f64::MIN_POSITIVE)).unwrap();
        let mut values = Vec::with_capacity(len * n);
        let rate = self.sample_rate_minutes as f64;
        for s in 0..len {
            let day = TAU * cal.time_of_day(s) as f64 / per_day;
            let dow = cal.day_of_week(s);
            let wk = weekday[dow];
            let minute = cal.time_of_day(s) as f64 * rate;
            for i in 0..n {
                let mut v = self.base_level
                    + offset[i]
                    + wk * self.daily_amplitude * (day - phase[i]).sin()
                    + self.fast_amplitude * (fast[s] + fast_phase[i]).sin()
                    + pulse[s * n + i];
                if dow < 5 && self.rush_amplitude > 0.0 {
                    let bump = |centre: f64| (-0.5 * ((minute - centre - rush_shift[i]) / 50.0).powi(2)).exp();
                    v += self.rush_amplitude * rush_scale[i] * (bump(480.0) + bump(1050.0));
                }
                if self.noise_std > 0.0 {
                    v += noise.sample(&mut rng);
                }
                values.push(v as f32);
            }
        }
        let meta = SeriesMeta {
            sample_rate_minutes: self.sample_rate_minutes,
            start_timestamp: None,
            num_nodes: n,
            channel_names: vec!["flow".into()],
        };
        let series = RawSeries::new(Tensor::new(vec![len, n], values)?, meta)?;
        Ok((series, self.graph()))
    }
}
