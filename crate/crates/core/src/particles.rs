//! Particle propagation through the motion model.
//!
//! Each particle carries its own recurrent state. At every tick the particles
//! are pushed through the model, the resulting per-particle mixtures are
//! merged into one `M * K` mixture, and `M` fresh particles are drawn from
//! it. A new particle drawn from component `c` inherits the state of
//! particle `c / K`, the one whose prediction produced that component.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{aggregate, GaussianMixture2D, MixtureIndex, Point2D, SamplingStrategy};
use crate::model::{CellState, LstmMdl};

pub const DEFAULT_HORIZON_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Point2D,
    pub weight: f64,
    pub state: CellState,
}

/// Particles of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    /// 1-based tick of the horizon.
    pub step: usize,
    pub particles: Vec<Particle>,
    /// For every particle, the index of the particle of the previous tick
    /// whose state it inherited. At step 1 every particle descends from the
    /// preconditioned state and the entries are 0.
    pub ancestors: Vec<usize>,
    /// Every density was zero and the weights fell back to uniform.
    pub uniform_fallback: bool,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2D> {
        self.particles.iter().map(|p| p.position).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum WeightingStrategy {
    Unweighted,
    DensityValue,
    /// Density weights raised to `1 / tau`.
    Temperature(f64),
    /// Density weights blended with their complement by `kappa`.
    Interpolation(f64),
}

impl WeightingStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightingStrategy::Temperature(t) if !(t > 0.0 && t.is_finite()) => {
                Err(Error::invalid("tau", format!("must be finite and > 0, got {t}")))
            }
            WeightingStrategy::Interpolation(k) if !(0.0..=1.0).contains(&k) => {
                Err(Error::invalid("kappa", format!("must be in [0, 1], got {k}")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightingStrategy::Unweighted => "unweighted",
            WeightingStrategy::DensityValue => "density",
            WeightingStrategy::Temperature(_) => "temperature",
            WeightingStrategy::Interpolation(_) => "interpolation",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            WeightingStrategy::Temperature(v) | WeightingStrategy::Interpolation(v) => Some(v),
            _ => None,
        }
    }

    fn needs_density(&self) -> bool {
        !matches!(self, WeightingStrategy::Unweighted)
    }

    /// Weights from per-particle log densities. The flag reports a uniform
    /// fallback because every density was zero.
    pub fn from_log_densities(&self, log_densities: &[f64]) -> (Vec<f64>, bool) {
        match *self {
            WeightingStrategy::Unweighted => (weight_uniform(log_densities.len()), false),
            WeightingStrategy::DensityValue => softmax_scaled(log_densities, 1.0),
            WeightingStrategy::Temperature(tau) => softmax_scaled(log_densities, 1.0 / tau),
            WeightingStrategy::Interpolation(kappa) => {
                let (w, flag) = softmax_scaled(log_densities, 1.0);
                (weight_interpolation(&w, kappa), flag)
            }
        }
    }
}

impl fmt::Display for WeightingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(v) => write!(f, "{}:{}", self.name(), v),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for WeightingStrategy {
    type Err = Error;

    /// Accepts `unweighted`, `density`, `temperature:<tau>` and `interpolation:<kappa>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let value = |field: &str| -> Result<f64> {
            let p = param.ok_or_else(|| Error::invalid(field, format!("`{name}` needs a parameter")))?;
            p.parse()
                .map_err(|_| Error::invalid(field, format!("`{p}` is not a number")))
        };
        let w = match name {
            "unweighted" => WeightingStrategy::Unweighted,
            "density" => WeightingStrategy::DensityValue,
            "temperature" => WeightingStrategy::Temperature(value("tau")?),
            "interpolation" => WeightingStrategy::Interpolation(value("kappa")?),
            other => return Err(Error::invalid("weighting", format!("unknown strategy `{other}`"))),
        };
        if param.is_some() && w.param().is_none() {
            return Err(Error::invalid("weighting", format!("`{name}` takes no parameter")));
        }
        w.validate()?;
        Ok(w)
    }
}

impl From<WeightingStrategy> for String {
    fn from(w: WeightingStrategy) -> String {
        w.to_string()
    }
}

impl TryFrom<String> for WeightingStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

pub fn weight_uniform(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// Weights proportional to the density of each particle under `mix`, with
/// a uniform fallback (and `true`) when every density is zero.
pub fn weight_density(positions: &[Point2D], mix: &GaussianMixture2D) -> (Vec<f64>, bool) {
    let logd: Vec<f64> = positions.iter().map(|&p| mix.log_density(p)).collect();
    softmax_scaled(&logd, 1.0)
}

/// `w^(1/tau)` renormalized, evaluated in log space.
pub fn weight_temperature(weights: &[f64], tau: f64) -> Vec<f64> {
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    softmax_scaled(&logs, 1.0 / tau).0
}

/// `(1 - kappa) w + kappa (1 - w)` renormalized.
pub fn weight_interpolation(weights: &[f64], kappa: f64) -> Vec<f64> {
    let blended: Vec<f64> = weights
        .iter()
        .map(|&w| (1.0 - kappa) * w + kappa * (1.0 - w))
        .collect();
    let sum: f64 = blended.iter().sum();
    if !(sum > 0.0) {
        // a single particle with kappa = 1
        return weight_uniform(weights.len());
    }
    blended.into_iter().map(|w| w / sum).collect()
}

fn softmax_scaled(logs: &[f64], scale: f64) -> (Vec<f64>, bool) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (weight_uniform(logs.len()), true);
    }
    let mut w: Vec<f64> = logs.iter().map(|&l| ((l - max) * scale).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    (w, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    /// Number of predicted ticks, N.
    pub horizon: usize,
    /// Particles per tick, M.
    pub particles: usize,
    pub sampling: SamplingStrategy,
    pub weighting: WeightingStrategy,
    pub horizon_cap: usize,
    /// Keep the particle set of every tick rather than only the last one.
    pub keep_history: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            horizon: 55,
            particles: 1000,
            sampling: SamplingStrategy::Multinomial,
            weighting: WeightingStrategy::Unweighted,
            horizon_cap: DEFAULT_HORIZON_CAP,
            keep_history: false,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        if self.horizon > self.horizon_cap {
            return Err(Error::HorizonTooLong {
                requested: self.horizon,
                cap: self.horizon_cap,
            });
        }
        if self.particles == 0 {
            return Err(Error::invalid("particles", "must be >= 1"));
        }
        self.weighting.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Position mixture of every tick: K components at step 1, M * K after.
    pub mixtures: Vec<GaussianMixture2D>,
    /// Every tick with `keep_history`, otherwise only the last.
    pub sets: Vec<ParticleSet>,
}

impl PredictionResult {
    pub fn horizon(&self) -> usize {
        self.mixtures.len()
    }

    pub fn final_set(&self) -> &ParticleSet {
        self.sets.last().expect("at least one particle set")
    }

    pub fn final_positions(&self) -> Vec<Point2D> {
        self.final_set().positions()
    }

    /// Ticks whose weights fell back to uniform.
    pub fn fallback_steps(&self) -> Vec<usize> {
        self.sets
            .iter()
            .filter(|s| s.uniform_fallback)
            .map(|s| s.step)
            .collect()
    }

    /// One JSON object per tick: `step`, `mixture` (`weights`, `components`)
    /// and, for ticks whose particles were kept, `particles` as `[x, y, weight]`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, mix) in self.mixtures.iter().enumerate() {
            let step = i + 1;
            let particles = self.sets.iter().find(|s| s.step == step).map(|s| {
                s.particles
                    .iter()
                    .map(|p| [p.position.x, p.position.y, p.weight])
                    .collect::<Vec<_>>()
            });
            let record = StepRecord {
                step,
                mixture: mix,
                particles,
            };
            serde_json::to_writer(&mut out, &record).map_err(|e| Error::Parse(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// `step,x,y,weight` rows for every kept tick.
    pub fn write_particles_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "x", "y", "weight"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        for set in &self.sets {
            for p in &set.particles {
                w.write_record(&[
                    set.step.to_string(),
                    format!("{:.6}", p.position.x),
                    format!("{:.6}", p.position.y),
                    format!("{:.9}", p.weight),
                ])
                .map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct StepRecord<'a> {
    step: usize,
    mixture: &'a GaussianMixture2D,
    #[serde(skip_serializing_if = "Option::is_none")]
    particles: Option<Vec<[f64; 3]>>,
}

/// Predicts `config.horizon` ticks past the observation.
pub fn propagate<R: Rng + ?Sized>(
    model: &LstmMdl,
    obs: &[Point2D],
    config: &PropagationConfig,
    rng: &mut R,
) -> Result<PredictionResult> {
    config.validate()?;
    let m = config.particles;
    let k = model.config().num_components;

    let (state0, mix) = model.precondition(obs)?;
    let drawn = mix.sample_indexed(m, config.sampling, rng);
    let positions: Vec<Point2D> = drawn.iter().map(|&(_, p)| p).collect();
    let logd = log_densities(&positions, &mix, config.weighting, false);
    let (weights, fallback) = config.weighting.from_log_densities(&logd);
    let mut current = ParticleSet {
        step: 1,
        particles: positions
            .into_iter()
            .zip(weights)
            .map(|(position, weight)| Particle {
                position,
                weight,
                state: state0.clone(),
            })
            .collect(),
        ancestors: vec![0; m],
        uniform_fallback: fallback,
    };
    let mut mixtures = vec![mix];
    let mut sets = Vec::new();

    for step in 2..=config.horizon {
        let stepped: Vec<(CellState, GaussianMixture2D)> = current
            .particles
            .par_iter()
            .map(|p| {
                let (s, offsets) = model.forward_step(&p.state, p.position)?;
                Ok((s, offsets.shift_means(p.position)))
            })
            .collect::<Result<_>>()?;
        let (states, member_mixes): (Vec<CellState>, Vec<GaussianMixture2D>) = stepped.into_iter().unzip();
        let agg = aggregate(&member_mixes, &current.weights())?;
        debug_assert_eq!(agg.len(), m * k);

        let drawn = agg.sample_indexed(m, config.sampling, rng);
        let positions: Vec<Point2D> = drawn.iter().map(|&(_, p)| p).collect();
        let logd = log_densities(&positions, &agg, config.weighting, true);
        let (weights, fallback) = config.weighting.from_log_densities(&logd);
        let next = ParticleSet {
            step,
            particles: drawn
                .iter()
                .zip(weights)
                .map(|(&(c, position), weight)| Particle {
                    position,
                    weight,
                    state: states[c / k].clone(),
                })
                .collect(),
            ancestors: drawn.iter().map(|&(c, _)| c / k).collect(),
            uniform_fallback: fallback,
        };
        let prev = std::mem::replace(&mut current, next);
        if config.keep_history {
            sets.push(prev);
        }
        mixtures.push(agg);
    }
    sets.push(current);
    Ok(PredictionResult { mixtures, sets })
}

fn log_densities(
    positions: &[Point2D],
    mix: &GaussianMixture2D,
    weighting: WeightingStrategy,
    indexed: bool,
) -> Vec<f64> {
    if !weighting.needs_density() {
        return vec![0.0; positions.len()];
    }
    if indexed && mix.len() > 64 {
        let index = MixtureIndex::new(mix, MixtureIndex::DEFAULT_CUTOFF);
        positions.par_iter().map(|&p| index.log_density(p)).collect()
    } else {
        positions.iter().map(|&p| mix.log_density(p)).collect()
    }
}

/// Final positions of several independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPrediction {
    pub positions: Vec<Point2D>,
    /// Ticks, summed over runs, whose weights fell back to uniform.
    pub uniform_fallbacks: usize,
}

/// Runs `runs` independent predictions and pools their final positions.
///
/// Run `r` draws from stream `r` of a ChaCha generator seeded with `seed`, so
/// the pooled set does not depend on thread scheduling. Pooled positions are
/// unweighted.
pub fn propagate_pooled(
    model: &LstmMdl,
    obs: &[Point2D],
    config: &PropagationConfig,
    runs: usize,
    seed: u64,
) -> Result<PooledPrediction> {
    if runs == 0 {
        return Err(Error::invalid("runs", "must be >= 1"));
    }
    let config = PropagationConfig {
        keep_history: false,
        ..*config
    };
    let per_run: Vec<PredictionResult> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            propagate(model, obs, &config, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(PooledPrediction {
        positions: per_run.iter().flat_map(|r| r.final_positions()).collect(),
        uniform_fallbacks: per_run.iter().map(|r| r.fallback_steps().len()).sum(),
    })
}
