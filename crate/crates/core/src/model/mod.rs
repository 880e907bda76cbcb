//! Recurrent mixture-density motion model.
//!
//! A stack of LSTM layers reads one 2-D position per tick; a linear head maps
//! the top hidden state to `6K` raw values that parameterize a `K`-component
//! bivariate Gaussian mixture over the offset to the next position.
//!
//! Raw head layout, per component `k` at `6k..6k+6`:
//! `[weight logit, mean_x, mean_y, std_x pre, std_y pre, corr pre]`.

mod backprop;
mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{Gaussian2D, GaussianMixture2D, Point2D};

pub use backprop::{backward, nll_loss, LossReport};
pub use checkpoint::{CellType, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, TrainConfig, TrainReport};

/// Positions are 2-D.
pub const INPUT_SIZE: usize = 2;
/// Raw head outputs per mixture component.
pub const OUTPUTS_PER_COMPONENT: usize = 6;
/// Smallest standard deviation the head can emit, in meters.
pub const STD_FLOOR: f64 = 1e-4;
/// Largest absolute correlation the head can emit.
pub const MAX_CORR: f64 = 1.0 - 1e-6;

pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_components: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_components: 6,
            hidden_size: 32,
            num_layers: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_components == 0 {
            return Err(Error::invalid("num_components", "must be >= 1"));
        }
        if self.hidden_size == 0 {
            return Err(Error::invalid("hidden_size", "must be >= 1"));
        }
        if self.num_layers == 0 {
            return Err(Error::invalid("num_layers", "must be >= 1"));
        }
        Ok(())
    }

    pub fn output_size(&self) -> usize {
        OUTPUTS_PER_COMPONENT * self.num_components
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            INPUT_SIZE
        } else {
            self.hidden_size
        }
    }
}

/// Weights of one LSTM layer. Matrices are stored input-major: row `j` holds
/// the weights from input `j` to all `4H` gate units, gates ordered
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Every trainable parameter of the model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub layers: Vec<LayerWeights>,
    /// `H x 6K`, input-major.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| LayerWeights {
                w_in: vec![0.0; config.layer_input(l) * 4 * h],
                w_rec: vec![0.0; h * 4 * h],
                bias: vec![0.0; 4 * h],
            })
            .collect();
        Weights {
            layers,
            head_w: vec![0.0; h * config.output_size()],
            head_b: vec![0.0; config.output_size()],
        }
    }

    /// Parameter arrays in declaration order (the checkpoint order).
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(&l.w_in);
            out.push(&l.w_rec);
            out.push(&l.bias);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(&mut l.w_in);
            out.push(&mut l.w_rec);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn get(&self, mut index: usize) -> f64 {
        for s in self.slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut index: usize, value: f64) {
        for s in self.slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("parameter index out of range")
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Recurrent state of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub hidden: Vec<f64>,
    pub memory: Vec<f64>,
}

/// Per-layer hidden and memory vectors. Cloning yields an independent copy,
/// which is what lets particles inherit and diverge from their ancestors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub layers: Vec<LayerState>,
}

impl CellState {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.hidden.iter().chain(&l.memory).all(|v| v.is_finite()))
    }

    pub fn top_hidden(&self) -> &[f64] {
        &self.layers.last().expect("state has at least one layer").hidden
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmMdl {
    config: ModelConfig,
    weights: Weights,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmMdl {
    /// Model with every weight zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(LstmMdl {
            config,
            weights: Weights::zeros(&config),
        })
    }

    /// Uniform `±1/sqrt(H)` recurrent weights with forget-gate bias 1, and a
    /// head scaled down by `HEAD_INIT_SCALE`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_size;
        let bound = 1.0 / (h as f64).sqrt();
        for l in &mut model.weights.layers {
            for w in l.w_in.iter_mut().chain(l.w_rec.iter_mut()) {
                *w = rng.gen_range(-bound..bound);
            }
            for b in &mut l.bias[h..2 * h] {
                *b = 1.0;
            }
        }
        // a small head starts every component near the data with equal weight;
        // a full-scale head leaves most components far away, where they die
        let head = HEAD_INIT_SCALE * bound;
        for w in &mut model.weights.head_w {
            *w = rng.gen_range(-head..head);
        }
        Ok(model)
    }

    pub fn from_weights(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        let expected = Weights::zeros(&config);
        let shapes_match = expected
            .slices()
            .iter()
            .zip(weights.slices())
            .all(|(a, b)| a.len() == b.len())
            && expected.slices().len() == weights.slices().len();
        if !shapes_match {
            return Err(Error::ShapeMismatch("weights do not match config".into()));
        }
        if !weights.all_finite() {
            return Err(Error::invalid("weights", "non-finite weight"));
        }
        Ok(LstmMdl { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    pub fn init_state(&self) -> CellState {
        let h = self.config.hidden_size;
        CellState {
            layers: (0..self.config.num_layers)
                .map(|_| LayerState {
                    hidden: vec![0.0; h],
                    memory: vec![0.0; h],
                })
                .collect(),
        }
    }

    fn check_state(&self, state: &CellState) -> Result<()> {
        let h = self.config.hidden_size;
        if state.layers.len() != self.config.num_layers
            || state.layers.iter().any(|l| l.hidden.len() != h || l.memory.len() != h)
        {
            return Err(Error::ShapeMismatch("cell state does not match model".into()));
        }
        Ok(())
    }

    /// Advances the recurrent state by one position and returns the raw head output.
    pub(crate) fn step_raw(&self, state: &CellState, pos: Point2D) -> (CellState, Vec<f64>) {
        let h = self.config.hidden_size;
        let mut next = CellState {
            layers: Vec::with_capacity(self.config.num_layers),
        };
        let mut gates = vec![0.0; 4 * h];
        let mut input: Vec<f64> = vec![pos.x, pos.y];
        for (lw, ls) in self.weights.layers.iter().zip(&state.layers) {
            gate_preactivations(lw, &input, &ls.hidden, &mut gates);
            let mut hidden = vec![0.0; h];
            let mut memory = vec![0.0; h];
            for u in 0..h {
                let i = sigmoid(gates[u]);
                let f = sigmoid(gates[h + u]);
                let g = gates[2 * h + u].tanh();
                let o = sigmoid(gates[3 * h + u]);
                let c = f * ls.memory[u] + i * g;
                memory[u] = c;
                hidden[u] = o * c.tanh();
            }
            input = hidden.clone();
            next.layers.push(LayerState { hidden, memory });
        }
        let raw = head_output(&self.weights, next.top_hidden(), self.config.output_size());
        (next, raw)
    }

    /// Feeds `pos` and returns the new state with the offset mixture for the next tick.
    pub fn forward_step(&self, state: &CellState, pos: Point2D) -> Result<(CellState, GaussianMixture2D)> {
        self.check_state(state)?;
        if !pos.is_finite() {
            return Err(Error::invalid("pos", "non-finite position"));
        }
        let (next, raw) = self.step_raw(state, pos);
        if !next.is_finite() {
            return Err(Error::NonFiniteActivation);
        }
        let mix = decode_head(&raw, self.config.num_components)?;
        Ok((next, mix))
    }

    /// Runs the observed positions through the model and returns the final
    /// state with the position-space mixture for the next tick.
    pub fn precondition(&self, obs: &[Point2D]) -> Result<(CellState, GaussianMixture2D)> {
        let last = *obs
            .last()
            .ok_or(Error::EmptyInput("observation needs at least one position"))?;
        let mut state = self.init_state();
        let mut mix = None;
        for &p in obs {
            let (s, m) = self.forward_step(&state, p)?;
            state = s;
            mix = Some(m);
        }
        let mix = mix.expect("non-empty observation");
        Ok((state, mix.shift_means(last)))
    }
}

/// `gates = bias + W_in^T input + W_rec^T hidden`, accumulated row by row.
pub(crate) fn gate_preactivations(lw: &LayerWeights, input: &[f64], hidden: &[f64], gates: &mut [f64]) {
    let n = gates.len();
    gates.copy_from_slice(&lw.bias);
    for (j, &x) in input.iter().enumerate() {
        axpy(gates, x, &lw.w_in[j * n..(j + 1) * n]);
    }
    for (j, &x) in hidden.iter().enumerate() {
        axpy(gates, x, &lw.w_rec[j * n..(j + 1) * n]);
    }
}

pub(crate) fn head_output(weights: &Weights, hidden: &[f64], out_size: usize) -> Vec<f64> {
    let mut raw = weights.head_b.clone();
    for (j, &x) in hidden.iter().enumerate() {
        axpy(&mut raw, x, &weights.head_w[j * out_size..(j + 1) * out_size]);
    }
    raw
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Mixture parameters after the head activations, kept alongside the
/// quantities backprop needs.
#[derive(Debug, Clone)]
pub(crate) struct HeadParams {
    pub log_pi: Vec<f64>,
    pub pi: Vec<f64>,
    pub mean: Vec<Point2D>,
    pub std_x: Vec<f64>,
    pub std_y: Vec<f64>,
    pub corr: Vec<f64>,
    pub std_x_clamped: Vec<bool>,
    pub std_y_clamped: Vec<bool>,
    pub corr_clamped: Vec<bool>,
}

pub(crate) fn activate_head(raw: &[f64], k: usize) -> Result<HeadParams> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation);
    }
    let logits: Vec<f64> = (0..k).map(|c| raw[6 * c]).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let log_pi: Vec<f64> = logits.iter().map(|l| l - lse).collect();
    let pi: Vec<f64> = log_pi.iter().map(|l| l.exp()).collect();
    let floor = STD_FLOOR.ln();
    let mut p = HeadParams {
        log_pi,
        pi,
        mean: Vec::with_capacity(k),
        std_x: Vec::with_capacity(k),
        std_y: Vec::with_capacity(k),
        corr: Vec::with_capacity(k),
        std_x_clamped: Vec::with_capacity(k),
        std_y_clamped: Vec::with_capacity(k),
        corr_clamped: Vec::with_capacity(k),
    };
    for c in 0..k {
        let r = &raw[6 * c..6 * c + 6];
        p.mean.push(Point2D::new(r[1], r[2]));
        p.std_x_clamped.push(r[3] < floor);
        p.std_y_clamped.push(r[4] < floor);
        let sx = r[3].max(floor).exp();
        let sy = r[4].max(floor).exp();
        if !(sx.is_finite() && sy.is_finite()) {
            return Err(Error::NonFiniteActivation);
        }
        p.std_x.push(sx);
        p.std_y.push(sy);
        let t = r[5].tanh();
        p.corr_clamped.push(t.abs() > MAX_CORR);
        p.corr.push(t.clamp(-MAX_CORR, MAX_CORR));
    }
    Ok(p)
}

/// Applies the head activations: normalized exponential for the weights,
/// exponential for the standard deviations, hyperbolic tangent for the correlation.
pub fn decode_head(raw: &[f64], num_components: usize) -> Result<GaussianMixture2D> {
    if raw.len() != OUTPUTS_PER_COMPONENT * num_components {
        return Err(Error::ShapeMismatch(format!(
            "head output has {} values, expected {}",
            raw.len(),
            OUTPUTS_PER_COMPONENT * num_components
        )));
    }
    let p = activate_head(raw, num_components)?;
    let components = (0..num_components)
        .map(|c| Gaussian2D {
            mean: p.mean[c],
            std_x: p.std_x[c],
            std_y: p.std_y[c],
            corr: p.corr[c],
        })
        .collect();
    Ok(GaussianMixture2D::from_parts_unchecked(components, p.pi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_model(config: ModelConfig, seed: u64, scale: f64) -> LstmMdl {
        let mut model = LstmMdl::zeros(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in model.weights_mut().slices_mut() {
            for w in s.iter_mut() {
                *w = rng.gen_range(-scale..scale);
            }
        }
        model
    }

    #[test]
    fn init_state_shapes() {
        let cfg = ModelConfig {
            num_components: 2,
            hidden_size: 4,
            num_layers: 1,
        };
        let model = LstmMdl::zeros(cfg).unwrap();
        let s = model.init_state();
        assert_eq!(s.layers.len(), 1);
        assert_eq!(s.layers[0].hidden, vec![0.0; 4]);
        assert_eq!(s.layers[0].memory, vec![0.0; 4]);

        let model = LstmMdl::zeros(ModelConfig { num_layers: 2, ..cfg }).unwrap();
        assert_eq!(model.init_state().layers.len(), 2);
    }

    #[test]
    fn zero_network_emits_uniform_unit_mixture() {
        let cfg = ModelConfig {
            num_components: 3,
            hidden_size: 5,
            num_layers: 2,
        };
        let model = LstmMdl::zeros(cfg).unwrap();
        let (_, mix) = model
            .forward_step(&model.init_state(), Point2D::new(3.0, -7.0))
            .unwrap();
        assert_eq!(mix.len(), 3);
        for (c, &w) in mix.components().iter().zip(mix.weights()) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(c.mean, Point2D::ORIGIN);
            assert_eq!(c.std_x, 1.0);
            assert_eq!(c.std_y, 1.0);
            assert_eq!(c.corr, 0.0);
        }
    }

    #[test]
    fn forward_step_is_deterministic() {
        let model = random_model(ModelConfig::default(), 4, 0.3);
        let s0 = model.init_state();
        let (s1, _) = model.forward_step(&s0, Point2D::new(0.2, 0.1)).unwrap();
        let a = model.forward_step(&s1, Point2D::new(0.4, 0.3)).unwrap();
        let b = model.forward_step(&s1, Point2D::new(0.4, 0.3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stepping_a_clone_leaves_original_untouched() {
        let model = random_model(ModelConfig::default(), 8, 0.3);
        let (s1, _) = model.forward_step(&model.init_state(), Point2D::new(1.0, 2.0)).unwrap();
        let snapshot = s1.clone();
        let copy = s1.clone();
        let _ = model.forward_step(&copy, Point2D::new(5.0, 5.0)).unwrap();
        assert_eq!(s1, snapshot);
    }

    #[test]
    fn precondition_single_position_is_shifted_step() {
        let model = random_model(ModelConfig::default(), 1, 0.4);
        let p = Point2D::new(0.7, -1.2);
        let (s_a, m_a) = model.precondition(&[p]).unwrap();
        let (s_b, m_b) = model.forward_step(&model.init_state(), p).unwrap();
        assert_eq!(s_a, s_b);
        assert_eq!(m_a, m_b.shift_means(p));
    }

    #[test]
    fn precondition_recurrence() {
        let model = random_model(ModelConfig::default(), 2, 0.4);
        let obs: Vec<Point2D> = (0..6).map(|t| Point2D::new(0.1 * t as f64, 0.15 * t as f64)).collect();
        let (s_prefix, _) = model.precondition(&obs[..5]).unwrap();
        let (s_step, m_step) = model.forward_step(&s_prefix, obs[5]).unwrap();
        let (s_full, m_full) = model.precondition(&obs).unwrap();
        assert_eq!(s_full, s_step);
        assert_eq!(m_full, m_step.shift_means(obs[5]));
        assert!(model.precondition(&[]).is_err());
    }

    #[test]
    fn head_clamps_keep_mixture_valid() {
        let raw = vec![0.0, 1.0, 1.0, -50.0, 800.0, 40.0];
        assert!(matches!(decode_head(&raw, 1), Err(Error::NonFiniteActivation)));
        let raw = vec![0.0, 1.0, 1.0, -50.0, 3.0, 40.0];
        let mix = decode_head(&raw, 1).unwrap();
        let c = mix.components()[0];
        assert!(c.std_x >= STD_FLOOR && c.std_x < STD_FLOOR * (1.0 + 1e-12));
        assert!(c.corr < 1.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn state_shape_mismatch_is_rejected() {
        let model = LstmMdl::zeros(ModelConfig::default()).unwrap();
        let other = LstmMdl::zeros(ModelConfig {
            hidden_size: 4,
            ..ModelConfig::default()
        })
        .unwrap();
        assert!(model.forward_step(&other.init_state(), Point2D::ORIGIN).is_err());
    }

    #[test]
    fn flat_accessors_round_trip() {
        let mut model = random_model(ModelConfig::default(), 3, 0.2);
        let n = model.weights().len();
        assert_eq!(n, 4 * 32 * (2 + 32 + 1) + 32 * 36 + 36);
        model.weights_mut().set(n - 1, 42.0);
        assert_eq!(model.weights().get(n - 1), 42.0);
        assert_eq!(model.weights().to_flat()[n - 1], 42.0);
    }
}
