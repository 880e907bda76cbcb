//! Negative log-likelihood of a trajectory under the model and its exact
//! gradient by backpropagation through time.

use super::{activate_head, axpy, gate_preactivations, head_output, sigmoid, LstmMdl, Weights};
use crate::error::{Error, Result};
use crate::gmm::Point2D;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Per-step densities below this are clamped and reported as degenerate.
const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean negative log-likelihood over the `T - 1` offsets.
    pub loss: f64,
    pub degenerate_steps: usize,
    pub first_degenerate: Option<usize>,
}

struct LayerCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct StepCache {
    layers: Vec<LayerCache>,
    top_hidden: Vec<f64>,
    d_raw: Vec<f64>,
}

fn check_trajectory(points: &[Point2D]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::invalid("trajectory", "needs at least 2 positions"));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("trajectory", "non-finite position"));
    }
    Ok(())
}

/// Forward pass over the trajectory; fills per-step caches when `keep` is set.
fn forward_sequence(model: &LstmMdl, points: &[Point2D], keep: bool) -> Result<(LossReport, Vec<StepCache>)> {
    let cfg = *model.config();
    let h = cfg.hidden_size;
    let k = cfg.num_components;
    let steps = points.len() - 1;
    let scale = 1.0 / steps as f64;
    let log_floor = DENSITY_FLOOR.ln();

    let mut state = model.init_state();
    let mut caches = Vec::with_capacity(if keep { steps } else { 0 });
    let mut total = 0.0;
    let mut degenerate = 0usize;
    let mut first_degenerate = None;
    let mut gates = vec![0.0; 4 * h];

    for t in 0..steps {
        let mut input = vec![points[t].x, points[t].y];
        let mut layer_caches = Vec::with_capacity(cfg.num_layers);
        for (l, lw) in model.weights().layers.iter().enumerate() {
            let ls = &mut state.layers[l];
            gate_preactivations(lw, &input, &ls.hidden, &mut gates);
            let mut cache = LayerCache {
                input: input.clone(),
                h_prev: ls.hidden.clone(),
                c_prev: ls.memory.clone(),
                i: vec![0.0; h],
                f: vec![0.0; h],
                g: vec![0.0; h],
                o: vec![0.0; h],
                tanh_c: vec![0.0; h],
            };
            for u in 0..h {
                let i = sigmoid(gates[u]);
                let f = sigmoid(gates[h + u]);
                let g = gates[2 * h + u].tanh();
                let o = sigmoid(gates[3 * h + u]);
                let c = f * ls.memory[u] + i * g;
                let tc = c.tanh();
                ls.memory[u] = c;
                ls.hidden[u] = o * tc;
                cache.i[u] = i;
                cache.f[u] = f;
                cache.g[u] = g;
                cache.o[u] = o;
                cache.tanh_c[u] = tc;
            }
            input = ls.hidden.clone();
            if keep {
                layer_caches.push(cache);
            }
        }
        if !state.is_finite() {
            return Err(Error::NonFiniteActivation);
        }
        let top = state.top_hidden();
        let raw = head_output(model.weights(), top, cfg.output_size());
        let p = activate_head(&raw, k)?;
        let target = points[t + 1] - points[t];

        // per-component log terms and the standardized residuals
        let mut terms = vec![0.0; k];
        let mut resid = vec![(0.0, 0.0, 0.0, 0.0); k];
        for c in 0..k {
            let rho = p.corr[c];
            let w = 1.0 - rho * rho;
            let zx = (target.x - p.mean[c].x) / p.std_x[c];
            let zy = (target.y - p.mean[c].y) / p.std_y[c];
            let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
            terms[c] = p.log_pi[c] - LN_2PI - p.std_x[c].ln() - p.std_y[c].ln() - 0.5 * w.ln() - z / (2.0 * w);
            resid[c] = (zx, zy, z, w);
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut log_p = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        let is_degenerate = !(log_p >= log_floor);
        if is_degenerate {
            degenerate += 1;
            first_degenerate.get_or_insert(t);
            log_p = log_floor;
        }
        total -= log_p;

        if keep {
            let mut d_raw = vec![0.0; cfg.output_size()];
            if !is_degenerate {
                for c in 0..k {
                    let gamma = (terms[c] - log_p).exp();
                    let (zx, zy, z, w) = resid[c];
                    let rho = p.corr[c];
                    let (sx, sy) = (p.std_x[c], p.std_y[c]);
                    let d = &mut d_raw[6 * c..6 * c + 6];
                    d[0] = scale * (p.pi[c] - gamma);
                    d[1] = -scale * gamma * (zx - rho * zy) / (sx * w);
                    d[2] = -scale * gamma * (zy - rho * zx) / (sy * w);
                    if !p.std_x_clamped[c] {
                        d[3] = -scale * gamma * (zx * (zx - rho * zy) / w - 1.0);
                    }
                    if !p.std_y_clamped[c] {
                        d[4] = -scale * gamma * (zy * (zy - rho * zx) / w - 1.0);
                    }
                    if !p.corr_clamped[c] {
                        d[5] = -scale * gamma * (rho + zx * zy - rho * z / w);
                    }
                }
            }
            caches.push(StepCache {
                layers: layer_caches,
                top_hidden: top.to_vec(),
                d_raw,
            });
        }
    }

    let report = LossReport {
        loss: total * scale,
        degenerate_steps: degenerate,
        first_degenerate,
    };
    Ok((report, caches))
}

fn backward_sequence(model: &LstmMdl, caches: &[StepCache]) -> Weights {
    let cfg = *model.config();
    let h = cfg.hidden_size;
    let out = cfg.output_size();
    let weights = model.weights();
    let mut grad = Weights::zeros(&cfg);
    let mut dh_next = vec![vec![0.0; h]; cfg.num_layers];
    let mut dc_next = vec![vec![0.0; h]; cfg.num_layers];
    let mut da = vec![0.0; 4 * h];

    for step in caches.iter().rev() {
        let mut d_above = vec![0.0; h];
        for j in 0..h {
            let row = &weights.head_w[j * out..(j + 1) * out];
            d_above[j] = row.iter().zip(&step.d_raw).map(|(w, d)| w * d).sum();
            axpy(&mut grad.head_w[j * out..(j + 1) * out], step.top_hidden[j], &step.d_raw);
        }
        axpy(&mut grad.head_b, 1.0, &step.d_raw);

        for l in (0..cfg.num_layers).rev() {
            let lc = &step.layers[l];
            let lw = &weights.layers[l];
            for u in 0..h {
                let dh = d_above[u] + dh_next[l][u];
                let (i, f, g, o, tc) = (lc.i[u], lc.f[u], lc.g[u], lc.o[u], lc.tanh_c[u]);
                let d_o = dh * tc;
                let dc = dc_next[l][u] + dh * o * (1.0 - tc * tc);
                da[u] = dc * g * i * (1.0 - i);
                da[h + u] = dc * lc.c_prev[u] * f * (1.0 - f);
                da[2 * h + u] = dc * i * (1.0 - g * g);
                da[3 * h + u] = d_o * o * (1.0 - o);
                dc_next[l][u] = dc * f;
            }
            let n = 4 * h;
            let gl = &mut grad.layers[l];
            axpy(&mut gl.bias, 1.0, &da);
            let mut d_input = vec![0.0; lc.input.len()];
            for (j, &x) in lc.input.iter().enumerate() {
                axpy(&mut gl.w_in[j * n..(j + 1) * n], x, &da);
                d_input[j] = lw.w_in[j * n..(j + 1) * n].iter().zip(&da).map(|(w, d)| w * d).sum();
            }
            for j in 0..h {
                axpy(&mut gl.w_rec[j * n..(j + 1) * n], lc.h_prev[j], &da);
                dh_next[l][j] = lw.w_rec[j * n..(j + 1) * n].iter().zip(&da).map(|(w, d)| w * d).sum();
            }
            d_above = d_input;
        }
    }
    grad
}

/// Loss and gradient, tolerating clamped (degenerate) steps.
pub(crate) fn loss_and_gradient(model: &LstmMdl, points: &[Point2D]) -> Result<(LossReport, Weights)> {
    check_trajectory(points)?;
    let (report, caches) = forward_sequence(model, points, true)?;
    Ok((report, backward_sequence(model, &caches)))
}

pub(crate) fn loss_report(model: &LstmMdl, points: &[Point2D]) -> Result<LossReport> {
    check_trajectory(points)?;
    Ok(forward_sequence(model, points, false)?.0)
}

/// Mean negative log-likelihood of the trajectory's offsets, running the
/// model from its initial state in sequence order.
pub fn nll_loss(model: &LstmMdl, points: &[Point2D]) -> Result<f64> {
    let report = loss_report(model, points)?;
    match report.first_degenerate {
        Some(step) => Err(Error::DegenerateDensity { step }),
        None => Ok(report.loss),
    }
}

/// Exact gradient of [`nll_loss`] with respect to every weight.
pub fn backward(model: &LstmMdl, points: &[Point2D]) -> Result<Weights> {
    let (report, grad) = loss_and_gradient(model, points)?;
    match report.first_degenerate {
        Some(step) => Err(Error::DegenerateDensity { step }),
        None => Ok(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k1_zero_model() -> LstmMdl {
        LstmMdl::zeros(ModelConfig {
            num_components: 1,
            hidden_size: 4,
            num_layers: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_network_loss_at_mean() {
        // offset (0,0) sits at the mean of the unit component
        let model = k1_zero_model();
        let loss = nll_loss(&model, &[Point2D::new(1.0, 1.0), Point2D::new(1.0, 1.0)]).unwrap();
        assert!((loss - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((loss - 1.8379).abs() < 1e-4);
    }

    #[test]
    fn zero_network_loss_is_translation_invariant() {
        let model = k1_zero_model();
        let traj: Vec<Point2D> = (0..8).map(|t| Point2D::new(0.1 * t as f64, (t as f64).sin())).collect();
        let moved: Vec<Point2D> = traj.iter().map(|&p| p + Point2D::new(-4.0, 9.0)).collect();
        let a = nll_loss(&model, &traj).unwrap();
        let b = nll_loss(&model, &moved).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn moving_mean_toward_target_lowers_loss() {
        // 1-D line search along the mean_x bias
        let mut model = k1_zero_model();
        let traj = [Point2D::new(0.0, 0.0), Point2D::new(0.8, 0.0)];
        let mean_x_bias = model.weights().len() - 6 + 1;
        let mut previous = f64::INFINITY;
        for step in 0..=8 {
            model.weights_mut().set(mean_x_bias, 0.1 * step as f64);
            let loss = nll_loss(&model, &traj).unwrap();
            assert!(loss < previous);
            previous = loss;
        }
    }

    #[test]
    fn single_component_logit_has_zero_gradient() {
        let mut model = k1_zero_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in model.weights_mut().slices_mut() {
            s.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
        }
        let traj: Vec<Point2D> = (0..6).map(|t| Point2D::new(0.1 * t as f64, 0.05 * t as f64)).collect();
        let grad = backward(&model, &traj).unwrap();
        // head column 0 is the only logit when K = 1
        for j in 0..4 {
            assert_eq!(grad.head_w[j * 6], 0.0);
        }
        assert_eq!(grad.head_b[0], 0.0);
    }

    #[test]
    fn gradient_is_deterministic() {
        let model = LstmMdl::init(ModelConfig::default(), 9).unwrap();
        let traj: Vec<Point2D> = (0..12).map(|t| Point2D::new(0.02 * t as f64, 0.15 * t as f64)).collect();
        let a = backward(&model, &traj).unwrap().to_flat();
        let b = backward(&model, &traj).unwrap().to_flat();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn short_trajectory_is_rejected() {
        let model = k1_zero_model();
        assert!(nll_loss(&model, &[Point2D::ORIGIN]).is_err());
    }

    #[test]
    fn underflowing_density_is_flagged() {
        let model = k1_zero_model();
        // offset of 1e3 std: log density ~ -5e5
        let traj = [Point2D::ORIGIN, Point2D::new(1000.0, 0.0)];
        assert!(matches!(nll_loss(&model, &traj), Err(Error::DegenerateDensity { step: 0 })));
        let report = loss_report(&model, &traj).unwrap();
        assert_eq!(report.degenerate_steps, 1);
        assert!((report.loss + DENSITY_FLOOR.ln()).abs() < 1e-9);
    }
}
