//! Causal DFSMN audio encoder.
//!
//! Each layer: `h = relu(W x + b)`, bottleneck `p = V h`, then a memory sum
//! `m_t = p_t + sum_{i=1..N} a_i ⊙ p_{t-i}` over the last N bottleneck
//! vectors (zero-padded past), plus a skip connection from the previous
//! layer's `m_t`. Lookahead is zero, so output frame t never sees inputs
//! beyond t. A final linear projection maps the last layer's `m` to the
//! embedding dimension.

use super::{EmbeddingSequence, GradStore, Modality, ModelConfig, WeightContainer};
use crate::error::{Error, Result};
use crate::numkit::{axpy, Matrix, Real};

fn check_feature_dim<T: Real>(features: &Matrix<T>, cfg: &ModelConfig) -> Result<()> {
    if features.cols() != cfg.feature_dim {
        return Err(Error::DimMismatch {
            context: "dfsmn input features",
            expected: cfg.feature_dim,
            got: features.cols(),
        });
    }
    Ok(())
}

/// Intermediate activations kept for the backward pass.
pub struct DfsmnCache<T> {
    /// Post-ReLU hidden activations per layer (frames x hidden).
    hidden: Vec<Matrix<T>>,
    /// Bottleneck outputs per layer (frames x bottleneck).
    bottleneck: Vec<Matrix<T>>,
    /// Memory-block outputs per layer (frames x bottleneck).
    memory_out: Vec<Matrix<T>>,
    features: Matrix<T>,
}

fn layer_tensors<'a, T: Real>(
    w: &'a WeightContainer<T>,
    l: usize,
) -> Result<(&'a Matrix<T>, &'a [T], &'a Matrix<T>, &'a Matrix<T>)> {
    let weight = w.mat(&format!("enc.l{l}.w"))?;
    let bias = w.vec(&format!("enc.l{l}.b"))?;
    let bottleneck = w.mat(&format!("enc.l{l}.v"))?;
    let mem = w.mat(&format!("enc.l{l}.mem"))?;
    Ok((weight, bias.data(), bottleneck, mem))
}

/// Whole-sequence forward pass. This is the batch path; [`step`] must agree
/// with it frame for frame.
pub fn forward<T: Real>(
    features: &Matrix<T>,
    w: &WeightContainer<T>,
    cfg: &ModelConfig,
) -> Result<EmbeddingSequence<T>> {
    Ok(forward_cached(features, w, cfg)?.0)
}

pub fn forward_cached<T: Real>(
    features: &Matrix<T>,
    w: &WeightContainer<T>,
    cfg: &ModelConfig,
) -> Result<(EmbeddingSequence<T>, DfsmnCache<T>)> {
    check_feature_dim(features, cfg)?;
    let frames = features.rows();
    let order = cfg.lookback_order;
    let mut cache = DfsmnCache {
        hidden: Vec::with_capacity(cfg.n_layers),
        bottleneck: Vec::with_capacity(cfg.n_layers),
        memory_out: Vec::with_capacity(cfg.n_layers),
        features: features.clone(),
    };
    let mut x = features.clone();
    for l in 0..cfg.n_layers {
        let (weight, bias, v, mem) = layer_tensors(w, l)?;
        if weight.cols() != x.cols() {
            return Err(Error::DimMismatch {
                context: "dfsmn layer input",
                expected: weight.cols(),
                got: x.cols(),
            });
        }
        // h = relu(x W^T + b)
        let mut h = x.matmul_t(weight)?;
        for t in 0..frames {
            let row = h.row_mut(t);
            for (v, &b) in row.iter_mut().zip(bias.iter()) {
                *v = (*v + b).max(T::zero());
            }
        }
        let p = h.matmul_t(v)?;
        // m_t = p_t + sum_i a_i ⊙ p_{t-i} (+ previous layer's m_t).
        let mut m = p.clone();
        for t in 0..frames {
            for i in 1..=order.min(t) {
                let tap = mem.row(i - 1);
                let past = p.row(t - i);
                let row = m.row_mut(t);
                for k in 0..row.len() {
                    row[k] += tap[k] * past[k];
                }
            }
        }
        if l > 0 {
            m.add_scaled(&x, T::one())?;
        }
        cache.hidden.push(h);
        cache.bottleneck.push(p);
        cache.memory_out.push(m.clone());
        x = m;
    }
    let out_w = w.mat("enc.out.w")?;
    let out_b = w.vec("enc.out.b")?;
    let mut emb = x.matmul_t(out_w)?;
    for t in 0..frames {
        axpy(emb.row_mut(t), out_b.data(), T::one());
    }
    Ok((EmbeddingSequence::new(emb, Modality::Audio), cache))
}

/// Backward pass: accumulates weight gradients into `grads` given the loss
/// gradient w.r.t. the output embeddings.
pub fn backward<T: Real>(
    cache: &DfsmnCache<T>,
    d_emb: &Matrix<T>,
    w: &WeightContainer<T>,
    cfg: &ModelConfig,
    grads: &mut GradStore<T>,
) -> Result<()> {
    let frames = cache.features.rows();
    let order = cfg.lookback_order;
    let last_m = &cache.memory_out[cfg.n_layers - 1];
    let out_w = w.mat("enc.out.w")?;

    grads
        .mat_mut("enc.out.w", out_w.rows(), out_w.cols())
        .add_scaled(&d_emb.t_matmul(last_m)?, T::one())?;
    {
        let b = grads.vec_mut("enc.out.b", out_w.rows());
        for t in 0..frames {
            axpy(b.data_mut(), d_emb.row(t), T::one());
        }
    }
    // Gradient w.r.t. the last layer's memory output.
    let mut g_m = d_emb.matmul(out_w)?;

    for l in (0..cfg.n_layers).rev() {
        let (weight, _bias, v, mem) = layer_tensors(w, l)?;
        let h = &cache.hidden[l];
        let p = &cache.bottleneck[l];
        let x = if l == 0 { &cache.features } else { &cache.memory_out[l - 1] };

        // d p_t = g_m[t] + sum_i a_i ⊙ g_m[t+i]; d a_i = sum_t g_m[t] ⊙ p_{t-i}.
        let mut d_p = g_m.clone();
        {
            let d_mem = grads.mat_mut(&format!("enc.l{l}.mem"), order, p.cols());
            for t in 0..frames {
                for i in 1..=order.min(t) {
                    let tap = mem.row(i - 1);
                    let g_row = g_m.row(t);
                    let past = p.row(t - i);
                    let dp_row = d_p.row_mut(t - i);
                    let dm_row = d_mem.row_mut(i - 1);
                    for k in 0..dp_row.len() {
                        dp_row[k] += tap[k] * g_row[k];
                        dm_row[k] += g_row[k] * past[k];
                    }
                }
            }
        }

        let mut d_h = d_p.matmul(v)?;
        grads
            .mat_mut(&format!("enc.l{l}.v"), v.rows(), v.cols())
            .add_scaled(&d_p.t_matmul(h)?, T::one())?;
        // ReLU mask: h > 0.
        for t in 0..frames {
            let h_row = h.row(t);
            let d_row = d_h.row_mut(t);
            for k in 0..d_row.len() {
                if h_row[k] <= T::zero() {
                    d_row[k] = T::zero();
                }
            }
        }
        grads
            .mat_mut(&format!("enc.l{l}.w"), weight.rows(), weight.cols())
            .add_scaled(&d_h.t_matmul(x)?, T::one())?;
        {
            let b = grads.vec_mut(&format!("enc.l{l}.b"), weight.rows());
            for t in 0..frames {
                axpy(b.data_mut(), d_h.row(t), T::one());
            }
        }
        if l > 0 {
            // Input path plus the skip connection into the previous layer.
            let d_x = d_h.matmul(weight)?;
            g_m.add_scaled(&d_x, T::one())?;
        }
    }
    Ok(())
}

/// Streaming state: one ring buffer of past bottleneck vectors per layer.
#[derive(Debug, Clone)]
pub struct StreamState {
    /// Per layer, `lookback_order` rows of bottleneck history.
    rings: Vec<Matrix<f32>>,
    frames_seen: usize,
    order: usize,
}

impl StreamState {
    pub fn new(cfg: &ModelConfig) -> Self {
        StreamState {
            rings: (0..cfg.n_layers)
                .map(|_| Matrix::zeros(cfg.lookback_order, cfg.bottleneck_dim))
                .collect(),
            frames_seen: 0,
            order: cfg.lookback_order,
        }
    }

    pub fn reset(&mut self) {
        for ring in &mut self.rings {
            ring.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self.frames_seen = 0;
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }
}

/// Process a single feature frame, updating the stream state. Agrees with
/// the corresponding row of [`forward`] on the full sequence.
pub fn step(
    frame: &[f32],
    state: &mut StreamState,
    w: &WeightContainer<f32>,
    cfg: &ModelConfig,
) -> Result<Vec<f32>> {
    if frame.len() != cfg.feature_dim {
        return Err(Error::DimMismatch {
            context: "dfsmn step frame",
            expected: cfg.feature_dim,
            got: frame.len(),
        });
    }
    if state.rings.len() != cfg.n_layers || state.order != cfg.lookback_order {
        return Err(Error::Shape("stream state was initialized for a different config".into()));
    }
    let t = state.frames_seen;
    let order = cfg.lookback_order;
    let mut x = frame.to_vec();
    for l in 0..cfg.n_layers {
        let (weight, bias, v, mem) = layer_tensors(w, l)?;
        let mut h = weight.matvec(&x)?;
        for (v, &b) in h.iter_mut().zip(bias.iter()) {
            *v = (*v + b).max(0.0);
        }
        let p = v.matvec(&h)?;
        let mut m = p.clone();
        let ring = &state.rings[l];
        for i in 1..=order.min(t) {
            let tap = mem.row(i - 1);
            let past = ring.row((t - i) % order);
            for k in 0..m.len() {
                m[k] += tap[k] * past[k];
            }
        }
        if l > 0 {
            axpy(&mut m, &x, 1.0);
        }
        state.rings[l].row_mut(t % order).copy_from_slice(&p);
        x = m;
    }
    state.frames_seen += 1;
    let out_w = w.mat("enc.out.w")?;
    let out_b = w.vec("enc.out.b")?;
    let mut emb = out_w.matvec(&x)?;
    axpy(&mut emb, out_b.data(), 1.0);
    Ok(emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init::random_weights;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.feature_dim = 6;
        cfg.hidden_dim = 10;
        cfg.bottleneck_dim = 5;
        cfg.embed_dim = 7;
        cfg.n_layers = 3;
        cfg.lookback_order = 4;
        cfg
    }

    fn random_features(rng: &mut StdRng, frames: usize, dim: usize) -> Matrix<f32> {
        Matrix::from_vec(frames, dim, (0..frames * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// With zero memory taps and one layer there is no skip and no history:
    /// the encoder reduces to a pure per-frame feedforward stack.
    #[test]
    fn zero_memory_equals_per_frame_feedforward() {
        let mut cfg = toy_cfg();
        cfg.n_layers = 1;
        let mut w = random_weights(&cfg, 9);
        let mem_name = "enc.l0.mem".to_string();
        w.tensor_mut(&mem_name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut rng = StdRng::seed_from_u64(1);
        let feats = random_features(&mut rng, 12, cfg.feature_dim);
        let full = forward(&feats, &w, &cfg).unwrap();
        // Each frame processed in isolation must give the same row.
        for t in 0..12 {
            let single = Matrix::from_vec(1, cfg.feature_dim, feats.row(t).to_vec()).unwrap();
            let row = forward(&single, &w, &cfg).unwrap();
            for k in 0..cfg.embed_dim {
                assert!((row.values.get(0, k) - full.values.get(t, k)).abs() < 1e-6);
            }
        }
    }

    /// Perturbing frame t must leave outputs before t bit-identical.
    #[test]
    fn strictly_causal() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 4);
        let mut rng = StdRng::seed_from_u64(2);
        let feats = random_features(&mut rng, 15, cfg.feature_dim);
        let base = forward(&feats, &w, &cfg).unwrap();
        for t in [5usize, 10] {
            let mut perturbed = feats.clone();
            for k in 0..cfg.feature_dim {
                perturbed.set(t, k, perturbed.get(t, k) + 1.0);
            }
            let out = forward(&perturbed, &w, &cfg).unwrap();
            for before in 0..t {
                assert_eq!(out.values.row(before), base.values.row(before), "frame {before}");
            }
            // And the perturbation must actually reach frame t.
            assert_ne!(out.values.row(t), base.values.row(t));
        }
    }

    /// The batch path is the oracle for the streaming step.
    #[test]
    fn streaming_matches_batch() {
        let cfg = toy_cfg();
        for seed in 0..20u64 {
            let w = random_weights(&cfg, seed);
            let mut rng = StdRng::seed_from_u64(seed + 100);
            let frames = rng.gen_range(1..40);
            let feats = random_features(&mut rng, frames, cfg.feature_dim);
            let batch = forward(&feats, &w, &cfg).unwrap();
            let mut state = StreamState::new(&cfg);
            for t in 0..frames {
                let emb = step(feats.row(t), &mut state, &w, &cfg).unwrap();
                for k in 0..cfg.embed_dim {
                    assert!(
                        (emb[k] - batch.values.get(t, k)).abs() < 1e-6,
                        "seed {seed} frame {t} dim {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn fresh_state_first_frame_equals_one_frame_forward() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 77);
        let mut rng = StdRng::seed_from_u64(7);
        let feats = random_features(&mut rng, 1, cfg.feature_dim);
        let batch = forward(&feats, &w, &cfg).unwrap();
        let mut state = StreamState::new(&cfg);
        let emb = step(feats.row(0), &mut state, &w, &cfg).unwrap();
        assert_eq!(emb.as_slice(), batch.values.row(0));
    }

    /// Resetting the state between two streams is the same as processing them
    /// with independent states.
    #[test]
    fn reset_isolates_streams() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 31);
        let mut rng = StdRng::seed_from_u64(8);
        let a = random_features(&mut rng, 9, cfg.feature_dim);
        let b = random_features(&mut rng, 9, cfg.feature_dim);
        let mut shared = StreamState::new(&cfg);
        for t in 0..9 {
            step(a.row(t), &mut shared, &w, &cfg).unwrap();
        }
        shared.reset();
        let mut fresh = StreamState::new(&cfg);
        for t in 0..9 {
            let via_reset = step(b.row(t), &mut shared, &w, &cfg).unwrap();
            let via_fresh = step(b.row(t), &mut fresh, &w, &cfg).unwrap();
            assert_eq!(via_reset, via_fresh);
        }
    }

    #[test]
    fn rejects_wrong_feature_dim() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 1);
        let feats = Matrix::zeros(3, cfg.feature_dim + 1);
        assert!(forward(&feats, &w, &cfg).is_err());
    }

    /// Finite-difference check of the full encoder backward on a tiny config.
    #[test]
    fn backward_matches_finite_differences() {
        use crate::numkit::{finite_diff_grad, grad_rel_error, Vector};
        let mut cfg = toy_cfg();
        cfg.n_layers = 2;
        cfg.lookback_order = 3;
        let w32 = random_weights(&cfg, 55);
        let w = w32.to_f64();
        let mut rng = StdRng::seed_from_u64(9);
        let feats = random_features(&mut rng, 7, cfg.feature_dim).to_f64();
        // Scalar loss: weighted sum of embedding entries, fixed coefficients.
        let coeffs: Vec<f64> = (0..7 * cfg.embed_dim).map(|i| ((i % 5) as f64 - 2.0) * 0.3).collect();
        let loss = |container: &WeightContainer<f64>| {
            let out = forward(&feats, container, &cfg).unwrap();
            out.values.data().iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (out, cache) = forward_cached(&feats, &w, &cfg).unwrap();
        let d_emb = Matrix::from_vec(7, cfg.embed_dim, coeffs.clone()).unwrap();
        let mut grads = GradStore::new();
        backward(&cache, &d_emb, &w, &cfg, &mut grads).unwrap();
        assert_eq!(out.values.rows(), 7);

        for name in ["enc.l0.w", "enc.l0.mem", "enc.l1.v", "enc.l1.mem", "enc.out.w", "enc.l1.b"] {
            let base = w.tensor(name).unwrap().data().to_vec();
            let fd = finite_diff_grad(
                |vals| {
                    let mut probe = w.clone();
                    probe.tensor_mut(name).unwrap().data_mut().copy_from_slice(vals);
                    loss(&probe)
                },
                &Vector::new(base),
                1e-5,
            )
            .unwrap();
            let analytic = grads.get(name).unwrap().data();
            let err = grad_rel_error(analytic, fd.data());
            assert!(err < 1e-6, "{name}: rel err {err}");
        }
    }
}
