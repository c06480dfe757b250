//! Text encoder: embedding table, single-layer unidirectional LSTM, linear
//! projection to the shared embedding dimension. Gate order in the stacked
//! weights is input, forget, cell, output.

use super::{EmbeddingSequence, GradStore, Modality, ModelConfig, WeightContainer};
use crate::error::{Error, Result};
use crate::numkit::{axpy, dot, Matrix, Real};

pub struct LstmCache<T> {
    tokens: Vec<usize>,
    /// Per step: gate activations i, f, g, o (each hidden wide).
    gates: Vec<[Vec<T>; 4]>,
    cell: Vec<Vec<T>>,
    cell_tanh: Vec<Vec<T>>,
    hidden: Vec<Vec<T>>,
}

fn tensors<'a, T: Real>(
    w: &'a WeightContainer<T>,
) -> Result<(&'a Matrix<T>, &'a Matrix<T>, &'a Matrix<T>, &'a [T], &'a Matrix<T>, &'a [T])> {
    Ok((
        w.mat("txt.emb")?,
        w.mat("txt.lstm.wx")?,
        w.mat("txt.lstm.wh")?,
        w.vec("txt.lstm.b")?.data(),
        w.mat("txt.proj.w")?,
        w.vec("txt.proj.b")?.data(),
    ))
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Encode a token sequence: one output frame per token.
pub fn forward<T: Real>(
    tokens: &[usize],
    w: &WeightContainer<T>,
    cfg: &ModelConfig,
) -> Result<EmbeddingSequence<T>> {
    Ok(forward_cached(tokens, w, cfg)?.0)
}

pub fn forward_cached<T: Real>(
    tokens: &[usize],
    w: &WeightContainer<T>,
    cfg: &ModelConfig,
) -> Result<(EmbeddingSequence<T>, LstmCache<T>)> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("text encoder needs at least one token".into()));
    }
    let (emb, wx, wh, b, proj_w, proj_b) = tensors(w)?;
    for &t in tokens {
        if t >= cfg.vocab_size {
            return Err(Error::InvalidInput(format!(
                "token id {t} out of range (vocab_size {})",
                cfg.vocab_size
            )));
        }
        if t >= emb.rows() {
            return Err(Error::Shape(format!("token id {t} exceeds embedding table rows {}", emb.rows())));
        }
    }
    let h_dim = cfg.hidden_dim;
    let mut cache = LstmCache {
        tokens: tokens.to_vec(),
        gates: Vec::with_capacity(tokens.len()),
        cell: Vec::with_capacity(tokens.len()),
        cell_tanh: Vec::with_capacity(tokens.len()),
        hidden: Vec::with_capacity(tokens.len()),
    };
    let mut h = vec![T::zero(); h_dim];
    let mut c = vec![T::zero(); h_dim];
    let mut out = Matrix::zeros(tokens.len(), cfg.embed_dim);
    for (step, &tok) in tokens.iter().enumerate() {
        let x = emb.row(tok);
        let mut a = wx.matvec(x)?;
        let rec = wh.matvec(&h)?;
        axpy(&mut a, &rec, T::one());
        axpy(&mut a, b, T::one());
        let mut i_gate = vec![T::zero(); h_dim];
        let mut f_gate = vec![T::zero(); h_dim];
        let mut g_gate = vec![T::zero(); h_dim];
        let mut o_gate = vec![T::zero(); h_dim];
        for k in 0..h_dim {
            i_gate[k] = sigmoid(a[k]);
            f_gate[k] = sigmoid(a[h_dim + k]);
            g_gate[k] = a[2 * h_dim + k].tanh();
            o_gate[k] = sigmoid(a[3 * h_dim + k]);
        }
        let mut c_new = vec![T::zero(); h_dim];
        let mut c_tanh = vec![T::zero(); h_dim];
        for k in 0..h_dim {
            c_new[k] = f_gate[k] * c[k] + i_gate[k] * g_gate[k];
            c_tanh[k] = c_new[k].tanh();
            h[k] = o_gate[k] * c_tanh[k];
        }
        c = c_new;
        let mut y = proj_w.matvec(&h)?;
        axpy(&mut y, proj_b, T::one());
        out.row_mut(step).copy_from_slice(&y);
        cache.gates.push([i_gate, f_gate, g_gate, o_gate]);
        cache.cell.push(c.clone());
        cache.cell_tanh.push(c_tanh);
        cache.hidden.push(h.clone());
    }
    Ok((EmbeddingSequence::new(out, Modality::Text), cache))
}

/// Backprop through time; accumulates gradients for the embedding table,
/// LSTM weights, and projection.
pub fn backward<T: Real>(
    cache: &LstmCache<T>,
    d_out: &Matrix<T>,
    w: &WeightContainer<T>,
    cfg: &ModelConfig,
    grads: &mut GradStore<T>,
) -> Result<()> {
    let (emb, wx, wh, _b, proj_w, _proj_b) = tensors(w)?;
    let h_dim = cfg.hidden_dim;
    let steps = cache.tokens.len();
    if d_out.rows() != steps || d_out.cols() != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "lstm backward expects {}x{} gradient, got {}x{}",
            steps,
            cfg.embed_dim,
            d_out.rows(),
            d_out.cols()
        )));
    }

    // Projection gradients and per-step dL/dh contribution.
    let mut d_h_from_proj: Vec<Vec<T>> = Vec::with_capacity(steps);
    {
        let g_proj_w = grads.mat_mut("txt.proj.w", proj_w.rows(), proj_w.cols());
        for t in 0..steps {
            g_proj_w.add_outer(d_out.row(t), &cache.hidden[t], T::one());
        }
    }
    {
        let g_proj_b = grads.vec_mut("txt.proj.b", cfg.embed_dim);
        for t in 0..steps {
            axpy(g_proj_b.data_mut(), d_out.row(t), T::one());
        }
    }
    for t in 0..steps {
        d_h_from_proj.push(proj_w.t_matvec(d_out.row(t))?);
    }

    let mut d_h_carry = vec![T::zero(); h_dim];
    let mut d_c_carry = vec![T::zero(); h_dim];
    for t in (0..steps).rev() {
        let [i_gate, f_gate, g_gate, o_gate] = &cache.gates[t];
        let c_tanh = &cache.cell_tanh[t];
        let c_prev: &[T] = if t == 0 { &[] } else { &cache.cell[t - 1] };

        let mut d_h = d_h_from_proj[t].clone();
        axpy(&mut d_h, &d_h_carry, T::one());

        let mut d_a = vec![T::zero(); 4 * h_dim];
        let mut d_c_next = vec![T::zero(); h_dim];
        for k in 0..h_dim {
            let d_o = d_h[k] * c_tanh[k];
            let mut d_c = d_h[k] * o_gate[k] * (T::one() - c_tanh[k] * c_tanh[k]) + d_c_carry[k];
            let cp = if t == 0 { T::zero() } else { c_prev[k] };
            let d_i = d_c * g_gate[k];
            let d_f = d_c * cp;
            let d_g = d_c * i_gate[k];
            d_c *= f_gate[k];
            d_c_next[k] = d_c;
            d_a[k] = d_i * i_gate[k] * (T::one() - i_gate[k]);
            d_a[h_dim + k] = d_f * f_gate[k] * (T::one() - f_gate[k]);
            d_a[2 * h_dim + k] = d_g * (T::one() - g_gate[k] * g_gate[k]);
            d_a[3 * h_dim + k] = d_o * o_gate[k] * (T::one() - o_gate[k]);
        }
        d_c_carry = d_c_next;

        let x = emb.row(cache.tokens[t]);
        grads.mat_mut("txt.lstm.wx", wx.rows(), wx.cols()).add_outer(&d_a, x, T::one());
        if t > 0 {
            grads
                .mat_mut("txt.lstm.wh", wh.rows(), wh.cols())
                .add_outer(&d_a, &cache.hidden[t - 1], T::one());
        }
        axpy(grads.vec_mut("txt.lstm.b", 4 * h_dim).data_mut(), &d_a, T::one());

        let d_x = wx.t_matvec(&d_a)?;
        {
            let g_emb = grads.mat_mut("txt.emb", emb.rows(), emb.cols());
            axpy(g_emb.row_mut(cache.tokens[t]), &d_x, T::one());
        }
        d_h_carry = wh.t_matvec(&d_a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init::random_weights;
    use crate::numkit::{finite_diff_grad, grad_rel_error, Vector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::toy();
        cfg.hidden_dim = 6;
        cfg.embed_dim = 5;
        cfg.text_embed_dim = 4;
        cfg.vocab_size = 9;
        cfg
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let cfg = toy_cfg();
        let mut w = random_weights(&cfg, 3);
        for name in ["txt.emb", "txt.lstm.wx", "txt.lstm.wh", "txt.lstm.b", "txt.proj.w", "txt.proj.b"] {
            w.tensor_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = forward(&[0, 1, 2], &w, &cfg).unwrap();
        assert!(out.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prefix_causality() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 10);
        let one = forward(&[4], &w, &cfg).unwrap();
        let two = forward(&[4, 7], &w, &cfg).unwrap();
        assert_eq!(one.values.row(0), two.values.row(0));
    }

    #[test]
    fn rejects_out_of_range_token() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 1);
        assert!(forward(&[cfg.vocab_size], &w, &cfg).is_err());
    }

    #[test]
    fn rejects_empty_sequence() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 1);
        assert!(forward(&[], &w, &cfg).is_err());
    }

    /// Independent oracle: a plain scalar recurrence written out by hand.
    #[test]
    fn matches_direct_recurrence() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 21).to_f64();
        let tokens = [2usize, 5, 1, 8, 3];
        let out = forward(&tokens, &w, &cfg).unwrap();

        let emb = w.mat("txt.emb").unwrap();
        let wx = w.mat("txt.lstm.wx").unwrap();
        let wh = w.mat("txt.lstm.wh").unwrap();
        let b = w.vec("txt.lstm.b").unwrap();
        let pw = w.mat("txt.proj.w").unwrap();
        let pb = w.vec("txt.proj.b").unwrap();
        let hd = cfg.hidden_dim;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h = vec![0.0f64; hd];
        let mut c = vec![0.0f64; hd];
        for (step, &tok) in tokens.iter().enumerate() {
            let x = emb.row(tok);
            let pre = |row: usize, h_prev: &[f64]| dot(wx.row(row), x) + dot(wh.row(row), h_prev) + b.data()[row];
            let h_prev = h.clone();
            let mut h_new = vec![0.0f64; hd];
            for k in 0..hd {
                let i = sig(pre(k, &h_prev));
                let f = sig(pre(hd + k, &h_prev));
                let g = pre(2 * hd + k, &h_prev).tanh();
                let o = sig(pre(3 * hd + k, &h_prev));
                c[k] = f * c[k] + i * g;
                h_new[k] = o * c[k].tanh();
            }
            h = h_new;
            let mut y = pw.matvec(&h).unwrap();
            axpy(&mut y, pb.data(), 1.0);
            for k in 0..cfg.embed_dim {
                assert!(
                    (y[k] - out.values.get(step, k)).abs() < 1e-9,
                    "step {step} dim {k}: {} vs {}",
                    y[k],
                    out.values.get(step, k)
                );
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = toy_cfg();
        let w = random_weights(&cfg, 31).to_f64();
        let tokens = [1usize, 3, 3, 0];
        let mut rng = StdRng::seed_from_u64(5);
        let coeffs: Vec<f64> =
            (0..tokens.len() * cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |container: &WeightContainer<f64>| {
            let out = forward(&tokens, container, &cfg).unwrap();
            out.values.data().iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = forward_cached(&tokens, &w, &cfg).unwrap();
        let d_out = Matrix::from_vec(tokens.len(), cfg.embed_dim, coeffs.clone()).unwrap();
        let mut grads = GradStore::new();
        backward(&cache, &d_out, &w, &cfg, &mut grads).unwrap();

        for name in ["txt.emb", "txt.lstm.wx", "txt.lstm.wh", "txt.lstm.b", "txt.proj.w", "txt.proj.b"] {
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
