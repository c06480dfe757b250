//! Seeded weight initialization.

use super::{ModelConfig, WeightContainer};
use crate::numkit::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite by construction")
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, limit: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Training initialization: Xavier-uniform linear maps, zero biases, zero
/// memory taps, LSTM forget-gate bias at 1. Deterministic for a fixed seed.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> WeightContainer<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightContainer::new();
    let (h, c, d) = (cfg.hidden_dim, cfg.bottleneck_dim, cfg.embed_dim);

    for l in 0..cfg.n_layers {
        let input = cfg.layer_input_dim(l);
        w.insert_mat(&format!("enc.l{l}.w"), xavier(&mut rng, h, input, input, h));
        w.insert_vec(&format!("enc.l{l}.b"), Vector::zeros(h));
        w.insert_mat(&format!("enc.l{l}.v"), xavier(&mut rng, c, h, h, c));
        w.insert_mat(&format!("enc.l{l}.mem"), Matrix::zeros(cfg.lookback_order, c));
    }
    w.insert_mat("enc.out.w", xavier(&mut rng, d, c, c, d));
    w.insert_vec("enc.out.b", Vector::zeros(d));

    w.insert_mat("ph.w", xavier(&mut rng, cfg.n_phonemes, d, d, cfg.n_phonemes));

    w.insert_mat("spk.pool.w", xavier(&mut rng, cfg.pool_dim, d, d, cfg.pool_dim));
    w.insert_vec("spk.pool.v", Vector::new(uniform(&mut rng, cfg.pool_dim, 0.1)));
    w.insert_mat("spk.cls.w", xavier(&mut rng, cfg.n_speakers, d, d, cfg.n_speakers));
    w.insert_vec("spk.cls.b", Vector::zeros(cfg.n_speakers));

    let e = cfg.text_embed_dim;
    w.insert_mat("txt.emb", xavier(&mut rng, cfg.vocab_size, e, e, e));
    w.insert_mat("txt.lstm.wx", xavier(&mut rng, 4 * h, e, e, h));
    w.insert_mat("txt.lstm.wh", xavier(&mut rng, 4 * h, h, h, h));
    let mut lstm_b = Vector::zeros(4 * h);
    for i in h..2 * h {
        lstm_b.data_mut()[i] = 1.0; // forget gate
    }
    w.insert_vec("txt.lstm.b", lstm_b);
    w.insert_mat("txt.proj.w", xavier(&mut rng, d, h, h, d));
    w.insert_vec("txt.proj.b", Vector::zeros(d));

    for name in ["att.wq", "att.wk", "att.wv", "att.wo"] {
        w.insert_mat(name, xavier(&mut rng, d, d, d, d));
    }
    w
}

/// Everything-random initialization (including memory taps and biases), for
/// tests that exercise forward paths on arbitrary weights.
pub fn random_weights(cfg: &ModelConfig, seed: u64) -> WeightContainer<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = init_weights(cfg, seed);
    let names: Vec<String> = w.names().cloned().collect();
    for name in names {
        let t = w.tensor_mut(&name).expect("just listed");
        for v in t.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    w
}
