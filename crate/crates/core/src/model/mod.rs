//! Encoder forward passes and the weight container they load from.
//!
//! Three encoders share one [`WeightContainer`]: a causal DFSMN audio encoder
//! ([`dfsmn`]), an LSTM text encoder ([`text`]), and a single-head
//! cross-attention mixer ([`attention`]). Each forward has a cached variant
//! plus a hand-derived backward used by the trainer.

pub mod attention;
pub mod dfsmn;
pub mod init;
pub mod text;
pub mod weights;

pub use weights::{load_weights, save_weights, GradStore, Tensor, WeightContainer};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Real};
use serde::Serialize;

/// Which pipeline stage an embedding sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Audio,
    Text,
    Mixed,
    Stream,
}

/// Frame-major sequence of D-dimensional embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T = f32> {
    pub values: Matrix<T>,
    pub modality: Modality,
}

impl<T: Real> EmbeddingSequence<T> {
    pub fn new(values: Matrix<T>, modality: Modality) -> Self {
        EmbeddingSequence { values, modality }
    }

    pub fn n_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

impl EmbeddingSequence<f32> {
    pub fn to_f64(&self) -> EmbeddingSequence<f64> {
        EmbeddingSequence { values: self.values.to_f64(), modality: self.modality }
    }
}

/// Model hyper-parameters. `paper()` is the full-size configuration, `toy()`
/// the desk-scale one used by the synthetic trainer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    /// Number of DFSMN layers.
    pub n_layers: usize,
    /// Width of each layer's feedforward hidden state (also the LSTM width).
    pub hidden_dim: usize,
    /// Width of the per-layer bottleneck projection carrying the memory taps.
    pub bottleneck_dim: usize,
    /// Memory order: how many past bottleneck vectors each layer taps
    /// (stride 1, lookahead 0 — the encoder is strictly causal).
    pub lookback_order: usize,
    /// Output embedding dimension D.
    pub embed_dim: usize,
    /// Input feature dimension (mel bins, or synthetic feature dim).
    pub feature_dim: usize,
    /// Text token vocabulary size.
    pub vocab_size: usize,
    /// Phoneme classifier width.
    pub n_phonemes: usize,
    /// Speaker classifier width.
    pub n_speakers: usize,
    /// Text embedding table width.
    pub text_embed_dim: usize,
    /// Attentive-pooling hidden width.
    pub pool_dim: usize,
}

impl ModelConfig {
    /// Full-size configuration: 7 layers, hidden 256.
    pub fn paper() -> Self {
        ModelConfig {
            n_layers: 7,
            hidden_dim: 256,
            bottleneck_dim: 16,
            lookback_order: 8,
            embed_dim: 256,
            feature_dim: 40,
            vocab_size: 70,
            n_phonemes: 70,
            n_speakers: 1000,
            text_embed_dim: 256,
            pool_dim: 64,
        }
    }

    /// Desk-scale configuration matching the synthetic corpus defaults.
    pub fn toy() -> Self {
        ModelConfig {
            n_layers: 3,
            hidden_dim: 32,
            bottleneck_dim: 16,
            lookback_order: 8,
            embed_dim: 32,
            feature_dim: 20,
            vocab_size: 12,
            n_phonemes: 12,
            n_speakers: 6,
            text_embed_dim: 32,
            pool_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_layers", self.n_layers),
            ("hidden_dim", self.hidden_dim),
            ("bottleneck_dim", self.bottleneck_dim),
            ("lookback_order", self.lookback_order),
            ("embed_dim", self.embed_dim),
            ("feature_dim", self.feature_dim),
            ("vocab_size", self.vocab_size),
            ("n_phonemes", self.n_phonemes),
            ("n_speakers", self.n_speakers),
            ("text_embed_dim", self.text_embed_dim),
            ("pool_dim", self.pool_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Input width of DFSMN layer `l`: features for the first layer, the
    /// previous layer's bottleneck output after that.
    pub fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.feature_dim
        } else {
            self.bottleneck_dim
        }
    }

    /// Recover a configuration from tensor shapes in a container.
    pub fn infer_from(w: &WeightContainer<f32>) -> Result<Self> {
        let mut n_layers = 0;
        while w.contains(&format!("enc.l{n_layers}.w")) {
            n_layers += 1;
        }
        if n_layers == 0 {
            return Err(Error::Shape("container holds no encoder layers (enc.l0.w missing)".into()));
        }
        let l0 = w.mat("enc.l0.w")?;
        let v0 = w.mat("enc.l0.v")?;
        let mem0 = w.mat("enc.l0.mem")?;
        let out = w.mat("enc.out.w")?;
        let emb = w.mat("txt.emb")?;
        let ph = w.mat("ph.w")?;
        let spk_cls = w.mat("spk.cls.w")?;
        let pool = w.mat("spk.pool.w")?;
        let cfg = ModelConfig {
            n_layers,
            hidden_dim: l0.rows(),
            bottleneck_dim: v0.rows(),
            lookback_order: mem0.rows(),
            embed_dim: out.rows(),
            feature_dim: l0.cols(),
            vocab_size: emb.rows(),
            n_phonemes: ph.rows(),
            n_speakers: spk_cls.rows(),
            text_embed_dim: emb.cols(),
            pool_dim: pool.rows(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn param_counts(&self) -> ParamCounts {
        let mut audio_encoder = 0usize;
        for l in 0..self.n_layers {
            let input = self.layer_input_dim(l);
            audio_encoder += self.hidden_dim * input + self.hidden_dim; // w, b
            audio_encoder += self.bottleneck_dim * self.hidden_dim; // v
            audio_encoder += self.lookback_order * self.bottleneck_dim; // mem
        }
        audio_encoder += self.embed_dim * self.bottleneck_dim + self.embed_dim; // output projection

        let text_encoder = self.vocab_size * self.text_embed_dim
            + 4 * self.hidden_dim * self.text_embed_dim // lstm input weights
            + 4 * self.hidden_dim * self.hidden_dim // lstm recurrent weights
            + 4 * self.hidden_dim // lstm bias
            + self.embed_dim * self.hidden_dim + self.embed_dim; // projection

        let cross_attention = 4 * self.embed_dim * self.embed_dim;
        let phoneme_classifier = self.n_phonemes * self.embed_dim;
        let speaker_head = self.pool_dim * self.embed_dim
            + self.pool_dim
            + self.n_speakers * self.embed_dim
            + self.n_speakers;

        ParamCounts {
            audio_encoder,
            text_encoder,
            cross_attention,
            phoneme_classifier,
            speaker_head,
            deployable_total: audio_encoder + text_encoder + cross_attention,
            grand_total: audio_encoder
                + text_encoder
                + cross_attention
                + phoneme_classifier
                + speaker_head,
        }
    }
}

/// Per-component parameter counts. `deployable_total` covers what enrollment
/// and streaming inference execute (the three encoders); the classifier heads
/// are training-time scaffolding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub audio_encoder: usize,
    pub text_encoder: usize,
    pub cross_attention: usize,
    pub phoneme_classifier: usize,
    pub speaker_head: usize,
    pub deployable_total: usize,
    pub grand_total: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_config_deployable_params_match_expected_breakdown() {
        let counts = ModelConfig::paper().param_counts();
        // Layer 0: 256*40+256 + 16*256 + 8*16, layers 1..6: 256*16+256 + 16*256 + 8*16.
        let enc = (256 * 40 + 256 + 16 * 256 + 8 * 16)
            + 6 * (256 * 16 + 256 + 16 * 256 + 8 * 16)
            + (256 * 16 + 256);
        assert_eq!(counts.audio_encoder, enc);
        assert_eq!(counts.cross_attention, 4 * 256 * 256);
        let txt = 70 * 256 + 4 * 256 * 256 + 4 * 256 * 256 + 4 * 256 + 256 * 256 + 256;
        assert_eq!(counts.text_encoder, txt);
        assert_eq!(counts.deployable_total, enc + txt + 4 * 256 * 256);
    }

    #[test]
    fn infer_round_trips_through_init() {
        let cfg = ModelConfig::toy();
        let w = init::init_weights(&cfg, 5);
        let inferred = ModelConfig::infer_from(&w).unwrap();
        assert_eq!(cfg, inferred);
    }

    #[test]
    fn validate_rejects_zero_counts() {
        let mut cfg = ModelConfig::toy();
        cfg.n_layers = 0;
        assert!(cfg.validate().is_err());
    }
}
