//! Bidirectional GRU encoder shared by an attentional GRU decoder (with an
//! embedding-prediction or softmax output) and a visual projection head.

mod checkpoint;
mod decode;
mod network;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use network::{Encoded, Mode, StepOutput, TeacherForced};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::embeddings::{DistanceKind, EmbeddingTable, InitMode, Vocabulary, DEFAULT_EMBEDDING_DIM, DEFAULT_VOCAB_SIZE};
use crate::error::{Error, Result};

/// Half-width of the uniform range for weight matrices; biases start at zero.
pub const PARAM_INIT_RANGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    #[default]
    EmbeddingPrediction,
    Softmax,
}

/// What the decoder consumes after emitting a word at inference time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Table row of the emitted word.
    #[default]
    Emitted,
    /// The raw predicted embedding (embedding-prediction head only).
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutSites {
    pub encoder_output: bool,
    pub decoder_state: bool,
}

impl Default for DropoutSites {
    fn default() -> Self {
        DropoutSites {
            encoder_output: true,
            decoder_state: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Maximum vocabulary size of each language, reserved tokens included.
    pub vocab_size: usize,
    pub embedding_dim: usize,
    /// Per direction; encoder states have twice this size.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub dropout_sites: DropoutSites,
    pub output_head: OutputHead,
    pub encoder_init: InitMode,
    pub encoder_trainable: bool,
    pub decoder_init: InitMode,
    pub decoder_fixed: bool,
    pub multimodal: bool,
    pub distance: DistanceKind,
    pub feedback: Feedback,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            encoder_hidden: 256,
            decoder_hidden: 256,
            latent_dim: 2048,
            dropout: 0.3,
            dropout_sites: DropoutSites::default(),
            output_head: OutputHead::default(),
            encoder_init: InitMode::Pretrained,
            encoder_trainable: true,
            decoder_init: InitMode::Pretrained,
            decoder_fixed: true,
            multimodal: true,
            distance: DistanceKind::default(),
            feedback: Feedback::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embedding_dim,
            self.encoder_hidden,
            self.decoder_hidden,
            self.latent_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.vocab_size < 5 {
            return Err(Error::config("vocab_size must leave room for at least one word"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.output_head == OutputHead::Softmax && self.feedback == Feedback::Predicted {
            return Err(Error::config("predicted-embedding feedback needs the embedding-prediction head"));
        }
        Ok(())
    }

    /// Encoder state size (both directions).
    pub fn state_dim(&self) -> usize {
        2 * self.encoder_hidden
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum HeadIds {
    Embedding { w: ParamId, b: ParamId },
    Softmax { w: ParamId, b: ParamId },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Ids {
    pub src_embedding: ParamId,
    pub enc_fwd: GruIds,
    pub enc_bwd: GruIds,
    pub init_w: ParamId,
    pub init_b: ParamId,
    pub tgt_embedding: ParamId,
    pub attn_key: ParamId,
    pub attn_query: ParamId,
    pub attn_bias: ParamId,
    pub attn_v: ParamId,
    pub dec: GruIds,
    pub head: HeadIds,
    pub visual: Option<ParamId>,
}

/// Name, shape and kind of every parameter for a configuration.
fn layout(config: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> Vec<(String, Vec<usize>, Kind)> {
    let (e, h, s, hd) = (config.embedding_dim, config.encoder_hidden, config.state_dim(), config.decoder_hidden);
    let mut out = vec![("encoder.embedding".to_string(), vec![src_vocab, e], Kind::SourceTable)];
    let gru = |prefix: &str, input: usize, hidden: usize, out: &mut Vec<(String, Vec<usize>, Kind)>| {
        out.push((format!("{prefix}.w_ih"), vec![input, 3 * hidden], Kind::Weight));
        out.push((format!("{prefix}.w_hh"), vec![hidden, 3 * hidden], Kind::Weight));
        out.push((format!("{prefix}.b_ih"), vec![3 * hidden], Kind::Bias));
        out.push((format!("{prefix}.b_hh"), vec![3 * hidden], Kind::Bias));
    };
    gru("encoder.fwd", e, h, &mut out);
    gru("encoder.bwd", e, h, &mut out);
    out.push(("decoder.init.w".into(), vec![s, hd], Kind::Weight));
    out.push(("decoder.init.b".into(), vec![hd], Kind::Bias));
    out.push(("decoder.embedding".into(), vec![tgt_vocab, e], Kind::TargetTable));
    out.push(("decoder.attention.w_key".into(), vec![s, hd], Kind::Weight));
    out.push(("decoder.attention.w_query".into(), vec![hd, hd], Kind::Weight));
    out.push(("decoder.attention.bias".into(), vec![hd], Kind::Bias));
    out.push(("decoder.attention.v".into(), vec![hd, 1], Kind::Weight));
    gru("decoder.gru", e + s, hd, &mut out);
    match config.output_head {
        OutputHead::EmbeddingPrediction => {
            out.push(("decoder.output.w".into(), vec![hd, e], Kind::Weight));
            out.push(("decoder.output.b".into(), vec![e], Kind::Bias));
        }
        OutputHead::Softmax => {
            out.push(("decoder.softmax.w".into(), vec![hd, tgt_vocab], Kind::Weight));
            out.push(("decoder.softmax.b".into(), vec![tgt_vocab], Kind::Bias));
        }
    }
    if config.multimodal {
        out.push(("visual.w".into(), vec![s, config.latent_dim], Kind::Weight));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    SourceTable,
    TargetTable,
    Weight,
    Bias,
}

/// The full model: configuration, vocabularies and parameters.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: ModelConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    store: ParamStore,
    pub(crate) ids: Ids,
}

impl Seq2Seq {
    /// Builds a model around prepared embedding tables. Weights are drawn
    /// from `rng` in parameter order.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        src_table: EmbeddingTable,
        tgt_table: EmbeddingTable,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut tables = [Some(src_table.into_matrix()), Some(tgt_table.into_matrix())];
        for (name, shape, kind) in layout(&config, src_vocab.len(), tgt_vocab.len()) {
            let value = match kind {
                Kind::SourceTable => tables[0].take().unwrap(),
                Kind::TargetTable => tables[1].take().unwrap(),
                Kind::Weight => Tensor::uniform(&shape, -PARAM_INIT_RANGE, PARAM_INIT_RANGE, rng),
                Kind::Bias => Tensor::zeros(&shape),
            };
            store.add(name, value, true)?;
        }
        Self::from_store(config, src_vocab, tgt_vocab, store)
    }

    /// Wraps an existing parameter store, checking names and shapes and
    /// applying the trainability flags of `config`.
    pub fn from_store(config: ModelConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary, mut store: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, src_vocab.len(), tgt_vocab.len());
        if store.len() != expected.len() {
            return Err(Error::Format(format!(
                "model expects {} parameters, found {}",
                expected.len(),
                store.len()
            )));
        }
        for (name, shape, _) in &expected {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            if !store.value(id).is_finite() {
                return Err(Error::Format(format!("parameter {name} has non-finite values")));
            }
        }
        let id = |n: &str| store.id(n).unwrap();
        let gru = |p: &str| GruIds {
            w_ih: id(&format!("{p}.w_ih")),
            w_hh: id(&format!("{p}.w_hh")),
            b_ih: id(&format!("{p}.b_ih")),
            b_hh: id(&format!("{p}.b_hh")),
        };
        let head = match config.output_head {
            OutputHead::EmbeddingPrediction => HeadIds::Embedding {
                w: id("decoder.output.w"),
                b: id("decoder.output.b"),
            },
            OutputHead::Softmax => HeadIds::Softmax {
                w: id("decoder.softmax.w"),
                b: id("decoder.softmax.b"),
            },
        };
        let ids = Ids {
            src_embedding: id("encoder.embedding"),
            enc_fwd: gru("encoder.fwd"),
            enc_bwd: gru("encoder.bwd"),
            init_w: id("decoder.init.w"),
            init_b: id("decoder.init.b"),
            tgt_embedding: id("decoder.embedding"),
            attn_key: id("decoder.attention.w_key"),
            attn_query: id("decoder.attention.w_query"),
            attn_bias: id("decoder.attention.bias"),
            attn_v: id("decoder.attention.v"),
            dec: gru("decoder.gru"),
            head,
            visual: config.multimodal.then(|| id("visual.w")),
        };
        store.set_trainable(ids.src_embedding, config.encoder_trainable);
        store.set_trainable(ids.tgt_embedding, !config.decoder_fixed);
        Ok(Seq2Seq {
            config,
            src_vocab,
            tgt_vocab,
            store,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn src_vocab(&self) -> &Vocabulary {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocabulary {
        &self.tgt_vocab
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces all parameter values with those of `store`, which must come
    /// from a model of the same layout.
    pub fn set_store(&mut self, store: ParamStore) -> Result<()> {
        let rebuilt = Self::from_store(self.config.clone(), self.src_vocab.clone(), self.tgt_vocab.clone(), store)?;
        *self = rebuilt;
        Ok(())
    }

    /// Value of the named parameter.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.store.id(name).map(|id| self.store.value(id))
    }

    /// The table searched by nearest-neighbor decoding.
    pub fn target_table(&self) -> &Tensor {
        self.store.value(self.ids.tgt_embedding)
    }

    pub fn source_table(&self) -> &Tensor {
        self.store.value(self.ids.src_embedding)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    pub(crate) fn toy(config: ModelConfig) -> Seq2Seq {
        let words: Vec<String> = (0..16).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::build([words.as_slice()], 20);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = |rng: &mut ChaCha8Rng| {
            crate::embeddings::assemble_table(None, &vocab, None, InitMode::Random, config.embedding_dim, rng).unwrap()
        };
        let (s, t) = (table(&mut rng), table(&mut rng));
        Seq2Seq::new(config, vocab.clone(), vocab.clone(), s, t, &mut rng).unwrap()
    }

    pub(crate) fn toy_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            embedding_dim: 8,
            encoder_hidden: 6,
            decoder_hidden: 6,
            latent_dim: 10,
            ..Default::default()
        }
    }

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        assert_eq!((c.encoder_hidden, c.decoder_hidden, c.embedding_dim, c.latent_dim), (256, 256, 300, 2048));
        assert_eq!(c.state_dim(), 512);
        assert_eq!(c.dropout, 0.3);
        assert!(c.decoder_fixed && c.encoder_trainable);
    }

    #[test]
    fn layout_and_flags() {
        let m = toy(toy_config());
        assert_eq!(m.param("visual.w").unwrap().shape(), &[12, 10]);
        assert_eq!(m.param("decoder.output.w").unwrap().shape(), &[6, 8]);
        let store = m.store();
        assert!(!store.get(store.id("decoder.embedding").unwrap()).trainable());
        assert!(store.get(store.id("encoder.embedding").unwrap()).trainable());
        assert!(m.param("decoder.init.b").unwrap().data().iter().all(|&x| x == 0.0));

        let text = toy(ModelConfig {
            multimodal: false,
            output_head: OutputHead::Softmax,
            ..toy_config()
        });
        assert!(text.param("visual.w").is_none());
        assert_eq!(text.param("decoder.softmax.w").unwrap().shape(), &[6, 20]);
    }

    #[test]
    fn invalid_configs() {
        assert!(ModelConfig { dropout: 1.0, ..toy_config() }.validate().is_err());
        assert!(ModelConfig { latent_dim: 0, ..toy_config() }.validate().is_err());
        let c = ModelConfig {
            output_head: OutputHead::Softmax,
            feedback: Feedback::Predicted,
            ..toy_config()
        };
        assert!(c.validate().is_err());
    }
}
