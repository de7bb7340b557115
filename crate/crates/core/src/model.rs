//! Parameter layout of the full suggestion network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AcgError, Result};
use crate::numcore::{
    read_checkpoint, write_checkpoint, Affine, Component, Eta, GruCell, Graph, Init, ParamId, ParameterStore, Var,
};

/// Inverted dropout on graph values, driven by its own seeded generator.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..g.dim(x))
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = g.constant(mask);
        g.mul(x, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Vocabulary size including the reserved block.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub word_hidden: usize,
    pub query_hidden: usize,
    pub decoder_hidden: usize,
    /// Hidden width of the alignment perceptrons.
    pub eta_hidden: usize,
    /// Replace the identity on query summaries with a tanh perceptron.
    pub query_mlp: bool,
    /// When false the copy head is removed and the switch is pinned to generate.
    pub copy_enabled: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 90_000,
            embed_dim: 300,
            word_hidden: 64,
            query_hidden: 64,
            decoder_hidden: 64,
            eta_hidden: 64,
            query_mlp: false,
            copy_enabled: true,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Tiny sizes for tests and smoke runs.
    pub fn tiny(vocab_size: usize, hidden: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: hidden,
            word_hidden: hidden,
            query_hidden: hidden,
            decoder_hidden: hidden,
            eta_hidden: hidden,
            query_mlp: false,
            copy_enabled: true,
            init_seed: 0,
        }
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        vec![
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("embed_dim".into(), self.embed_dim.to_string()),
            ("word_hidden".into(), self.word_hidden.to_string()),
            ("query_hidden".into(), self.query_hidden.to_string()),
            ("decoder_hidden".into(), self.decoder_hidden.to_string()),
            ("eta_hidden".into(), self.eta_hidden.to_string()),
            ("query_mlp".into(), self.query_mlp.to_string()),
            ("copy_enabled".into(), self.copy_enabled.to_string()),
            ("init_seed".into(), self.init_seed.to_string()),
        ]
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| AcgError::Checkpoint(format!("checkpoint lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| AcgError::Checkpoint(format!("bad value for {k}")))
        };
        let flag = |k: &str| -> Result<bool> {
            get(k)?.parse().map_err(|_| AcgError::Checkpoint(format!("bad value for {k}")))
        };
        Ok(ModelConfig {
            vocab_size: num("vocab_size")?,
            embed_dim: num("embed_dim")?,
            word_hidden: num("word_hidden")?,
            query_hidden: num("query_hidden")?,
            decoder_hidden: num("decoder_hidden")?,
            eta_hidden: num("eta_hidden")?,
            query_mlp: flag("query_mlp")?,
            copy_enabled: flag("copy_enabled")?,
            init_seed: num("init_seed")? as u64,
        })
    }
}

/// Handles to every parameter block, grouped by role.
#[derive(Debug, Clone)]
pub struct Layout {
    /// Shared token embeddings (never frozen).
    pub embedding: ParamId,
    pub enc_fwd: GruCell,
    pub enc_bwd: GruCell,
    pub query_mlp: Option<Affine>,
    pub qenc_fwd: GruCell,
    pub qenc_bwd: GruCell,
    /// `s_0 = tanh(W [→h_n; ←h_1] + b)`
    pub init_state: Affine,
    /// η(s_{t−1}, h_i)
    pub word_attention: Eta,
    /// η(s_{t−1}, g_j, y_{t−1})
    pub query_attention: Eta,
    /// Decoder recurrence over `[e(y_{t−1}); c_t]`.
    pub decoder: GruCell,
    /// Output projection onto the vocabulary.
    pub generator: Affine,
    /// η(s_t, h_i) and η(s_t, proj(e(<unk>))).
    pub copy_scorer: Eta,
    pub unk_projection: Affine,
    /// Switch weight vector `w` in `σ(wᵀ s_t)`.
    pub switch: ParamId,
}

#[derive(Debug, Clone)]
pub struct AcgModel {
    pub config: ModelConfig,
    pub layout: Layout,
    pub store: ParameterStore,
}

impl AcgModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.vocab_size <= crate::corpus::reserved::COUNT {
            return Err(AcgError::InvalidArgument("vocabulary too small".into()));
        }
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.init_seed);
        let mut store = ParameterStore::new();
        let word_state = 2 * c.word_hidden;
        let query_state = 2 * c.query_hidden;

        let embedding = store.add_init(
            "embedding",
            Component::Embedding,
            &[c.vocab_size, c.embed_dim],
            Init::Xavier,
            &mut rng,
        )?;
        let enc_fwd = GruCell::new(&mut store, "encoder.fwd", Component::Encoder, &[c.embed_dim], c.word_hidden, &mut rng)?;
        let enc_bwd = GruCell::new(&mut store, "encoder.bwd", Component::Encoder, &[c.embed_dim], c.word_hidden, &mut rng)?;
        let query_mlp = if c.query_mlp {
            Some(Affine::new(
                &mut store,
                "query_encoder.summary",
                Component::QueryEncoder,
                &[c.word_hidden],
                c.word_hidden,
                &mut rng,
            )?)
        } else {
            None
        };
        let qenc_fwd = GruCell::new(&mut store, "query_encoder.fwd", Component::QueryEncoder, &[c.word_hidden], c.query_hidden, &mut rng)?;
        let qenc_bwd = GruCell::new(&mut store, "query_encoder.bwd", Component::QueryEncoder, &[c.word_hidden], c.query_hidden, &mut rng)?;
        let init_state = Affine::new(
            &mut store,
            "decoder.init",
            Component::Decoder,
            &[c.word_hidden, c.word_hidden],
            c.decoder_hidden,
            &mut rng,
        )?;
        let word_attention = Eta::new(
            &mut store,
            "attention.word",
            Component::Attention,
            &[c.decoder_hidden, word_state],
            c.eta_hidden,
            &mut rng,
        )?;
        let query_attention = Eta::new(
            &mut store,
            "attention.query",
            Component::Attention,
            &[c.decoder_hidden, query_state, c.embed_dim],
            c.eta_hidden,
            &mut rng,
        )?;
        let decoder = GruCell::new(
            &mut store,
            "decoder.rnn",
            Component::Decoder,
            &[c.embed_dim, word_state],
            c.decoder_hidden,
            &mut rng,
        )?;
        let generator = Affine::new(
            &mut store,
            "generator.out",
            Component::Generator,
            &[c.decoder_hidden],
            c.vocab_size,
            &mut rng,
        )?;
        let copy_scorer = Eta::new(
            &mut store,
            "copier.score",
            Component::Copier,
            &[c.decoder_hidden, word_state],
            c.eta_hidden,
            &mut rng,
        )?;
        let unk_projection = Affine::new(
            &mut store,
            "copier.unk_proj",
            Component::Copier,
            &[c.embed_dim],
            word_state,
            &mut rng,
        )?;
        let switch = store.add_init("switch.w", Component::Switch, &[c.decoder_hidden], Init::Xavier, &mut rng)?;

        Ok(AcgModel {
            config,
            layout: Layout {
                embedding,
                enc_fwd,
                enc_bwd,
                query_mlp,
                qenc_fwd,
                qenc_bwd,
                init_state,
                word_attention,
                query_attention,
                decoder,
                generator,
                copy_scorer,
                unk_projection,
                switch,
            },
            store,
        })
    }

    pub fn save<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_checkpoint(out, &self.config.to_meta(), &self.store)
    }

    /// Rebuilds the layout from the stored config and copies every tensor in,
    /// requiring names, tags and shapes to match exactly.
    pub fn load<R: std::io::Read>(input: R) -> Result<Self> {
        let ck = read_checkpoint(input)?;
        let config = ModelConfig::from_meta(&ck.meta)?;
        let mut model = AcgModel::new(config)?;
        if ck.store.len() != model.store.len() {
            return Err(AcgError::Checkpoint(format!(
                "checkpoint has {} tensors, layout expects {}",
                ck.store.len(),
                model.store.len()
            )));
        }
        for e in ck.store.entries() {
            let id = model
                .store
                .id(&e.name)
                .ok_or_else(|| AcgError::Checkpoint(format!("unexpected tensor {}", e.name)))?;
            if model.store.tag(id) != e.tag || model.store.value(id).shape() != e.value.shape() {
                return Err(AcgError::Checkpoint(format!("tag or shape mismatch for {}", e.name)));
            }
            *model.store.value_mut(id) = e.value.clone();
        }
        Ok(model)
    }
}
