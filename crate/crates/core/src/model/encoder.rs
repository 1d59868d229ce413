use rand::Rng;

use super::{EncoderLayer, HasParams, LayerNorm, ModelConfig, ParamBuilder};
use crate::error::{ensure, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Bidirectional encoder with a masked-LM vocabulary head; the prompt generator.
#[derive(Clone, Debug)]
pub struct MaskedEncoder {
    pub config: ModelConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    /// vocab_size×d_model; logits are `state · headᵀ`.
    pub mlm_head: ParamId,
    params: Vec<ParamId>,
}

impl MaskedEncoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new(store, rng, config.init_std, prefix);
        let token_embedding = b.weight("token_embedding", &[config.vocab_size, config.d_model]);
        let position_embedding = b.weight(
            "position_embedding",
            &[config.max_positions, config.d_model],
        );
        let layers = (0..config.n_layers)
            .map(|i| EncoderLayer::build(&mut b, &format!("layers.{i}"), config))
            .collect();
        let final_norm = LayerNorm::build(&mut b, "final_norm", config.d_model);
        let mlm_head = b.weight("mlm_head", &[config.vocab_size, config.d_model]);
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            final_norm,
            mlm_head,
            params: b.registered,
        })
    }

    /// Top-layer states for every position (len×d_model).
    pub fn encode(&self, g: &mut Graph<'_>, token_ids: &[usize]) -> Result<Var> {
        ensure!(!token_ids.is_empty(), "cannot encode an empty sequence");
        ensure!(
            token_ids.len() <= self.config.max_positions,
            "sequence of {} tokens exceeds max_positions {}",
            token_ids.len(),
            self.config.max_positions
        );
        let table = g.param(self.token_embedding);
        let tokens = g.embedding(table, token_ids)?;
        let pos_table = g.param(self.position_embedding);
        let positions: Vec<usize> = (0..token_ids.len()).collect();
        let pos = g.embedding(pos_table, &positions)?;
        let mut x = g.add(tokens, pos)?;
        for layer in &self.layers {
            x = layer.forward(g, x)?;
        }
        self.final_norm.forward(g, x)
    }

    /// Gradient-free convenience wrapper around [`Self::encode`].
    pub fn encode_masked(&self, store: &ParamStore, token_ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let out = self.encode(&mut g, token_ids)?;
        Ok(g.value(out).clone())
    }
}

impl HasParams for MaskedEncoder {
    fn param_ids(&self) -> &[ParamId] {
        &self.params
    }
}
