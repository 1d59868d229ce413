use rand::Rng;

use super::{DecoderLayer, EncoderLayer, HasParams, LayerNorm, ModelConfig, ParamBuilder};
use crate::error::{ensure, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Var};

/// Encoder–decoder generator whose token embedding `E` is shared by the
/// encoder input, the decoder input, and the output projection.
#[derive(Clone, Debug)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub embedding: ParamId,
    pub encoder_positions: ParamId,
    pub decoder_positions: ParamId,
    pub encoder_layers: Vec<EncoderLayer>,
    pub encoder_norm: LayerNorm,
    pub decoder_layers: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
    params: Vec<ParamId>,
}

/// Graph handles produced by [`Seq2SeqModel::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Seq2SeqOutput {
    /// (target_len-1)×vocab log-probabilities.
    pub log_probs: Var,
    /// Log-probability of each supervised gold token, as a column.
    pub gold_log_probs: Var,
    /// Sum of negative log-likelihoods over supervised positions.
    pub total_nll: Var,
    /// Mean negative log-likelihood per supervised position.
    pub loss: Var,
    pub positions: usize,
}

impl Seq2SeqModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut b = ParamBuilder::new(store, rng, config.init_std, prefix);
        let embedding = b.weight("embedding", &[config.vocab_size, d]);
        let encoder_positions = b.weight("encoder_positions", &[config.max_positions, d]);
        let decoder_positions = b.weight("decoder_positions", &[config.max_positions, d]);
        let encoder_layers = (0..config.n_layers)
            .map(|i| EncoderLayer::build(&mut b, &format!("encoder.{i}"), config))
            .collect();
        let encoder_norm = LayerNorm::build(&mut b, "encoder_norm", d);
        let decoder_layers = (0..config.n_layers)
            .map(|i| DecoderLayer::build(&mut b, &format!("decoder.{i}"), config))
            .collect();
        let decoder_norm = LayerNorm::build(&mut b, "decoder_norm", d);
        Ok(Self {
            config: config.clone(),
            embedding,
            encoder_positions,
            decoder_positions,
            encoder_layers,
            encoder_norm,
            decoder_layers,
            decoder_norm,
            params: b.registered,
        })
    }

    /// Rows of `E` for `ids`.
    pub fn embed(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var> {
        let table = g.param(self.embedding);
        g.embedding(table, ids)
    }

    /// Encodes an already-embedded source sequence (len×d_model).
    pub fn encode(&self, g: &mut Graph<'_>, source: Var) -> Result<Var> {
        let (len, width) = g.shape(source);
        ensure!(
            width == self.config.d_model,
            "source width {width} does not match d_model {}",
            self.config.d_model
        );
        ensure!(
            len <= self.config.max_positions,
            "source of {len} positions exceeds max_positions {}",
            self.config.max_positions
        );
        let table = g.param(self.encoder_positions);
        let positions: Vec<usize> = (0..len).collect();
        let pos = g.embedding(table, &positions)?;
        let mut x = g.add(source, pos)?;
        for layer in &self.encoder_layers {
            x = layer.forward(g, x)?;
        }
        self.encoder_norm.forward(g, x)
    }

    /// Next-token logits (len×vocab) for every decoder input position.
    pub fn decode_logits(
        &self,
        g: &mut Graph<'_>,
        memory: Var,
        decoder_ids: &[usize],
    ) -> Result<Var> {
        ensure!(!decoder_ids.is_empty(), "decoder input is empty");
        ensure!(
            decoder_ids.len() <= self.config.max_positions,
            "decoder input of {} tokens exceeds max_positions {}",
            decoder_ids.len(),
            self.config.max_positions
        );
        let tokens = self.embed(g, decoder_ids)?;
        let table = g.param(self.decoder_positions);
        let positions: Vec<usize> = (0..decoder_ids.len()).collect();
        let pos = g.embedding(table, &positions)?;
        let mut x = g.add(tokens, pos)?;
        for layer in &self.decoder_layers {
            x = layer.forward(g, x, memory)?;
        }
        let h = self.decoder_norm.forward(g, x)?;
        let e = g.param(self.embedding);
        let et = g.transpose(e);
        g.matmul(h, et)
    }

    /// Teacher-forced pass over `target_ids` (BOS … EOS): position t predicts
    /// `target_ids[t + 1]` from `target_ids[..=t]`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        source: Var,
        target_ids: &[usize],
    ) -> Result<Seq2SeqOutput> {
        ensure!(
            target_ids.len() >= 2,
            "target must hold at least BOS and EOS, got {} tokens",
            target_ids.len()
        );
        let memory = self.encode(g, source)?;
        self.forward_from_memory(g, memory, target_ids)
    }

    /// As [`Self::forward`] with the encoder output already computed.
    pub fn forward_from_memory(
        &self,
        g: &mut Graph<'_>,
        memory: Var,
        target_ids: &[usize],
    ) -> Result<Seq2SeqOutput> {
        ensure!(
            target_ids.len() >= 2,
            "target must hold at least BOS and EOS, got {} tokens",
            target_ids.len()
        );
        let n = target_ids.len() - 1;
        let logits = self.decode_logits(g, memory, &target_ids[..n])?;
        let log_probs = g.log_softmax_rows(logits);
        let gold_log_probs = g.gather(log_probs, &target_ids[1..])?;
        let total = g.sum(gold_log_probs);
        let total_nll = g.scale(total, -1.0);
        let loss = g.scale(total, -1.0 / n as crate::numerics::Float);
        Ok(Seq2SeqOutput {
            log_probs,
            gold_log_probs,
            total_nll,
            loss,
            positions: n,
        })
    }
}

impl HasParams for Seq2SeqModel {
    fn param_ids(&self) -> &[ParamId] {
        &self.params
    }
}
