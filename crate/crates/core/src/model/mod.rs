//! Toy-scale transformers: the masked prompt generator and the
//! encoder–decoder generator.

mod encoder;
mod layers;
mod seq2seq;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{ParamId, ParamStore, Tensor};

pub use encoder::MaskedEncoder;
pub use layers::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear};
pub use seq2seq::{Seq2SeqModel, Seq2SeqOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Overwritten from the vocabulary when a corpus is loaded.
    pub vocab_size: usize,
    pub max_positions: usize,
    pub feedforward_width: usize,
    /// Standard deviation of the normal weight initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            vocab_size: 64,
            max_positions: 64,
            feedforward_width: 256,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.d_model > 0, "d_model must be positive");
        ensure!(self.n_layers > 0, "n_layers must be positive");
        ensure!(self.n_heads > 0, "n_heads must be positive");
        ensure!(
            self.d_model.is_multiple_of(self.n_heads),
            "d_model {} is not divisible by n_heads {}",
            self.d_model,
            self.n_heads
        );
        ensure!(self.vocab_size > 0, "vocab_size must be positive");
        ensure!(self.max_positions > 0, "max_positions must be positive");
        ensure!(
            self.feedforward_width > 0,
            "feedforward_width must be positive"
        );
        ensure!(
            self.init_std.is_finite() && self.init_std > 0.0,
            "init_std must be positive"
        );
        Ok(())
    }
}

/// One entry of [`named_parameters`].
#[derive(Clone, Copy, Debug)]
pub struct NamedParam<'a> {
    pub id: ParamId,
    pub name: &'a str,
    pub tensor: &'a Tensor,
    pub is_bias: bool,
}

/// Implemented by every component that owns parameters in a store.
pub trait HasParams {
    /// Ids in registration order; each id appears once.
    fn param_ids(&self) -> &[ParamId];
}

/// Every trainable tensor of `model`, in registration order.
pub fn named_parameters<'a, M: HasParams + ?Sized>(
    model: &M,
    store: &'a ParamStore,
) -> Vec<NamedParam<'a>> {
    model
        .param_ids()
        .iter()
        .map(|&id| {
            let p = store.param(id);
            NamedParam {
                id,
                name: &p.name,
                tensor: &p.tensor,
                is_bias: p.is_bias,
            }
        })
        .collect()
}

/// Registers tensors under a name prefix and records their ids.
pub(crate) struct ParamBuilder<'s, R: rand::Rng> {
    store: &'s mut ParamStore,
    rng: &'s mut R,
    std: crate::numerics::Float,
    prefix: String,
    pub(crate) registered: Vec<ParamId>,
}

impl<'s, R: rand::Rng> ParamBuilder<'s, R> {
    pub(crate) fn new(store: &'s mut ParamStore, rng: &'s mut R, std: f64, prefix: &str) -> Self {
        Self {
            store,
            rng,
            std: std as crate::numerics::Float,
            prefix: prefix.to_string(),
            registered: Vec::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn register(&mut self, name: &str, t: Tensor, is_bias: bool) -> ParamId {
        let id = self.store.add(self.full_name(name), t, is_bias);
        self.registered.push(id);
        id
    }

    pub(crate) fn weight(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let t = Tensor::randn(shape, self.std, self.rng);
        self.register(name, t, false)
    }

    pub(crate) fn bias(&mut self, name: &str, n: usize) -> ParamId {
        self.register(name, Tensor::zeros(&[n]), true)
    }

    pub(crate) fn gain(&mut self, name: &str, n: usize) -> ParamId {
        self.register(name, Tensor::full(&[n], 1.0), false)
    }

    /// Runs `f` with `segment` appended to the prefix.
    pub(crate) fn scoped<T>(&mut self, segment: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = self.prefix.clone();
        self.prefix = self.full_name(segment);
        let out = f(self);
        self.prefix = saved;
        out
    }
}
