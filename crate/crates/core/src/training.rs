//! Joint training: the forward objective updates the prompt generator and
//! generator, the inverse objective updates the inverse model and its prompts.
//! The two are stepped alternately per batch with separate optimizers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Vocab, SPECIALS};
use crate::error::{ensure, Result};
use crate::inverse::InverseModel;
use crate::model::{named_parameters, HasParams, ModelConfig, NamedParam};
use crate::numerics::{clip_grad_norm, AdamConfig, AdamState, Float, Gradients, Graph, ParamId};
use crate::prompt::ForwardModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Full,
    BiasOnly,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(TrainMode::Full),
            "bias_only" => Ok(TrainMode::BiasOnly),
            other => Err(format!(
                "unknown mode {other:?}; expected full or bias_only"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to 3e-4 in full mode and 1e-3 in bias-only mode.
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub mode: TrainMode,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Global gradient-norm cap applied per objective.
    pub clip_norm: f64,
    /// Skip the inverse objective entirely (used when decoding with λ = 0).
    pub train_inverse: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            mode: TrainMode::Full,
            seed: 0,
            validation_fraction: 0.0,
            clip_norm: 1.0,
            train_inverse: true,
        }
    }
}

impl TrainConfig {
    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.mode {
            TrainMode::Full => 3e-4,
            TrainMode::BiasOnly => 1e-3,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.effective_learning_rate(),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, "epochs must be positive");
        ensure!(self.batch_size >= 1, "batch_size must be positive");
        ensure!(
            self.effective_learning_rate() >= 0.0,
            "learning rate must be non-negative"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)"
        );
        ensure!(self.epsilon > 0.0, "epsilon must be positive");
        ensure!(
            (0.0..1.0).contains(&self.validation_fraction),
            "validation_fraction must lie in [0, 1)"
        );
        ensure!(self.clip_norm > 0.0, "clip_norm must be positive");
        Ok(())
    }
}

/// Ids of the tensors flagged as biases.
pub fn bias_only_filter(params: &[NamedParam<'_>]) -> Vec<ParamId> {
    params.iter().filter(|p| p.is_bias).map(|p| p.id).collect()
}

/// Trainable parameter count over total parameter count, in percent.
pub fn count_trainable_fraction(params: &[NamedParam<'_>], mode: TrainMode) -> f64 {
    let total: usize = params.iter().map(|p| p.tensor.numel()).sum();
    let trainable: usize = match mode {
        TrainMode::Full => total,
        TrainMode::BiasOnly => params
            .iter()
            .filter(|p| p.is_bias)
            .map(|p| p.tensor.numel())
            .sum(),
    };
    if total == 0 {
        return 0.0;
    }
    100.0 * trainable as f64 / total as f64
}

fn trainable_ids(params: &[NamedParam<'_>], mode: TrainMode) -> Vec<ParamId> {
    match mode {
        TrainMode::Full => params.iter().map(|p| p.id).collect(),
        TrainMode::BiasOnly => bias_only_filter(params),
    }
}

/// Fresh forward and inverse models for `vocab`. The inverse prompts start
/// from the k most frequent corpus tokens.
pub fn build_models(
    config: &ModelConfig,
    k: usize,
    vocab: &Vocab,
    seed: u64,
) -> Result<(ForwardModel, InverseModel)> {
    let mut config = config.clone();
    config.vocab_size = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let forward = ForwardModel::new(&config, k, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a7e_0001);
    let first = SPECIALS.len();
    let init: Vec<usize> = if vocab.len() > first {
        (first..vocab.len()).take(k).collect()
    } else {
        vec![0]
    };
    let inverse = InverseModel::new(&config, k, &init, &mut rng)?;
    Ok((forward, inverse))
}

/// Summed negative log-likelihood over supervised tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub nll_sum: Float,
    pub tokens: usize,
}

impl StepReport {
    pub fn per_token(&self) -> Float {
        if self.tokens == 0 {
            0.0
        } else {
            self.nll_sum / self.tokens as Float
        }
    }

    fn add(&mut self, other: StepReport) {
        self.nll_sum += other.nll_sum;
        self.tokens += other.tokens;
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub l_c: Float,
    pub l_i: Float,
    pub trainable_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_validation_loss: Float,
    pub best_epoch: usize,
}

pub struct Trainer {
    pub forward: ForwardModel,
    pub inverse: InverseModel,
    pub config: TrainConfig,
    pub state: TrainState,
    forward_opt: AdamState,
    inverse_opt: AdamState,
    forward_trainable: Vec<ParamId>,
    inverse_trainable: Vec<ParamId>,
}

fn forward_example_tokens(ex: &Example) -> usize {
    ex.output_sentences.iter().map(Vec::len).sum::<usize>() + 1
}

impl Trainer {
    pub fn new(forward: ForwardModel, inverse: InverseModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let forward_trainable =
            trainable_ids(&named_parameters(&forward, &forward.store), config.mode);
        let inverse_trainable =
            trainable_ids(&named_parameters(&inverse, &inverse.store), config.mode);
        let forward_opt = AdamState::new(&forward.store, config.adam());
        let inverse_opt = AdamState::new(&inverse.store, config.adam());
        Ok(Self {
            forward,
            inverse,
            config,
            state: TrainState {
                epoch: 0,
                best_validation_loss: Float::INFINITY,
                best_epoch: 0,
            },
            forward_opt,
            inverse_opt,
            forward_trainable,
            inverse_trainable,
        })
    }

    /// Percentage of all parameters (both sides) updated in this mode.
    pub fn trainable_fraction(&self) -> f64 {
        let mut all = named_parameters(&self.forward, &self.forward.store);
        all.extend(named_parameters(&self.inverse, &self.inverse.store));
        count_trainable_fraction(&all, self.config.mode)
    }

    pub fn forward_optimizer(&self) -> &AdamState {
        &self.forward_opt
    }

    pub fn inverse_optimizer(&self) -> &AdamState {
        &self.inverse_opt
    }

    /// One Adam step on the forward objective (per-token mean over the batch).
    pub fn train_step_forward(&mut self, batch: &[&Example], vocab: &Vocab) -> Result<StepReport> {
        ensure!(!batch.is_empty(), "training batch is empty");
        let tokens: usize = batch.iter().map(|ex| forward_example_tokens(ex)).sum();
        let scale = 1.0 / tokens as Float;
        let mut report = StepReport::default();
        let mut all_grads: Vec<Gradients> = Vec::with_capacity(batch.len());
        for ex in batch {
            let mut g = Graph::new(&self.forward.store);
            let out = self
                .forward
                .forward(&mut g, &ex.input_ids, &ex.target_ids(vocab))?;
            let scaled = g.scale(out.total_nll, scale);
            report.nll_sum += g.value(out.total_nll).values()[0];
            all_grads.push(g.backward(scaled)?);
        }
        report.tokens = tokens;
        let fwd = &mut self.forward;
        for grads in &all_grads {
            fwd.store.accumulate(grads)?;
        }
        clip_grad_norm(
            &mut fwd.store,
            &self.forward_trainable,
            self.config.clip_norm as Float,
        );
        self.forward_opt
            .step(&mut fwd.store, &self.forward_trainable)?;
        fwd.store.zero_grad();
        Ok(report)
    }

    /// One Adam step on the inverse objective; every output sentence of every
    /// example contributes one reconstruction term.
    pub fn train_step_inverse(&mut self, batch: &[&Example]) -> Result<StepReport> {
        ensure!(!batch.is_empty(), "training batch is empty");
        let tokens: usize = batch
            .iter()
            .map(|ex| ex.output_sentences.len() * (ex.input_ids.len() + 1))
            .sum();
        let scale = 1.0 / tokens as Float;
        let mut report = StepReport::default();
        let mut all_grads = Vec::new();
        for ex in batch {
            ensure!(
                !ex.output_sentences.is_empty(),
                "example has no output sentences"
            );
            for sentence in &ex.output_sentences {
                let mut g = Graph::new(&self.inverse.store);
                let nll = self.inverse.sentence_nll(&mut g, &ex.input_ids, sentence)?;
                report.nll_sum += g.value(nll).values()[0];
                let scaled = g.scale(nll, scale);
                all_grads.push(g.backward(scaled)?);
            }
        }
        report.tokens = tokens;
        let inv = &mut self.inverse;
        for grads in &all_grads {
            inv.store.accumulate(grads)?;
        }
        clip_grad_norm(
            &mut inv.store,
            &self.inverse_trainable,
            self.config.clip_norm as Float,
        );
        self.inverse_opt
            .step(&mut inv.store, &self.inverse_trainable)?;
        inv.store.zero_grad();
        Ok(report)
    }

    /// Trains for `config.epochs`, calling `log` once per split per epoch.
    /// With validation data, the parameters of the best validation epoch (by
    /// forward loss) are restored at the end.
    pub fn fit(
        &mut self,
        train: &[Example],
        valid: &[Example],
        vocab: &Vocab,
        mut log: impl FnMut(&LogRecord),
    ) -> Result<()> {
        ensure!(!train.is_empty(), "training set is empty");
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ SHUFFLE_STREAM);
        let fraction = self.trainable_fraction();
        let mut best: Option<(crate::numerics::ParamStore, crate::numerics::ParamStore)> = None;
        let mut order: Vec<usize> = (0..train.len()).collect();

        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut rng);
            let mut fwd = StepReport::default();
            let mut inv = StepReport::default();
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
                fwd.add(self.train_step_forward(&batch, vocab)?);
                if self.config.train_inverse {
                    inv.add(self.train_step_inverse(&batch)?);
                }
            }
            self.state.epoch = epoch;
            log(&LogRecord {
                epoch,
                split: "train".into(),
                l_c: fwd.per_token(),
                l_i: inv.per_token(),
                trainable_fraction: fraction,
            });

            if !valid.is_empty() {
                let l_c = evaluate_forward(&self.forward, valid, vocab)?.per_token();
                let l_i = if self.config.train_inverse {
                    evaluate_inverse(&self.inverse, valid)?.per_token()
                } else {
                    0.0
                };
                log(&LogRecord {
                    epoch,
                    split: "valid".into(),
                    l_c,
                    l_i,
                    trainable_fraction: fraction,
                });
                if l_c < self.state.best_validation_loss {
                    self.state.best_validation_loss = l_c;
                    self.state.best_epoch = epoch;
                    best = Some((self.forward.store.clone(), self.inverse.store.clone()));
                }
            }
        }
        if let Some((f, i)) = best {
            self.forward.store = f;
            self.inverse.store = i;
        } else {
            self.state.best_epoch = self.state.epoch;
        }
        Ok(())
    }

    pub fn into_models(self) -> (ForwardModel, InverseModel) {
        (self.forward, self.inverse)
    }
}

// Keeps the shuffle stream distinct from model initialization.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Forward negative log-likelihood over `examples`.
pub fn evaluate_forward(
    forward: &ForwardModel,
    examples: &[Example],
    vocab: &Vocab,
) -> Result<StepReport> {
    let mut report = StepReport::default();
    for ex in examples {
        let mut g = Graph::new(&forward.store);
        let out = forward.forward(&mut g, &ex.input_ids, &ex.target_ids(vocab))?;
        report.nll_sum += g.value(out.total_nll).values()[0];
        report.tokens += out.positions;
    }
    Ok(report)
}

/// Inverse negative log-likelihood summed over every sentence of `examples`.
pub fn evaluate_inverse(inverse: &InverseModel, examples: &[Example]) -> Result<StepReport> {
    let mut report = StepReport::default();
    for ex in examples {
        report.nll_sum += inverse.inverse_loss(&ex.input_ids, &ex.output_sentences)?;
        report.tokens += ex.output_sentences.len() * (ex.input_ids.len() + 1);
    }
    Ok(report)
}

/// The last `floor(n · fraction)` examples form the validation split.
pub fn split_validation(examples: &[Example], fraction: f64) -> (&[Example], &[Example]) {
    let n_valid = ((examples.len() as f64) * fraction).floor() as usize;
    let n_valid = n_valid.min(examples.len().saturating_sub(1));
    examples.split_at(examples.len() - n_valid)
}

/// Every parameter id the forward side owns (Θ^(c)).
pub fn forward_param_ids(forward: &ForwardModel) -> &[ParamId] {
    forward.param_ids()
}
