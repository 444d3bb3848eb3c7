//! Toy content encoder (CE) and collaborative filter (CF) models.

mod ce;
mod cf;
pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use ce::{ce_encode, ce_encode_value, sinusoidal_positions, CeLayer, CeParams, CeVars};
pub use cf::{
    cf_predict, sequence_loss, sequence_loss_from_steps, sequence_probabilities, AttentionCf,
    CfParams, CfVars, RecurrentCf,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CfVariant {
    /// LSTM over (encoding, response) inputs.
    #[default]
    Recurrent,
    /// Self-attention plus additive pooling.
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Content embedding dimension.
    pub d: usize,
    pub d_ff: usize,
    pub ce_layers: usize,
    /// CF hidden width.
    pub d_h: usize,
    pub vocab: usize,
    pub max_token_len: usize,
    pub positional: bool,
    pub cf_variant: CfVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 16,
            d_ff: 32,
            ce_layers: 1,
            d_h: 16,
            vocab: 200,
            max_token_len: 32,
            positional: false,
            cf_variant: CfVariant::Recurrent,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_ff", self.d_ff),
            ("d_h", self.d_h),
            ("vocab", self.vocab),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.max_token_len == 0 {
            return Err(Error::Config("model.max_token_len must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form CE parameter count.
    pub fn ce_param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab, self.d, self.d_ff, self.ce_layers);
        v * d + l * (4 * d * d + 2 * d * f) + d * d
    }

    /// Closed-form CF parameter count.
    pub fn cf_param_count(&self) -> usize {
        let (d, h) = (self.d, self.d_h);
        match self.cf_variant {
            CfVariant::Recurrent => 2 * d + 4 * (2 * d * h + h * h + h) + d * h,
            CfVariant::Attention => 2 * d + 4 * d * d + d * d + d + d + 1,
        }
    }
}

/// A named, ordered collection of parameter tensors.
pub trait ParamSet<T: Scalar> {
    /// Tensors with stable names, in canonical order.
    fn named(&self) -> Vec<(String, &Tensor<T>)>;

    /// Mutable tensors in the same order as [`ParamSet::named`].
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Register every tensor on `g`; as parameters when `trainable`, as
    /// constants otherwise.
    fn bind_all(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

/// Zero tensors shaped like each parameter of `p`.
pub fn zeros_like_params<T: Scalar>(p: &impl ParamSet<T>) -> Vec<Tensor<T>> {
    p.tensors().into_iter().map(Tensor::zeros_like).collect()
}

/// Glorot/Xavier uniform init, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-a..a)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

/// Deterministic parameter init for both modules.
pub fn init_params<T: Scalar>(
    config: &ModelConfig,
    seed: u64,
) -> Result<(CeParams<T>, CfParams<T>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ce = CeParams::init(config, &mut rng);
    let cf = CfParams::init(config, &mut rng);
    Ok((ce, cf))
}
