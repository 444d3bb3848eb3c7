use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{glorot, ModelConfig, ParamSet};
use crate::scalar::Scalar;

/// One self-attention + feed-forward block, both with residual connections.
#[derive(Clone, Debug, PartialEq)]
pub struct CeLayer<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

/// Content encoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CeParams<T> {
    pub token_embedding: Tensor<T>,
    pub layers: Vec<CeLayer<T>>,
    pub out_proj: Tensor<T>,
    pub positional: bool,
    pub max_token_len: usize,
}

#[derive(Clone, Debug)]
pub struct CeVars {
    pub token_embedding: Var,
    pub layers: Vec<[Var; 6]>,
    pub out_proj: Var,
    pub positional: bool,
    pub max_token_len: usize,
    all: Vec<Var>,
}

impl CeVars {
    /// Vars in [`ParamSet`] order.
    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

impl<T: Scalar> CeParams<T> {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = config.d;
        let layers = (0..config.ce_layers)
            .map(|_| CeLayer {
                wq: glorot(rng, d, d),
                wk: glorot(rng, d, d),
                wv: glorot(rng, d, d),
                wo: glorot(rng, d, d),
                w1: glorot(rng, d, config.d_ff),
                w2: glorot(rng, config.d_ff, d),
            })
            .collect();
        Self {
            token_embedding: glorot(rng, config.vocab, d),
            layers,
            out_proj: glorot(rng, d, d),
            positional: config.positional,
            max_token_len: config.max_token_len,
        }
    }

    pub fn dim(&self) -> usize {
        self.out_proj.shape()[1]
    }

    pub fn vocab(&self) -> usize {
        self.token_embedding.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> CeVars {
        self.vars_from(self.bind_all(g, trainable))
    }

    /// Assemble [`CeVars`] from already bound vars in [`ParamSet`] order.
    pub fn vars_from(&self, all: Vec<Var>) -> CeVars {
        assert_eq!(all.len(), 2 + 6 * self.layers.len(), "CE var count");
        let layers = all[1..1 + 6 * self.layers.len()]
            .chunks(6)
            .map(|c| [c[0], c[1], c[2], c[3], c[4], c[5]])
            .collect();
        CeVars {
            token_embedding: all[0],
            layers,
            out_proj: *all.last().expect("out_proj bound"),
            positional: self.positional,
            max_token_len: self.max_token_len,
            all,
        }
    }
}

impl<T: Scalar> ParamSet<T> for CeParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("w1", &l.w1),
                ("w2", &l.w2),
            ] {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("out_proj".to_string(), &self.out_proj));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2,
            ]);
        }
        out.push(&mut self.out_proj);
        out
    }
}

/// Sinusoidal position table of shape `len x d`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(T::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![len, d], data).expect("positive dims")
}

/// Encode one item's tokens into a `1 x d` representation.
///
/// Token lists longer than `max_token_len` are truncated.
pub fn ce_encode<T: Scalar>(g: &mut Graph<T>, p: &CeVars, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Validation(
            "ce_encode needs at least one token".into(),
        ));
    }
    let tokens = &tokens[..tokens.len().min(p.max_token_len)];
    let mut x = g.gather(p.token_embedding, tokens)?;
    let d = g.value(x).shape()[1];
    if p.positional {
        let pe = g.constant(sinusoidal_positions(tokens.len(), d));
        x = g.add(x, pe)?;
    }
    let inv_sqrt_d = T::one() / T::from_usize_lossy(d).sqrt();
    for &[wq, wk, wv, wo, w1, w2] in &p.layers {
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, inv_sqrt_d)?;
        let attn = g.softmax(scores, 1)?;
        let mixed = g.matmul(attn, v)?;
        let mixed = g.matmul(mixed, wo)?;
        x = g.add(x, mixed)?;
        let hidden = g.matmul(x, w1)?;
        let hidden = g.relu(hidden)?;
        let ff = g.matmul(hidden, w2)?;
        x = g.add(x, ff)?;
    }
    let pooled = g.mean_pool(x, 0)?;
    g.matmul(pooled, p.out_proj)
}

/// Encode without recording a graph.
pub fn ce_encode_value<T: Scalar>(p: &CeParams<T>, tokens: &[usize]) -> Result<Tensor<T>> {
    let mut g = Graph::inference();
    let vars = p.bind(&mut g, false);
    let out = ce_encode(&mut g, &vars, tokens)?;
    Ok(g.value(out).clone())
}
