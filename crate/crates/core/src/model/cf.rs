use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::{ItemId, UserSequence};
use crate::error::{Error, Result};
use crate::model::{glorot, CfVariant, ModelConfig, ParamSet};
use crate::scalar::Scalar;

/// LSTM collaborative filter. Gate order in every array is input, forget,
/// cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCf<T> {
    /// `2 x d`, row 0 for incorrect, row 1 for correct.
    pub response_embedding: Tensor<T>,
    /// `2d x d_h` input weights per gate.
    pub w: [Tensor<T>; 4],
    /// `d_h x d_h` recurrent weights per gate.
    pub u: [Tensor<T>; 4],
    pub b: [Tensor<T>; 4],
    /// `d x d_h`; the candidate is projected into hidden space with no bias.
    pub readout: Tensor<T>,
}

/// Self-attention collaborative filter with additive-attention pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCf<T> {
    pub response_embedding: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub pool_proj: Tensor<T>,
    pub pool_bias: Tensor<T>,
    pub pool_query: Tensor<T>,
    pub score_bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum CfParams<T> {
    Recurrent(RecurrentCf<T>),
    Attention(AttentionCf<T>),
}

/// CF parameters bound to a graph, in [`ParamSet`] order.
#[derive(Clone, Debug)]
pub struct CfVars {
    variant: CfVariant,
    all: Vec<Var>,
}

impl CfVars {
    pub fn all(&self) -> &[Var] {
        &self.all
    }

    pub fn variant(&self) -> CfVariant {
        self.variant
    }
}

impl<T: Scalar> CfParams<T> {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, h) = (config.d, config.d_h);
        match config.cf_variant {
            CfVariant::Recurrent => CfParams::Recurrent(RecurrentCf {
                response_embedding: glorot(rng, 2, d),
                w: std::array::from_fn(|_| glorot(rng, 2 * d, h)),
                u: std::array::from_fn(|_| glorot(rng, h, h)),
                b: std::array::from_fn(|_| Tensor::zeros(vec![1, h])),
                readout: glorot(rng, d, h),
            }),
            CfVariant::Attention => CfParams::Attention(AttentionCf {
                response_embedding: glorot(rng, 2, d),
                wq: glorot(rng, d, d),
                wk: glorot(rng, d, d),
                wv: glorot(rng, d, d),
                wo: glorot(rng, d, d),
                pool_proj: glorot(rng, d, d),
                pool_bias: Tensor::zeros(vec![1, d]),
                pool_query: glorot(rng, d, 1),
                score_bias: Tensor::zeros(vec![1, 1]),
            }),
        }
    }

    pub fn variant(&self) -> CfVariant {
        match self {
            CfParams::Recurrent(_) => CfVariant::Recurrent,
            CfParams::Attention(_) => CfVariant::Attention,
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> CfVars {
        self.vars_from(self.bind_all(g, trainable))
    }

    /// Assemble [`CfVars`] from already bound vars in [`ParamSet`] order.
    pub fn vars_from(&self, all: Vec<Var>) -> CfVars {
        assert_eq!(all.len(), self.tensors().len(), "CF var count");
        CfVars {
            variant: self.variant(),
            all,
        }
    }
}

const GATES: [&str; 4] = ["i", "f", "g", "o"];

impl<T: Scalar> ParamSet<T> for CfParams<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            CfParams::Recurrent(p) => {
                let mut out = vec![("response_embedding".to_string(), &p.response_embedding)];
                for (k, gate) in GATES.iter().enumerate() {
                    out.push((format!("lstm.w_{gate}"), &p.w[k]));
                    out.push((format!("lstm.u_{gate}"), &p.u[k]));
                    out.push((format!("lstm.b_{gate}"), &p.b[k]));
                }
                out.push(("readout".to_string(), &p.readout));
                out
            }
            CfParams::Attention(p) => vec![
                ("response_embedding".to_string(), &p.response_embedding),
                ("attn.wq".to_string(), &p.wq),
                ("attn.wk".to_string(), &p.wk),
                ("attn.wv".to_string(), &p.wv),
                ("attn.wo".to_string(), &p.wo),
                ("pool.proj".to_string(), &p.pool_proj),
                ("pool.bias".to_string(), &p.pool_bias),
                ("pool.query".to_string(), &p.pool_query),
                ("score_bias".to_string(), &p.score_bias),
            ],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            CfParams::Recurrent(p) => {
                let mut out = vec![&mut p.response_embedding];
                let RecurrentCf { w, u, b, .. } = p;
                for ((w, u), b) in w.iter_mut().zip(u.iter_mut()).zip(b.iter_mut()) {
                    out.extend([w, u, b]);
                }
                out.push(&mut p.readout);
                out
            }
            CfParams::Attention(p) => vec![
                &mut p.response_embedding,
                &mut p.wq,
                &mut p.wk,
                &mut p.wv,
                &mut p.wo,
                &mut p.pool_proj,
                &mut p.pool_bias,
                &mut p.pool_query,
                &mut p.score_bias,
            ],
        }
    }
}

fn check_response(r: u8) -> Result<usize> {
    match r {
        0 | 1 => Ok(r as usize),
        _ => Err(Error::Validation(format!("response {r} is not 0 or 1"))),
    }
}

struct LstmState {
    h: Var,
    c: Var,
}

fn lstm_step<T: Scalar>(
    g: &mut Graph<T>,
    v: &[Var],
    state: &LstmState,
    enc: Var,
    response: usize,
) -> Result<LstmState> {
    let resp = g.gather(v[0], &[response])?;
    let x = g.concat(&[enc, resp], 1)?;
    let mut gates = [state.h; 4];
    for (k, gate) in gates.iter_mut().enumerate() {
        let (w, u, b) = (v[1 + 3 * k], v[2 + 3 * k], v[3 + 3 * k]);
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(state.h, u)?;
        let pre = g.add(xw, hu)?;
        let pre = g.add_row(pre, b)?;
        *gate = if k == 2 {
            g.tanh(pre)?
        } else {
            g.sigmoid(pre)?
        };
    }
    let [i, f, cand, o] = gates;
    let keep = g.mul(f, state.c)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

fn recurrent_score<T: Scalar>(g: &mut Graph<T>, v: &[Var], h: Var, candidate: Var) -> Result<Var> {
    let proj = g.matmul(candidate, v[13])?;
    let pt = g.transpose(proj)?;
    let logit = g.matmul(h, pt)?;
    g.sigmoid(logit)
}

fn lstm_initial<T: Scalar>(g: &mut Graph<T>, v: &[Var]) -> LstmState {
    let hidden = g.value(v[2]).shape()[0];
    let h = g.constant(Tensor::zeros(vec![1, hidden]));
    let c = g.constant(Tensor::zeros(vec![1, hidden]));
    LstmState { h, c }
}

/// Attention-variant probability for `candidate` given interaction rows.
fn attention_score<T: Scalar>(
    g: &mut Graph<T>,
    v: &[Var],
    rows: &[Var],
    candidate: Var,
) -> Result<Var> {
    let logit = if rows.is_empty() {
        v[8]
    } else {
        let x = g.concat(rows, 0)?;
        let d = g.value(x).shape()[1];
        let q = g.matmul(x, v[1])?;
        let k = g.matmul(x, v[2])?;
        let val = g.matmul(x, v[3])?;
        let kt = g.transpose(k)?;
        let s = g.matmul(q, kt)?;
        let s = g.scale(s, T::one() / T::from_usize_lossy(d).sqrt())?;
        let a = g.softmax(s, 1)?;
        let mixed = g.matmul(a, val)?;
        let mixed = g.matmul(mixed, v[4])?;
        let hid = g.add(x, mixed)?;
        let proj = g.matmul(hid, v[5])?;
        let proj = g.add_row(proj, v[6])?;
        let proj = g.tanh(proj)?;
        let weights = g.matmul(proj, v[7])?;
        let alpha = g.softmax(weights, 0)?;
        let at = g.transpose(alpha)?;
        let user = g.matmul(at, hid)?;
        let ct = g.transpose(candidate)?;
        let dot = g.matmul(user, ct)?;
        g.add(dot, v[8])?
    };
    g.sigmoid(logit)
}

fn attention_row<T: Scalar>(g: &mut Graph<T>, v: &[Var], enc: Var, response: usize) -> Result<Var> {
    let resp = g.gather(v[0], &[response])?;
    g.add(enc, resp)
}

/// Probability that the user answers/clicks `candidate`, given the history.
/// An empty history is allowed.
pub fn cf_predict<T: Scalar>(
    g: &mut Graph<T>,
    p: &CfVars,
    history: &[(Var, u8)],
    candidate: Var,
) -> Result<Var> {
    let v = p.all();
    match p.variant {
        CfVariant::Recurrent => {
            let mut state = lstm_initial(g, v);
            for &(enc, r) in history {
                state = lstm_step(g, v, &state, enc, check_response(r)?)?;
            }
            recurrent_score(g, v, state.h, candidate)
        }
        CfVariant::Attention => {
            let mut rows = Vec::with_capacity(history.len());
            for &(enc, r) in history {
                rows.push(attention_row(g, v, enc, check_response(r)?)?);
            }
            attention_score(g, v, &rows, candidate)
        }
    }
}

/// Next-response probabilities: entry `n - 1` predicts interaction `n` from
/// interactions `0..n` and the candidate encoding of `n`, for `n >= 1`.
pub fn sequence_probabilities<T: Scalar>(
    g: &mut Graph<T>,
    p: &CfVars,
    steps: &[(Var, u8)],
) -> Result<Vec<Var>> {
    let v = p.all();
    let mut probs = Vec::with_capacity(steps.len().saturating_sub(1));
    match p.variant {
        CfVariant::Recurrent => {
            let mut state = lstm_initial(g, v);
            for n in 1..steps.len() {
                let (enc, r) = steps[n - 1];
                state = lstm_step(g, v, &state, enc, check_response(r)?)?;
                probs.push(recurrent_score(g, v, state.h, steps[n].0)?);
            }
            check_response(steps.last().map(|s| s.1).unwrap_or(0))?;
        }
        CfVariant::Attention => {
            let mut rows = Vec::with_capacity(steps.len());
            for &(enc, r) in steps.iter().take(steps.len().saturating_sub(1)) {
                rows.push(attention_row(g, v, enc, check_response(r)?)?);
            }
            for n in 1..steps.len() {
                probs.push(attention_score(g, v, &rows[..n], steps[n].0)?);
            }
            check_response(steps.last().map(|s| s.1).unwrap_or(0))?;
        }
    }
    Ok(probs)
}

/// Summed BCE of next-response predictions over one user's sequence.
pub fn sequence_loss_from_steps<T: Scalar>(
    g: &mut Graph<T>,
    p: &CfVars,
    steps: &[(Var, u8)],
) -> Result<Var> {
    if steps.len() < 2 {
        return Err(Error::Validation(
            "sequence loss needs at least two interactions".into(),
        ));
    }
    let probs = sequence_probabilities(g, p, steps)?;
    let stacked = g.concat(&probs, 0)?;
    let labels: Vec<T> = steps[1..]
        .iter()
        .map(|s| T::from_u8(s.1).expect("0 or 1"))
        .collect();
    let n = labels.len();
    let y = g.constant(Tensor::new(vec![n, 1], labels)?);
    let mean = g.bce_loss(stacked, y)?;
    g.scale(mean, T::from_usize_lossy(n))
}

/// [`sequence_loss_from_steps`] with encodings looked up per item.
pub fn sequence_loss<T: Scalar>(
    g: &mut Graph<T>,
    user: &UserSequence,
    encodings: &HashMap<ItemId, Var>,
    p: &CfVars,
) -> Result<Var> {
    let steps = user
        .interactions
        .iter()
        .map(|&(item, r)| {
            encodings.get(&item).map(|&v| (v, r)).ok_or_else(|| {
                Error::Lookup(format!(
                    "no encoding for item {item} (user {})",
                    user.user_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sequence_loss_from_steps(g, p, &steps)
}
