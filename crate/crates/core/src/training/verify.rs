use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{scaled_max_diff, Tensor};
use crate::dataset::{batch_iter, Batch, Dataset, UserSequence};
use crate::error::{Error, Result};
use crate::model::{init_params, CfVariant, ModelConfig, ParamSet};
use crate::seed::derive_seed;
use crate::training::{GramOptions, Mode, OptimizerConfig, TrainerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub trials: usize,
    /// Users per trial batch.
    pub batch_users: usize,
    /// Longest user prefix used in a gradient trial.
    pub max_sequence: usize,
    /// Steps per trajectory comparison.
    pub trajectory_steps: usize,
    pub sgd_lr: f64,
    pub adam_lr: f64,
    /// Bound on the gradient relative error.
    pub tolerance: f64,
    /// Bound on the trajectory relative divergence.
    pub trajectory_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            batch_users: 3,
            max_sequence: 16,
            trajectory_steps: 50,
            sgd_lr: 1e-2,
            adam_lr: 1e-3,
            tolerance: 1e-8,
            trajectory_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub d: usize,
    pub d_h: usize,
    pub ce_layers: usize,
    pub cf_variant: CfVariant,
    pub interactions: usize,
    pub unique_items: usize,
    pub ce_grad_rel_err: f64,
    pub cf_grad_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub trials: Vec<TrialResult>,
    pub max_ce_grad_rel_err: f64,
    pub max_cf_grad_rel_err: f64,
    pub max_param_grad_rel_err: f64,
    pub max_trajectory_rel_err_sgd: f64,
    pub max_trajectory_rel_err_adam: f64,
    pub max_trajectory_rel_err: f64,
    pub grad_ok: bool,
    pub trajectory_ok: bool,
}

/// Largest per-tensor scaled difference between two parameter lists.
pub(crate) fn max_rel_err<T: crate::Scalar>(a: &[Tensor<T>], b: &[Tensor<T>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| scaled_max_diff(x, y))
        .fold(0.0, f64::max)
}

fn params_of<T: crate::Scalar>(s: &TrainerState<T>) -> Vec<Tensor<T>> {
    s.ce.tensors()
        .into_iter()
        .chain(s.cf.tensors())
        .cloned()
        .collect()
}

fn trial_batch(ds: &Dataset, cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let eligible: Vec<&UserSequence> = ds.users.iter().filter(|u| u.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::Validation(
            "verification needs users with at least two interactions".into(),
        ));
    }
    let k = cfg.batch_users.clamp(1, eligible.len());
    let mut users: Vec<UserSequence> = eligible
        .choose_multiple(rng, k)
        .map(|u| {
            let len = rng.random_range(2..=u.len().min(cfg.max_sequence.max(2)));
            UserSequence {
                user_id: u.user_id,
                interactions: u.interactions[..len].to_vec(),
            }
        })
        .collect();
    let has_repeat = users.iter().any(|u| {
        let mut ids: Vec<_> = u.interactions.iter().map(|x| x.0).collect();
        ids.sort_unstable();
        ids.windows(2).any(|w| w[0] == w[1])
    });
    if !has_repeat {
        let first = users[0].interactions[0];
        let flipped = (first.0, 1 - first.1);
        users[0].interactions.push(flipped);
    }
    Ok(Batch::new(users))
}

fn trainer(
    mode: Mode,
    model: &ModelConfig,
    init_seed: u64,
    opt: OptimizerConfig,
    ds: &Dataset,
) -> Result<TrainerState<f64>> {
    let (ce, cf) = init_params::<f64>(model, init_seed)?;
    let gram = GramOptions {
        accumulation_steps: 1,
        ce_batch_size: None,
        ce_epochs: 1,
        recompute_encodings: false,
    };
    TrainerState::new(mode, ce, cf, opt.clone(), opt, gram, ds, init_seed)
}

fn trajectory_divergence(
    ds: &Dataset,
    model: &ModelConfig,
    cfg: &VerifyConfig,
    opt: OptimizerConfig,
    seed: u64,
) -> Result<f64> {
    let users: Vec<UserSequence> = ds.users.iter().filter(|u| u.len() >= 2).cloned().collect();
    let mut e2e = trainer(Mode::E2e, model, seed, opt.clone(), ds)?;
    let mut gram = trainer(Mode::Gram, model, seed, opt, ds)?;
    let mut worst = 0.0f64;
    let mut epoch = 0u64;
    let mut done = 0;
    while done < cfg.trajectory_steps {
        for batch in batch_iter(&users, cfg.batch_users.max(1), derive_seed(seed, epoch)) {
            if done == cfg.trajectory_steps {
                break;
            }
            e2e.step(&batch, ds)?;
            gram.step(&batch, ds)?;
            worst = worst.max(max_rel_err(&params_of(&e2e), &params_of(&gram)));
            done += 1;
        }
        epoch += 1;
    }
    Ok(worst)
}

/// Compare E2E gradients against Single-step GRAM's pseudo-loss gradients on
/// random architectures and batches, then compare full SGD and Adam
/// trajectories of both trainers.
pub fn verify_equivalence(
    ds: &Dataset,
    model: &ModelConfig,
    cfg: &VerifyConfig,
    seed: u64,
) -> Result<EquivalenceReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("verify.trials must be positive".into()));
    }
    let vocab = model.vocab.max(ds.max_token().map_or(1, |t| t + 1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let d = *[4usize, 8, 16].choose(&mut rng).expect("non-empty");
        let trial_model = ModelConfig {
            d,
            d_ff: d * rng.random_range(1..=2),
            ce_layers: rng.random_range(1..=2),
            d_h: *[4usize, 8].choose(&mut rng).expect("non-empty"),
            vocab,
            max_token_len: model.max_token_len,
            positional: rng.random_bool(0.5),
            cf_variant: if trial % 2 == 0 {
                CfVariant::Recurrent
            } else {
                CfVariant::Attention
            },
        };
        let batch = trial_batch(ds, cfg, &mut rng)?;
        let init_seed = rng.random::<u64>();
        let frozen = OptimizerConfig::sgd(0.0);
        let mut e2e = trainer(Mode::E2e, &trial_model, init_seed, frozen.clone(), ds)?;
        let mut gram = trainer(Mode::Gram, &trial_model, init_seed, frozen, ds)?;
        let a = e2e.step(&batch, ds)?;
        let b = gram.step(&batch, ds)?;
        let ce_a = a
            .ce_grads
            .ok_or_else(|| Error::State("E2E step produced no CE gradient".into()))?;
        let ce_b = b
            .ce_grads
            .ok_or_else(|| Error::State("GRAM step skipped its CE phase".into()))?;
        trials.push(TrialResult {
            trial,
            d,
            d_h: trial_model.d_h,
            ce_layers: trial_model.ce_layers,
            cf_variant: trial_model.cf_variant,
            interactions: batch.n_interactions(),
            unique_items: batch.unique_items.len(),
            ce_grad_rel_err: max_rel_err(&ce_a, &ce_b),
            cf_grad_rel_err: max_rel_err(&a.cf_grads, &b.cf_grads),
        });
    }

    let base = ModelConfig {
        vocab,
        ..model.clone()
    };
    let mut sgd = 0.0f64;
    let mut adam = 0.0f64;
    if cfg.trajectory_steps > 0 {
        for variant in [CfVariant::Recurrent, CfVariant::Attention] {
            let m = ModelConfig {
                cf_variant: variant,
                ..base.clone()
            };
            let s = derive_seed(seed, 1000 + variant as u64);
            sgd = sgd.max(trajectory_divergence(
                ds,
                &m,
                cfg,
                OptimizerConfig::sgd(cfg.sgd_lr),
                s,
            )?);
            adam = adam.max(trajectory_divergence(
                ds,
                &m,
                cfg,
                OptimizerConfig::adam(cfg.adam_lr),
                s,
            )?);
        }
    }

    let max_ce = trials.iter().map(|t| t.ce_grad_rel_err).fold(0.0, f64::max);
    let max_cf = trials.iter().map(|t| t.cf_grad_rel_err).fold(0.0, f64::max);
    let max_grad = max_ce.max(max_cf);
    let max_traj = sgd.max(adam);
    Ok(EquivalenceReport {
        trials,
        max_ce_grad_rel_err: max_ce,
        max_cf_grad_rel_err: max_cf,
        max_param_grad_rel_err: max_grad,
        max_trajectory_rel_err_sgd: sgd,
        max_trajectory_rel_err_adam: adam,
        max_trajectory_rel_err: max_traj,
        grad_ok: max_grad <= cfg.tolerance,
        trajectory_ok: max_traj <= cfg.trajectory_tolerance,
    })
}
