use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{batch_iter, cold_start_split, split_users, ColdStartSplit, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{auc, cs_auc, mrr, ndcg_at_k, rankable, ScoredLabel};
use crate::model::{init_params, CeParams, CfParams};
use crate::report::{RunReport, SplitSummary};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::training::{ItemTable, Mode, TrainerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean BCE per training prediction.
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub ce_forward_calls: u64,
    pub ce_backward_calls: u64,
    pub activation_elements_peak: u64,
    pub wall_clock_ns: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub auc: Option<f64>,
    pub cs_auc: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg_at_5: Option<f64>,
    pub ndcg_at_10: Option<f64>,
    pub n_predictions: usize,
    pub n_cold_predictions: usize,
}

impl TestMetrics {
    pub fn from_predictions(preds: &[ScoredLabel], split: &ColdStartSplit) -> Self {
        let ranked = rankable(preds);
        Self {
            auc: auc(preds).ok(),
            cs_auc: cs_auc(preds, &split.cold_items).ok(),
            mrr: mrr(&ranked).ok(),
            ndcg_at_5: ndcg_at_k(&ranked, 5).ok(),
            ndcg_at_10: ndcg_at_k(&ranked, 10).ok(),
            n_predictions: preds.len(),
            n_cold_predictions: preds
                .iter()
                .filter(|p| split.cold_items.contains(&p.item_id))
                .count(),
        }
    }
}

pub struct TrainOutcome<T: Scalar> {
    pub report: RunReport,
    pub state: TrainerState<T>,
    pub split: ColdStartSplit,
    pub test_predictions: Vec<ScoredLabel>,
}

type Snapshot<T> = (CeParams<T>, CfParams<T>, Option<ItemTable<T>>);

fn snapshot<T: Scalar>(s: &TrainerState<T>) -> Snapshot<T> {
    (s.ce.clone(), s.cf.clone(), s.item_table.clone())
}

/// Cold-start split, epoch loop with validation-AUC early stopping,
/// best-epoch restore and test evaluation.
pub fn train<T: Scalar>(ds: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let tc = &cfg.train;
    let split = cold_start_split(
        ds,
        cfg.data.test_fraction,
        cfg.data.n_cold_items,
        seeds.split,
    )?;
    let (fit, val) = split_users(
        &split.train,
        cfg.data.val_fraction,
        derive_seed(seeds.split, 1),
    )?;
    if fit.users.is_empty() {
        return Err(Error::Config(
            "no training users left after splitting".into(),
        ));
    }
    let steps_per_epoch = fit.users.len().div_ceil(tc.cf_batch_size);
    let accumulation = match tc.mode {
        Mode::Gram => Some(tc.latency.resolve(steps_per_epoch)?),
        _ => None,
    };

    let (ce, cf) = init_params::<T>(&cfg.model, seeds.init)?;
    let mut state = TrainerState::new(
        tc.mode,
        ce,
        cf,
        tc.optimizer_ce.clone(),
        tc.optimizer_cf.clone(),
        tc.gram_options(accumulation.unwrap_or(1)),
        &fit,
        derive_seed(seeds.init, 1),
    )?;

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Snapshot<T>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=tc.max_epochs {
        let mut loss = 0.0;
        let mut count = 0usize;
        let start_ns = state.counters.wall_clock_ns;
        for batch in batch_iter(&fit.users, tc.cf_batch_size, seeds.epoch_shuffle(epoch)) {
            let r = state.step(&batch, &fit)?;
            loss += r.loss;
            count += r.predictions;
        }
        let val_auc = if val.users.is_empty() {
            None
        } else {
            auc(&state.predict(&val.users, &val)?).ok()
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss / count.max(1) as f64,
            val_auc,
            ce_forward_calls: state.counters.ce_forward_calls,
            ce_backward_calls: state.counters.ce_backward_calls,
            activation_elements_peak: state.counters.activation_elements_peak,
            wall_clock_ns: state.counters.wall_clock_ns - start_ns,
        });
        match (val_auc, &best) {
            (Some(v), Some((b, _, _))) if v <= *b => {
                since_best += 1;
                if tc.patience > 0 && since_best >= tc.patience {
                    stopped_early = true;
                    break;
                }
            }
            (Some(v), _) => {
                best = Some((v, epoch, snapshot(&state)));
                since_best = 0;
            }
            (None, _) => {}
        }
    }
    state.finish(&fit)?;
    let last = epochs.len();
    let best_epoch = match best {
        Some((_, e, snap)) if e != last => {
            (state.ce, state.cf, state.item_table) = snap;
            e
        }
        _ => last,
    };

    let test_predictions = state.predict(&split.test.users, &split.test)?;
    let test = TestMetrics::from_predictions(&test_predictions, &split);
    let report = RunReport::new::<T>(
        cfg,
        accumulation,
        SplitSummary {
            train: fit.stats(),
            n_val_users: val.users.len(),
            n_test_users: split.test.users.len(),
            n_cold_items: split.cold_items.len(),
            steps_per_epoch,
        },
        epochs,
        best_epoch,
        stopped_early,
        test,
        state.counters.clone(),
        state.windows,
    );
    Ok(TrainOutcome {
        report,
        state,
        split,
        test_predictions,
    })
}
