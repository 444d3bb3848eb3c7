use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::dataset::{Batch, Dataset, ItemId, UserSequence};
use crate::error::{Error, Result};
use crate::instrument::{duration_ns, ActivationMeter, CostCounters};
use crate::metrics::ScoredLabel;
use crate::model::{
    ce_encode, ce_encode_value, glorot, sequence_loss, sequence_loss_from_steps,
    sequence_probabilities, CeParams, CfParams, ParamSet,
};
use crate::scalar::Scalar;
use crate::training::{Mode, OptimizerConfig, OptimizerState, PseudoTargetCache};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GramOptions {
    /// `N`; 1 is Single-step GRAM.
    pub accumulation_steps: usize,
    /// `None` regresses the whole cache in one CE mini-batch.
    pub ce_batch_size: Option<usize>,
    pub ce_epochs: usize,
    pub recompute_encodings: bool,
}

impl Default for GramOptions {
    fn default() -> Self {
        Self {
            accumulation_steps: 1,
            ce_batch_size: Some(8),
            ce_epochs: 1,
            recompute_encodings: false,
        }
    }
}

/// Trainable item-embedding table standing in for the CE (NoContent).
#[derive(Clone, Debug, PartialEq)]
pub struct ItemTable<T> {
    pub table: Tensor<T>,
}

impl<T: Scalar> ParamSet<T> for ItemTable<T> {
    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("item_embedding".to_string(), &self.table)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.table]
    }
}

/// Interaction and distinct-item totals over the windows seen so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStats {
    pub steps: u64,
    pub interactions: u64,
    /// Sum over batches of distinct items per batch.
    pub batch_unique_items: u64,
    /// Sum over accumulation windows of distinct items per window.
    pub window_unique_items: u64,
    pub windows: u64,
}

#[derive(Clone, Debug)]
pub struct StepReport<T> {
    /// Summed BCE over every prediction in the batch.
    pub loss: f64,
    pub predictions: usize,
    pub ce_forwards: u64,
    /// Whether a CE update happened in this step.
    pub ce_updated: bool,
    pub cf_grads: Vec<Tensor<T>>,
    /// E2E: CE gradient of the batch loss. GRAM: CE gradient of the
    /// pseudo-loss summed over CE mini-batches of the first regression pass.
    pub ce_grads: Option<Vec<Tensor<T>>>,
    /// GRAM: `dL/dh` per unique item.
    pub item_grads: BTreeMap<ItemId, Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct TrainerState<T: Scalar> {
    pub mode: Mode,
    pub ce: CeParams<T>,
    pub cf: CfParams<T>,
    pub item_table: Option<ItemTable<T>>,
    frozen: BTreeMap<ItemId, Tensor<T>>,
    pub opt_ce: OptimizerState<T>,
    pub opt_cf: OptimizerState<T>,
    pub gram: GramOptions,
    /// 1-based update clock.
    pub clock: u64,
    pub cache: PseudoTargetCache<T>,
    pub counters: CostCounters,
    pub windows: WindowStats,
    meter: ActivationMeter,
}

fn collect_grads<T: Scalar>(
    grads: &mut Gradients<T>,
    vars: &[Var],
    like: &[&Tensor<T>],
) -> Vec<Tensor<T>> {
    vars.iter()
        .zip(like)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros_like(t)))
        .collect()
}

fn tokens_of(ds: &Dataset, item: ItemId) -> Result<&[usize]> {
    ds.item(item)
        .map(|i| i.tokens.as_slice())
        .ok_or_else(|| Error::Lookup(format!("item {item} has no content")))
}

fn add_loss<T: Scalar>(g: &mut Graph<T>, total: Option<Var>, term: Var) -> Result<Var> {
    match total {
        None => Ok(term),
        Some(t) => g.add(t, term),
    }
}

fn predictions(users: &[UserSequence]) -> usize {
    users.iter().map(|u| u.len().saturating_sub(1)).sum()
}

impl<T: Scalar> TrainerState<T> {
    /// `ds` supplies item content for NoFinetune's frozen encodings and the
    /// NoContent table size; `table_seed` initializes that table.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: Mode,
        ce: CeParams<T>,
        cf: CfParams<T>,
        opt_ce: OptimizerConfig,
        opt_cf: OptimizerConfig,
        gram: GramOptions,
        ds: &Dataset,
        table_seed: u64,
    ) -> Result<Self> {
        if gram.accumulation_steps == 0 {
            return Err(Error::Config("accumulation steps must be positive".into()));
        }
        if gram.ce_batch_size == Some(0) || gram.ce_epochs == 0 {
            return Err(Error::Config(
                "ce_batch_size and ce_epochs must be positive".into(),
            ));
        }
        if let Some(max) = ds.max_token() {
            if max >= ce.vocab() {
                return Err(Error::Config(format!(
                    "token id {max} outside the CE vocabulary of {}",
                    ce.vocab()
                )));
            }
        }
        let mut state = Self {
            mode,
            ce,
            cf,
            item_table: None,
            frozen: BTreeMap::new(),
            opt_ce: OptimizerState::new(opt_ce),
            opt_cf: OptimizerState::new(opt_cf),
            gram,
            clock: 1,
            cache: PseudoTargetCache::new(),
            counters: CostCounters::default(),
            windows: WindowStats::default(),
            meter: ActivationMeter::new(),
        };
        match mode {
            Mode::NoContent => {
                let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
                state.item_table = Some(ItemTable {
                    table: glorot(&mut rng, ds.items().len(), state.ce.dim()),
                });
            }
            Mode::NoFinetune => {
                for item in ds.items() {
                    let enc = ce_encode_value(&state.ce, &item.tokens)?;
                    state.record_ce_forward(&item.tokens);
                    state.frozen.insert(item.item_id, enc);
                }
            }
            Mode::E2e | Mode::Gram => {}
        }
        Ok(state)
    }

    pub fn meter(&self) -> &ActivationMeter {
        &self.meter
    }

    fn record_ce_forward(&mut self, tokens: &[usize]) {
        let len = tokens.len().min(self.ce.max_token_len);
        self.counters.record_ce_forward(len, self.ce.dim());
    }

    fn record_ce_backward(&mut self, tokens: &[usize]) {
        let len = tokens.len().min(self.ce.max_token_len);
        self.counters.record_ce_backward(len, self.ce.dim());
    }

    /// One training step in the state's mode.
    pub fn step(&mut self, batch: &Batch, ds: &Dataset) -> Result<StepReport<T>> {
        let start = Instant::now();
        self.windows.steps += 1;
        self.windows.interactions += batch.n_interactions() as u64;
        self.windows.batch_unique_items += batch.unique_items.len() as u64;
        let out = match self.mode {
            Mode::E2e => self.e2e_step(batch, ds),
            Mode::Gram => self.gram_step(batch, ds),
            Mode::NoContent => self.no_content_step(batch, ds),
            Mode::NoFinetune => self.no_finetune_step(batch),
        };
        self.counters.wall_clock_ns += duration_ns(start.elapsed());
        out
    }

    fn check_batch(batch: &Batch) -> Result<()> {
        if batch.users.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        if let Some(u) = batch.users.iter().find(|u| u.len() < 2) {
            return Err(Error::Validation(format!(
                "user {} has fewer than two interactions",
                u.user_id
            )));
        }
        Ok(())
    }

    /// Joint backprop through the CF and one CE call per interaction
    /// occurrence, then a simultaneous update of both modules.
    pub fn e2e_step(&mut self, batch: &Batch, ds: &Dataset) -> Result<StepReport<T>> {
        Self::check_batch(batch)?;
        let forwards_before = self.counters.ce_forward_calls;
        let mut g = Graph::with_meter(self.meter.clone());
        let ce_vars = self.ce.bind(&mut g, true);
        let cf_vars = self.cf.bind(&mut g, true);
        let mut total = None;
        let mut occurrences = Vec::new();
        for user in &batch.users {
            let mut steps = Vec::with_capacity(user.len());
            for &(item, r) in &user.interactions {
                let tokens = tokens_of(ds, item)?;
                steps.push((ce_encode(&mut g, &ce_vars, tokens)?, r));
                occurrences.push(item);
            }
            let loss_u = sequence_loss_from_steps(&mut g, &cf_vars, &steps)?;
            total = Some(add_loss(&mut g, total, loss_u)?);
        }
        for &item in &occurrences {
            self.record_ce_forward(tokens_of(ds, item)?);
        }
        let loss = total.expect("non-empty batch");
        let loss_value = g.value(loss).item()?.to_f64_lossy();
        let mut grads = g.backward(loss)?;
        self.counters.observe_peak(&self.meter);
        drop(g);
        for &item in &occurrences {
            self.record_ce_backward(tokens_of(ds, item)?);
        }
        self.counters.cf_forward_calls += predictions(&batch.users) as u64;

        let ce_grads = collect_grads(&mut grads, ce_vars.all(), &self.ce.tensors());
        let cf_grads = collect_grads(&mut grads, cf_vars.all(), &self.cf.tensors());
        self.opt_ce.apply(self.ce.tensors_mut(), &ce_grads)?;
        self.opt_cf.apply(self.cf.tensors_mut(), &cf_grads)?;
        Ok(StepReport {
            loss: loss_value,
            predictions: predictions(&batch.users),
            ce_forwards: self.counters.ce_forward_calls - forwards_before,
            ce_updated: true,
            cf_grads,
            ce_grads: Some(ce_grads),
            item_grads: BTreeMap::new(),
        })
    }

    /// One GRAM step: encode unique items (cache misses only unless
    /// recomputing), CF backward with encodings as leaves, CF update,
    /// pseudo-target update `h~ <- h~ - dL/dh`, and a CE regression phase
    /// when the clock is a multiple of `N`.
    pub fn gram_step(&mut self, batch: &Batch, ds: &Dataset) -> Result<StepReport<T>> {
        Self::check_batch(batch)?;
        let forwards_before = self.counters.ce_forward_calls;
        let cf_start = Instant::now();

        let mut used = Vec::with_capacity(batch.unique_items.len());
        for &item in &batch.unique_items {
            let tokens = tokens_of(ds, item)?;
            let h = match self.cache.get(item) {
                Some(entry) if !self.gram.recompute_encodings => entry.h_tilde.clone(),
                cached => {
                    let hit = cached.is_some();
                    let h = ce_encode_value(&self.ce, tokens)?;
                    self.record_ce_forward(tokens);
                    if !hit {
                        self.cache.insert(item, h.clone(), self.clock);
                    }
                    h
                }
            };
            used.push((item, h));
        }

        let mut g = Graph::with_meter(self.meter.clone());
        let cf_vars = self.cf.bind(&mut g, true);
        let mut leaves = HashMap::with_capacity(used.len());
        for (item, h) in &used {
            leaves.insert(*item, g.input(h.clone(), true));
        }
        let mut total = None;
        for user in &batch.users {
            let loss_u = sequence_loss(&mut g, user, &leaves, &cf_vars)?;
            total = Some(add_loss(&mut g, total, loss_u)?);
        }
        let loss = total.expect("non-empty batch");
        let loss_value = g.value(loss).item()?.to_f64_lossy();
        let mut grads = g.backward(loss)?;
        self.counters.observe_peak(&self.meter);
        drop(g);
        self.counters.cf_forward_calls += predictions(&batch.users) as u64;

        let cf_grads = collect_grads(&mut grads, cf_vars.all(), &self.cf.tensors());
        self.opt_cf.apply(self.cf.tensors_mut(), &cf_grads)?;

        let mut item_grads = BTreeMap::new();
        for (item, h) in used {
            let grad = grads
                .take(leaves[&item])
                .unwrap_or_else(|| Tensor::zeros_like(&h));
            self.cache.apply_gradient(item, h, &grad)?;
            item_grads.insert(item, grad);
        }
        self.counters.cf_phase_ns += duration_ns(cf_start.elapsed());

        let ce_grads = if self
            .clock
            .is_multiple_of(self.gram.accumulation_steps as u64)
        {
            self.ce_update_phase(ds)?
        } else {
            None
        };
        self.clock += 1;
        Ok(StepReport {
            loss: loss_value,
            predictions: predictions(&batch.users),
            ce_forwards: self.counters.ce_forward_calls - forwards_before,
            ce_updated: ce_grads.is_some(),
            cf_grads,
            ce_grads,
            item_grads,
        })
    }

    /// Regress the CE onto the cached pseudo-targets, minimizing
    /// `1/2 sum_i |h~_i - CE(c_i)|^2` with one optimizer step per CE
    /// mini-batch, then clear the cache. Returns the gradient summed over the
    /// mini-batches of the first pass, or `None` for an empty cache.
    pub fn ce_update_phase(&mut self, ds: &Dataset) -> Result<Option<Vec<Tensor<T>>>> {
        if self.cache.is_empty() {
            return Ok(None);
        }
        let start = Instant::now();
        let targets: Vec<(ItemId, Tensor<T>)> = self
            .cache
            .iter()
            .map(|(i, e)| (i, e.h_tilde.clone()))
            .collect();
        self.windows.window_unique_items += targets.len() as u64;
        self.windows.windows += 1;
        let size = self.gram.ce_batch_size.unwrap_or(targets.len()).max(1);
        let mut captured: Option<Vec<Tensor<T>>> = None;
        for pass in 0..self.gram.ce_epochs {
            for chunk in targets.chunks(size) {
                let mut g = Graph::with_meter(self.meter.clone());
                let vars = self.ce.bind(&mut g, true);
                let mut encs = Vec::with_capacity(chunk.len());
                let mut flat = Vec::with_capacity(chunk.len() * self.ce.dim());
                for (item, target) in chunk {
                    encs.push(ce_encode(&mut g, &vars, tokens_of(ds, *item)?)?);
                    flat.extend_from_slice(target.data());
                }
                let stacked = g.concat(&encs, 0)?;
                let target = g.constant(Tensor::new(vec![chunk.len(), self.ce.dim()], flat)?);
                let loss = g.mse_half(stacked, target)?;
                let mut grads = g.backward(loss)?;
                self.counters.observe_peak(&self.meter);
                drop(g);
                for (item, _) in chunk {
                    self.record_ce_backward(tokens_of(ds, *item)?);
                }
                let ce_grads = collect_grads(&mut grads, vars.all(), &self.ce.tensors());
                if pass == 0 {
                    match &mut captured {
                        None => captured = Some(ce_grads.clone()),
                        Some(acc) => acc
                            .iter_mut()
                            .zip(&ce_grads)
                            .for_each(|(a, g)| a.add_assign(g)),
                    }
                }
                self.opt_ce.apply(self.ce.tensors_mut(), &ce_grads)?;
            }
        }
        self.cache.clear();
        self.counters.ce_phase_ns += duration_ns(start.elapsed());
        Ok(captured)
    }

    /// Run the CE phase for a partially filled window (end of training).
    pub fn finish(&mut self, ds: &Dataset) -> Result<()> {
        if self.mode == Mode::Gram {
            self.ce_update_phase(ds)?;
        }
        Ok(())
    }

    /// NoContent: a trainable embedding table replaces the CE.
    pub fn no_content_step(&mut self, batch: &Batch, ds: &Dataset) -> Result<StepReport<T>> {
        Self::check_batch(batch)?;
        let table = self
            .item_table
            .as_ref()
            .ok_or_else(|| Error::State("no item table".into()))?;
        let mut g = Graph::with_meter(self.meter.clone());
        let table_var = table.bind_all(&mut g, true)[0];
        let cf_vars = self.cf.bind(&mut g, true);
        let mut leaves = HashMap::with_capacity(batch.unique_items.len());
        for &item in &batch.unique_items {
            let row = ds
                .item_row(item)
                .ok_or_else(|| Error::Lookup(format!("item {item} not in table")))?;
            leaves.insert(item, g.gather(table_var, &[row])?);
        }
        let mut total = None;
        for user in &batch.users {
            let loss_u = sequence_loss(&mut g, user, &leaves, &cf_vars)?;
            total = Some(add_loss(&mut g, total, loss_u)?);
        }
        let loss = total.expect("non-empty batch");
        let loss_value = g.value(loss).item()?.to_f64_lossy();
        let mut grads = g.backward(loss)?;
        self.counters.observe_peak(&self.meter);
        drop(g);
        self.counters.cf_forward_calls += predictions(&batch.users) as u64;

        let table = self.item_table.as_mut().expect("checked above");
        let table_grads = collect_grads(&mut grads, &[table_var], &table.tensors());
        let cf_grads = collect_grads(&mut grads, cf_vars.all(), &self.cf.tensors());
        self.opt_ce.apply(table.tensors_mut(), &table_grads)?;
        self.opt_cf.apply(self.cf.tensors_mut(), &cf_grads)?;
        Ok(StepReport {
            loss: loss_value,
            predictions: predictions(&batch.users),
            ce_forwards: 0,
            ce_updated: false,
            cf_grads,
            ce_grads: None,
            item_grads: BTreeMap::new(),
        })
    }

    /// NoFinetune: CF trained on encodings frozen at initialization.
    pub fn no_finetune_step(&mut self, batch: &Batch) -> Result<StepReport<T>> {
        Self::check_batch(batch)?;
        let mut g = Graph::with_meter(self.meter.clone());
        let cf_vars = self.cf.bind(&mut g, true);
        let mut leaves = HashMap::with_capacity(batch.unique_items.len());
        for &item in &batch.unique_items {
            let enc = self
                .frozen
                .get(&item)
                .ok_or_else(|| Error::Lookup(format!("no frozen encoding for item {item}")))?;
            leaves.insert(item, g.constant(enc.clone()));
        }
        let mut total = None;
        for user in &batch.users {
            let loss_u = sequence_loss(&mut g, user, &leaves, &cf_vars)?;
            total = Some(add_loss(&mut g, total, loss_u)?);
        }
        let loss = total.expect("non-empty batch");
        let loss_value = g.value(loss).item()?.to_f64_lossy();
        let mut grads = g.backward(loss)?;
        self.counters.observe_peak(&self.meter);
        drop(g);
        self.counters.cf_forward_calls += predictions(&batch.users) as u64;
        let cf_grads = collect_grads(&mut grads, cf_vars.all(), &self.cf.tensors());
        self.opt_cf.apply(self.cf.tensors_mut(), &cf_grads)?;
        Ok(StepReport {
            loss: loss_value,
            predictions: predictions(&batch.users),
            ce_forwards: 0,
            ce_updated: false,
            cf_grads,
            ce_grads: None,
            item_grads: BTreeMap::new(),
        })
    }

    /// Encodings the CF sees at evaluation time.
    pub fn item_encodings(
        &self,
        ds: &Dataset,
        items: impl IntoIterator<Item = ItemId>,
    ) -> Result<BTreeMap<ItemId, Tensor<T>>> {
        let mut out = BTreeMap::new();
        for item in items {
            let enc =
                match self.mode {
                    Mode::E2e | Mode::Gram => ce_encode_value(&self.ce, tokens_of(ds, item)?)?,
                    Mode::NoContent => {
                        let row = ds
                            .item_row(item)
                            .ok_or_else(|| Error::Lookup(format!("item {item} not in table")))?;
                        self.item_table
                            .as_ref()
                            .expect("NoContent table")
                            .table
                            .row_at(row)?
                    }
                    Mode::NoFinetune => self.frozen.get(&item).cloned().ok_or_else(|| {
                        Error::Lookup(format!("no frozen encoding for item {item}"))
                    })?,
                };
            out.insert(item, enc);
        }
        Ok(out)
    }

    /// Next-response scores for every position `n >= 1` of every user,
    /// grouped by user id.
    pub fn predict(&self, users: &[UserSequence], ds: &Dataset) -> Result<Vec<ScoredLabel>> {
        let touched = users
            .iter()
            .flat_map(|u| u.interactions.iter().map(|x| x.0));
        let encodings =
            self.item_encodings(ds, touched.collect::<std::collections::BTreeSet<_>>())?;
        let mut out = Vec::with_capacity(predictions(users));
        for user in users.iter().filter(|u| u.len() >= 2) {
            let mut g = Graph::inference();
            let cf_vars = self.cf.bind(&mut g, false);
            let steps: Vec<(Var, u8)> = user
                .interactions
                .iter()
                .map(|&(item, r)| (g.constant(encodings[&item].clone()), r))
                .collect();
            let probs = sequence_probabilities(&mut g, &cf_vars, &steps)?;
            for (p, &(item, label)) in probs.into_iter().zip(&user.interactions[1..]) {
                out.push(ScoredLabel {
                    score: g.value(p).item()?.to_f64_lossy(),
                    label,
                    item_id: item,
                    group_id: user.user_id,
                });
            }
        }
        Ok(out)
    }

    /// Summed BCE of a batch under the current parameters, without updates.
    pub fn eval_loss(&self, batch: &Batch, ds: &Dataset) -> Result<f64> {
        let encodings = self.item_encodings(ds, batch.unique_items.iter().copied())?;
        let mut total = 0.0;
        for user in &batch.users {
            let mut g = Graph::inference();
            let cf_vars = self.cf.bind(&mut g, false);
            let steps: Vec<(Var, u8)> = user
                .interactions
                .iter()
                .map(|&(item, r)| (g.constant(encodings[&item].clone()), r))
                .collect();
            let loss = sequence_loss_from_steps(&mut g, &cf_vars, &steps)?;
            total += g.value(loss).item()?.to_f64_lossy();
        }
        Ok(total)
    }
}
