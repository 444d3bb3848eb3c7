//! AUC, cold-start AUC, MRR and nDCG@k.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::ItemId;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub score: f64,
    pub label: u8,
    pub item_id: ItemId,
    /// User (or impression) the prediction belongs to, for ranking metrics.
    pub group_id: u32,
}

/// Mann-Whitney AUC with midranks for ties: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn auc(pairs: &[ScoredLabel]) -> Result<f64> {
    if pairs.iter().any(|p| !p.score.is_finite()) {
        return Err(Error::UndefinedMetric("non-finite score".into()));
    }
    let n_pos = pairs.iter().filter(|p| p.label == 1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both labels ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].score.total_cmp(&pairs[b].score));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pairs[order[end]].score == pairs[order[start]].score {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_tie = order[start..end]
            .iter()
            .filter(|&&i| pairs[i].label == 1)
            .count();
        pos_rank_sum += midrank * pos_in_tie as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC restricted to predictions on `cold_items`.
pub fn cs_auc(pairs: &[ScoredLabel], cold_items: &BTreeSet<ItemId>) -> Result<f64> {
    if cold_items.is_empty() {
        return Err(Error::UndefinedMetric("no cold-start items".into()));
    }
    let subset: Vec<ScoredLabel> = pairs
        .iter()
        .filter(|p| cold_items.contains(&p.item_id))
        .copied()
        .collect();
    auc(&subset)
}

fn ranked_groups(pairs: &[ScoredLabel]) -> Result<Vec<Vec<u8>>> {
    let mut groups: BTreeMap<u32, Vec<&ScoredLabel>> = BTreeMap::new();
    for p in pairs {
        groups.entry(p.group_id).or_default().push(p);
    }
    if groups.is_empty() {
        return Err(Error::UndefinedMetric("no groups".into()));
    }
    groups
        .into_iter()
        .map(|(gid, mut g)| {
            if !g.iter().any(|p| p.label == 1) {
                return Err(Error::UndefinedMetric(format!(
                    "group {gid} has no positive"
                )));
            }
            g.sort_by(|a, b| b.score.total_cmp(&a.score));
            Ok(g.into_iter().map(|p| p.label).collect())
        })
        .collect()
}

/// Mean reciprocal rank of the first positive per group.
pub fn mrr(pairs: &[ScoredLabel]) -> Result<f64> {
    let groups = ranked_groups(pairs)?;
    let total: f64 = groups
        .iter()
        .map(|labels| 1.0 / (labels.iter().position(|&l| l == 1).expect("checked") + 1) as f64)
        .sum();
    Ok(total / groups.len() as f64)
}

/// Binary-gain nDCG@k with `1 / log2(rank + 1)` discount, averaged over groups.
pub fn ndcg_at_k(pairs: &[ScoredLabel], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::UndefinedMetric("nDCG@0".into()));
    }
    let groups = ranked_groups(pairs)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let total: f64 = groups
        .iter()
        .map(|labels| {
            let dcg: f64 = labels
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, &l)| l as f64 * discount(i + 1))
                .sum();
            let positives = labels.iter().filter(|&&l| l == 1).count();
            let ideal: f64 = (1..=positives.min(k)).map(discount).sum();
            dcg / ideal
        })
        .sum();
    Ok(total / groups.len() as f64)
}

/// Drop groups that cannot be ranked (no positive).
pub fn rankable(pairs: &[ScoredLabel]) -> Vec<ScoredLabel> {
    let with_pos: BTreeSet<u32> = pairs
        .iter()
        .filter(|p| p.label == 1)
        .map(|p| p.group_id)
        .collect();
    pairs
        .iter()
        .filter(|p| with_pos.contains(&p.group_id))
        .copied()
        .collect()
}
