use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, ItemId};
use crate::error::{Error, Result};

/// Split users (not interactions) into `(rest, held_out)`, holding out
/// `round(n * fraction)` users.
pub fn split_users(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "split fraction {fraction} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..ds.users.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = (ds.users.len() as f64 * fraction).round() as usize;
    let (held, rest) = order.split_at(n_held);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        ds.with_users(idx.into_iter().map(|i| ds.users[i].clone()).collect())
    };
    Ok((pick(rest), pick(held)))
}

#[derive(Clone, Debug)]
pub struct ColdStartSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub cold_items: BTreeSet<ItemId>,
}

/// User-level train/test split, then `n_cold` items with test interactions
/// are made cold: every training interaction on them is removed, and training
/// users left with fewer than two interactions are dropped.
pub fn cold_start_split(
    ds: &Dataset,
    test_fraction: f64,
    n_cold: usize,
    seed: u64,
) -> Result<ColdStartSplit> {
    if n_cold > 0 && n_cold >= ds.items().len() {
        return Err(Error::Validation(format!(
            "cannot make {n_cold} of {} items cold",
            ds.items().len()
        )));
    }
    let (train, test) = split_users(ds, test_fraction, seed)?;
    let candidates: Vec<ItemId> = test.touched_items().into_iter().collect();
    if candidates.len() < n_cold {
        return Err(Error::Validation(format!(
            "only {} items have test interactions, {n_cold} cold items requested",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c01d);
    let cold_items: BTreeSet<ItemId> = candidates
        .choose_multiple(&mut rng, n_cold)
        .copied()
        .collect();
    let users = train
        .users
        .iter()
        .map(|u| {
            let mut u = u.clone();
            u.interactions.retain(|(i, _)| !cold_items.contains(i));
            u
        })
        .filter(|u| u.len() >= 2)
        .collect();
    Ok(ColdStartSplit {
        train: train.with_users(users),
        test,
        cold_items,
    })
}
