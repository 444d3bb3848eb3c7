use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ItemId, UserSequence};

/// A mini-batch of user sequences with its sorted set of referenced items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub users: Vec<UserSequence>,
    pub unique_items: Vec<ItemId>,
}

impl Batch {
    pub fn new(users: Vec<UserSequence>) -> Self {
        let unique: BTreeSet<ItemId> = users
            .iter()
            .flat_map(|u| u.interactions.iter().map(|x| x.0))
            .collect();
        Self {
            users,
            unique_items: unique.into_iter().collect(),
        }
    }

    pub fn n_interactions(&self) -> usize {
        self.users.iter().map(UserSequence::len).sum()
    }
}

/// Mini-batches over a permutation of `users` drawn from `shuffle_seed`.
/// The last partial batch is kept.
pub fn batch_iter(
    users: &[UserSequence],
    batch_size: usize,
    shuffle_seed: u64,
) -> impl Iterator<Item = Batch> + '_ {
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let size = batch_size.max(1);
    let chunks: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    chunks
        .into_iter()
        .map(move |idx| Batch::new(idx.into_iter().map(|i| users[i].clone()).collect()))
}
