//! Interaction/content data model, file formats, synthetic generation,
//! splitting, batching and boost-ratio statistics.

mod batch;
pub mod io;
mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch_iter, Batch};
pub use split::{cold_start_split, split_users, ColdStartSplit};
pub use synthetic::{generate_synthetic, Latents, Synthetic, SyntheticConfig};

pub type ItemId = u32;
pub type UserId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    pub tokens: Vec<usize>,
}

/// A user's interactions in temporal order: `(item, response)` with the
/// response 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_id: UserId,
    pub interactions: Vec<(ItemId, u8)>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Items sorted by id plus user sequences in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    items: Vec<Item>,
    index: BTreeMap<ItemId, usize>,
    pub users: Vec<UserSequence>,
}

impl Dataset {
    /// Validates unique item ids, non-empty token lists, binary responses and
    /// that every interaction references a known item.
    pub fn new(mut items: Vec<Item>, users: Vec<UserSequence>) -> Result<Self> {
        items.sort_by_key(|i| i.item_id);
        let mut index = BTreeMap::new();
        for (row, item) in items.iter().enumerate() {
            if item.tokens.is_empty() {
                return Err(Error::Validation(format!(
                    "item {} has no tokens",
                    item.item_id
                )));
            }
            if index.insert(item.item_id, row).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate item id {}",
                    item.item_id
                )));
            }
        }
        let ds = Self {
            items,
            index,
            users,
        };
        ds.check_users(&ds.users)?;
        Ok(ds)
    }

    fn check_users(&self, users: &[UserSequence]) -> Result<()> {
        for u in users {
            for &(item, r) in &u.interactions {
                if !self.index.contains_key(&item) {
                    return Err(Error::Validation(format!(
                        "user {} references unknown item {item}",
                        u.user_id
                    )));
                }
                if r > 1 {
                    return Err(Error::Validation(format!(
                        "user {} has response {r}",
                        u.user_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same items, different users.
    pub fn with_users(&self, users: Vec<UserSequence>) -> Self {
        Self {
            items: self.items.clone(),
            index: self.index.clone(),
            users,
        }
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.index.get(&id).map(|&row| &self.items[row])
    }

    /// Dense row of an item, for embedding tables.
    pub fn item_row(&self, id: ItemId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn n_interactions(&self) -> usize {
        self.users.iter().map(UserSequence::len).sum()
    }

    /// Distinct items referenced by at least one interaction.
    pub fn touched_items(&self) -> BTreeSet<ItemId> {
        self.users
            .iter()
            .flat_map(|u| u.interactions.iter().map(|x| x.0))
            .collect()
    }

    pub fn max_token(&self) -> Option<usize> {
        self.items
            .iter()
            .flat_map(|i| i.tokens.iter().copied())
            .max()
    }

    pub fn stats(&self) -> DatasetStats {
        let n_users = self.users.len() as u64;
        let n_items = self.items.len() as u64;
        let n_interactions = self.n_interactions() as u64;
        let tokens: usize = self.items.iter().map(|i| i.tokens.len()).sum();
        let avg_l_t = if n_items == 0 {
            0.0
        } else {
            tokens as f64 / n_items as f64
        };
        DatasetStats::from_counts(n_users, n_items, n_interactions, avg_l_t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: u64,
    pub n_items: u64,
    pub n_interactions: u64,
    pub avg_l_t: f64,
    #[serde(rename = "avg_l_I")]
    pub avg_l_i: f64,
    pub epoch_boost_ratio: f64,
}

impl DatasetStats {
    pub fn from_counts(n_users: u64, n_items: u64, n_interactions: u64, avg_l_t: f64) -> Self {
        let avg_l_i = if n_users == 0 {
            0.0
        } else {
            n_interactions as f64 / n_users as f64
        };
        let mut s = Self {
            n_users,
            n_items,
            n_interactions,
            avg_l_t,
            avg_l_i,
            epoch_boost_ratio: 0.0,
        };
        s.epoch_boost_ratio = epoch_boost_ratio(&s);
        s
    }
}

/// Published or externally computed dataset totals, used when the raw files
/// are unavailable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    #[serde(default)]
    pub name: Option<String>,
    pub n_users: u64,
    pub n_items: u64,
    pub n_interactions: u64,
    #[serde(default)]
    pub avg_l_t: f64,
}

impl DatasetMetadata {
    pub fn stats(&self) -> DatasetStats {
        DatasetStats::from_counts(
            self.n_users,
            self.n_items,
            self.n_interactions,
            self.avg_l_t,
        )
    }
}

/// Interactions per unique item, exact and as a float.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoostRatio {
    pub exact: Ratio<u64>,
    pub value: f64,
}

impl BoostRatio {
    pub fn new(interactions: u64, items: u64) -> Result<Self> {
        if items == 0 {
            return Err(Error::Validation("boost ratio of an empty batch".into()));
        }
        Ok(Self {
            exact: Ratio::new(interactions, items),
            value: interactions as f64 / items as f64,
        })
    }
}

/// `#interactions(B) / #items(B)` for one mini-batch.
pub fn boost_ratio(batch: &Batch) -> Result<BoostRatio> {
    BoostRatio::new(
        batch.n_interactions() as u64,
        batch.unique_items.len() as u64,
    )
}

/// Total interactions over total items.
pub fn epoch_boost_ratio(stats: &DatasetStats) -> f64 {
    if stats.n_items == 0 {
        return 0.0;
    }
    stats.n_interactions as f64 / stats.n_items as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: UserId, items: &[ItemId]) -> UserSequence {
        UserSequence {
            user_id: id,
            interactions: items.iter().map(|&i| (i, (i % 2) as u8)).collect(),
        }
    }

    #[test]
    fn figure_one_batch_ratio() {
        let b = Batch::new(vec![
            user(0, &[0, 1, 2, 3]),
            user(1, &[1, 2, 4, 1]),
            user(2, &[0, 3, 4, 2]),
        ]);
        let r = boost_ratio(&b).unwrap();
        assert_eq!(r.exact, Ratio::new(12, 5));
        assert_eq!(r.value, 2.4);
    }

    #[test]
    fn all_distinct_is_one_and_repeat_is_k() {
        let b = Batch::new(vec![user(0, &[0, 1, 2]), user(1, &[3, 4])]);
        assert_eq!(boost_ratio(&b).unwrap().exact, Ratio::from_integer(1));
        let b = Batch::new(vec![user(0, &[7; 6])]);
        assert_eq!(boost_ratio(&b).unwrap().value, 6.0);
    }

    #[test]
    fn empty_batch_is_error() {
        assert!(boost_ratio(&Batch::new(vec![])).is_err());
    }

    #[test]
    fn published_epoch_ratios() {
        let cases = [
            (3_760_125u64, 104_150u64, "36.10"),
            (94_264_845, 9_336, "10096.9"),
            (279_747, 4_628, "60.45"),
        ];
        for (inter, items, expect) in cases {
            let s = DatasetStats::from_counts(1, items, inter, 0.0);
            let decimals = expect.len() - expect.find('.').unwrap() - 1;
            assert_eq!(format!("{:.*}", decimals, s.epoch_boost_ratio), expect);
        }
    }

    #[test]
    fn unknown_item_rejected() {
        let items = vec![Item {
            item_id: 0,
            tokens: vec![1],
        }];
        assert!(Dataset::new(items, vec![user(0, &[0, 1])]).is_err());
    }

    #[test]
    fn duplicate_item_rejected() {
        let items = vec![
            Item {
                item_id: 0,
                tokens: vec![1],
            },
            Item {
                item_id: 0,
                tokens: vec![2],
            },
        ];
        assert!(Dataset::new(items, vec![]).is_err());
    }
}
