use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::dataset::ItemId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry<T> {
    /// Encoding the CF saw most recently (fresh CE output or carried value).
    pub h: Tensor<T>,
    /// Pseudo-target: the first encoding minus every gradient applied since.
    pub h_tilde: Tensor<T>,
    /// Clock value of the step that inserted the entry.
    pub first_step: u64,
    pub touch_count: u32,
}

/// Per-item pseudo-targets accumulated over one window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoTargetCache<T> {
    entries: BTreeMap<ItemId, CacheEntry<T>>,
}

impl<T: Scalar> PseudoTargetCache<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item: ItemId) -> Option<&CacheEntry<T>> {
        self.entries.get(&item)
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.entries.contains_key(&item)
    }

    /// Entries in item order.
    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &CacheEntry<T>)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// Insert a freshly encoded item; its pseudo-target starts at `h`.
    pub fn insert(&mut self, item: ItemId, h: Tensor<T>, step: u64) {
        let h_tilde = h.clone();
        self.entries.insert(
            item,
            CacheEntry {
                h,
                h_tilde,
                first_step: step,
                touch_count: 0,
            },
        );
    }

    /// `h_tilde <- h_tilde - grad` and record `h` as the encoding used.
    pub fn apply_gradient(&mut self, item: ItemId, h: Tensor<T>, grad: &Tensor<T>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(&item)
            .ok_or_else(|| Error::State(format!("item {item} is not cached")))?;
        if grad.shape() != entry.h_tilde.shape() {
            return Err(Error::shape(
                "pseudo-target",
                format!("{:?} vs {:?}", grad.shape(), entry.h_tilde.shape()),
            ));
        }
        for (t, &g) in entry.h_tilde.data_mut().iter_mut().zip(grad.data()) {
            *t -= g;
        }
        if !entry.h_tilde.is_finite() {
            return Err(Error::NonFinite(format!("pseudo-target of item {item}")));
        }
        entry.h = h;
        entry.touch_count += 1;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
