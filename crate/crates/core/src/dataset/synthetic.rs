//! Latent-skill synthetic corpus in which item content carries the signal
//! needed to predict responses.
//!
//! Each item has a topic and a difficulty. Its tokens come mostly from a
//! window inside the topic's vocabulary block whose position tracks the
//! item's difficulty rank, so tokens reveal both. Each user has a global
//! ability plus a per-topic offset; responses are Bernoulli draws of
//! `sigmoid(ability[u, topic] - difficulty)`, then flipped with probability
//! `noise`. Item popularity is Zipf-distributed over a random ranking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::dataset::{Dataset, Item, ItemId, UserSequence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub vocab: usize,
    /// Inclusive range of interactions per user.
    pub seq_len_range: [usize; 2],
    /// Inclusive range of tokens per item.
    pub token_len_range: [usize; 2],
    /// Label flip probability.
    pub noise: f64,
    pub zipf_exponent: f64,
    pub ability_scale: f64,
    pub topic_scale: f64,
    pub difficulty_scale: f64,
    /// Probability that a token is drawn from the difficulty window rather
    /// than uniformly from the topic block.
    pub content_signal: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 80,
            n_topics: 10,
            vocab: 200,
            seq_len_range: [10, 40],
            token_len_range: [4, 12],
            noise: 0.1,
            zipf_exponent: 1.0,
            ability_scale: 1.5,
            topic_scale: 0.5,
            difficulty_scale: 3.0,
            content_signal: 0.85,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users == 0 || self.n_items == 0 || self.n_topics == 0 {
            return bad("synthetic sizes must be positive".into());
        }
        if self.n_topics > self.vocab {
            return bad(format!(
                "{} topics cannot partition a vocabulary of {}",
                self.n_topics, self.vocab
            ));
        }
        let [lo, hi] = self.seq_len_range;
        if lo < 2 || lo > hi {
            return bad(format!(
                "seq_len_range {lo}..={hi} must satisfy 2 <= lo <= hi"
            ));
        }
        let [lo, hi] = self.token_len_range;
        if lo < 1 || lo > hi {
            return bad(format!(
                "token_len_range {lo}..={hi} must satisfy 1 <= lo <= hi"
            ));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 0.5]", self.noise));
        }
        if !(0.0..=1.0).contains(&self.content_signal) {
            return bad(format!(
                "content_signal {} outside [0, 1]",
                self.content_signal
            ));
        }
        if self.zipf_exponent < 0.0
            || self.ability_scale < 0.0
            || self.topic_scale < 0.0
            || self.difficulty_scale < 0.0
        {
            return bad("scales and exponent must be non-negative".into());
        }
        Ok(())
    }
}

/// Ground-truth generative parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub item_topic: Vec<usize>,
    pub item_difficulty: Vec<f64>,
    /// `[user][topic]` ability, indexed by user id.
    pub ability: Vec<Vec<f64>>,
}

impl Latents {
    /// Clean response probability, before label noise.
    pub fn probability(&self, user: usize, item: ItemId) -> f64 {
        let i = item as usize;
        sigmoid(self.ability[user][self.item_topic[i]] - self.item_difficulty[i])
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub latents: Latents,
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Synthetic> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = cfg.vocab / cfg.n_topics;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let item_topic: Vec<usize> = (0..cfg.n_items)
        .map(|_| rng.random_range(0..cfg.n_topics))
        .collect();
    let item_difficulty: Vec<f64> = (0..cfg.n_items)
        .map(|_| cfg.difficulty_scale * std_normal.sample(&mut rng))
        .collect();

    let mut by_difficulty: Vec<usize> = (0..cfg.n_items).collect();
    by_difficulty.sort_by(|&a, &b| item_difficulty[a].total_cmp(&item_difficulty[b]));
    let mut rank = vec![0usize; cfg.n_items];
    for (r, &i) in by_difficulty.iter().enumerate() {
        rank[i] = r;
    }

    let window = (block / 8).max(1);
    let items: Vec<Item> = (0..cfg.n_items)
        .map(|i| {
            let start = item_topic[i] * block;
            let q = if cfg.n_items > 1 {
                rank[i] as f64 / (cfg.n_items - 1) as f64
            } else {
                0.5
            };
            let centre = start + (q * (block - 1) as f64).round() as usize;
            let lo = centre.saturating_sub(window).max(start);
            let hi = (centre + window).min(start + block - 1);
            let len = rng.random_range(cfg.token_len_range[0]..=cfg.token_len_range[1]);
            let tokens = (0..len)
                .map(|_| {
                    if rng.random_bool(cfg.content_signal) {
                        rng.random_range(lo..=hi)
                    } else {
                        rng.random_range(start..start + block)
                    }
                })
                .collect();
            Item {
                item_id: i as ItemId,
                tokens,
            }
        })
        .collect();

    let ability: Vec<Vec<f64>> = (0..cfg.n_users)
        .map(|_| {
            let global = cfg.ability_scale * std_normal.sample(&mut rng);
            (0..cfg.n_topics)
                .map(|_| global + cfg.topic_scale * std_normal.sample(&mut rng))
                .collect()
        })
        .collect();

    let mut popularity: Vec<usize> = (0..cfg.n_items).collect();
    popularity.shuffle(&mut rng);
    let zipf = Zipf::new(cfg.n_items as f64, cfg.zipf_exponent)
        .map_err(|e| Error::Config(format!("zipf: {e}")))?;

    let latents = Latents {
        item_topic,
        item_difficulty,
        ability,
    };
    let users = (0..cfg.n_users)
        .map(|u| {
            let len = rng.random_range(cfg.seq_len_range[0]..=cfg.seq_len_range[1]);
            let interactions = (0..len)
                .map(|_| {
                    let k = zipf.sample(&mut rng) as usize - 1;
                    let item = popularity[k.min(cfg.n_items - 1)] as ItemId;
                    let mut r = rng.random_bool(latents.probability(u, item));
                    if rng.random_bool(cfg.noise) {
                        r = !r;
                    }
                    (item, r as u8)
                })
                .collect();
            UserSequence {
                user_id: u as u32,
                interactions,
            }
        })
        .collect();

    Ok(Synthetic {
        dataset: Dataset::new(items, users)?,
        latents,
    })
}
