use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArtworkRecord, CorpusError, Label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(CorpusError::InvalidSplit(format!("ratios must be positive, got {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(format!("ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Work and tile counts of one split, per class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub works_negative: usize,
    pub works_positive: usize,
    pub works_total: usize,
    pub tiles_negative: usize,
    pub tiles_positive: usize,
    pub tiles_total: usize,
}

impl SplitCounts {
    fn add(&mut self, label: Label, tiles: usize) {
        match label {
            Label::Negative => {
                self.works_negative += 1;
                self.tiles_negative += tiles;
            }
            Label::Positive => {
                self.works_positive += 1;
                self.tiles_positive += tiles;
            }
        }
        self.works_total += 1;
        self.tiles_total += tiles;
    }

    /// |positive − negative| tile imbalance.
    pub fn tile_imbalance(&self) -> usize {
        self.tiles_positive.abs_diff(self.tiles_negative)
    }
}

/// Artwork-level split assignment with the per-split summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub assignments: BTreeMap<String, Split>,
    pub summary: BTreeMap<Split, SplitCounts>,
    /// Works left out because their attribution is disputed.
    #[serde(default)]
    pub excluded: Vec<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, artwork_id: &str) -> Option<Split> {
        self.assignments.get(artwork_id).copied()
    }

    pub fn works_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, s)| **s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn counts(&self, split: Split) -> SplitCounts {
        self.summary.get(&split).copied().unwrap_or_default()
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`; ties go to the
/// earlier split.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let raw = ratios.map(|r| r * n as f64);
    let mut out = raw.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Moves one unit into `to` from the split with the most slack above `floor`.
fn borrow_one(counts: &mut [usize; 3], to: usize, floor: &[usize; 3]) -> bool {
    let from = (0..3)
        .filter(|&i| i != to && counts[i] > floor[i])
        .max_by_key(|&i| (counts[i] - floor[i], std::cmp::Reverse(i)));
    match from {
        Some(i) => {
            counts[i] -= 1;
            counts[to] += 1;
            true
        }
        None => false,
    }
}

/// Per-split work quotas `[class][split]`, with every split holding at least
/// one work of each class and the column totals matching the overall split
/// sizes.
fn work_quotas(n_neg: usize, n_pos: usize, ratios: [f64; 3]) -> Result<[[usize; 3]; 2], CorpusError> {
    let total = n_neg + n_pos;
    if n_neg < 3 || n_pos < 3 {
        return Err(CorpusError::TooFewWorks(format!(
            "each class needs at least 3 works, got {n_neg} negative and {n_pos} positive"
        )));
    }
    let mut totals = apportion(total, ratios);
    let two = [2, 2, 2];
    for s in 0..3 {
        while totals[s] < 2 {
            if !borrow_one(&mut totals, s, &two) {
                return Err(CorpusError::TooFewWorks(format!("{total} works cannot fill three splits")));
            }
        }
    }

    // apportion the smaller class, the other class fills the remainder
    let (small, n_small, n_large) = if n_neg <= n_pos { (0, n_neg, n_pos) } else { (1, n_pos, n_neg) };
    let mut q = apportion(n_small, ratios);
    let ones = [1, 1, 1];
    for s in 0..3 {
        while q[s] < 1 {
            if !borrow_one(&mut q, s, &ones) {
                return Err(CorpusError::TooFewWorks("cannot place both classes in every split".into()));
            }
        }
    }
    // leave room for at least one work of the other class
    for s in 0..3 {
        while q[s] + 1 > totals[s] {
            let to = (0..3).find(|&t| t != s && q[t] + 1 < totals[t]).ok_or_else(|| {
                CorpusError::TooFewWorks("cannot place both classes in every split".into())
            })?;
            q[s] -= 1;
            q[to] += 1;
        }
    }
    let other = [totals[0] - q[0], totals[1] - q[1], totals[2] - q[2]];
    debug_assert_eq!(other.iter().sum::<usize>(), n_large);
    Ok(if small == 0 { [q, other] } else { [other, q] })
}

/// Assigns whole artworks to train/validation/test.
///
/// Work counts per split follow `ratios` (largest remainder, at least one
/// work per class per split). Within each class, works are visited by
/// descending tile count and each goes to the split with the largest tile
/// deficit per remaining slot, which keeps every split's class tile totals
/// near their proportional targets. The seed only breaks ties between works
/// of equal size. Disputed works are excluded.
pub fn split_corpus(
    records: &[ArtworkRecord],
    tile_counts: &BTreeMap<String, usize>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, CorpusError> {
    ratios.validate()?;
    let mut excluded = Vec::new();
    let mut by_class: [Vec<(&str, usize)>; 2] = [Vec::new(), Vec::new()];
    for record in records {
        if !record.is_trainable() {
            excluded.push(record.artwork_id.clone());
            continue;
        }
        let tiles = *tile_counts.get(&record.artwork_id).ok_or_else(|| {
            CorpusError::InvalidSplit(format!("no tile count for {}", record.artwork_id))
        })?;
        if tiles == 0 {
            return Err(CorpusError::InvalidSplit(format!("{} has no tiles", record.artwork_id)));
        }
        let class = (record.label == Label::Positive) as usize;
        by_class[class].push((record.artwork_id.as_str(), tiles));
    }
    for (class, label) in [Label::Negative, Label::Positive].into_iter().enumerate() {
        if by_class[class].is_empty() {
            return Err(CorpusError::ClassMissing(label));
        }
    }
    excluded.sort();

    let ratio_arr = ratios.as_array();
    let quotas = work_quotas(by_class[0].len(), by_class[1].len(), ratio_arr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut summary: BTreeMap<Split, SplitCounts> = Split::ALL.iter().map(|s| (*s, SplitCounts::default())).collect();

    for (class, label) in [Label::Negative, Label::Positive].into_iter().enumerate() {
        let works = &mut by_class[class];
        works.sort_unstable_by(|a, b| a.0.cmp(b.0));
        works.shuffle(&mut rng);
        works.sort_by(|a, b| b.1.cmp(&a.1));

        let total_tiles: usize = works.iter().map(|w| w.1).sum();
        let targets = ratio_arr.map(|r| r * total_tiles as f64);
        let mut slots = quotas[class];
        let mut assigned = [0.0f64; 3];
        for &(id, tiles) in works.iter() {
            let s = (0..3)
                .filter(|&s| slots[s] > 0)
                .map(|s| (s, (targets[s] - assigned[s]) / slots[s] as f64))
                .fold(None::<(usize, f64)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                })
                .map(|(s, _)| s)
                .expect("quotas cover every work");
            slots[s] -= 1;
            assigned[s] += tiles as f64;
            let split = Split::ALL[s];
            assignments.insert(id.to_string(), split);
            summary.get_mut(&split).unwrap().add(label, tiles);
        }
    }
    debug_assert!(Split::ALL.iter().all(|s| summary[s].works_total > 0 && summary[s].works_total == summary[s].works_negative + summary[s].works_positive));

    Ok(SplitAssignment {
        seed,
        ratios,
        assignments,
        summary,
        excluded,
    })
}
