//! Data ingestion and task construction.
//!
//! Pipeline: parse a TSV of (user, item, timestamp) rows, filter rare
//! items then short users (one pass, deliberately no fixpoint), assign
//! dense indices, split users into existing/new, hold out each user's
//! last item, label existing users head/tail by training interaction
//! count, and expand training prefixes into fixed-length windows.
//!
//! Item index 0 is reserved for padding; real items are 1..=vocab.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::seed_for;
use crate::error::{Error, Result};

pub mod cache;
pub mod synth;

/// One row of the raw interaction log, ids still in source form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

/// Parse TSV text: three tab-separated columns (user, item, timestamp).
/// Empty lines and lines starting with `#` are skipped. Errors carry
/// 1-based line numbers.
pub fn parse_interactions(text: &str) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse { line: i + 1, msg: "empty user or item id".into() });
        }
        let ts: i64 = fields[2].parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("timestamp {:?} is not an integer", fields[2]),
        })?;
        out.push(RawInteraction { user: fields[0].to_string(), item: fields[1].to_string(), ts });
    }
    Ok(out)
}

/// Indexed interaction data. `sequences[u]` is user `u`'s items in
/// time order; `item_names[i]` is the source id of item `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub sequences: Vec<Vec<u32>>,
    pub user_names: Vec<String>,
    pub item_names: Vec<String>,
}

impl Dataset {
    pub fn vocab(&self) -> u32 {
        self.item_names.len() as u32
    }

    pub fn users(&self) -> u32 {
        self.sequences.len() as u32
    }
}

/// Filter and index raw interactions.
///
/// Items with fewer than `min_item` rows are dropped first; users left
/// with fewer than `min_user` rows are dropped second. The two passes
/// run exactly once: a user removal may push an item back under the
/// threshold and such items survive. Within a user, rows sort by
/// timestamp with file order breaking ties. Indices are assigned in
/// lexicographic source-id order, items starting at 1 (0 is padding).
pub fn preprocess(raw: &[RawInteraction], min_item: usize, min_user: usize) -> Result<Dataset> {
    let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in raw {
        *item_counts.entry(&r.item).or_default() += 1;
    }
    let kept: Vec<(usize, &RawInteraction)> = raw
        .iter()
        .enumerate()
        .filter(|(_, r)| item_counts[r.item.as_str()] >= min_item)
        .collect();

    let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, r) in &kept {
        *user_counts.entry(&r.user).or_default() += 1;
    }
    let kept: Vec<(usize, &RawInteraction)> =
        kept.into_iter().filter(|(_, r)| user_counts[r.user.as_str()] >= min_user).collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut item_names: Vec<String> = Vec::new();
    let mut user_names: Vec<String> = Vec::new();
    for (_, r) in &kept {
        item_names.push(r.item.clone());
        user_names.push(r.user.clone());
    }
    item_names.sort();
    item_names.dedup();
    user_names.sort();
    user_names.dedup();
    let item_index: BTreeMap<&str, u32> =
        item_names.iter().enumerate().map(|(i, name)| (name.as_str(), i as u32 + 1)).collect();
    let user_index: BTreeMap<&str, u32> =
        user_names.iter().enumerate().map(|(i, name)| (name.as_str(), i as u32)).collect();

    // (user, ts, file order, item) sorts into the final order directly.
    let mut rows: Vec<(u32, i64, usize, u32)> = kept
        .iter()
        .map(|(file_idx, r)| {
            (user_index[r.user.as_str()], r.ts, *file_idx, item_index[r.item.as_str()])
        })
        .collect();
    rows.sort();

    let mut sequences = vec![Vec::new(); user_names.len()];
    for (user, _, _, item) in rows {
        sequences[user as usize].push(item);
    }
    Ok(Dataset { sequences, user_names, item_names })
}

/// User-level split. Both sides are sorted by user index; the holdout
/// protocol is leave-one-out on every user's last item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_users: Vec<u32>,
    pub test_users: Vec<u32>,
}

/// Shuffle users with a seeded generator and take round(frac * n) as
/// training ("existing") users; the rest are held-out ("new") users.
pub fn split_users(dataset: &Dataset, frac: f64, seed: u64) -> Result<Split> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::Config(format!("train fraction {frac} outside [0, 1]")));
    }
    let n = dataset.sequences.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, "split"));
    // Fisher-Yates, explicit so the byte layout of the shuffle never
    // depends on a library's internal implementation choices.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let cut = (frac * n as f64).round() as usize;
    let mut train_users: Vec<u32> = order[..cut].to_vec();
    let mut test_users: Vec<u32> = order[cut..].to_vec();
    train_users.sort_unstable();
    test_users.sort_unstable();
    Ok(Split { train_users, test_users })
}

/// Training prefix: everything except the held-out last item.
pub fn train_prefix(seq: &[u32]) -> &[u32] {
    &seq[..seq.len().saturating_sub(1)]
}

/// Label the top ceil(frac * n) users of `users` as head, ranked by
/// `counts` descending with lower user index winning ties.
pub fn head_tail_label(users: &[u32], counts: &[usize], frac: f64) -> BTreeMap<u32, bool> {
    debug_assert_eq!(users.len(), counts.len());
    let mut ranked: Vec<(usize, u32)> = users.iter().copied().zip(counts).map(|(u, &c)| (c, u)).collect();
    // Count descending, then user index ascending.
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let n_head = ((frac * users.len() as f64).ceil() as usize).min(users.len());
    let mut out = BTreeMap::new();
    for (rank, (_, user)) in ranked.into_iter().enumerate() {
        out.insert(user, rank < n_head);
    }
    out
}

/// One training example: a fixed-length, left-padded window and the
/// item that follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub window: Vec<u32>,
    pub target: u32,
}

/// Left-pad `items` with zeros to length `window`.
pub fn pad_window(items: &[u32], window: usize) -> Vec<u32> {
    debug_assert!(items.len() <= window);
    let mut out = vec![0u32; window - items.len()];
    out.extend_from_slice(items);
    out
}

/// Expand one training prefix into tasks.
///
/// Prefixes longer than the window yield only full windows: targets at
/// positions window+1 ..= len (1-based), each predicted from the window
/// items before it. Prefixes that fit inside the window yield padded
/// windows for every target position from 2 on.
pub fn tasks_for_prefix(prefix: &[u32], window: usize) -> Vec<Task> {
    let len = prefix.len();
    let mut out = Vec::new();
    if len > window {
        for t in (window + 1)..=len {
            out.push(Task {
                window: prefix[t - 1 - window..t - 1].to_vec(),
                target: prefix[t - 1],
            });
        }
    } else {
        for t in 2..=len {
            out.push(Task { window: pad_window(&prefix[..t - 1], window), target: prefix[t - 1] });
        }
    }
    out
}

/// The input window for evaluating a user's held-out last item.
pub fn eval_window(seq: &[u32], window: usize) -> (Vec<u32>, u32) {
    let target = *seq.last().expect("sequences are non-empty");
    let prefix = train_prefix(seq);
    let take = prefix.len().min(window);
    (pad_window(&prefix[prefix.len() - take..], window), target)
}

/// Draw `count` lists of `n` negatives, uniform with replacement over
/// the items the user never interacted with. The eligible set is
/// materialized once; if it is empty the user covers the vocabulary
/// and sampling fails.
pub fn sample_negative_lists(
    rng: &mut ChaCha8Rng,
    user: u32,
    interacted: &[u32],
    vocab: u32,
    n: usize,
    count: usize,
) -> Result<Vec<Vec<u32>>> {
    let mut seen = vec![false; vocab as usize + 1];
    for &item in interacted {
        if (item as usize) < seen.len() {
            seen[item as usize] = true;
        }
    }
    let eligible: Vec<u32> = (1..=vocab).filter(|&i| !seen[i as usize]).collect();
    if eligible.is_empty() {
        return Err(Error::NoNegatives { user });
    }
    let mut lists = Vec::with_capacity(count);
    for _ in 0..count {
        let mut negs = Vec::with_capacity(n);
        for _ in 0..n {
            negs.push(eligible[rng.random_range(0..eligible.len())]);
        }
        lists.push(negs);
    }
    Ok(lists)
}

/// Convenience wrapper for a single list.
pub fn sample_negatives(
    rng: &mut ChaCha8Rng,
    user: u32,
    interacted: &[u32],
    vocab: u32,
    n: usize,
) -> Result<Vec<u32>> {
    Ok(sample_negative_lists(rng, user, interacted, vocab, n, 1)?.pop().unwrap())
}

/// Everything the trainer and evaluator consume.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub dataset: Dataset,
    pub split: Split,
    /// Head/tail label per training user, by post-holdout count.
    pub head: BTreeMap<u32, bool>,
    /// Training tasks per training user; users whose prefix yields no
    /// window are absent.
    pub tasks: BTreeMap<u32, Vec<Task>>,
}

impl DatasetBundle {
    pub fn build(dataset: Dataset, window: usize, train_frac: f64, head_frac: f64, seed: u64) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        let split = split_users(&dataset, train_frac, seed)?;
        if split.train_users.is_empty() {
            return Err(Error::Config("split produced no training users".into()));
        }
        let counts: Vec<usize> =
            split.train_users.iter().map(|&u| train_prefix(&dataset.sequences[u as usize]).len()).collect();
        let head = head_tail_label(&split.train_users, &counts, head_frac);
        let mut tasks = BTreeMap::new();
        for &u in &split.train_users {
            let t = tasks_for_prefix(train_prefix(&dataset.sequences[u as usize]), window);
            if !t.is_empty() {
                tasks.insert(u, t);
            }
        }
        if tasks.is_empty() {
            return Err(Error::Config("no training user has enough history for a window".into()));
        }
        Ok(DatasetBundle { dataset, split, head, tasks })
    }
}
