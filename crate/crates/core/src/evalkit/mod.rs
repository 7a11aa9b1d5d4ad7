//! Leave-one-out ranking metrics and cohort-sliced reports.
//!
//! Every user's most recent item is held out; the model scores the
//! full vocabulary from the window before it and the target's rank
//! drives HR@N and NDCG@N. Reports slice users five ways: everyone,
//! existing (seen in training) vs new, and head vs tail by activity.

use std::collections::BTreeMap;

use crate::autodiff::{BoundParams, Graph, ParamSet};
use crate::dataio::{eval_window, head_tail_label, train_prefix, DatasetBundle};
use crate::encoders::{score_all, Encoder, SequenceEncoder};
use crate::error::{Error, Result};

pub mod probe;

/// Rank of one user's held-out target, 1-based over the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub user: u32,
    pub rank: usize,
}

/// Rank of `target` within `scores`, where `scores[i]` belongs to item
/// `i + 1` (index 0 is padding and never scored). Rank counts items
/// scoring strictly higher, plus equal-scoring items with a smaller
/// index so ties break deterministically.
pub fn rank_target(scores: &[f64], target: u32) -> Result<usize> {
    if target == 0 || target as usize > scores.len() {
        return Err(Error::ItemOutOfRange { index: target, vocab: scores.len() as u32 });
    }
    let t = target as usize - 1;
    let s = scores[t];
    let mut rank = 1usize;
    for (i, &v) in scores.iter().enumerate() {
        if v > s || (v == s && i < t) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Fraction of ranks within the top `n`.
pub fn hit_ratio(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64
}

/// Position-discounted hit rate: each hit contributes
/// 1 / log2(rank + 1).
pub fn ndcg(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let sum: f64 = ranks
        .iter()
        .map(|&r| if r <= n { 1.0 / ((r as f64 + 1.0).log2()) } else { 0.0 })
        .sum();
    sum / ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cohort {
    All,
    Existing,
    New,
    Head,
    Tail,
}

impl Cohort {
    pub const ORDER: [Cohort; 5] = [Cohort::All, Cohort::Existing, Cohort::New, Cohort::Head, Cohort::Tail];
}

impl std::fmt::Display for Cohort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Cohort::All => "all",
            Cohort::Existing => "existing",
            Cohort::New => "new",
            Cohort::Head => "head",
            Cohort::Tail => "tail",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub cohort: Cohort,
    pub cutoff: usize,
    /// "hr" or "ndcg".
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortReport {
    pub rows: Vec<ReportRow>,
    /// Cohorts skipped for being empty.
    pub warnings: Vec<String>,
}

impl CohortReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("cohort,cutoff,metric,mean,std,n\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6e},{:.6e},{}\n",
                r.cohort, r.cutoff, r.metric, r.mean, r.std, r.n
            ));
        }
        out
    }

    /// Fixed-width table for terminal output; same numbers as the CSV.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>6} {:>7} {:>12} {:>12} {:>6}\n",
            "cohort", "cutoff", "metric", "mean", "std", "n"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>6} {:>7} {:>12.6} {:>12.6} {:>6}\n",
                r.cohort.to_string(),
                r.cutoff,
                r.metric,
                r.mean,
                r.std,
                r.n
            ));
        }
        out
    }

    pub fn get(&self, cohort: Cohort, cutoff: usize, metric: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.cohort == cohort && r.cutoff == cutoff && r.metric == metric)
    }
}

fn cap_threads(jobs: usize, env_cap: Option<usize>) -> usize {
    let hw = std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1);
    env_cap.filter(|&v| v >= 1).unwrap_or(hw).min(jobs).max(1)
}

fn thread_count(jobs: usize) -> usize {
    let env_cap = std::env::var("LT_THREADS").ok().and_then(|s| s.parse::<usize>().ok());
    cap_threads(jobs, env_cap)
}

fn rank_one(
    encoder: &Encoder,
    params: &ParamSet,
    bundle: &DatasetBundle,
    user: u32,
    window: usize,
) -> Result<RankResult> {
    let seq = &bundle.dataset.sequences[user as usize];
    let (win, target) = eval_window(seq, window);
    let mut g = Graph::new();
    let bound = BoundParams::bind_frozen(&mut g, params);
    let repr = encoder.encode(&mut g, &bound, &[win])?;
    let scores = score_all(params.get("enc.emb")?, g.value(repr).values());
    let rank = rank_target(&scores, target)?;
    Ok(RankResult { user, rank })
}

/// Rank the held-out target of each listed user. Work is split over
/// threads (capped by the LT_THREADS env var) in contiguous chunks and
/// reassembled in input order, so the result never depends on the
/// schedule.
pub fn rank_users(
    encoder: &Encoder,
    params: &ParamSet,
    bundle: &DatasetBundle,
    users: &[u32],
    window: usize,
) -> Result<Vec<RankResult>> {
    rank_users_with_threads(encoder, params, bundle, users, window, thread_count(users.len()))
}

fn rank_users_with_threads(
    encoder: &Encoder,
    params: &ParamSet,
    bundle: &DatasetBundle,
    users: &[u32],
    window: usize,
    threads: usize,
) -> Result<Vec<RankResult>> {
    if users.is_empty() {
        return Ok(Vec::new());
    }
    let threads = threads.min(users.len()).max(1);
    if threads <= 1 {
        return users.iter().map(|&u| rank_one(encoder, params, bundle, u, window)).collect();
    }
    let chunk = users.len().div_ceil(threads);
    let mut per_chunk: Vec<Result<Vec<RankResult>>> = Vec::new();
    std::thread::scope(|s| {
        let handles: Vec<_> = users
            .chunks(chunk)
            .map(|us| {
                s.spawn(move || {
                    us.iter()
                        .map(|&u| rank_one(encoder, params, bundle, u, window))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            per_chunk.push(h.join().expect("ranking thread panicked"));
        }
    });
    let mut out = Vec::with_capacity(users.len());
    for r in per_chunk {
        out.extend(r?);
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Users that can actually be evaluated: those with at least one
/// interaction left after holding out the target.
fn evaluable(bundle: &DatasetBundle, users: &[u32]) -> Vec<u32> {
    users
        .iter()
        .copied()
        .filter(|&u| !train_prefix(&bundle.dataset.sequences[u as usize]).is_empty())
        .collect()
}

/// Full evaluation pass.
///
/// Head/tail labels for existing users come from the bundle; new users
/// get the same top-fraction rule applied within their own cohort, so
/// "head" always means "most active relative to peers the model treats
/// alike". With full-vocabulary ranking there is no sampling noise, so
/// the repetition axis collapses: `repetitions` records intent in the
/// report (std over identical values is zero) and cross-run variance
/// comes from training seeds, aggregated via [`merge_reports`].
pub fn evaluate(
    encoder: &Encoder,
    params: &ParamSet,
    bundle: &DatasetBundle,
    window: usize,
    cutoffs: &[usize],
    repetitions: usize,
    head_frac: f64,
) -> Result<CohortReport> {
    if repetitions < 1 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoff list must be non-empty and positive".into()));
    }
    let existing = evaluable(bundle, &bundle.split.train_users);
    let new = evaluable(bundle, &bundle.split.test_users);
    let mut labels: BTreeMap<u32, bool> = BTreeMap::new();
    for &u in &existing {
        labels.insert(u, *bundle.head.get(&u).ok_or_else(|| {
            Error::Incompatible(format!("training user {u} has no head/tail label"))
        })?);
    }
    if !new.is_empty() {
        let counts: Vec<usize> =
            new.iter().map(|&u| train_prefix(&bundle.dataset.sequences[u as usize]).len()).collect();
        labels.extend(head_tail_label(&new, &counts, head_frac));
    }

    let mut all_users = existing.clone();
    all_users.extend(&new);
    let ranked = rank_users(encoder, params, bundle, &all_users, window)?;
    let rank_of: BTreeMap<u32, usize> = ranked.iter().map(|r| (r.user, r.rank)).collect();

    let members = |cohort: Cohort| -> Vec<u32> {
        match cohort {
            Cohort::All => all_users.clone(),
            Cohort::Existing => existing.clone(),
            Cohort::New => new.clone(),
            Cohort::Head => all_users.iter().copied().filter(|u| labels[u]).collect(),
            Cohort::Tail => all_users.iter().copied().filter(|u| !labels[u]).collect(),
        }
    };

    let mut report = CohortReport::default();
    for cohort in Cohort::ORDER {
        let users = members(cohort);
        if users.is_empty() {
            report.warnings.push(format!("cohort {cohort} is empty; omitted"));
            continue;
        }
        let ranks: Vec<usize> = users.iter().map(|u| rank_of[u]).collect();
        for &cutoff in cutoffs {
            for (metric, value) in
                [("hr", hit_ratio(&ranks, cutoff)), ("ndcg", ndcg(&ranks, cutoff))]
            {
                report.rows.push(ReportRow {
                    cohort,
                    cutoff,
                    metric,
                    mean: value,
                    std: 0.0,
                    n: users.len(),
                });
            }
        }
    }
    Ok(report)
}

/// Combine reports from runs that differ only in training seed: mean
/// of the per-run means, population std across runs. Row sets must
/// match.
pub fn merge_reports(reports: &[CohortReport]) -> Result<CohortReport> {
    let first = reports.first().ok_or_else(|| Error::Config("no reports to merge".into()))?;
    let mut merged = CohortReport::default();
    for (i, row) in first.rows.iter().enumerate() {
        let mut values = Vec::with_capacity(reports.len());
        for rep in reports {
            let other = rep.rows.get(i).ok_or_else(|| {
                Error::Incompatible("reports have different row counts".into())
            })?;
            if (other.cohort, other.cutoff, other.metric) != (row.cohort, row.cutoff, row.metric) {
                return Err(Error::Incompatible(format!(
                    "report rows disagree: {}/{}/{} vs {}/{}/{}",
                    row.cohort, row.cutoff, row.metric, other.cohort, other.cutoff, other.metric
                )));
            }
            values.push(other.mean);
        }
        let (mean, std) = mean_std(&values);
        merged.rows.push(ReportRow { mean, std, ..*row });
    }
    Ok(merged)
}
