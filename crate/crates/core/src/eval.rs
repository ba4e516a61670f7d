//! Link-level, structure-level and significance metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{shape_stats, ArgTree, DepthCategory, QactLabel, ShapeStats};

fn check_aligned(pred: &[ArgTree], gold: &[ArgTree]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Argument(format!(
            "{} predicted essays vs {} gold essays",
            pred.len(),
            gold.len()
        )));
    }
    for (k, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.n() != g.n() {
            return Err(Error::Argument(format!(
                "essay {k}: {} predicted nodes vs {} gold nodes",
                p.n(),
                g.n()
            )));
        }
    }
    Ok(())
}

/// Per-class F1 over `(pred, gold)` label pairs. Classes seen on either side
/// are reported; `F1 = 2TP / (|pred = c| + |gold = c|)`, so a class never
/// predicted but present in gold scores 0.
pub fn per_class_f1<L, I>(pairs: I) -> BTreeMap<L, f64>
where
    L: Ord + Clone,
    I: IntoIterator<Item = (L, L)>,
{
    let mut counts: BTreeMap<L, (usize, usize, usize)> = BTreeMap::new();
    for (p, g) in pairs {
        if p == g {
            counts.entry(p.clone()).or_default().0 += 1;
        }
        counts.entry(p).or_default().1 += 1;
        counts.entry(g).or_default().2 += 1;
    }
    counts
        .into_iter()
        .map(|(label, (tp, np, ng))| (label, 2.0 * tp as f64 / (np + ng) as f64))
        .collect()
}

fn macro_mean<L>(f1: &BTreeMap<L, f64>) -> f64 {
    if f1.is_empty() {
        return 0.0;
    }
    f1.values().sum::<f64>() / f1.len() as f64
}

/// Fraction of all sentences whose predicted head equals the gold head.
pub fn link_accuracy(pred: &[ArgTree], gold: &[ArgTree]) -> Result<f64> {
    check_aligned(pred, gold)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gold) {
        hit += p.heads().iter().zip(g.heads()).filter(|(a, b)| a == b).count();
        total += g.n();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

fn distance_pairs<'a>(
    pred: &'a [ArgTree],
    gold: &'a [ArgTree],
) -> impl Iterator<Item = (i64, i64)> + 'a {
    pred.iter().zip(gold).flat_map(|(p, g)| {
        p.heads_to_distances()
            .into_iter()
            .zip(g.heads_to_distances())
    })
}

pub fn distance_class_f1(pred: &[ArgTree], gold: &[ArgTree]) -> Result<BTreeMap<i64, f64>> {
    check_aligned(pred, gold)?;
    Ok(per_class_f1(distance_pairs(pred, gold)))
}

/// Macro-averaged F1 over the distance values occurring in gold or pred.
pub fn f1_macro_distance(pred: &[ArgTree], gold: &[ArgTree]) -> Result<f64> {
    Ok(macro_mean(&distance_class_f1(pred, gold)?))
}

/// Named union of inclusive distance ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBucket {
    pub name: String,
    pub ranges: Vec<(i64, i64)>,
}

impl DistanceBucket {
    pub fn new(name: impl Into<String>, ranges: Vec<(i64, i64)>) -> Self {
        DistanceBucket {
            name: name.into(),
            ranges,
        }
    }

    pub fn contains(&self, d: i64) -> bool {
        self.ranges.iter().any(|&(lo, hi)| lo <= d && d <= hi)
    }
}

/// Self-loops, adjacent, short (2..4 either way), long backward, long forward.
pub fn analysis_buckets() -> Vec<DistanceBucket> {
    vec![
        DistanceBucket::new("self", vec![(0, 0)]),
        DistanceBucket::new("adjacent", vec![(-1, -1), (1, 1)]),
        DistanceBucket::new("short", vec![(-4, -2), (2, 4)]),
        DistanceBucket::new("long_backward", vec![(i64::MIN, -5)]),
        DistanceBucket::new("long_forward", vec![(5, i64::MAX)]),
    ]
}

fn check_buckets(buckets: &[DistanceBucket]) -> Result<()> {
    let mut ranges: Vec<(i64, i64, &str)> = Vec::new();
    for b in buckets {
        for &(lo, hi) in &b.ranges {
            if lo > hi {
                return Err(Error::Config(format!("bucket {}: empty range {lo}..={hi}", b.name)));
            }
            ranges.push((lo, hi, &b.name));
        }
    }
    ranges.sort();
    for w in ranges.windows(2) {
        if w[1].0 <= w[0].1 {
            return Err(Error::Config(format!(
                "buckets {} and {} overlap",
                w[0].2, w[1].2
            )));
        }
    }
    Ok(())
}

/// F1 per distance bucket. A node counts as a true positive when its
/// predicted head is correct and its gold distance falls in the bucket;
/// buckets with neither gold nor predicted members are left out.
pub fn per_distance_f1(
    pred: &[ArgTree],
    gold: &[ArgTree],
    buckets: &[DistanceBucket],
) -> Result<BTreeMap<String, f64>> {
    check_aligned(pred, gold)?;
    check_buckets(buckets)?;
    let mut out = BTreeMap::new();
    for b in buckets {
        let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
        for (p, g) in distance_pairs(pred, gold) {
            let (ip, ig) = (b.contains(p), b.contains(g));
            np += ip as usize;
            ng += ig as usize;
            tp += (ig && p == g) as usize;
        }
        if np + ng > 0 {
            out.insert(b.name.clone(), 2.0 * tp as f64 / (np + ng) as f64);
        }
    }
    Ok(out)
}

pub fn per_depth_f1(pred: &[ArgTree], gold: &[ArgTree]) -> Result<BTreeMap<DepthCategory, f64>> {
    check_aligned(pred, gold)?;
    Ok(per_class_f1(pred.iter().zip(gold).flat_map(|(p, g)| {
        p.node_depths().into_iter().zip(g.node_depths())
    })))
}

/// Per-node agreement vector: 1 when both trees give the node the same
/// descendant set, or when the node is non-argumentative in both.
pub fn mar_dset_vector(pred: &ArgTree, gold: &ArgTree) -> Result<Vec<u8>> {
    if pred.n() != gold.n() {
        return Err(Error::Argument(format!(
            "{} predicted nodes vs {} gold nodes",
            pred.n(),
            gold.n()
        )));
    }
    let (ps, gs) = (pred.descendant_sets(), gold.descendant_sets());
    Ok((0..pred.n())
        .map(|i| {
            let (pn, gn) = (pred.is_non_ac(i), gold.is_non_ac(i));
            let hit = if pn || gn { pn && gn } else { ps[i] == gs[i] };
            hit as u8
        })
        .collect())
}

pub fn mar_dset(pred: &ArgTree, gold: &ArgTree) -> Result<f64> {
    let v = mar_dset_vector(pred, gold)?;
    if v.is_empty() {
        return Ok(1.0);
    }
    Ok(v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64)
}

/// Mean of per-essay MAR-dSet scores.
pub fn corpus_mar_dset(pred: &[ArgTree], gold: &[ArgTree]) -> Result<f64> {
    check_aligned(pred, gold)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        total += mar_dset(p, g)?;
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QactReport {
    pub per_label: BTreeMap<QactLabel, f64>,
    pub macro_f1: f64,
}

/// QACT F1 with both label sequences read off the tree topologies.
pub fn qact_eval(pred: &[ArgTree], gold: &[ArgTree]) -> Result<QactReport> {
    check_aligned(pred, gold)?;
    let per_label = per_class_f1(pred.iter().zip(gold).flat_map(|(p, g)| {
        p.derive_qact().into_iter().zip(g.derive_qact())
    }));
    Ok(QactReport {
        macro_f1: macro_mean(&per_label),
        per_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_essays: usize,
    pub n_sentences: usize,
    pub accuracy: f64,
    pub f1_macro: f64,
    pub per_distance_f1: BTreeMap<i64, f64>,
    pub distance_range_f1: BTreeMap<String, f64>,
    pub per_depth_f1: BTreeMap<DepthCategory, f64>,
    pub mar_dset: f64,
    pub qact: QactReport,
    pub shape: ShapeStats,
    pub gold_shape: ShapeStats,
}

pub fn evaluate(pred: &[ArgTree], gold: &[ArgTree]) -> Result<EvalReport> {
    check_aligned(pred, gold)?;
    if gold.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    Ok(EvalReport {
        n_essays: gold.len(),
        n_sentences: gold.iter().map(ArgTree::n).sum(),
        accuracy: link_accuracy(pred, gold)?,
        f1_macro: f1_macro_distance(pred, gold)?,
        per_distance_f1: distance_class_f1(pred, gold)?,
        distance_range_f1: per_distance_f1(pred, gold, &analysis_buckets())?,
        per_depth_f1: per_depth_f1(pred, gold)?,
        mar_dset: corpus_mar_dset(pred, gold)?,
        qact: qact_eval(pred, gold)?,
        shape: shape_stats(pred)?,
        gold_shape: shape_stats(gold)?,
    })
}

/// Per-run scores of one system on one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub metric: String,
    pub scores: Vec<f64>,
}

impl RunSeries {
    pub fn new(metric: impl Into<String>, scores: Vec<f64>) -> Self {
        RunSeries {
            metric: metric.into(),
            scores,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub significant: bool,
    pub exact: bool,
}

/// Two-sided paired sign-flip permutation test on the per-run differences.
///
/// The statistic is `|sum(a_k - b_k)|`. All `2^n` sign patterns are
/// enumerated when that count is at most `resamples`; otherwise `resamples`
/// seeded random patterns are drawn and `p = (hits + 1) / (resamples + 1)`.
pub fn permutation_test(
    a: &RunSeries,
    b: &RunSeries,
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> Result<PermutationResult> {
    let n = a.scores.len();
    if n != b.scores.len() {
        return Err(Error::Argument(format!(
            "paired series differ in length: {n} vs {}",
            b.scores.len()
        )));
    }
    if n < 2 {
        return Err(Error::Argument("permutation test needs at least two runs".into()));
    }
    let diffs: Vec<f64> = a.scores.iter().zip(&b.scores).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>().abs();
    let tol = 1e-12 * diffs.iter().map(|d| d.abs()).sum::<f64>().max(1.0);
    let extreme = |s: f64| s.abs() >= observed - tol;

    let exact = n < 63 && (1u64 << n) <= resamples as u64;
    let p_value = if exact {
        let total = 1u64 << n;
        let hits = (0..total)
            .filter(|mask| {
                let s: f64 = diffs
                    .iter()
                    .enumerate()
                    .map(|(k, d)| if mask >> k & 1 == 1 { -d } else { *d })
                    .sum();
                extreme(s)
            })
            .count();
        hits as f64 / total as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..resamples {
            let s: f64 = diffs
                .iter()
                .map(|d| if rng.gen::<bool>() { -d } else { *d })
                .sum();
            hits += extreme(s) as usize;
        }
        (hits + 1) as f64 / (resamples + 1) as f64
    };
    Ok(PermutationResult {
        p_value,
        significant: p_value < alpha,
        exact,
    })
}
