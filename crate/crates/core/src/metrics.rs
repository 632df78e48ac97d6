//! Ranking metrics over TREC-style runs and judgments, plus a paired
//! non-inferiority test.
//!
//! Every metric is averaged over the queries of the run. Queries with no
//! judgments contribute 0 and still count toward the mean.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use libm::{log2, pow, sqrt};

use crate::error::{Error, Result};
use crate::reuse::{sort_ranking, Ranked};
use crate::stats::student_t_cdf;

/// Graded judgments: query id → doc id → grade.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades.entry(qid.into()).or_default().insert(doc_id.into(), grade);
    }

    pub fn grade(&self, qid: &str, doc_id: &str) -> u32 {
        self.grades.get(qid).and_then(|m| m.get(doc_id)).copied().unwrap_or(0)
    }

    pub fn judged(&self, qid: &str) -> impl Iterator<Item = (&str, u32)> {
        self.grades
            .get(qid)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, g)| (d.as_str(), *g)))
    }

    pub fn relevant_count(&self, qid: &str) -> usize {
        self.judged(qid).filter(|&(_, g)| g >= 1).count()
    }
}

/// Ranked lists per query, each sorted by score descending then id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunFile {
    lists: BTreeMap<String, Vec<Ranked>>,
}

impl RunFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a query's list, sorting it. Duplicate doc ids are rejected.
    pub fn insert(&mut self, qid: impl Into<String>, mut list: Vec<Ranked>) -> Result<()> {
        let qid = qid.into();
        let mut seen = BTreeSet::new();
        for r in &list {
            if !seen.insert(r.doc_id.as_str()) {
                return Err(Error::DuplicateDoc(format!("{qid}/{}", r.doc_id)));
            }
        }
        sort_ranking(&mut list);
        self.lists.insert(qid, list);
        Ok(())
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &[Ranked])> {
        self.lists.iter().map(|(q, l)| (q.as_str(), l.as_slice()))
    }

    pub fn get(&self, qid: &str) -> Option<&[Ranked]> {
        self.lists.get(qid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// A metric with its cutoff; `None` means the full list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Mrr(Option<usize>),
    Ndcg(Option<usize>),
    Map(Option<usize>),
    Prec(usize),
}

impl Metric {
    /// Parses `mrr`, `mrr@10`, `ndcg@10`, `map`, `map@1000`, `p@20` or `prec@20`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, k) = match s.split_once('@') {
            Some((n, k)) => (n.to_string(), Some(k.parse::<usize>().ok().filter(|&k| k > 0)?)),
            None => (s.clone(), None),
        };
        match name.as_str() {
            "mrr" | "rr" => Some(Metric::Mrr(k)),
            "ndcg" => Some(Metric::Ndcg(k)),
            "map" | "ap" => Some(Metric::Map(k)),
            "p" | "prec" => k.map(Metric::Prec),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        let (base, k) = match *self {
            Metric::Mrr(k) => ("mrr", k),
            Metric::Ndcg(k) => ("ndcg", k),
            Metric::Map(k) => ("map", k),
            Metric::Prec(k) => ("prec", Some(k)),
        };
        match k {
            Some(k) => format!("{base}@{k}"),
            None => base.to_string(),
        }
    }

    /// Value for one query's ranked list.
    pub fn per_query(&self, qid: &str, list: &[Ranked], qrels: &Qrels) -> f64 {
        match *self {
            Metric::Mrr(k) => reciprocal_rank(qid, list, qrels, k),
            Metric::Ndcg(k) => ndcg(qid, list, qrels, k),
            Metric::Map(k) => average_precision(qid, list, qrels, k),
            Metric::Prec(k) => precision(qid, list, qrels, k),
        }
    }

    /// Per-query values in query id order.
    pub fn per_query_all(&self, run: &RunFile, qrels: &Qrels) -> Vec<(String, f64)> {
        run.queries()
            .map(|(q, l)| (q.to_string(), self.per_query(q, l, qrels)))
            .collect()
    }

    /// Mean over the run's queries; 0 for an empty run.
    pub fn evaluate(&self, run: &RunFile, qrels: &Qrels) -> f64 {
        mean(
            &self
                .per_query_all(run, qrels)
                .into_iter()
                .map(|x| x.1)
                .collect::<Vec<_>>(),
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn cut(list: &[Ranked], k: Option<usize>) -> &[Ranked] {
    &list[..k.map_or(list.len(), |k| k.min(list.len()))]
}

pub fn reciprocal_rank(qid: &str, list: &[Ranked], qrels: &Qrels, k: Option<usize>) -> f64 {
    cut(list, k)
        .iter()
        .position(|r| qrels.grade(qid, &r.doc_id) >= 1)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (pow(2.0, g as f64) - 1.0) / log2((i + 2) as f64))
        .sum()
}

/// Gain `2^g - 1`, discount `1/log2(rank + 1)`, normalized by the ideal
/// ordering of all judged documents.
pub fn ndcg(qid: &str, list: &[Ranked], qrels: &Qrels, k: Option<usize>) -> f64 {
    let actual = dcg(cut(list, k).iter().map(|r| qrels.grade(qid, &r.doc_id)));
    let mut ideal: Vec<u32> = qrels.judged(qid).map(|(_, g)| g).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    if let Some(k) = k {
        ideal.truncate(k);
    }
    let ideal = dcg(ideal.into_iter());
    if ideal == 0.0 {
        0.0
    } else {
        actual / ideal
    }
}

/// Precision summed at each relevant rank within the cutoff, divided by
/// the total number of relevant documents in the judgments.
pub fn average_precision(qid: &str, list: &[Ranked], qrels: &Qrels, k: Option<usize>) -> f64 {
    let total = qrels.relevant_count(qid);
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, r) in cut(list, k).iter().enumerate() {
        if qrels.grade(qid, &r.doc_id) >= 1 {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total as f64
}

/// Relevant documents in the top `k`, divided by `k`.
pub fn precision(qid: &str, list: &[Ranked], qrels: &Qrels, k: usize) -> f64 {
    let hits = cut(list, Some(k))
        .iter()
        .filter(|r| qrels.grade(qid, &r.doc_id) >= 1)
        .count();
    hits as f64 / k as f64
}

/// Outcome of [`noninferiority_test`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonInferiority {
    pub mean_diff: f64,
    pub delta: f64,
    /// `(mean(a-b) - delta) / (sd/√N)`; `±∞` when every difference is equal.
    pub t: f64,
    /// Lower-tail probability of `t` under `N-1` degrees of freedom.
    pub p: f64,
    /// True when `H₀: μ_a − μ_b > δ` is rejected, i.e. `b` is non-inferior.
    pub reject: bool,
}

pub const SIGNIFICANCE: f64 = 0.05;

/// One-sided paired t-test of `H₀: mean(a − b) > δ` with
/// `δ = delta_fraction · mean(a)`.
///
/// When all differences are equal the statistic is undefined; the
/// decision is then exact: reject iff `mean(a − b) ≤ δ`.
pub fn noninferiority_test(a: &[f64], b: &[f64], delta_fraction: f64) -> Result<NonInferiority> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "paired lists differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 paired values, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean_diff = mean(&diffs);
    let delta = delta_fraction * mean(a);
    let var = diffs.iter().map(|d| (d - mean_diff) * (d - mean_diff)).sum::<f64>() / (n - 1) as f64;
    let sd = sqrt(var);
    let all_equal = diffs.iter().all(|&d| d == diffs[0]);
    if all_equal || sd == 0.0 {
        let reject = mean_diff <= delta;
        return Ok(NonInferiority {
            mean_diff,
            delta,
            t: if reject { f64::NEG_INFINITY } else { f64::INFINITY },
            p: if reject { 0.0 } else { 1.0 },
            reject,
        });
    }
    let t = (mean_diff - delta) / (sd / sqrt(n as f64));
    let p = student_t_cdf(t, (n - 1) as f64);
    Ok(NonInferiority {
        mean_diff,
        delta,
        t,
        p,
        reject: p < SIGNIFICANCE,
    })
}
