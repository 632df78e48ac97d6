//! Online cost measurement and the speedup table.
//!
//! Each measurement builds what the path needs offline (untimed), warms
//! up on the first [`WARMUP_DOCS`] candidates, then times three full runs
//! and keeps the median. The online path for S1/S2 encodes the query
//! once and scores every candidate from its stored record; the monolithic
//! path scores every `[CLS] q [SEP] d` sequence from scratch. Runs are
//! single-threaded unless `parallel` is set.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use mores_core::cost::{analytic_cost, analytic_speedup, CostQuery, CostReport, Layers, Path};
use mores_core::reuse::{build_record, sort_ranking, DocRecord, Ranked, Strategy};
use mores_core::{Eager, Graph, HyperParams, MacCounter, MonolithicModel, MoresModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const REPETITIONS: usize = 3;
pub const WARMUP_DOCS: usize = 10;

pub const CSV_HEADER: &str =
    "d,strategy,median_seconds,measured_macs,analytic_units,analytic_speedup,measured_speedup,bytes_per_doc";

/// A modular model and a monolithic baseline of matching width and depth.
pub struct Bench<'m> {
    pub model: &'m MoresModel,
    pub baseline: MonolithicModel,
    pub seed: u64,
    pub parallel: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub report: CostReport,
    pub bytes_per_doc: usize,
}

/// Synthetic token sequence of exactly `len` ordinary ids.
pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<u32> {
    (0..len)
        .map(|_| rng.random_range(mores_core::model::special::FIRST_TOKEN..vocab as u32))
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

impl<'m> Bench<'m> {
    /// Pairs `model` with a seeded baseline sharing its hidden size,
    /// heads, FFN size, vocabulary, positions and `source_layers`.
    pub fn new(model: &'m MoresModel, seed: u64) -> Result<Self> {
        let hp = model.hyper_params();
        let donor = HyperParams::donor(
            hp.hidden,
            hp.heads,
            hp.ffn,
            hp.vocab_size,
            hp.max_positions,
            hp.source_layers,
        );
        Ok(Bench {
            model,
            baseline: MonolithicModel::random(donor, seed ^ 0x5eed)?,
            seed,
            parallel: false,
        })
    }

    pub fn cost_query(&self, q: usize, d: usize, n_doc: usize, path: Path) -> CostQuery {
        let hp = self.model.hyper_params();
        CostQuery {
            q,
            d,
            n: hp.hidden,
            layers: Layers {
                source: hp.source_layers,
                doc: hp.doc_layers,
                query: hp.query_layers,
                blocks: hp.interaction_blocks,
            },
            n_doc,
            path,
        }
    }

    fn inputs(&self, cq: &CostQuery) -> (Vec<u32>, Vec<(String, Vec<u32>)>) {
        let vocab = self.model.hyper_params().vocab_size;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((cq.d as u64) << 20) ^ cq.q as u64);
        let query = random_tokens(&mut rng, vocab, cq.q);
        let docs = (0..cq.n_doc)
            .map(|i| (format!("d{i:06}"), random_tokens(&mut rng, vocab, cq.d)))
            .collect();
        (query, docs)
    }

    fn score_all<T: Sync, F>(&self, items: &[(String, T)], f: F) -> Result<(Vec<Ranked>, MacCounter)>
    where
        F: Fn(&T) -> mores_core::Result<(f64, MacCounter)> + Sync,
    {
        let scored: Vec<mores_core::Result<(Ranked, MacCounter)>> = if self.parallel {
            items
                .par_iter()
                .map(|(id, t)| {
                    f(t).map(|(score, m)| {
                        (
                            Ranked {
                                doc_id: id.clone(),
                                score,
                            },
                            m,
                        )
                    })
                })
                .collect()
        } else {
            items
                .iter()
                .map(|(id, t)| {
                    f(t).map(|(score, m)| {
                        (
                            Ranked {
                                doc_id: id.clone(),
                                score,
                            },
                            m,
                        )
                    })
                })
                .collect()
        };
        let mut macs = MacCounter::new();
        let mut ranked = Vec::with_capacity(items.len());
        for s in scored {
            let (r, m) = s?;
            macs.merge(&m);
            ranked.push(r);
        }
        sort_ranking(&mut ranked);
        Ok((ranked, macs))
    }

    fn online_reuse(&self, query: &[u32], records: &[(String, DocRecord)]) -> Result<(Vec<Ranked>, MacCounter)> {
        let mut g = Eager::new();
        let q = self.model.encode_query_in(&mut g, query, None)?.hidden.into_tensor();
        let mut macs = *g.macs();
        let (ranked, m) = self.score_all(records, |rec| self.model.score_counted(&q, rec.repr(), None, None))?;
        macs.merge(&m);
        Ok((ranked, macs))
    }

    fn online_monolithic(&self, query: &[u32], docs: &[(String, Vec<u32>)]) -> Result<(Vec<Ranked>, MacCounter)> {
        self.score_all(docs, |d| self.baseline.score_counted(query, d, None))
    }

    /// Measures one path: median wall time over [`REPETITIONS`] runs and
    /// the exact MACs of one run.
    pub fn measure(&self, cq: &CostQuery) -> Result<BenchRow> {
        if cq.q == 0 || cq.d == 0 || cq.n_doc == 0 {
            return Err(Error::Usage("q, d and n_doc must be positive".into()));
        }
        let (query, docs) = self.inputs(cq);
        let mut times = Vec::with_capacity(REPETITIONS);
        let mut macs = MacCounter::new();
        let bytes_per_doc;
        match cq.path {
            Path::Monolithic => {
                bytes_per_doc = 0;
                self.online_monolithic(&query, &docs[..docs.len().min(WARMUP_DOCS)])?;
                for _ in 0..REPETITIONS {
                    let t = Instant::now();
                    let (_, m) = self.online_monolithic(&query, &docs)?;
                    times.push(t.elapsed().as_secs_f64());
                    macs = m;
                }
            }
            Path::S1 | Path::S2 => {
                let strategy = if cq.path == Path::S1 {
                    Strategy::S1
                } else {
                    Strategy::S2
                };
                let records = docs
                    .iter()
                    .map(|(id, t)| Ok((id.clone(), build_record(self.model, t, strategy)?)))
                    .collect::<Result<Vec<_>>>()?;
                bytes_per_doc = records[0].1.payload_bytes();
                self.online_reuse(&query, &records[..records.len().min(WARMUP_DOCS)])?;
                for _ in 0..REPETITIONS {
                    let t = Instant::now();
                    let (_, m) = self.online_reuse(&query, &records)?;
                    times.push(t.elapsed().as_secs_f64());
                    macs = m;
                }
            }
        }
        let mut report = analytic_cost(cq);
        report.measured_macs = Some(macs.total());
        report.wall_time_seconds = Some(median(times));
        Ok(BenchRow { report, bytes_per_doc })
    }

    /// Measures every configuration plus, once per `(q, d, n_doc)`, the
    /// monolithic baseline its measured speedup is relative to.
    pub fn speedup_table(&self, configs: &[CostQuery]) -> Result<Vec<BenchRow>> {
        let mut baselines: HashMap<(usize, usize, usize), BenchRow> = HashMap::new();
        let mut rows = Vec::with_capacity(configs.len());
        for cq in configs {
            let key = (cq.q, cq.d, cq.n_doc);
            if let std::collections::hash_map::Entry::Vacant(e) = baselines.entry(key) {
                let b = self.measure(&cq.with_path(Path::Monolithic))?;
                e.insert(b);
            }
            let base = &baselines[&key];
            let mut row = if cq.path == Path::Monolithic {
                base.clone()
            } else {
                self.measure(cq)?
            };
            let bt = base.report.wall_time_seconds.expect("measured");
            row.report.speedup_vs_baseline = Some(bt / row.report.wall_time_seconds.expect("measured"));
            rows.push(row);
        }
        Ok(rows)
    }
}

fn fields(row: &BenchRow) -> [String; 8] {
    let r = &row.report;
    [
        r.query.d.to_string(),
        r.query.path.name().to_string(),
        format!("{:.6}", r.wall_time_seconds.unwrap_or(f64::NAN)),
        r.measured_macs.unwrap_or(0).to_string(),
        r.analytic_total.to_string(),
        format!("{:.3}", analytic_speedup(&r.query)),
        format!("{:.3}", r.speedup_vs_baseline.unwrap_or(f64::NAN)),
        row.bytes_per_doc.to_string(),
    ]
}

pub fn format_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&fields(row).join(","));
        s.push('\n');
    }
    s
}

pub fn format_text(rows: &[BenchRow]) -> String {
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    let body: Vec<[String; 8]> = rows.iter().map(fields).collect();
    let widths: Vec<usize> = (0..8)
        .map(|i| {
            body.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut s = String::new();
    let line = |s: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        writeln!(s, "{}", parts.join("  ").trim_end()).expect("string write");
    };
    line(&mut s, &mut header.iter().copied());
    for r in &body {
        line(&mut s, &mut r.iter().map(String::as_str));
    }
    s
}
