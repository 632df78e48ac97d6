//! Cost accounting.
//!
//! Two kinds of numbers live here and are never mixed:
//!
//! * **Analytic units** evaluate the asymptotic per-layer cost expressions
//!   with constants dropped, multiplied by explicit layer counts and the
//!   candidate count.
//! * **Measured MACs** are exact multiply-accumulate counts. The closed
//!   forms below enumerate every matmul the forward pass executes, so a
//!   [`MacCounter`] from an instrumented run must equal them exactly.
//!
//! # Matmul inventory
//!
//! With hidden size `n`, FFN size `f`, an attention call from `x` (`a`
//! rows) to `y` (`b` rows) performs, summed over heads:
//!
//! | step                      | kind          | MACs        |
//! |---------------------------|---------------|-------------|
//! | query projection          | `Projection`  | `a·n²`      |
//! | key + value projections   | `Projection`  | `2·b·n²`    |
//! | scores `Q·Kᵀ`             | `AttnScore`   | `a·b·n`     |
//! | context `P·V`             | `AttnContext` | `a·b·n`     |
//! | output projection         | `Projection`  | `a·n²`      |
//!
//! The key/value row is skipped when projections are supplied. A
//! feed-forward network over `r` rows costs `2·r·n·f` (`Ffn`), and the
//! scoring head `n` (`Head`). An encoder layer over `L` rows is one
//! self-attention call (`a = b = L`) plus one FFN; an interaction block
//! over `a = q+1` query rows and a `d`-token document is a cross-attention
//! call (`b = d`), a self-attention call (`b = a`) and one FFN.
//!
//! Online per query, S1 and S2 run the query module once then `K` blocks
//! and the head per candidate; S2 skips `2·K·d·n²` per candidate. The
//! monolithic ranker runs `source_layers` encoder layers over
//! `q + d + 2` rows and the head per candidate.

use alloc::vec::Vec;

use crate::model::HyperParams;
use crate::tensor::{MacCounter, MacKind};

/// Online scoring path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Path {
    Monolithic,
    S1,
    S2,
}

impl Path {
    pub const ALL: [Path; 3] = [Path::Monolithic, Path::S1, Path::S2];

    pub fn name(self) -> &'static str {
        match self {
            Path::Monolithic => "monolithic",
            Path::S1 => "s1",
            Path::S2 => "s2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Path::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layers {
    pub source: usize,
    pub doc: usize,
    pub query: usize,
    pub blocks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CostQuery {
    pub q: usize,
    pub d: usize,
    pub n: usize,
    pub layers: Layers,
    pub n_doc: usize,
    pub path: Path,
}

impl CostQuery {
    pub fn with_path(self, path: Path) -> Self {
        CostQuery { path, ..self }
    }
}

/// Analytic terms, and measured fields once a run has filled them in.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub query: CostQuery,
    pub analytic_terms: Vec<(&'static str, u64)>,
    pub analytic_total: u64,
    pub measured_macs: Option<u64>,
    pub wall_time_seconds: Option<f64>,
    pub speedup_vs_baseline: Option<f64>,
}

fn u(x: usize) -> u64 {
    x as u64
}

/// Monolithic per-layer cost for one pair: `n(d+q)² + n²(d+q)`.
pub fn monolithic_layer_units(q: usize, d: usize, n: usize) -> (u64, u64) {
    let l = u(q + d);
    (u(n) * l * l, u(n) * u(n) * l)
}

/// Query module per-layer cost: `nq² + n²q`.
pub fn query_layer_units(q: usize, n: usize) -> (u64, u64) {
    (u(n) * u(q) * u(q), u(n) * u(n) * u(q))
}

/// Interaction block cost for one pair: `n(qd+q²) + n²(q+d)` under S1,
/// `n(qd+q²) + n²q` under S2.
pub fn block_units(q: usize, d: usize, n: usize, path: Path) -> (u64, u64) {
    let attention = u(n) * (u(q) * u(d) + u(q) * u(q));
    let rows = match path {
        Path::S2 => u(q),
        _ => u(q + d),
    };
    (attention, u(n) * u(n) * rows)
}

/// Evaluates the analytic terms for one query and `n_doc` candidates.
/// Document encoding is offline and contributes nothing online.
pub fn analytic_cost(cq: &CostQuery) -> CostReport {
    let nd = u(cq.n_doc);
    let terms: Vec<(&'static str, u64)> = match cq.path {
        Path::Monolithic => {
            let (a, t) = monolithic_layer_units(cq.q, cq.d, cq.n);
            let l = u(cq.layers.source) * nd;
            alloc::vec![("monolithic.attention", a * l), ("monolithic.transform", t * l)]
        }
        Path::S1 | Path::S2 => {
            let (qa, qt) = query_layer_units(cq.q, cq.n);
            let (ia, it) = block_units(cq.q, cq.d, cq.n, cq.path);
            let nq = u(cq.layers.query);
            let k = u(cq.layers.blocks) * nd;
            alloc::vec![
                ("query.attention", qa * nq),
                ("query.transform", qt * nq),
                ("interaction.attention", ia * k),
                ("interaction.transform", it * k),
            ]
        }
    };
    let analytic_total = terms.iter().map(|(_, v)| v).sum();
    CostReport {
        query: *cq,
        analytic_terms: terms,
        analytic_total,
        measured_macs: None,
        wall_time_seconds: None,
        speedup_vs_baseline: None,
    }
}

/// Analytic ratio of the monolithic total to `cq`'s total.
pub fn analytic_speedup(cq: &CostQuery) -> f64 {
    let base = analytic_cost(&cq.with_path(Path::Monolithic)).analytic_total;
    base as f64 / analytic_cost(cq).analytic_total as f64
}

/// One attention call from `a` rows to `b` rows.
pub fn attention_macs(n: usize, a: usize, b: usize, projected_kv: bool) -> MacCounter {
    let mut c = MacCounter::new();
    c.record(MacKind::Projection, a, n, n);
    if !projected_kv {
        c.record(MacKind::Projection, b, n, n);
        c.record(MacKind::Projection, b, n, n);
    }
    c.record(MacKind::AttnScore, a, n, b);
    c.record(MacKind::AttnContext, a, b, n);
    c.record(MacKind::Projection, a, n, n);
    c
}

pub fn ffn_macs(n: usize, f: usize, rows: usize) -> MacCounter {
    let mut c = MacCounter::new();
    c.record(MacKind::Ffn, rows, n, f);
    c.record(MacKind::Ffn, rows, f, n);
    c
}

pub fn encoder_layer_macs(n: usize, f: usize, rows: usize) -> MacCounter {
    let mut c = attention_macs(n, rows, rows, false);
    c.merge(&ffn_macs(n, f, rows));
    c
}

/// One interaction block for `a` query rows (CLS included) and `d`
/// document tokens.
pub fn block_macs(n: usize, f: usize, a: usize, d: usize, projected_kv: bool) -> MacCounter {
    let mut c = attention_macs(n, a, d, projected_kv);
    c.merge(&attention_macs(n, a, a, false));
    c.merge(&ffn_macs(n, f, a));
    c
}

pub fn head_macs(n: usize) -> MacCounter {
    let mut c = MacCounter::new();
    c.record(MacKind::Head, 1, n, 1);
    c
}

fn repeat(c: &MacCounter, times: usize) -> MacCounter {
    let mut out = MacCounter::new();
    for _ in 0..times {
        out.merge(c);
    }
    out
}

/// Document module over `d` tokens.
pub fn doc_encoding_macs(hp: &HyperParams, d: usize) -> MacCounter {
    repeat(&encoder_layer_macs(hp.hidden, hp.ffn, d), hp.doc_layers)
}

/// Query module over `q` tokens plus CLS.
pub fn query_encoding_macs(hp: &HyperParams, q: usize) -> MacCounter {
    repeat(&encoder_layer_macs(hp.hidden, hp.ffn, q + 1), hp.query_layers)
}

/// Interaction module and head for one candidate.
pub fn scoring_macs(hp: &HyperParams, q: usize, d: usize, projected_kv: bool) -> MacCounter {
    let mut c = repeat(
        &block_macs(hp.hidden, hp.ffn, q + 1, d, projected_kv),
        hp.interaction_blocks,
    );
    c.merge(&head_macs(hp.hidden));
    c
}

/// Monolithic ranker for one pair, `[CLS] q [SEP] d`.
pub fn monolithic_macs(hp: &HyperParams, q: usize, d: usize) -> MacCounter {
    let mut c = repeat(&encoder_layer_macs(hp.hidden, hp.ffn, q + d + 2), hp.source_layers);
    c.merge(&head_macs(hp.hidden));
    c
}

/// Online MACs for one query and `n_doc` candidates of length `d` along
/// `path`. `hp` must carry the module layer counts for S1/S2 and
/// `source_layers` for the monolithic path.
pub fn online_macs(hp: &HyperParams, q: usize, d: usize, n_doc: usize, path: Path) -> MacCounter {
    match path {
        Path::Monolithic => repeat(&monolithic_macs(hp, q, d), n_doc),
        Path::S1 | Path::S2 => {
            let mut c = query_encoding_macs(hp, q);
            c.merge(&repeat(&scoring_macs(hp, q, d, path == Path::S2), n_doc));
            c
        }
    }
}
