//! TREC run and qrels files, and the tab-separated corpus, query and
//! candidate lists.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mores_core::metrics::{Qrels, RunFile};
use mores_core::reuse::Ranked;

use crate::error::{Error, Result};

pub const RUN_TAG: &str = "MORES";

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::io(path))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// `qid 0 docid grade` per line.
pub fn parse_qrels(text: &str, path: &Path) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, doc, grade] = f[..] else {
            return Err(parse_err(path, n, "expected `qid 0 docid grade`"));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad grade {grade:?}")))?;
        // Negative grades mark unjudged documents in some collections.
        q.insert(qid, doc, grade.max(0) as u32);
    }
    Ok(q)
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&read(path)?, path)
}

/// `qid Q0 docid rank score tag` per line. Lists are re-sorted by score.
pub fn parse_run(text: &str, path: &Path) -> Result<RunFile> {
    let mut lists: BTreeMap<String, Vec<Ranked>> = BTreeMap::new();
    for (n, line) in lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [qid, _, doc, _, score, _] = f[..] else {
            return Err(parse_err(path, n, "expected `qid Q0 docid rank score tag`"));
        };
        let score: f64 = score
            .parse()
            .map_err(|_| parse_err(path, n, format!("bad score {score:?}")))?;
        lists.entry(qid.to_string()).or_default().push(Ranked {
            doc_id: doc.to_string(),
            score,
        });
    }
    let mut run = RunFile::new();
    for (q, l) in lists {
        run.insert(q, l).map_err(|e| parse_err(path, 0, e.to_string()))?;
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<RunFile> {
    parse_run(&read(path)?, path)
}

/// One line per ranked document, scores to 17 significant digits.
pub fn format_run_lines(out: &mut String, qid: &str, ranked: &[Ranked], tag: &str) {
    for (i, r) in ranked.iter().enumerate() {
        writeln!(out, "{qid} Q0 {} {} {:.16e} {tag}", r.doc_id, i + 1, r.score).expect("string write");
    }
}

pub fn format_run(run: &RunFile, tag: &str) -> String {
    let mut s = String::new();
    for (q, l) in run.queries() {
        format_run_lines(&mut s, q, l, tag);
    }
    s
}

/// `id<TAB>text` lines in file order. Ids must be unique.
pub fn parse_tsv_texts(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `id<TAB>text`"))?;
        if id.is_empty() || !seen.insert(id.to_string()) {
            return Err(parse_err(path, n, format!("empty or duplicate id {id:?}")));
        }
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

pub fn read_tsv_texts(path: &Path) -> Result<Vec<(String, String)>> {
    parse_tsv_texts(&read(path)?, path)
}

/// `qid<TAB>docid` lines grouped by query, keeping file order.
pub fn parse_candidates(text: &str, path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (n, line) in lines(text) {
        let (q, d) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `qid<TAB>docid`"))?;
        let list = out.entry(q.to_string()).or_default();
        if list.iter().any(|x| x == d) {
            return Err(parse_err(path, n, format!("candidate {d:?} listed twice for {q:?}")));
        }
        list.push(d.to_string());
    }
    Ok(out)
}

pub fn read_candidates(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    parse_candidates(&read(path)?, path)
}
