//! Token-labelled attention matrices for one (query, document) pair.
//!
//! One CSV per matrix. The first row holds the key tokens, the first
//! column the query-side tokens. Files are named
//! `doc_l{m}_self_h{h}.csv`, `query_l{n}_self_h{h}.csv`,
//! `ib{k}_cross_h{h}.csv` and `ib{k}_self_h{h}.csv`.

use std::path::{Path, PathBuf};

use mores_core::model::special::CLS;
use mores_core::{MoresModel, Tensor};

use crate::error::{Error, Result};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub file_name: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub weights: Tensor,
}

/// Every attention matrix for the pair, in file-name order of modules:
/// document layers, query layers, then interaction blocks.
pub fn collect(model: &MoresModel, vocab: &Vocab, query: &[u32], doc: &[u32]) -> Result<(f64, Vec<Matrix>)> {
    let (score, trace) = model.trace(query, doc)?;
    let label = |ids: &[u32]| ids.iter().map(|&i| vocab.token(i).to_string()).collect::<Vec<_>>();
    let d_labels = label(doc);
    let mut q_ids = vec![CLS];
    q_ids.extend_from_slice(query);
    let q_labels = label(&q_ids);
    let mut out = Vec::new();
    let mut push = |stem: String, heads: Vec<Tensor>, rows: &[String], cols: &[String]| {
        for (h, w) in heads.into_iter().enumerate() {
            out.push(Matrix {
                file_name: format!("{stem}_h{h}.csv"),
                rows: rows.to_vec(),
                cols: cols.to_vec(),
                weights: w,
            });
        }
    };
    for (m, heads) in trace.doc.into_iter().enumerate() {
        push(format!("doc_l{m}_self"), heads, &d_labels, &d_labels);
    }
    for (n, heads) in trace.query.into_iter().enumerate() {
        push(format!("query_l{n}_self"), heads, &q_labels, &q_labels);
    }
    for (k, b) in trace.blocks.into_iter().enumerate() {
        push(format!("ib{k}_cross"), b.cross, &q_labels, &d_labels);
        push(format!("ib{k}_self"), b.self_attn, &q_labels, &q_labels);
    }
    Ok((score, out))
}

pub fn to_csv(m: &Matrix) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Usage(format!("csv encoding failed: {e}"));
    let mut header = vec![String::new()];
    header.extend(m.cols.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, label) in m.rows.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.weights.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::Usage(format!("csv encoding failed: {e}")))
}

/// Writes every matrix under `dir` (created if absent) and returns the
/// paths written.
pub fn write_dump(dir: &Path, matrices: &[Matrix]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut paths = Vec::with_capacity(matrices.len());
    for m in matrices {
        let p = dir.join(&m.file_name);
        std::fs::write(&p, to_csv(m)?).map_err(Error::io(&p))?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mores_core::HyperParams;

    #[test]
    fn labels_shapes_and_row_sums() {
        let hp = HyperParams {
            hidden: 8,
            heads: 2,
            ffn: 8,
            vocab_size: 12,
            max_positions: 16,
            doc_layers: 1,
            query_layers: 1,
            interaction_blocks: 1,
            source_layers: 2,
        };
        let model = MoresModel::random(hp, 3).unwrap();
        let vocab = Vocab::from_tokens(["a", "b", ",", "c"]).unwrap();
        let (_, ms) = collect(&model, &vocab, &[4, 5], &[6, 7, 4]).unwrap();
        assert_eq!(ms.len(), (1 + 1 + 2) * 2);
        let cross = ms.iter().find(|m| m.file_name == "ib0_cross_h1.csv").unwrap();
        assert_eq!(cross.rows, ["[CLS]", "a", "b"]);
        assert_eq!(cross.cols, [",", "c", "a"]);
        for m in &ms {
            for i in 0..m.rows.len() {
                let s: f64 = m.weights.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let text = String::from_utf8(to_csv(cross).unwrap()).unwrap();
        assert!(text.starts_with(",\",\",c,a\n[CLS],"));
    }
}
