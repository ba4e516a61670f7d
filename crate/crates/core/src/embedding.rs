//! Sentence embeddings and the sentence-position feature.
//!
//! File format (text): a header line `<essay_id> <N> <dim>` followed by `N`
//! lines of `dim` space-separated floats. Several blocks may share a file,
//! separated by blank lines.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use sha2::{Digest, Sha256};

use crate::corpus::{write_atomic, Essay};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub essay_id: String,
    /// One row per sentence.
    pub rows: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(essay_id: impl Into<String>, rows: Array2<f64>) -> Result<Self> {
        let essay_id = essay_id.into();
        if essay_id.is_empty() || essay_id.chars().any(char::is_whitespace) {
            return Err(Error::Format(format!(
                "essay id {essay_id:?} must be non-empty and free of whitespace"
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(essay_id, "non-finite embedding value"));
        }
        Ok(EmbeddingMatrix { essay_id, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Checks this matrix against the essay it is paired with.
    pub fn check_pairing(&self, essay: &Essay, dim: usize) -> Result<()> {
        if self.n() != essay.len() {
            return Err(Error::validation(
                &essay.essay_id,
                format!("{} embedding rows for {} sentences", self.n(), essay.len()),
            ));
        }
        if self.dim() != dim {
            return Err(Error::validation(
                &essay.essay_id,
                format!("embedding dim {} but model expects {dim}", self.dim()),
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.essay_id, self.n(), self.dim());
        for row in self.rows.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                // Display for f64 prints the shortest string that parses back exactly.
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Sentence position `(i + 1) / n` for every sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SposFeature(pub Vec<f64>);

pub fn spos(n: usize) -> SposFeature {
    SposFeature((1..=n).map(|p| p as f64 / n as f64).collect())
}

/// Appends the position feature as a final column.
pub fn concat_spos(m: &EmbeddingMatrix, f: &SposFeature) -> Result<EmbeddingMatrix> {
    if f.0.len() != m.n() {
        return Err(Error::Shape(format!(
            "{} position values for {} rows",
            f.0.len(),
            m.n()
        )));
    }
    let col = Array2::from_shape_vec((m.n(), 1), f.0.clone()).expect("column shape");
    let rows = concatenate(Axis(1), &[m.rows.view(), col.view()]).expect("row counts match");
    Ok(EmbeddingMatrix {
        essay_id: m.essay_id.clone(),
        rows,
    })
}

/// Deterministic stand-in embeddings in `[-1, 1)`, derived from SHA-256 of
/// (seed, essay id, sentence index, sentence text, block counter).
pub fn pseudo_embed(essay: &Essay, dim: usize, seed: u64) -> EmbeddingMatrix {
    let n = essay.len();
    let mut rows = Array2::zeros((n, dim));
    for (i, text) in essay.texts().enumerate() {
        let mut prefix = Sha256::new();
        prefix.update(seed.to_le_bytes());
        prefix.update((essay.essay_id.len() as u64).to_le_bytes());
        prefix.update(essay.essay_id.as_bytes());
        prefix.update((i as u64).to_le_bytes());
        prefix.update((text.len() as u64).to_le_bytes());
        prefix.update(text.as_bytes());
        let mut col = 0;
        let mut block = 0u64;
        while col < dim {
            let mut h = prefix.clone();
            h.update(block.to_le_bytes());
            let digest = h.finalize();
            for chunk in digest.chunks_exact(8) {
                if col == dim {
                    break;
                }
                let bits = u64::from_le_bytes(chunk.try_into().unwrap()) >> 11;
                rows[[i, col]] = bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
                col += 1;
            }
            block += 1;
        }
    }
    EmbeddingMatrix {
        essay_id: essay.essay_id.clone(),
        rows,
    }
}

pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingMatrix>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    loop {
        while lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.next();
        }
        let Some((lineno, header)) = lines.next() else {
            break;
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [id, n, dim] = fields[..] else {
            return Err(Error::Format(format!(
                "line {}: expected header `<essay_id> <N> <dim>`, got {header:?}",
                lineno + 1
            )));
        };
        let parse_count = |s: &str| {
            s.parse::<usize>().map_err(|_| {
                Error::Format(format!("line {}: bad count {s:?} in header", lineno + 1))
            })
        };
        let (n, dim) = (parse_count(n)?, parse_count(dim)?);
        let mut values = Vec::with_capacity(n * dim);
        for r in 0..n {
            let (rowno, line) = match lines.next() {
                Some((no, l)) if !l.trim().is_empty() => (no, l),
                _ => {
                    return Err(Error::Format(format!(
                        "essay {id}: header declares {n} rows, found {r}"
                    )))
                }
            };
            let before = values.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    Error::Format(format!("line {}: bad number {tok:?}", rowno + 1))
                })?;
                values.push(v);
            }
            if values.len() - before != dim {
                return Err(Error::Format(format!(
                    "line {}: expected {dim} values, found {}",
                    rowno + 1,
                    values.len() - before
                )));
            }
        }
        let rows = Array2::from_shape_vec((n, dim), values).expect("validated shape");
        out.push(EmbeddingMatrix::new(id, rows)?);
    }
    Ok(out)
}

/// Reads every block in one embedding file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingMatrix>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads every regular file in `dir` (sorted by name) and indexes the blocks
/// by essay id. A duplicated id is an error.
pub fn load_embedding_dir(dir: impl AsRef<Path>) -> Result<HashMap<String, EmbeddingMatrix>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut map = HashMap::new();
    for p in paths {
        for m in load_embeddings(&p)? {
            if map.contains_key(&m.essay_id) {
                return Err(Error::Format(format!(
                    "essay {} appears twice under {}",
                    m.essay_id,
                    dir.display()
                )));
            }
            map.insert(m.essay_id.clone(), m);
        }
    }
    Ok(map)
}

pub fn save_embeddings(path: impl AsRef<Path>, matrices: &[EmbeddingMatrix]) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        for (k, m) in matrices.iter().enumerate() {
            if k > 0 {
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.write_all(m.to_text().as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceCorpus;
    use crate::tree::ArgTree;
    use ndarray::array;

    fn essay() -> Essay {
        Essay::new(
            "e1",
            vec!["One claim.".into(), "A premise.".into(), "Filler.".into()],
            ArgTree::from_heads(vec![0, 0, 2]).unwrap(),
            SourceCorpus::InDomain,
        )
        .unwrap()
    }

    #[test]
    fn spos_values() {
        assert_eq!(spos(1).0, vec![1.0]);
        assert_eq!(spos(4).0, vec![0.25, 0.5, 0.75, 1.0]);
        let s = spos(13).0;
        assert_eq!(s[12], 1.0);
        assert_eq!(s[0], 1.0 / 13.0);
    }

    #[test]
    fn concat_appends_column() {
        let m = EmbeddingMatrix::new("a", Array2::zeros((2, 3))).unwrap();
        let out = concat_spos(&m, &spos(2)).unwrap();
        assert_eq!(out.dim(), 4);
        assert_eq!(out.rows.column(3).to_vec(), vec![0.5, 1.0]);
        assert!(concat_spos(&m, &spos(3)).is_err());
    }

    #[test]
    fn parse_fixture_and_short_file() {
        let text = "e1 3 4\n1 2 3 4\n0.5 -0.25 1e-3 0\n-1 -2 -3 -4\n";
        let ms = parse_embeddings(text).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!((ms[0].n(), ms[0].dim()), (3, 4));
        assert_eq!(ms[0].rows[[1, 2]], 1e-3);
        let short = "e1 3 4\n1 2 3 4\n1 2 3 4\n";
        assert!(matches!(parse_embeddings(short), Err(Error::Format(_))));
        let wide = "e1 1 2\n1 2 3\n";
        assert!(matches!(parse_embeddings(wide), Err(Error::Format(_))));
        let nan = "e1 1 2\n1 NaN\n";
        assert!(matches!(parse_embeddings(nan), Err(Error::Validation { .. })));
    }

    #[test]
    fn concatenated_blocks() {
        let text = "a 1 2\n1 2\n\nb 2 2\n3 4\n5 6\n";
        let ms = parse_embeddings(text).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[1].rows, array![[3.0, 4.0], [5.0, 6.0]]);
    }

    #[test]
    fn pseudo_embed_is_deterministic() {
        let e = essay();
        let a = pseudo_embed(&e, 16, 3);
        let b = pseudo_embed(&e, 16, 3);
        assert_eq!(a, b);
        assert_ne!(a.rows.row(0), a.rows.row(1));
        assert!(a.rows.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(pseudo_embed(&e, 16, 4), a);
        assert_eq!(pseudo_embed(&e, 1, 3).dim(), 1);
    }

    #[test]
    fn pairing_checks() {
        let e = essay();
        let m = pseudo_embed(&e, 5, 0);
        assert!(m.check_pairing(&e, 5).is_ok());
        assert!(m.check_pairing(&e, 6).is_err());
    }
}
