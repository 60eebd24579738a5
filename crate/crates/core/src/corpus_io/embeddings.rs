//! word2vec text format: header `V D`, then `V` lines `token v1 … vD`.
//!
//! The format carries no counts, so the loader synthesizes descending counts
//! from the file order — file order is the frequency rank by convention, and
//! this keeps the rank reproducible across a save/load round trip.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::types::{AnchorEntry, AnchorTable};
use super::CorpusError;

pub fn load_static_embeddings(path: &Path) -> Result<AnchorTable, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| CorpusError::io(path, e))?;
    let mut parts = header.split_whitespace();
    let vocab: usize = parts
        .next()
        .ok_or_else(|| CorpusError::parse(path, 1, "empty header, expected \"V D\""))?
        .parse()
        .map_err(|_| CorpusError::parse(path, 1, "vocabulary size is not an integer"))?;
    let dim: usize = parts
        .next()
        .ok_or_else(|| CorpusError::parse(path, 1, "header missing dimension"))?
        .parse()
        .map_err(|_| CorpusError::parse(path, 1, "dimension is not an integer"))?;
    if parts.next().is_some() {
        return Err(CorpusError::parse(path, 1, "header has trailing fields"));
    }
    if dim == 0 {
        return Err(CorpusError::parse(path, 1, "dimension must be positive"));
    }

    let mut entries = Vec::with_capacity(vocab);
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() && entries.len() == vocab {
            continue; // trailing blank line
        }
        let mut fields = line.split_whitespace();
        let token = fields
            .next()
            .ok_or_else(|| CorpusError::parse(path, line_no, "empty row"))?
            .to_string();
        if !seen.insert(token.clone()) {
            return Err(CorpusError::parse(
                path,
                line_no,
                format!("duplicate token {token:?}"),
            ));
        }
        let vector: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    CorpusError::parse(path, line_no, format!("bad float {f:?}"))
                })
            })
            .collect::<Result<_, _>>()?;
        if vector.len() != dim {
            return Err(CorpusError::parse(
                path,
                line_no,
                format!("row has {} values, expected {}", vector.len(), dim),
            ));
        }
        entries.push(AnchorEntry {
            token,
            // Descending synthetic counts preserve the file's rank order.
            count: (vocab - entries.len()) as u64,
            vector,
        });
    }
    if entries.len() != vocab {
        return Err(CorpusError::parse(
            path,
            entries.len() + 2,
            format!("expected {} rows, found {}", vocab, entries.len()),
        ));
    }

    AnchorTable::new(
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        dim,
        entries,
    )
}

pub fn save_static_embeddings(table: &AnchorTable, path: &Path) -> Result<(), CorpusError> {
    for e in table.entries() {
        if e.vector.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::invariant(
                "AnchorTable",
                format!("non-finite value in vector for token {:?}", e.token),
            ));
        }
        if e.token.is_empty() || e.token.chars().any(|c| c.is_whitespace()) {
            return Err(CorpusError::invariant(
                "AnchorTable",
                format!("token {:?} is empty or contains whitespace", e.token),
            ));
        }
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, s: &str| {
        w.write_all(s.as_bytes()).map_err(|e| CorpusError::io(path, e))
    };
    write(&mut w, &format!("{} {}\n", table.len(), table.dim()))?;
    let mut line = String::new();
    for e in table.entries() {
        line.clear();
        line.push_str(&e.token);
        for v in &e.vector {
            line.push(' ');
            line.push_str(&format_float(*v));
        }
        line.push('\n');
        write(&mut w, &line)?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Shortest representation that parses back to the same f64.
pub(crate) fn format_float(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn loads_two_tokens() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "t.vec", "2 3\na 1 0 0\nb 0 1 0\n");
        let table = load_static_embeddings(&path).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.dim(), 3);
        assert_eq!(table.vector_of("a").unwrap(), &[1.0, 0.0, 0.0]);
        assert_eq!(table.rank_of("a"), Some(0));
        assert_eq!(table.rank_of("b"), Some(1));
    }

    #[test]
    fn empty_vocabulary() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "t.vec", "0 5\n");
        let table = load_static_embeddings(&path).unwrap();
        assert!(table.is_empty());
        assert_eq!(table.dim(), 5);
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "t.vec", "2 3\na 1 0 0\nb 0 1\n");
        let err = load_static_embeddings(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "expected line number in {msg}");
    }

    #[test]
    fn duplicate_token_rejected() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "t.vec", "2 2\na 1 0\na 0 1\n");
        assert!(load_static_embeddings(&path).is_err());
    }

    #[test]
    fn save_rejects_nan() {
        let dir = tempdir().unwrap();
        let table = AnchorTable::new(
            "x",
            2,
            vec![AnchorEntry {
                token: "a".into(),
                count: 1,
                vector: vec![f64::NAN, 0.0],
            }],
        )
        .unwrap();
        assert!(save_static_embeddings(&table, &dir.path().join("o.vec")).is_err());
    }

    #[test]
    fn round_trip_preserves_values_and_order() {
        let dir = tempdir().unwrap();
        let table = AnchorTable::new(
            "x",
            3,
            vec![
                AnchorEntry {
                    token: "low".into(),
                    count: 2,
                    vector: vec![0.25, -1.5, 3.0e-7],
                },
                AnchorEntry {
                    token: "high".into(),
                    count: 10,
                    vector: vec![1.0 / 3.0, 2.0, -0.125],
                },
            ],
        )
        .unwrap();
        let path = dir.path().join("o.vec");
        save_static_embeddings(&table, &path).unwrap();
        let loaded = load_static_embeddings(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        // "high" has the larger count so it is rank 0 in both tables.
        for (a, b) in table.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.token, b.token);
            for (x, y) in a.vector.iter().zip(&b.vector) {
                assert!((x - y).abs() < 1e-6);
            }
        }

        // save(load(f)) is byte-identical for files we wrote ourselves.
        save_static_embeddings(&loaded, &dir.path().join("o2.vec")).unwrap();
        let b1 = std::fs::read(&path).unwrap();
        let b2 = std::fs::read(dir.path().join("o2.vec")).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn header_line_matches_shape() {
        let dir = tempdir().unwrap();
        let table = AnchorTable::new(
            "x",
            3,
            vec![
                AnchorEntry {
                    token: "a".into(),
                    count: 2,
                    vector: vec![1.0, 0.0, 0.0],
                },
                AnchorEntry {
                    token: "b".into(),
                    count: 1,
                    vector: vec![0.0, 1.0, 0.0],
                },
            ],
        )
        .unwrap();
        let path = dir.path().join("o.vec");
        save_static_embeddings(&table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("2 3\n"));
    }
}
