//! CTXEMB v1: a streamable text format for contextual occurrence embeddings.
//!
//! Header line `CTXEMB 1 D`, then one record per line:
//! `token<TAB>sentence_id<TAB>position<TAB>v1 v2 … vD`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::embeddings::format_float;
use super::types::ContextualOccurrence;
use super::CorpusError;

/// Streaming reader over a CTXEMB file. Memory use is bounded by one record
/// regardless of file size.
pub struct OccurrenceReader {
    path: PathBuf,
    reader: BufReader<File>,
    dim: usize,
    line_no: usize,
    buf: String,
}

impl OccurrenceReader {
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| CorpusError::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "CTXEMB" || fields[1] != "1" {
            return Err(CorpusError::parse(
                path,
                1,
                "expected header \"CTXEMB 1 D\"",
            ));
        }
        let dim: usize = fields[2]
            .parse()
            .map_err(|_| CorpusError::parse(path, 1, "dimension is not an integer"))?;
        if dim == 0 {
            return Err(CorpusError::parse(path, 1, "dimension must be positive"));
        }
        Ok(OccurrenceReader {
            path: path.to_path_buf(),
            reader,
            dim,
            line_no: 1,
            buf: String::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn parse_record(&self, line: &str) -> Result<ContextualOccurrence, CorpusError> {
        let mut fields = line.splitn(4, '\t');
        let token = fields
            .next()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| CorpusError::parse(&self.path, self.line_no, "missing token field"))?;
        let sentence_id: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| {
                CorpusError::parse(&self.path, self.line_no, "bad or missing sentence id")
            })?;
        let position: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| {
                CorpusError::parse(&self.path, self.line_no, "bad or missing position")
            })?;
        let values = fields
            .next()
            .ok_or_else(|| CorpusError::parse(&self.path, self.line_no, "missing vector field"))?;
        let vector: Vec<f64> = values
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    CorpusError::parse(&self.path, self.line_no, format!("bad float {f:?}"))
                })
            })
            .collect::<Result<_, _>>()?;
        if vector.len() != self.dim {
            return Err(CorpusError::parse(
                &self.path,
                self.line_no,
                format!("record has {} values, expected {}", vector.len(), self.dim),
            ));
        }
        Ok(ContextualOccurrence {
            token: token.to_string(),
            sentence_id,
            position,
            vector,
        })
    }
}

impl Iterator for OccurrenceReader {
    type Item = Result<ContextualOccurrence, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(CorpusError::io(&self.path, e))),
            }
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                continue;
            }
            return Some(self.parse_record(line));
        }
    }
}

/// Occurrences of `path`, yielded in file order.
pub fn stream_occurrences(path: &Path) -> Result<OccurrenceReader, CorpusError> {
    OccurrenceReader::open(path)
}

/// Streaming writer for CTXEMB files.
pub struct OccurrenceWriter {
    path: PathBuf,
    writer: BufWriter<File>,
    dim: usize,
}

impl OccurrenceWriter {
    pub fn create(path: &Path, dim: usize) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::invariant("CTXEMB", "dimension must be positive"));
        }
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut writer = BufWriter::new(file);
        writer
            .write_all(format!("CTXEMB 1 {dim}\n").as_bytes())
            .map_err(|e| CorpusError::io(path, e))?;
        Ok(OccurrenceWriter {
            path: path.to_path_buf(),
            writer,
            dim,
        })
    }

    pub fn write(&mut self, occ: &ContextualOccurrence) -> Result<(), CorpusError> {
        if occ.vector.len() != self.dim {
            return Err(CorpusError::invariant(
                "CTXEMB",
                format!(
                    "occurrence of {:?} has dim {}, file has dim {}",
                    occ.token,
                    occ.vector.len(),
                    self.dim
                ),
            ));
        }
        if occ.vector.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::invariant(
                "CTXEMB",
                format!("non-finite value in occurrence of {:?}", occ.token),
            ));
        }
        let mut line = String::with_capacity(16 + self.dim * 12);
        line.push_str(&occ.token);
        line.push('\t');
        line.push_str(&occ.sentence_id.to_string());
        line.push('\t');
        line.push_str(&occ.position.to_string());
        line.push('\t');
        for (i, v) in occ.vector.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format_float(*v));
        }
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .map_err(|e| CorpusError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), CorpusError> {
        self.writer.flush().map_err(|e| CorpusError::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn three_records_in_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("o.ctxemb");
        std::fs::write(
            &path,
            "CTXEMB 1 2\nthe\t0\t0\t1 0\ncat\t0\t1\t0 1\nthe\t1\t0\t0.5 0.5\n",
        )
        .unwrap();
        let occs: Vec<_> = stream_occurrences(&path)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(occs.len(), 3);
        assert_eq!(occs[0].token, "the");
        assert_eq!(occs[1].position, 1);
        assert_eq!(occs[2].sentence_id, 1);
        assert_eq!(occs[2].vector, vec![0.5, 0.5]);
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("o.ctxemb");
        std::fs::write(&path, "CTXEMB 1 4\n").unwrap();
        let reader = stream_occurrences(&path).unwrap();
        assert_eq!(reader.dim(), 4);
        assert_eq!(reader.count(), 0);
    }

    #[test]
    fn malformed_record_names_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("o.ctxemb");
        std::fs::write(&path, "CTXEMB 1 2\na\t0\t0\t1 0\nb\t0\tnope\t1 0\n").unwrap();
        let results: Vec<_> = stream_occurrences(&path).unwrap().collect();
        assert!(results[0].is_ok());
        let msg = results[1].as_ref().unwrap_err().to_string();
        assert!(msg.contains(":3:"), "expected line 3 in {msg}");
    }

    #[test]
    fn missing_header_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("o.ctxemb");
        std::fs::write(&path, "a\t0\t0\t1 0\n").unwrap();
        assert!(stream_occurrences(&path).is_err());
    }

    #[test]
    fn writer_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("o.ctxemb");
        let occ = ContextualOccurrence {
            token: "x".into(),
            sentence_id: 3,
            position: 7,
            vector: vec![0.1, -2.5, 1.0 / 3.0],
        };
        let mut w = OccurrenceWriter::create(&path, 3).unwrap();
        w.write(&occ).unwrap();
        w.finish().unwrap();
        let got: Vec<_> = stream_occurrences(&path)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(got, vec![occ]);
    }
}
