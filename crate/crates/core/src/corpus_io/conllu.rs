//! CoNLL-U (10-column) treebank reader and writer.
//!
//! Comment lines, multiword-token ranges (`1-2`) and empty nodes (`1.1`) are
//! skipped: the parser operates on syntactic words only. UPOS comes from
//! column 4, head from column 7, dependency label from column 8.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::types::{Sentence, Token};
use super::CorpusError;

struct PendingSentence {
    tokens: Vec<Token>,
    sent_id: Option<String>,
    first_line: usize,
    next_index: usize,
}

impl PendingSentence {
    fn new() -> Self {
        PendingSentence {
            tokens: Vec::new(),
            sent_id: None,
            first_line: 0,
            next_index: 1,
        }
    }

    fn name(&self, ordinal: usize) -> String {
        match &self.sent_id {
            Some(id) => format!("sentence {id:?}"),
            None => format!("sentence #{ordinal}"),
        }
    }
}

/// Load a gold treebank. Heads must be integers in range and form a tree
/// rooted at the artificial root; violations are reported with the sentence
/// named.
pub fn load_conllu(path: &Path) -> Result<Vec<Sentence>, CorpusError> {
    load_impl(path, false)
}

/// Lenient variant for parser *input*: `_` heads/labels are accepted
/// (mapped to 0 / empty) and no tree validation is performed.
pub fn load_conllu_lenient(path: &Path) -> Result<Vec<Sentence>, CorpusError> {
    load_impl(path, true)
}

fn load_impl(path: &Path, lenient: bool) -> Result<Vec<Sentence>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let reader = BufReader::new(file);

    let mut sentences = Vec::new();
    let mut pending = PendingSentence::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let trimmed = line.trim_end_matches(['\n', '\r']);

        if trimmed.is_empty() {
            flush(path, &mut pending, &mut sentences, lenient)?;
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                let id = id.trim_start_matches([' ', '=']).trim();
                if !id.is_empty() {
                    pending.sent_id = Some(id.to_string());
                }
            }
            continue;
        }

        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::parse(
                path,
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        // Skip multiword-token ranges and empty nodes.
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| {
            CorpusError::parse(path, line_no, format!("bad token id {:?}", cols[0]))
        })?;
        if id != pending.next_index {
            return Err(CorpusError::parse(
                path,
                line_no,
                format!("token id {} out of sequence, expected {}", id, pending.next_index),
            ));
        }
        if pending.tokens.is_empty() {
            pending.first_line = line_no;
        }
        pending.next_index += 1;

        let head = if lenient && cols[6] == "_" {
            0
        } else {
            cols[6].parse::<usize>().map_err(|_| {
                CorpusError::parse(path, line_no, format!("non-integer head {:?}", cols[6]))
            })?
        };
        pending.tokens.push(Token {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            label: cols[7].to_string(),
        });
    }
    flush(path, &mut pending, &mut sentences, lenient)?;
    Ok(sentences)
}

fn flush(
    path: &Path,
    pending: &mut PendingSentence,
    sentences: &mut Vec<Sentence>,
    lenient: bool,
) -> Result<(), CorpusError> {
    if pending.tokens.is_empty() {
        *pending = PendingSentence::new();
        return Ok(());
    }
    let sentence = Sentence {
        tokens: std::mem::take(&mut pending.tokens),
        language: String::new(),
    };
    if !lenient {
        if let Err(msg) = sentence.validate_tree() {
            return Err(CorpusError::parse(
                path,
                pending.first_line,
                format!("{}: {}", pending.name(sentences.len() + 1), msg),
            ));
        }
    }
    sentences.push(sentence);
    *pending = PendingSentence::new();
    Ok(())
}

/// Render sentences as 10-column CoNLL-U, `_` in the columns we do not model.
pub fn write_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for (i, sent) in sentences.iter().enumerate() {
        out.push_str(&format!("# sent_id = {}\n", i + 1));
        for (j, tok) in sent.tokens.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                j + 1,
                tok.form,
                if tok.upos.is_empty() { "_" } else { &tok.upos },
                tok.head,
                if tok.label.is_empty() { "_" } else { &tok.label },
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_file(dir: &tempfile::TempDir, contents: &str) -> std::path::PathBuf {
        let path = dir.path().join("t.conllu");
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn two_token_sentence() {
        let dir = tempdir().unwrap();
        let path = write_file(
            &dir,
            "1\tthe\t_\tDET\t_\t_\t2\tdet\t_\t_\n2\tcat\t_\tNOUN\t_\t_\t0\troot\t_\t_\n\n",
        );
        let sents = load_conllu(&path).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].tokens[1].head, 0);
        assert_eq!(sents[0].tokens[0].upos, "DET");
        assert_eq!(sents[0].tokens[0].label, "det");
    }

    #[test]
    fn comments_ignored() {
        let dir = tempdir().unwrap();
        let path = write_file(
            &dir,
            "# sent_id = s1\n# text = hi\n1\thi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n\n",
        );
        let sents = load_conllu(&path).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].len(), 1);
    }

    #[test]
    fn multiword_ranges_skipped() {
        let dir = tempdir().unwrap();
        let path = write_file(
            &dir,
            "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n\
             1\tde\t_\tADP\t_\t_\t2\tcase\t_\t_\n\
             2\tel\t_\tDET\t_\t_\t0\troot\t_\t_\n\n",
        );
        let sents = load_conllu(&path).unwrap();
        assert_eq!(sents[0].len(), 2);
        assert_eq!(sents[0].tokens[0].form, "de");
    }

    #[test]
    fn cycle_rejected_with_sentence_name() {
        let dir = tempdir().unwrap();
        let path = write_file(
            &dir,
            "# sent_id = bad-1\n\
             1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n\
             2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n\n",
        );
        let err = load_conllu(&path).unwrap_err().to_string();
        assert!(err.contains("bad-1"), "expected sentence name in {err}");
        assert!(err.contains("cycle"), "expected cycle report in {err}");
    }

    #[test]
    fn head_out_of_range_rejected() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "1\ta\t_\tX\t_\t_\t5\tdep\t_\t_\n\n");
        assert!(load_conllu(&path).is_err());
    }

    #[test]
    fn non_integer_head_rejected() {
        let dir = tempdir().unwrap();
        let path = write_file(&dir, "1\ta\t_\tX\t_\t_\t_\tdep\t_\t_\n\n");
        assert!(load_conllu(&path).is_err());
        assert!(load_conllu_lenient(&path).is_ok());
    }

    #[test]
    fn write_round_trips_through_loader() {
        let sent = Sentence {
            tokens: vec![
                Token {
                    form: "the".into(),
                    upos: "DET".into(),
                    head: 2,
                    label: "det".into(),
                },
                Token {
                    form: "end".into(),
                    upos: "NOUN".into(),
                    head: 0,
                    label: "root".into(),
                },
            ],
            language: String::new(),
        };
        let text = write_conllu(&[sent.clone()]);
        let dir = tempdir().unwrap();
        let path = write_file(&dir, &text);
        let loaded = load_conllu(&path).unwrap();
        assert_eq!(loaded, vec![sent]);
    }
}
