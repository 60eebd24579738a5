//! Bilingual dictionaries: TSV with one `source<TAB>target` pair per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::types::Dictionary;
use super::CorpusError;

pub fn load_dictionary(path: &Path) -> Result<Dictionary, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // Accept tab- or space-separated pairs; exactly two fields per line.
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(CorpusError::parse(
                path,
                i + 1,
                format!("expected 2 fields, found {}", fields.len()),
            ));
        }
        pairs.push((fields[0].trim().to_string(), fields[1].trim().to_string()));
    }
    Ok(Dictionary::new(pairs))
}

pub fn save_dictionary(dict: &Dictionary, path: &Path) -> Result<(), CorpusError> {
    let mut file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = String::new();
    for (s, t) in dict.pairs() {
        out.push_str(s);
        out.push('\t');
        out.push_str(t);
        out.push('\n');
    }
    file.write_all(out.as_bytes())
        .map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn two_pairs() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "perro\tdog\ngato\tcat\n").unwrap();
        let dict = load_dictionary(&path).unwrap();
        assert_eq!(dict.len(), 2);
    }

    #[test]
    fn repeated_line_collapsed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "perro\tdog\nperro\tdog\n").unwrap();
        let dict = load_dictionary(&path).unwrap();
        assert_eq!(dict.len(), 1);
    }

    #[test]
    fn multiple_targets_retained() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "banco\tbank\nbanco\tbench\n").unwrap();
        let dict = load_dictionary(&path).unwrap();
        assert_eq!(dict.len(), 2);
        let targets: Vec<_> = dict.targets_of("banco").collect();
        assert_eq!(targets, vec!["bank", "bench"]);
    }

    #[test]
    fn wrong_field_count_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "perro\tdog\textra\n").unwrap();
        let err = load_dictionary(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"));
    }
}
