//! Multilingual training with random language alternation and early
//! stopping on the average dev LAS, plus UAS/LAS evaluation and CoNLL-U
//! emission for parsed input.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::model::{
    parse_sentence, sentence_loss_parts, EncodedSentence, ParserConfig, ParserModel,
};
use super::ParserError;
use crate::corpus_io::{AlignmentMatrix, ContextualOccurrence, Sentence};
use crate::neural::{AdamConfig, AdamState, Tape};

/// Join sentences with their contextual embeddings by (sentence id, position)
/// and map them through the language's alignment (identity for the pivot).
/// Token forms are cross-checked against the occurrence stream.
pub fn attach_embeddings(
    sentences: &[Sentence],
    occurrences: &[ContextualOccurrence],
    alignment: Option<&AlignmentMatrix>,
) -> Result<Vec<EncodedSentence>, ParserError> {
    let mut by_pos: std::collections::HashMap<(u64, u64), &ContextualOccurrence> =
        std::collections::HashMap::new();
    for occ in occurrences {
        by_pos.insert((occ.sentence_id, occ.position), occ);
    }
    let mut out = Vec::with_capacity(sentences.len());
    for (sid, sent) in sentences.iter().enumerate() {
        let mut embeddings = Vec::with_capacity(sent.len());
        for (pos, tok) in sent.tokens.iter().enumerate() {
            let occ = by_pos.get(&(sid as u64, pos as u64)).ok_or_else(|| {
                ParserError::Data(format!(
                    "no occurrence for sentence {sid} position {pos} ({})",
                    tok.form
                ))
            })?;
            if occ.token != tok.form {
                return Err(ParserError::Data(format!(
                    "occurrence token {:?} does not match treebank form {:?} at sentence {sid} position {pos}",
                    occ.token, tok.form
                )));
            }
            let vector = match alignment {
                Some(w) => {
                    if w.dim() != occ.vector.len() {
                        return Err(ParserError::Data(format!(
                            "alignment dim {} vs embedding dim {}",
                            w.dim(),
                            occ.vector.len()
                        )));
                    }
                    w.matrix.matvec(&occ.vector)
                }
                None => occ.vector.clone(),
            };
            embeddings.push(vector);
        }
        out.push(EncodedSentence {
            sentence: sent.clone(),
            embeddings,
        });
    }
    Ok(out)
}

/// Attachment scores in percent.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Attachment {
    pub uas: f64,
    pub las: f64,
    pub tokens: usize,
}

/// Attachment counting against gold trees, one prediction per sentence.
pub fn score_attachment(
    gold: &[Sentence],
    predicted: &[super::model::ParseResult],
    exclude_punct: bool,
) -> Result<Attachment, ParserError> {
    if gold.len() != predicted.len() {
        return Err(ParserError::Data("one prediction per sentence required".into()));
    }
    let mut heads = 0usize;
    let mut both = 0usize;
    let mut tokens = 0usize;
    for (sent, parsed) in gold.iter().zip(predicted) {
        if parsed.heads.len() != sent.len() {
            return Err(ParserError::Data("prediction length mismatch".into()));
        }
        for (j, tok) in sent.tokens.iter().enumerate() {
            if exclude_punct && tok.upos == "PUNCT" {
                continue;
            }
            tokens += 1;
            if parsed.heads[j] == tok.head {
                heads += 1;
                if parsed.labels[j] == tok.label {
                    both += 1;
                }
            }
        }
    }
    if tokens == 0 {
        return Err(ParserError::Data("no tokens to evaluate".into()));
    }
    Ok(Attachment {
        uas: 100.0 * heads as f64 / tokens as f64,
        las: 100.0 * both as f64 / tokens as f64,
        tokens,
    })
}

/// UAS/LAS over a set of sentences. All tokens count unless `exclude_punct`
/// drops UPOS == PUNCT tokens from the denominator.
pub fn evaluate(
    model: &ParserModel,
    data: &[EncodedSentence],
    exclude_punct: bool,
) -> Result<Attachment, ParserError> {
    let predictions: Vec<super::model::ParseResult> = data
        .par_iter()
        .map(|item| parse_sentence(model, item))
        .collect::<Result<_, _>>()?;
    let gold: Vec<Sentence> = data.iter().map(|d| d.sentence.clone()).collect();
    score_attachment(&gold, &predictions, exclude_punct)
}

/// Parse sentences and return copies carrying predicted heads and labels.
pub fn parse_to_sentences(
    model: &ParserModel,
    data: &[EncodedSentence],
) -> Result<Vec<Sentence>, ParserError> {
    data.par_iter()
        .map(|item| {
            let parsed = parse_sentence(model, item)?;
            let mut sent = item.sentence.clone();
            for (j, tok) in sent.tokens.iter_mut().enumerate() {
                tok.head = parsed.heads[j];
                tok.label = parsed.labels[j].clone();
            }
            Ok(sent)
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ParserTrainReport {
    /// Average dev LAS across languages after each epoch.
    pub epoch_dev_las: Vec<f64>,
    pub best_epoch: usize,
    pub best_dev_las: f64,
    pub epoch_train_loss: Vec<f64>,
}

/// Train on one or more languages: at every step a language is drawn
/// uniformly and a batch of its sentences sampled. Early stopping watches
/// the average dev LAS across all training languages; the best checkpoint
/// is returned.
pub fn train_parser(
    train: &BTreeMap<String, Vec<EncodedSentence>>,
    dev: &BTreeMap<String, Vec<EncodedSentence>>,
    cfg: &ParserConfig,
) -> Result<(ParserModel, ParserTrainReport), ParserError> {
    cfg.validate()?;
    if train.is_empty() || train.values().any(|v| v.is_empty()) {
        return Err(ParserError::Data("every training language needs sentences".into()));
    }
    if dev.is_empty() || dev.values().any(|v| v.is_empty()) {
        return Err(ParserError::MissingDev);
    }

    // Shared inventories and input dimension from the training data.
    let mut labels: Vec<String> = train
        .values()
        .flatten()
        .flat_map(|s| s.sentence.tokens.iter().map(|t| t.label.clone()))
        .collect();
    labels.sort();
    labels.dedup();
    let mut pos_tags: Vec<String> = train
        .values()
        .flatten()
        .flat_map(|s| s.sentence.tokens.iter().map(|t| t.upos.clone()))
        .collect();
    pos_tags.sort();
    pos_tags.dedup();
    let emb_dim = train
        .values()
        .flatten()
        .flat_map(|s| s.embeddings.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| ParserError::Data("no embeddings in training data".into()))?;
    for item in train.values().flatten().chain(dev.values().flatten()) {
        for e in &item.embeddings {
            if e.len() != emb_dim {
                return Err(ParserError::Data(format!(
                    "embedding dims differ: {} vs {}",
                    e.len(),
                    emb_dim
                )));
            }
        }
    }

    let mut model = ParserModel::new(cfg, emb_dim, labels, pos_tags)?;
    let languages: Vec<&String> = train.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x70617273));
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));

    let mut report = ParserTrainReport::default();
    let mut best: Option<(f64, crate::neural::ParamStore)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut seen = 0usize;
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        while seen < cfg.instances_per_epoch {
            let lang = languages[rng.gen_range(0..languages.len())];
            let pool = &train[lang];
            let take = cfg.batch_sentences.min(pool.len());
            let batch_idx = sample(&mut rng, pool.len(), take);

            let mut tape = Tape::new();
            let mut arc_logit_ids = Vec::new();
            let mut arc_targets = Vec::new();
            let mut label_logit_ids = Vec::new();
            let mut label_targets = Vec::new();
            for ix in batch_idx {
                let item = &pool[ix];
                let (arc_rows, heads, label_rows, lids) =
                    sentence_loss_parts(&mut tape, &model, item, true, &mut rng)?;
                arc_logit_ids.push(arc_rows);
                arc_targets.extend(heads);
                label_logit_ids.push(label_rows);
                label_targets.extend(lids);
            }
            // Sentences vary in length, so arc logit widths vary; the arc
            // loss is accumulated per sentence and averaged by token count.
            let mut arc_losses = Vec::new();
            let mut off = 0usize;
            for id in &arc_logit_ids {
                let rows = tape.value(*id).rows();
                let sce = tape.softmax_cross_entropy(*id, &arc_targets[off..off + rows]);
                let weighted = tape.scale(sce, rows as f64);
                arc_losses.push(weighted);
                off += rows;
            }
            let total_tokens = off.max(1) as f64;
            let mut arc_sum = arc_losses[0];
            for l in &arc_losses[1..] {
                arc_sum = tape.add(arc_sum, *l);
            }
            let arc_loss = tape.scale(arc_sum, 1.0 / total_tokens);

            let labels_all = tape.concat_rows(&label_logit_ids);
            let label_loss = tape.softmax_cross_entropy(labels_all, &label_targets);
            let loss = tape.add(arc_loss, label_loss);

            tape.backward(loss);
            adam.step(&mut model.params, &tape);
            epoch_loss += tape.value(loss).item();
            steps += 1;
            seen += take;
        }
        report.epoch_train_loss.push(epoch_loss / steps.max(1) as f64);

        // Average dev LAS across languages.
        let mut las_sum = 0.0;
        for sentences in dev.values() {
            las_sum += evaluate(&model, sentences, false)?.las;
        }
        let avg_las = las_sum / dev.len() as f64;
        report.epoch_dev_las.push(avg_las);
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev LAS {avg_las:.2}",
            report.epoch_train_loss.last().unwrap()
        );

        if best.as_ref().map_or(true, |(b, _)| avg_las > *b) {
            best = Some((avg_las, model.params.clone()));
            report.best_epoch = epoch;
            report.best_dev_las = avg_las;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch} (patience {})", cfg.patience);
                break;
            }
        }
    }

    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::Token;
    use crate::parser::model::ParseResult;
    use crate::synth::{toy_treebank_pair, ToyTreebankParams};
    use std::collections::HashMap;

    /// Deterministic per-word-type embeddings, mimicking a static layer.
    fn type_embeddings(sentences: &[Sentence], dim: usize, seed: u64) -> Vec<EncodedSentence> {
        let mut lexicon: HashMap<String, Vec<f64>> = HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sentences
            .iter()
            .map(|sent| {
                let embeddings = sent
                    .tokens
                    .iter()
                    .map(|t| {
                        lexicon
                            .entry(t.form.clone())
                            .or_insert_with(|| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                            .clone()
                    })
                    .collect();
                EncodedSentence {
                    sentence: sent.clone(),
                    embeddings,
                }
            })
            .collect()
    }

    fn overfit_config() -> ParserConfig {
        ParserConfig {
            pos_dim: 8,
            lstm_hidden: 24,
            lstm_layers: 1,
            dropout: 0.0,
            arc_mlp_dim: 32,
            rel_mlp_dim: 16,
            batch_sentences: 16,
            instances_per_epoch: 32,
            max_epochs: 120,
            patience: 120,
            lr: 4e-3,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn overfits_small_treebank() {
        let pair = toy_treebank_pair(&ToyTreebankParams {
            train_sentences: 32,
            dev_sentences: 0,
            test_sentences: 0,
            raw_sentences: 0,
            seed: 21,
        });
        let data = type_embeddings(&pair.lang_a.train, 12, 3);
        let mut train = BTreeMap::new();
        train.insert("toy-a".to_string(), data.clone());
        let mut dev = BTreeMap::new();
        dev.insert("toy-a".to_string(), data.clone());
        let (model, report) = train_parser(&train, &dev, &overfit_config()).unwrap();
        let att = evaluate(&model, &data, false).unwrap();
        assert!(
            att.uas >= 95.0,
            "training UAS {} after {} epochs",
            att.uas,
            report.epoch_dev_las.len()
        );
        assert!(att.las <= att.uas + 1e-12);
    }

    #[test]
    fn identical_language_copies_score_identically() {
        let pair = toy_treebank_pair(&ToyTreebankParams {
            train_sentences: 24,
            dev_sentences: 12,
            test_sentences: 0,
            raw_sentences: 0,
            seed: 31,
        });
        let train_data = type_embeddings(&pair.lang_a.train, 10, 7);
        let dev_data = type_embeddings(&pair.lang_a.dev, 10, 7);
        let mut train = BTreeMap::new();
        train.insert("copy-1".to_string(), train_data.clone());
        train.insert("copy-2".to_string(), train_data);
        let mut dev = BTreeMap::new();
        dev.insert("copy-1".to_string(), dev_data.clone());
        dev.insert("copy-2".to_string(), dev_data.clone());
        let cfg = ParserConfig {
            max_epochs: 8,
            patience: 8,
            ..overfit_config()
        };
        let (model, _) = train_parser(&train, &dev, &cfg).unwrap();
        let a = evaluate(&model, &dev["copy-1"], false).unwrap();
        let b = evaluate(&model, &dev["copy-2"], false).unwrap();
        assert!((a.las - b.las).abs() <= 1.0, "{} vs {}", a.las, b.las);
    }

    #[test]
    fn missing_dev_is_an_error() {
        let pair = toy_treebank_pair(&ToyTreebankParams {
            train_sentences: 4,
            dev_sentences: 0,
            test_sentences: 0,
            raw_sentences: 0,
            seed: 41,
        });
        let data = type_embeddings(&pair.lang_a.train, 6, 9);
        let mut train = BTreeMap::new();
        train.insert("toy-a".to_string(), data);
        let dev = BTreeMap::new();
        assert!(matches!(
            train_parser(&train, &dev, &overfit_config()),
            Err(ParserError::MissingDev)
        ));
    }

    #[test]
    fn attachment_counting_examples() {
        let gold = vec![Sentence {
            tokens: vec![
                Token {
                    form: "a".into(),
                    upos: "DET".into(),
                    head: 2,
                    label: "det".into(),
                },
                Token {
                    form: "b".into(),
                    upos: "NOUN".into(),
                    head: 0,
                    label: "root".into(),
                },
            ],
            language: String::new(),
        }];
        let perfect = vec![ParseResult {
            heads: vec![2, 0],
            labels: vec!["det".into(), "root".into()],
        }];
        let att = score_attachment(&gold, &perfect, false).unwrap();
        assert_eq!((att.uas, att.las), (100.0, 100.0));

        let wrong_labels = vec![ParseResult {
            heads: vec![2, 0],
            labels: vec!["obj".into(), "nsubj".into()],
        }];
        let att = score_attachment(&gold, &wrong_labels, false).unwrap();
        assert_eq!((att.uas, att.las), (100.0, 0.0));

        let wrong_heads = vec![ParseResult {
            heads: vec![0, 1],
            labels: vec!["det".into(), "root".into()],
        }];
        let att = score_attachment(&gold, &wrong_heads, false).unwrap();
        assert_eq!((att.uas, att.las), (0.0, 0.0));
    }

    #[test]
    fn las_never_exceeds_uas() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let labels = ["det", "root", "nsubj", "obj"];
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let gold = vec![Sentence {
                tokens: (0..n)
                    .map(|i| Token {
                        form: format!("w{i}"),
                        upos: "X".into(),
                        head: rng.gen_range(0..=n).min(if rng.gen() { 0 } else { n }),
                        label: labels[rng.gen_range(0..labels.len())].into(),
                    })
                    .collect(),
                language: String::new(),
            }];
            let pred = vec![ParseResult {
                heads: (0..n).map(|_| rng.gen_range(0..=n)).collect(),
                labels: (0..n)
                    .map(|_| labels[rng.gen_range(0..labels.len())].to_string())
                    .collect(),
            }];
            let att = score_attachment(&gold, &pred, false).unwrap();
            assert!(att.las <= att.uas + 1e-12);
        }
    }

    #[test]
    fn punctuation_exclusion_changes_denominator() {
        let gold = vec![Sentence {
            tokens: vec![
                Token {
                    form: "hi".into(),
                    upos: "INTJ".into(),
                    head: 0,
                    label: "root".into(),
                },
                Token {
                    form: "!".into(),
                    upos: "PUNCT".into(),
                    head: 1,
                    label: "punct".into(),
                },
            ],
            language: String::new(),
        }];
        let pred = vec![ParseResult {
            heads: vec![0, 0],
            labels: vec!["root".into(), "punct".into()],
        }];
        let all = score_attachment(&gold, &pred, false).unwrap();
        assert_eq!(all.tokens, 2);
        assert_eq!(all.uas, 50.0);
        let no_punct = score_attachment(&gold, &pred, true).unwrap();
        assert_eq!(no_punct.tokens, 1);
        assert_eq!(no_punct.uas, 100.0);
    }

    #[test]
    fn parse_round_trips_and_single_root_invariant() {
        let pair = toy_treebank_pair(&ToyTreebankParams {
            train_sentences: 12,
            dev_sentences: 6,
            test_sentences: 0,
            raw_sentences: 0,
            seed: 61,
        });
        let train_data = type_embeddings(&pair.lang_a.train, 8, 11);
        let mut train = BTreeMap::new();
        train.insert("toy-a".to_string(), train_data.clone());
        let mut dev = BTreeMap::new();
        dev.insert("toy-a".to_string(), type_embeddings(&pair.lang_a.dev, 8, 11));
        let cfg = ParserConfig {
            max_epochs: 2,
            patience: 2,
            ..overfit_config()
        };
        let (model, _) = train_parser(&train, &dev, &cfg).unwrap();

        let parsed = parse_to_sentences(&model, &train_data).unwrap();
        for sent in &parsed {
            sent.validate_tree().expect("predicted tree must be valid");
            assert_eq!(
                sent.tokens.iter().filter(|t| t.head == 0).count(),
                1,
                "single-root invariant"
            );
        }
        // Deterministic.
        let again = parse_to_sentences(&model, &train_data).unwrap();
        assert_eq!(parsed, again);

        // Emitted CoNLL-U loads back with identical heads and labels.
        let text = crate::corpus_io::write_conllu(&parsed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.conllu");
        std::fs::write(&path, &text).unwrap();
        let loaded = crate::corpus_io::load_conllu(&path).unwrap();
        assert_eq!(loaded.len(), parsed.len());
        for (a, b) in loaded.iter().zip(&parsed) {
            for (x, y) in a.tokens.iter().zip(&b.tokens) {
                assert_eq!(x.head, y.head);
                assert_eq!(x.label, y.label);
            }
        }
    }
}
