//! A miniature word-level bidirectional language model. It supplies the
//! static (layer 0) and contextual (layer 1) representations for the rest of
//! the pipeline, and can be trained with an anchor regularizer that pulls
//! the input embeddings of dictionary words toward a frozen target table.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor_space::compute_anchors;
use crate::corpus_io::{AnchorTable, ContextualOccurrence, Dictionary};
use crate::neural::{
    init, lstm_sequence, register_lstm, tensors_from_bytes, tensors_to_bytes, AdamConfig,
    AdamState, LstmParams, NodeId, ParamStore, Tape, Tensor,
};

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum BiLmError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("lambda_anchor > 0 requires a dictionary and target anchor table")]
    MissingAnchorTargets,
    #[error("no dictionary source word intersects the vocabulary")]
    EmptyAnchorIntersection,
    #[error("anchor target table has dim {got}, embeddings have dim {expected}")]
    AnchorDimMismatch { expected: usize, got: usize },
    #[error("bad model file: {0}")]
    ModelFormat(String),
    #[error("model I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Anchor(#[from] crate::anchor_space::AnchorError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiLMConfig {
    /// Keep at most this many word types (by frequency).
    pub vocab_cap: usize,
    pub emb_dim: usize,
    /// Hidden size per direction.
    pub hidden: usize,
    /// Recurrent layers per direction.
    pub layers: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Weight of the anchored regularizer; 0 disables it entirely.
    pub lambda_anchor: f64,
    pub seed: u64,
}

impl Default for BiLMConfig {
    fn default() -> Self {
        BiLMConfig {
            vocab_cap: 50_000,
            emb_dim: 64,
            hidden: 64,
            layers: 1,
            epochs: 10,
            batch: 32,
            lr: 1e-3,
            lambda_anchor: 0.0,
            seed: 0,
        }
    }
}

/// Frozen target side of the anchored regularizer.
pub struct AnchorTargets<'a> {
    pub dictionary: &'a Dictionary,
    pub table: &'a AnchorTable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn build(corpus: &[Vec<String>], cap: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sent in corpus {
            for tok in sent {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);

        let mut words = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
        let mut counts = vec![0, 0, 0];
        for (w, c) in ranked {
            words.push(w.to_string());
            counts.push(c);
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            counts,
            index,
        }
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id_of(token).unwrap_or(2)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Total size including the `<bos>`, `<eos>`, `<unk>` specials; this is
    /// also the softmax inventory.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub struct BiLMModel {
    pub vocab: Vocabulary,
    pub emb_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub params: ParamStore,
}

/// Per-epoch training curve.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub dev_perplexities: Vec<f64>,
}

struct RegularizerRows {
    vocab_ids: Vec<usize>,
    targets: Tensor,
}

/// For each dictionary source word in vocabulary, the mean of its target
/// translations' anchor vectors; the regularizer pulls the word's embedding
/// toward that row.
fn regularizer_rows(
    vocab: &Vocabulary,
    emb_dim: usize,
    targets: &AnchorTargets,
) -> Result<RegularizerRows, BiLmError> {
    if targets.table.dim() != emb_dim {
        return Err(BiLmError::AnchorDimMismatch {
            expected: emb_dim,
            got: targets.table.dim(),
        });
    }
    let mut vocab_ids = Vec::new();
    let mut rows = Vec::new();
    let mut misses = 0usize;
    for source in targets.dictionary.sources() {
        let Some(id) = vocab.id_of(source) else {
            misses += 1;
            continue;
        };
        let translated: Vec<&[f64]> = targets
            .dictionary
            .targets_of(source)
            .filter_map(|t| targets.table.vector_of(t))
            .collect();
        if translated.is_empty() {
            misses += 1;
            continue;
        }
        let mut mean = vec![0.0; emb_dim];
        for v in &translated {
            for (m, x) in mean.iter_mut().zip(*v) {
                *m += x / translated.len() as f64;
            }
        }
        vocab_ids.push(id);
        rows.extend_from_slice(&mean);
    }
    if misses > 0 {
        log::warn!("anchored regularizer: {misses} dictionary entries missed vocabulary or target table");
    }
    if vocab_ids.is_empty() {
        return Err(BiLmError::EmptyAnchorIntersection);
    }
    let targets = Tensor::matrix(vocab_ids.len(), emb_dim, rows);
    Ok(RegularizerRows { vocab_ids, targets })
}

fn sentence_ids(vocab: &Vocabulary, sent: &[String]) -> Vec<usize> {
    sent.iter().map(|t| vocab.id_or_unk(t)).collect()
}

/// Forward LM rows for one direction: inputs (with the boundary special
/// prepended) and the prediction targets.
fn direction_ids(ids: &[usize], reverse: bool) -> (Vec<usize>, Vec<usize>) {
    if reverse {
        let mut rev: Vec<usize> = ids.iter().rev().copied().collect();
        let mut inputs = vec![1]; // <eos>
        inputs.append(&mut rev.clone());
        rev.push(0); // predict <bos> at the far edge
        (inputs, rev)
    } else {
        let mut inputs = vec![0]; // <bos>
        inputs.extend_from_slice(ids);
        let mut targets = ids.to_vec();
        targets.push(1); // <eos>
        (inputs, targets)
    }
}

struct BoundLm {
    emb: NodeId,
    fwd: Vec<LstmParams>,
    bwd: Vec<LstmParams>,
    out_w: NodeId,
    out_b: NodeId,
}

fn bind_lm(store: &ParamStore, tape: &mut Tape, layers: usize) -> BoundLm {
    BoundLm {
        emb: store.bind(tape, "emb"),
        fwd: (0..layers)
            .map(|l| LstmParams::bind(store, tape, &format!("fwd.l{l}")))
            .collect(),
        bwd: (0..layers)
            .map(|l| LstmParams::bind(store, tape, &format!("bwd.l{l}")))
            .collect(),
        out_w: store.bind(tape, "out.w"),
        out_b: store.bind(tape, "out.b"),
    }
}

/// Stacked top-layer states over the direction's input sequence.
fn run_direction(
    tape: &mut Tape,
    lm: &BoundLm,
    hidden: usize,
    inputs: &[usize],
    reverse_params: bool,
) -> NodeId {
    let looked_up = tape.gather_rows(lm.emb, inputs);
    let params = if reverse_params { &lm.bwd } else { &lm.fwd };
    let mut layer_input = looked_up;
    for p in params {
        let states = lstm_sequence(tape, layer_input, *p, hidden, false);
        layer_input = tape.concat_rows(&states);
    }
    layer_input
}

/// Logits over the vocabulary for one direction of one sentence.
fn direction_logits(
    tape: &mut Tape,
    lm: &BoundLm,
    hidden: usize,
    inputs: &[usize],
    reverse_params: bool,
) -> NodeId {
    let top = run_direction(tape, lm, hidden, inputs, reverse_params);
    let logits = tape.matmul(top, lm.out_w);
    tape.add_row_broadcast(logits, lm.out_b)
}

/// Train the bidirectional LM. The loss per batch is the mean forward NLL
/// plus the mean backward NLL plus, when `lambda_anchor > 0`, the full-sum
/// anchored regularizer (no regularizer nodes are built at λ = 0, so the
/// trajectory is bit-identical to a run without the term).
pub fn train_bilm(
    corpus: &[Vec<String>],
    dev: Option<&[Vec<String>]>,
    cfg: &BiLMConfig,
    anchor_targets: Option<AnchorTargets>,
) -> Result<(BiLMModel, TrainHistory), BiLmError> {
    if corpus.is_empty() {
        return Err(BiLmError::EmptyCorpus);
    }
    if cfg.lambda_anchor > 0.0 && anchor_targets.is_none() {
        return Err(BiLmError::MissingAnchorTargets);
    }
    if cfg.layers == 0 || cfg.hidden == 0 || cfg.emb_dim == 0 || cfg.batch == 0 {
        return Err(BiLmError::ModelFormat(
            "layers, hidden, emb_dim and batch must be positive".into(),
        ));
    }

    let vocab = Vocabulary::build(corpus, cfg.vocab_cap);
    let vocab_size = vocab.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    store.insert("emb", init::xavier_uniform(&mut rng, vocab_size, cfg.emb_dim));
    for l in 0..cfg.layers {
        let in_dim = if l == 0 { cfg.emb_dim } else { cfg.hidden };
        register_lstm(&mut store, &format!("fwd.l{l}"), in_dim, cfg.hidden, &mut rng);
        register_lstm(&mut store, &format!("bwd.l{l}"), in_dim, cfg.hidden, &mut rng);
    }
    store.insert("out.w", init::xavier_uniform(&mut rng, cfg.hidden, vocab_size));
    store.insert("out.b", init::zeros_vec(vocab_size));

    let reg = match (&anchor_targets, cfg.lambda_anchor > 0.0) {
        (Some(t), true) => Some(regularizer_rows(&vocab, cfg.emb_dim, t)?),
        _ => None,
    };

    let sentences: Vec<Vec<usize>> = corpus.iter().map(|s| sentence_ids(&vocab, s)).collect();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr));
    let mut history = TrainHistory::default();

    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let lm = bind_lm(&store, &mut tape, cfg.layers);

            let mut fwd_logits = Vec::new();
            let mut fwd_targets = Vec::new();
            let mut bwd_logits = Vec::new();
            let mut bwd_targets = Vec::new();
            for &si in chunk {
                let ids = &sentences[si];
                let (fin, ftgt) = direction_ids(ids, false);
                fwd_logits.push(direction_logits(&mut tape, &lm, cfg.hidden, &fin, false));
                fwd_targets.extend(ftgt);
                let (bin, btgt) = direction_ids(ids, true);
                bwd_logits.push(direction_logits(&mut tape, &lm, cfg.hidden, &bin, true));
                bwd_targets.extend(btgt);
            }
            let fwd_all = tape.concat_rows(&fwd_logits);
            let bwd_all = tape.concat_rows(&bwd_logits);
            let fwd_nll = tape.softmax_cross_entropy(fwd_all, &fwd_targets);
            let bwd_nll = tape.softmax_cross_entropy(bwd_all, &bwd_targets);
            let mut loss = tape.add(fwd_nll, bwd_nll);

            if let Some(reg) = &reg {
                let rows = tape.gather_rows(lm.emb, &reg.vocab_ids);
                let frozen = tape.leaf(reg.targets.clone());
                let diff = tape.sub(rows, frozen);
                let penalty = tape.sqnorm(diff);
                let scaled = tape.scale(penalty, cfg.lambda_anchor);
                loss = tape.add(loss, scaled);
            }

            tape.backward(loss);
            adam.step(&mut store, &tape);
            epoch_loss += tape.value(loss).item();
            batches += 1;
        }
        let mean_loss = epoch_loss / batches.max(1) as f64;
        history.epoch_losses.push(mean_loss);

        let model = BiLMModel {
            vocab: vocab.clone(),
            emb_dim: cfg.emb_dim,
            hidden: cfg.hidden,
            layers: cfg.layers,
            params: store.clone(),
        };
        if let Some(dev) = dev {
            let ppl = perplexity(&model, dev)?;
            history.dev_perplexities.push(ppl);
            log::info!("epoch {epoch}: train loss {mean_loss:.4}, dev perplexity {ppl:.2}");
        } else {
            log::info!("epoch {epoch}: train loss {mean_loss:.4}");
        }
    }

    Ok((
        BiLMModel {
            vocab,
            emb_dim: cfg.emb_dim,
            hidden: cfg.hidden,
            layers: cfg.layers,
            params: store,
        },
        history,
    ))
}

/// `exp` of the per-token NLL averaged over the two directions.
pub fn perplexity(model: &BiLMModel, corpus: &[Vec<String>]) -> Result<f64, BiLmError> {
    if corpus.is_empty() {
        return Err(BiLmError::EmptyCorpus);
    }
    let mut total_nll = 0.0;
    let mut predictions = 0usize;
    for sent in corpus {
        if sent.is_empty() {
            continue;
        }
        let ids = sentence_ids(&model.vocab, sent);
        let mut tape = Tape::new();
        let lm = bind_lm(&model.params, &mut tape, model.layers);
        for reverse in [false, true] {
            let (inputs, targets) = direction_ids(&ids, reverse);
            let logits = direction_logits(&mut tape, &lm, model.hidden, &inputs, reverse);
            let nll = tape.softmax_cross_entropy(logits, &targets);
            total_nll += tape.value(nll).item() * targets.len() as f64;
            predictions += targets.len();
        }
    }
    if predictions == 0 {
        return Err(BiLmError::EmptyCorpus);
    }
    Ok((total_nll / predictions as f64).exp())
}

/// Emit one occurrence per corpus token. Layer 0 is the context-independent
/// input embedding row; layer 1 concatenates the first recurrent layer's
/// forward and backward states (dim `2·hidden`). Unknown tokens map to the
/// `<unk>` embedding and are counted.
pub fn embed_corpus(
    model: &BiLMModel,
    corpus: &[Vec<String>],
    layer: u8,
) -> Result<(Vec<ContextualOccurrence>, usize), BiLmError> {
    let mut occurrences = Vec::new();
    let mut unknown = 0usize;
    for (sid, sent) in corpus.iter().enumerate() {
        if sent.is_empty() {
            continue;
        }
        let ids = sentence_ids(&model.vocab, sent);
        unknown += ids.iter().filter(|&&i| i == 2).count();
        match layer {
            0 => {
                let emb = model.params.get("emb");
                for (pos, (&id, tok)) in ids.iter().zip(sent).enumerate() {
                    occurrences.push(ContextualOccurrence {
                        token: tok.clone(),
                        sentence_id: sid as u64,
                        position: pos as u64,
                        vector: emb.row(id).to_vec(),
                    });
                }
            }
            1 => {
                let n = ids.len();
                let mut tape = Tape::new();
                let lm = bind_lm(&model.params, &mut tape, model.layers);
                let (fin, _) = direction_ids(&ids, false);
                let (bin, _) = direction_ids(&ids, true);
                let fwd_first = first_layer_states(&mut tape, &lm, model.hidden, &fin, false);
                let bwd_first = first_layer_states(&mut tape, &lm, model.hidden, &bin, true);
                for (pos, tok) in sent.iter().enumerate() {
                    // Token i sits at input row i+1 of the forward sequence
                    // and at row n-i of the reversed one.
                    let f = tape.value(fwd_first).row(pos + 1).to_vec();
                    let b = tape.value(bwd_first).row(n - pos).to_vec();
                    let mut vector = f;
                    vector.extend(b);
                    occurrences.push(ContextualOccurrence {
                        token: tok.clone(),
                        sentence_id: sid as u64,
                        position: pos as u64,
                        vector,
                    });
                }
            }
            other => {
                return Err(BiLmError::ModelFormat(format!(
                    "layer must be 0 or 1, got {other}"
                )))
            }
        }
    }
    if unknown > 0 {
        log::warn!("embed_corpus: {unknown} occurrences mapped to {UNK}");
    }
    Ok((occurrences, unknown))
}

fn first_layer_states(
    tape: &mut Tape,
    lm: &BoundLm,
    hidden: usize,
    inputs: &[usize],
    reverse_params: bool,
) -> NodeId {
    let looked_up = tape.gather_rows(lm.emb, inputs);
    let params = if reverse_params { &lm.bwd[0] } else { &lm.fwd[0] };
    let states = lstm_sequence(tape, looked_up, *params, hidden, false);
    tape.concat_rows(&states)
}

/// Layer-1 anchors of a corpus: embed, then average per token.
pub fn anchors_of(
    model: &BiLMModel,
    corpus: &[Vec<String>],
    min_count: u64,
    alphabetic_only: bool,
) -> Result<AnchorTable, BiLmError> {
    let (occurrences, _) = embed_corpus(model, corpus, 1)?;
    Ok(compute_anchors(
        2 * model.hidden,
        occurrences,
        min_count,
        alphabetic_only,
        "bilm-layer1",
    )?)
}

// ---------------------------------------------------------------------------
// model file
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"XLBM";

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    vocab: Vocabulary,
    emb_dim: usize,
    hidden: usize,
    layers: usize,
}

impl BiLMModel {
    pub fn save(&self, path: &Path) -> Result<(), BiLmError> {
        let meta = serde_json::to_vec(&ModelMeta {
            vocab: self.vocab.clone(),
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            layers: self.layers,
        })
        .map_err(|e| BiLmError::ModelFormat(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&tensors_to_bytes(
            self.params.iter().map(|(n, t)| (n.to_string(), t.clone())),
        ));
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BiLMModel, BiLmError> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 16 || &bytes[0..4] != MODEL_MAGIC {
            return Err(BiLmError::ModelFormat("bad magic".into()));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + meta_len {
            return Err(BiLmError::ModelFormat("truncated metadata".into()));
        }
        let mut meta: ModelMeta = serde_json::from_slice(&bytes[16..16 + meta_len])
            .map_err(|e| BiLmError::ModelFormat(e.to_string()))?;
        meta.vocab.rebuild_index();
        let mut params = ParamStore::new();
        for (name, tensor) in tensors_from_bytes(&bytes[16 + meta_len..])
            .map_err(|e| BiLmError::ModelFormat(e.to_string()))?
        {
            params.insert(name, tensor);
        }
        Ok(BiLMModel {
            vocab: meta.vocab,
            emb_dim: meta.emb_dim,
            hidden: meta.hidden,
            layers: meta.layers,
            params,
        })
    }
}
