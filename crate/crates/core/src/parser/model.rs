//! Parser model: Bi-LSTM encoder over frozen aligned contextual embeddings
//! (plus optional POS embeddings), four MLP heads, biaffine arc and label
//! scorers. All parameters are shared across languages.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ParserError;
use crate::corpus_io::Sentence;
use crate::mat::Mat;
use crate::neural::{
    biaffine, bilstm_layer, init, register_lstm, tensors_from_bytes, tensors_to_bytes,
    LstmParams, NodeId, ParamStore, Tape, Tensor,
};

/// Hyperparameters. The defaults are the published parsing settings: 50-dim
/// POS embeddings, 3 Bi-LSTM layers of 200, dropout 0.33, 500/100 arc/label
/// MLPs, 32-sentence batches, 32k instances per epoch, 40 epochs max with
/// patience 10, Adam at its default rate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParserConfig {
    pub use_pos: bool,
    pub pos_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub dropout: f64,
    pub arc_mlp_dim: usize,
    pub rel_mlp_dim: usize,
    pub batch_sentences: usize,
    pub instances_per_epoch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub single_root: bool,
    pub seed: u64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            use_pos: true,
            pos_dim: 50,
            lstm_hidden: 200,
            lstm_layers: 3,
            dropout: 0.33,
            arc_mlp_dim: 500,
            rel_mlp_dim: 100,
            batch_sentences: 32,
            instances_per_epoch: 32_000,
            max_epochs: 40,
            patience: 10,
            lr: 1e-3,
            single_root: true,
            seed: 0,
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<(), ParserError> {
        if self.pos_dim == 0
            || self.lstm_hidden == 0
            || self.lstm_layers == 0
            || self.arc_mlp_dim == 0
            || self.rel_mlp_dim == 0
            || self.batch_sentences == 0
            || self.instances_per_epoch == 0
            || self.max_epochs == 0
        {
            return Err(ParserError::Config("dimensions and budgets must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(ParserError::Config("patience must not exceed max_epochs".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ParserError::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A sentence paired with its frozen, already-aligned contextual embeddings
/// (one vector per token, in the joint space).
#[derive(Clone, Debug)]
pub struct EncodedSentence {
    pub sentence: Sentence,
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Inventories {
    labels: Vec<String>,
    pos_tags: Vec<String>,
}

pub struct ParserModel {
    pub config: ParserConfig,
    /// Dimension of the (aligned) contextual input embeddings.
    pub emb_dim: usize,
    labels: Vec<String>,
    pos_tags: Vec<String>,
    pub params: ParamStore,
}

const ROOT_POS: usize = 0;
const UNK_POS: usize = 1;

impl ParserModel {
    pub fn new(
        config: &ParserConfig,
        emb_dim: usize,
        labels: Vec<String>,
        pos_tags: Vec<String>,
    ) -> Result<Self, ParserError> {
        config.validate()?;
        if labels.is_empty() {
            return Err(ParserError::Config("label inventory is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let input_dim = emb_dim + if config.use_pos { config.pos_dim } else { 0 };

        params.insert("root_emb", init::xavier_uniform(&mut rng, 1, emb_dim));
        if config.use_pos {
            params.insert(
                "pos_emb",
                init::xavier_uniform(&mut rng, pos_tags.len() + 2, config.pos_dim),
            );
        }
        for l in 0..config.lstm_layers {
            let in_dim = if l == 0 { input_dim } else { 2 * config.lstm_hidden };
            register_lstm(&mut params, &format!("enc.l{l}.fwd"), in_dim, config.lstm_hidden, &mut rng);
            register_lstm(&mut params, &format!("enc.l{l}.bwd"), in_dim, config.lstm_hidden, &mut rng);
        }
        let enc_out = 2 * config.lstm_hidden;
        for (name, dim) in [
            ("arc_dep", config.arc_mlp_dim),
            ("arc_head", config.arc_mlp_dim),
            ("rel_dep", config.rel_mlp_dim),
            ("rel_head", config.rel_mlp_dim),
        ] {
            params.insert(format!("mlp.{name}.w"), init::xavier_uniform(&mut rng, enc_out, dim));
            params.insert(format!("mlp.{name}.b"), init::zeros_vec(dim));
        }
        let p = config.arc_mlp_dim;
        let q = config.rel_mlp_dim;
        let r = labels.len();
        params.insert("arc.u", init::xavier_uniform(&mut rng, p, p));
        params.insert("arc.b", init::xavier_uniform(&mut rng, p, 1));
        params.insert("rel.u", init::xavier_uniform(&mut rng, q, r * q));
        params.insert("rel.head", init::xavier_uniform(&mut rng, q, r));
        params.insert("rel.dep", init::xavier_uniform(&mut rng, q, r));
        params.insert("rel.b", init::zeros_vec(r));

        Ok(ParserModel {
            config: config.clone(),
            emb_dim,
            labels,
            pos_tags,
            params,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn pos_id(&self, upos: &str) -> usize {
        self.pos_tags
            .iter()
            .position(|p| p == upos)
            .map(|i| i + 2)
            .unwrap_or(UNK_POS)
    }
}

/// Bound graph nodes produced by one encode pass: per-position encoder
/// states and the four MLP views (rows 0..=n, row 0 is the ROOT).
pub struct EncodeOutput {
    pub arc_dep: NodeId,
    pub arc_head: NodeId,
    pub rel_dep: NodeId,
    pub rel_head: NodeId,
}

/// Run the encoder over one sentence. `train` controls dropout; the RNG
/// drives the dropout masks only.
pub fn encode(
    tape: &mut Tape,
    model: &ParserModel,
    item: &EncodedSentence,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EncodeOutput, ParserError> {
    let n = item.sentence.len();
    if item.embeddings.len() != n {
        return Err(ParserError::Data(format!(
            "{} embeddings for {} tokens",
            item.embeddings.len(),
            n
        )));
    }
    let cfg = &model.config;
    for (i, e) in item.embeddings.iter().enumerate() {
        if e.len() != model.emb_dim {
            return Err(ParserError::Data(format!(
                "token {} has embedding dim {}, model expects {}",
                i + 1,
                e.len(),
                model.emb_dim
            )));
        }
    }

    // Token matrix with the trainable ROOT embedding prepended.
    let root = model.params.bind(tape, "root_emb");
    let mut flat = Vec::with_capacity(n * model.emb_dim);
    for e in &item.embeddings {
        flat.extend_from_slice(e);
    }
    let tokens = tape.leaf(Tensor::matrix(n, model.emb_dim, flat));
    let words = tape.concat_rows(&[root, tokens]);

    let inputs = if cfg.use_pos {
        let mut ids = vec![ROOT_POS];
        ids.extend(item.sentence.tokens.iter().map(|t| model.pos_id(&t.upos)));
        let pos_emb = model.params.bind(tape, "pos_emb");
        let pos = tape.gather_rows(pos_emb, &ids);
        tape.concat_cols(&[words, pos])
    } else {
        words
    };
    // Shared dropout on the concatenated input and on every layer output.
    let mut h = tape.dropout(inputs, cfg.dropout, train, rng);
    for l in 0..cfg.lstm_layers {
        let fwd = LstmParams::bind(&model.params, tape, &format!("enc.l{l}.fwd"));
        let bwd = LstmParams::bind(&model.params, tape, &format!("enc.l{l}.bwd"));
        let out = bilstm_layer(tape, h, fwd, bwd, cfg.lstm_hidden);
        h = tape.dropout(out, cfg.dropout, train, rng);
    }

    let mlp = |tape: &mut Tape, rng: &mut ChaCha8Rng, name: &str| {
        let w = model.params.bind(tape, &format!("mlp.{name}.w"));
        let b = model.params.bind(tape, &format!("mlp.{name}.b"));
        let lin = tape.matmul(h, w);
        let lin = tape.add_row_broadcast(lin, b);
        let act = tape.relu(lin);
        tape.dropout(act, cfg.dropout, train, rng)
    };
    Ok(EncodeOutput {
        arc_dep: mlp(tape, rng, "arc_dep"),
        arc_head: mlp(tape, rng, "arc_head"),
        rel_dep: mlp(tape, rng, "rel_dep"),
        rel_head: mlp(tape, rng, "rel_head"),
    })
}

/// `(n+1)×(n+1)` arc scores; entry `(i, j)` scores head `i` governing
/// dependent `j`. The ROOT column is masked to a large negative value so
/// the root can head but never depend.
pub fn score_arcs(tape: &mut Tape, model: &ParserModel, enc: &EncodeOutput) -> NodeId {
    let u = model.params.bind(tape, "arc.u");
    let b = model.params.bind(tape, "arc.b");
    let raw = biaffine(tape, enc.arc_head, u, enc.arc_dep, Some(b), None, None);
    let n1 = tape.value(raw).rows();
    let mut mask = vec![0.0; n1 * n1];
    for i in 0..n1 {
        mask[i * n1] = ARC_MASK; // ROOT as dependent
        mask[i * n1 + i] = ARC_MASK; // self-heading
    }
    let mask = tape.leaf(Tensor::matrix(n1, n1, mask));
    tape.add(raw, mask)
}

pub const ARC_MASK: f64 = -1e10;

/// Label logits `[arcs.len(), R]` for the given (head, dependent) pairs.
pub fn score_labels(
    tape: &mut Tape,
    model: &ParserModel,
    enc: &EncodeOutput,
    arcs: &[(usize, usize)],
) -> NodeId {
    let q = model.config.rel_mlp_dim;
    let r = model.labels.len();
    let heads: Vec<usize> = arcs.iter().map(|&(h, _)| h).collect();
    let deps: Vec<usize> = arcs.iter().map(|&(_, d)| d).collect();
    let a = tape.gather_rows(enc.rel_head, &heads);
    let b = tape.gather_rows(enc.rel_dep, &deps);

    let u = model.params.bind(tape, "rel.u");
    let au = tape.matmul(a, u); // [n, R·q]
    let mut per_label = Vec::with_capacity(r);
    for label in 0..r {
        let block = tape.slice_cols(au, label * q..(label + 1) * q);
        let prod = tape.mul(block, b);
        per_label.push(tape.row_sum(prod));
    }
    let bilinear = tape.concat_cols(&per_label); // [n, R]

    let head_w = model.params.bind(tape, "rel.head");
    let dep_w = model.params.bind(tape, "rel.dep");
    let head_terms = tape.matmul(a, head_w);
    let dep_terms = tape.matmul(b, dep_w);
    let sum = tape.add(bilinear, head_terms);
    let sum = tape.add(sum, dep_terms);
    let bias = model.params.bind(tape, "rel.b");
    tape.add_row_broadcast(sum, bias)
}

/// Arc and label cross-entropy rows for one sentence, for batch-level
/// aggregation: (arc logits `[n, n+1]` with gold heads, label logits
/// `[n, R]` with gold label ids).
pub fn sentence_loss_parts(
    tape: &mut Tape,
    model: &ParserModel,
    item: &EncodedSentence,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, Vec<usize>, NodeId, Vec<usize>), ParserError> {
    let n = item.sentence.len();
    if n == 0 {
        return Err(ParserError::Data("empty sentence".into()));
    }
    let enc = encode(tape, model, item, train, rng)?;
    let scores = score_arcs(tape, model, &enc);
    // Dependents are rows after transposing; drop the ROOT row.
    let transposed = tape.transpose(scores);
    let dep_rows = tape.slice_rows(transposed, 1..n + 1);
    let gold_heads: Vec<usize> = item.sentence.tokens.iter().map(|t| t.head).collect();

    let gold_arcs: Vec<(usize, usize)> = gold_heads
        .iter()
        .enumerate()
        .map(|(j, &h)| (h, j + 1))
        .collect();
    let label_logits = score_labels(tape, model, &enc, &gold_arcs);
    let gold_labels: Vec<usize> = item
        .sentence
        .tokens
        .iter()
        .map(|t| model.label_id(&t.label).unwrap_or(0))
        .collect();
    Ok((dep_rows, gold_heads, label_logits, gold_labels))
}

/// Decoded heads and labels for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseResult {
    /// Head per token, 0 = root (index 0 of the vec corresponds to token 1).
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

/// Greedy-free decoding: maximum spanning arborescence over the arc scores,
/// then per-arc label argmax.
pub fn parse_sentence(
    model: &ParserModel,
    item: &EncodedSentence,
) -> Result<ParseResult, ParserError> {
    let n = item.sentence.len();
    if n == 0 {
        return Ok(ParseResult {
            heads: vec![],
            labels: vec![],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new();
    let enc = encode(&mut tape, model, item, false, &mut rng)?;
    let scores_id = score_arcs(&mut tape, model, &enc);
    let scores_t = tape.value(scores_id);
    let score_mat = Mat::from_vec(n + 1, n + 1, scores_t.data().to_vec());
    let heads_full = super::mst::mst_decode(&score_mat, model.config.single_root);
    debug_assert!(super::mst::is_arborescence(&heads_full));

    let arcs: Vec<(usize, usize)> = (1..=n).map(|j| (heads_full[j], j)).collect();
    let label_logits = score_labels(&mut tape, model, &enc, &arcs);
    let logits = tape.value(label_logits);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let row = logits.row(j);
        let mut best = 0;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        labels.push(model.labels[best].clone());
    }
    Ok(ParseResult {
        heads: heads_full[1..].to_vec(),
        labels,
    })
}

impl ParserModel {
    /// Same metadata, different parameter values.
    pub fn clone_with_params(&self, params: ParamStore) -> ParserModel {
        ParserModel {
            config: self.config.clone(),
            emb_dim: self.emb_dim,
            labels: self.labels.clone(),
            pos_tags: self.pos_tags.clone(),
            params,
        }
    }
}

/// Verification helper: maximum scaled difference between the analytic
/// gradient of the full parser loss (arc + label cross-entropy on one
/// sentence, dropout masks frozen by seed) and central finite differences
/// over every parameter component.
pub fn loss_gradient_max_error(
    model: &ParserModel,
    item: &EncodedSentence,
) -> Result<f64, ParserError> {
    let loss_of = |params: &ParamStore| -> Result<f64, ParserError> {
        let shadow = model.clone_with_params(params.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772616463686b);
        let mut tape = Tape::new();
        let (arc_rows, heads, label_rows, lids) =
            sentence_loss_parts(&mut tape, &shadow, item, true, &mut rng)?;
        let arc = tape.softmax_cross_entropy(arc_rows, &heads);
        let lab = tape.softmax_cross_entropy(label_rows, &lids);
        let loss = tape.add(arc, lab);
        Ok(tape.value(loss).item())
    };

    // Analytic pass.
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772616463686b);
    let mut tape = Tape::new();
    let (arc_rows, heads, label_rows, lids) =
        sentence_loss_parts(&mut tape, model, item, true, &mut rng)?;
    let arc = tape.softmax_cross_entropy(arc_rows, &heads);
    let lab = tape.softmax_cross_entropy(label_rows, &lids);
    let loss = tape.add(arc, lab);
    tape.backward(loss);
    let analytic: Vec<(String, Vec<f64>)> = tape
        .bindings()
        .map(|(name, id)| (name.to_string(), tape.grad(id)))
        .collect();

    let h = 1e-4;
    let mut worst = 0.0_f64;
    for (name, grads) in analytic {
        for (ix, a) in grads.iter().enumerate() {
            let mut plus = model.params.clone();
            plus.get_mut(&name).data_mut()[ix] += h;
            let mut minus = model.params.clone();
            minus.get_mut(&name).data_mut()[ix] -= h;
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// model file
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"XLPM";

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ParserConfig,
    emb_dim: usize,
    inventories: Inventories,
}

impl ParserModel {
    pub fn save(&self, path: &Path) -> Result<(), ParserError> {
        let meta = serde_json::to_vec(&ModelMeta {
            config: self.config.clone(),
            emb_dim: self.emb_dim,
            inventories: Inventories {
                labels: self.labels.clone(),
                pos_tags: self.pos_tags.clone(),
            },
        })
        .map_err(|e| ParserError::Data(e.to_string()))?;
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

    pub fn load(path: &Path) -> Result<ParserModel, ParserError> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 16 || &bytes[0..4] != MODEL_MAGIC {
            return Err(ParserError::Data("bad parser model magic".into()));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + meta_len {
            return Err(ParserError::Data("truncated parser model".into()));
        }
        let meta: ModelMeta = serde_json::from_slice(&bytes[16..16 + meta_len])
            .map_err(|e| ParserError::Data(e.to_string()))?;
        let mut params = ParamStore::new();
        for (name, tensor) in tensors_from_bytes(&bytes[16 + meta_len..])
            .map_err(|e| ParserError::Data(e.to_string()))?
        {
            params.insert(name, tensor);
        }
        Ok(ParserModel {
            config: meta.config,
            emb_dim: meta.emb_dim,
            labels: meta.inventories.labels,
            pos_tags: meta.inventories.pos_tags,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::Token;
    use rand::Rng;

    pub(crate) fn tiny_config() -> ParserConfig {
        ParserConfig {
            pos_dim: 3,
            lstm_hidden: 4,
            lstm_layers: 1,
            dropout: 0.0,
            arc_mlp_dim: 5,
            rel_mlp_dim: 4,
            batch_sentences: 4,
            instances_per_epoch: 8,
            max_epochs: 2,
            patience: 2,
            seed: 1,
            ..Default::default()
        }
    }

    pub(crate) fn toy_item(forms: &[(&str, &str, usize, &str)], dim: usize, seed: u64) -> EncodedSentence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = forms
            .iter()
            .map(|(form, upos, head, label)| Token {
                form: form.to_string(),
                upos: upos.to_string(),
                head: *head,
                label: label.to_string(),
            })
            .collect();
        let embeddings = forms
            .iter()
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        EncodedSentence {
            sentence: Sentence {
                tokens,
                language: "toy".into(),
            },
            embeddings,
        }
    }

    fn simple_item(seed: u64) -> EncodedSentence {
        toy_item(
            &[
                ("the", "DET", 2, "det"),
                ("cat", "NOUN", 3, "nsubj"),
                ("ran", "VERB", 0, "root"),
            ],
            4,
            seed,
        )
    }

    fn tiny_model() -> ParserModel {
        ParserModel::new(
            &tiny_config(),
            4,
            vec!["det".into(), "nsubj".into(), "root".into()],
            vec!["DET".into(), "NOUN".into(), "VERB".into()],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_equal_states_and_zero_scores() {
        let mut model = tiny_model();
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            for v in model.params.get_mut(&name).data_mut() {
                *v = 0.0;
            }
        }
        let item = simple_item(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &model, &item, false, &mut rng).unwrap();
        let dep = tape.value(enc.arc_dep);
        assert_eq!(dep.rows(), 4, "ROOT plus three tokens");
        let first = dep.row(0).to_vec();
        for i in 1..dep.rows() {
            assert_eq!(dep.row(i), &first[..], "all representations equal");
        }
        let scores = score_arcs(&mut tape, &model, &enc);
        let sv = tape.value(scores);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if j == 0 || i == j { ARC_MASK } else { 0.0 };
                assert_eq!(sv.row(i)[j], expected);
            }
        }
    }

    #[test]
    fn single_token_sentence_has_two_representations() {
        let model = tiny_model();
        let item = toy_item(&[("hi", "VERB", 0, "root")], 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &model, &item, false, &mut rng).unwrap();
        assert_eq!(tape.value(enc.arc_head).rows(), 2);
    }

    #[test]
    fn context_sensitivity_of_representations() {
        let model = tiny_model();
        let a = toy_item(
            &[
                ("the", "DET", 2, "det"),
                ("cat", "NOUN", 3, "nsubj"),
                ("ran", "VERB", 0, "root"),
            ],
            4,
            7,
        );
        // Same first-token embedding, different distant token.
        let mut b = a.clone();
        b.sentence.tokens[2].form = "slept".into();
        b.embeddings[2] = b.embeddings[2].iter().map(|v| v + 0.5).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let enc_a = encode(&mut tape, &model, &a, false, &mut rng).unwrap();
        let enc_b = encode(&mut tape, &model, &b, false, &mut rng).unwrap();
        let rep_a = tape.value(enc_a.arc_dep).row(1).to_vec();
        let rep_b = tape.value(enc_b.arc_dep).row(1).to_vec();
        assert_ne!(rep_a, rep_b, "token 1 must see the change at token 3");
    }

    #[test]
    fn arc_scores_match_triple_loop() {
        let model = tiny_model();
        let item = simple_item(11);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &model, &item, false, &mut rng).unwrap();
        let scores = score_arcs(&mut tape, &model, &enc);
        let sv = tape.value(scores).clone();
        let heads = tape.value(enc.arc_head).clone();
        let deps = tape.value(enc.arc_dep).clone();
        let u = model.params.get("arc.u");
        let b = model.params.get("arc.b");
        let p = model.config.arc_mlp_dim;
        for i in 0..4 {
            for j in 1..4 {
                if i == j {
                    continue;
                }
                let mut expected = 0.0;
                for a in 0..p {
                    let mut ub = 0.0;
                    for c in 0..p {
                        ub += u.row(a)[c] * deps.row(j)[c];
                    }
                    expected += heads.row(i)[a] * (ub + b.row(a)[0]);
                }
                assert!(
                    (sv.row(i)[j] - expected).abs() < 1e-10,
                    "scores[{i}][{j}]"
                );
            }
        }
    }

    #[test]
    fn label_scores_match_triple_loop_and_shift_invariance() {
        let model = tiny_model();
        let item = simple_item(13);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &model, &item, false, &mut rng).unwrap();
        let arcs = vec![(2usize, 1usize), (0usize, 3usize)];
        let logits = score_labels(&mut tape, &model, &enc, &arcs);
        let lv = tape.value(logits).clone();
        let heads = tape.value(enc.rel_head).clone();
        let deps = tape.value(enc.rel_dep).clone();

        let q = model.config.rel_mlp_dim;
        let u = model.params.get("rel.u");
        let head_w = model.params.get("rel.head");
        let dep_w = model.params.get("rel.dep");
        let bias = model.params.get("rel.b");
        for (row, &(hi, dj)) in arcs.iter().enumerate() {
            for r in 0..model.labels.len() {
                let mut expected = bias.data()[r];
                for a in 0..q {
                    let mut ub = 0.0;
                    for c in 0..q {
                        ub += u.row(a)[r * q + c] * deps.row(dj)[c];
                    }
                    expected += heads.row(hi)[a] * ub;
                    expected += head_w.row(a)[r] * heads.row(hi)[a];
                    expected += dep_w.row(a)[r] * deps.row(dj)[a];
                }
                assert!(
                    (lv.row(row)[r] - expected).abs() < 1e-10,
                    "labels[{row}][{r}]"
                );
            }
        }

        // Adding a constant to every label bias leaves the argmax unchanged.
        let before = parse_sentence(&model, &item).unwrap();
        let mut shifted = model.clone_with_params(model.params.clone());
        for v in shifted.params.get_mut("rel.b").data_mut() {
            *v += 3.7;
        }
        let after = parse_sentence(&shifted, &item).unwrap();
        assert_eq!(before.labels, after.labels);
    }

    #[test]
    fn zero_label_params_give_uniform_scores() {
        let mut model = tiny_model();
        for name in ["rel.u", "rel.head", "rel.dep", "rel.b"] {
            for v in model.params.get_mut(name).data_mut() {
                *v = 0.0;
            }
        }
        let item = simple_item(17);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &model, &item, false, &mut rng).unwrap();
        let logits = score_labels(&mut tape, &model, &enc, &[(0, 1)]);
        for v in tape.value(logits).data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn full_loss_passes_gradient_check() {
        let mut cfg = tiny_config();
        cfg.dropout = 0.33; // masks are frozen by seed inside the checker
        let model = ParserModel::new(
            &cfg,
            4,
            vec!["det".into(), "nsubj".into(), "root".into()],
            vec!["DET".into(), "NOUN".into(), "VERB".into()],
        )
        .unwrap();
        let item = simple_item(19);
        let err = loss_gradient_max_error(&model, &item).unwrap();
        assert!(err < 1e-4, "full parser loss gradcheck error {err}");
    }

    #[test]
    fn model_file_round_trip() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("parser.model");
        model.save(&path).unwrap();
        let loaded = ParserModel::load(&path).unwrap();
        assert_eq!(loaded.labels(), model.labels());
        assert_eq!(loaded.emb_dim, model.emb_dim);
        for ((n1, t1), (n2, t2)) in model.params.iter().zip(loaded.params.iter()) {
            assert_eq!(n1, n2);
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let item = simple_item(23);
        assert_eq!(
            parse_sentence(&model, &item).unwrap(),
            parse_sentence(&loaded, &item).unwrap()
        );
    }
}
