//! Unsupervised alignment: a discriminator is trained to tell mapped source
//! samples from target samples while the orthogonal map is trained to fool
//! it, with anchored and context-based sampling variants, CSLS-based model
//! selection, and iterative Procrustes refinement over a synthesized
//! mutual-nearest-neighbor dictionary.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus_io::{AlignmentMatrix, AnchorTable, ContextualOccurrence};
use crate::linalg_align::{align_table, orthogonal_procrustes, pairs_from_dictionary};
use crate::mat::Mat;
use crate::neural::{
    init, sgd_step_filtered, NodeId, ParamStore, Tape, Tensor,
};
use crate::retrieval::{build_synthetic_dictionary, mean_nn_score, Metric, RetrievalError};

#[derive(Debug, Error)]
pub enum AdversarialError {
    #[error("bad adversarial config: {0}")]
    Config(String),
    #[error("sample pool does not match variant: {0}")]
    PoolMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("adversarial training diverged at step {step}; carrying last finite checkpoint")]
    Diverged {
        step: usize,
        last_checkpoint: Box<AlignmentMatrix>,
    },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Align(#[from] crate::linalg_align::AlignError),
    #[error("refinement dictionary empty at the first iteration")]
    EmptyFirstRefinement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Anchored,
    ContextBased,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anchored" => Ok(Variant::Anchored),
            "context" | "context-based" | "context_based" => Ok(Variant::ContextBased),
            other => Err(format!("unknown variant {other:?}, expected anchored|context")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdversarialConfig {
    pub variant: Variant,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub disc_input_dropout: f64,
    pub label_smoothing: f64,
    pub steps: usize,
    pub batch: usize,
    pub map_lr: f64,
    pub disc_lr: f64,
    pub ortho_beta: f64,
    pub feed_top_k: usize,
    pub seed: u64,
    /// Criterion checkpoint interval, in steps.
    pub eval_every: usize,
    /// Vocabulary cap of the model-selection criterion.
    pub criterion_rank: usize,
    pub k_csls: usize,
    /// Learning-rate decay applied at every checkpoint evaluation.
    pub lr_decay: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            variant: Variant::Anchored,
            disc_hidden: 2048,
            disc_layers: 2,
            disc_input_dropout: 0.1,
            label_smoothing: 0.2,
            steps: 100_000,
            batch: 32,
            map_lr: 0.1,
            disc_lr: 0.1,
            ortho_beta: 0.001,
            feed_top_k: 50_000,
            seed: 0,
            eval_every: 2000,
            criterion_rank: 10_000,
            k_csls: 10,
            lr_decay: 0.98,
        }
    }
}

impl AdversarialConfig {
    fn validate(&self) -> Result<(), AdversarialError> {
        let bad = |msg: &str| Err(AdversarialError::Config(msg.into()));
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(0.0..1.0).contains(&self.disc_input_dropout) {
            return bad("disc_input_dropout must be in [0, 1)");
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad("label_smoothing must be in [0, 0.5)");
        }
        if self.map_lr <= 0.0 || self.disc_lr <= 0.0 {
            return bad("learning rates must be positive");
        }
        if self.ortho_beta <= 0.0 || self.ortho_beta >= 0.5 {
            return bad("ortho_beta must be in (0, 0.5)");
        }
        if self.disc_layers == 0 || self.disc_hidden == 0 {
            return bad("discriminator must have at least one hidden layer");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RefineConfig {
    pub iterations: usize,
    pub max_rank: usize,
    pub k_csls: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 5,
            max_rank: 10_000,
            k_csls: 10,
        }
    }
}

/// Vectors the discriminator samples from.
#[derive(Clone, Copy)]
pub enum SamplePool<'a> {
    Anchors(&'a AnchorTable),
    Occurrences(&'a [ContextualOccurrence]),
}

impl<'a> SamplePool<'a> {
    fn dim(&self) -> Option<usize> {
        match self {
            SamplePool::Anchors(t) => Some(t.dim()),
            SamplePool::Occurrences(occs) => occs.first().map(|o| o.vector.len()),
        }
    }

    fn len(&self, feed_top_k: usize) -> usize {
        match self {
            SamplePool::Anchors(t) => t.len().min(feed_top_k),
            SamplePool::Occurrences(occs) => occs.len(),
        }
    }

    fn batch(&self, rng: &mut ChaCha8Rng, batch: usize, feed_top_k: usize, dim: usize) -> Tensor {
        let n = self.len(feed_top_k);
        let mut data = Vec::with_capacity(batch * dim);
        for _ in 0..batch {
            let ix = rng.gen_range(0..n);
            match self {
                SamplePool::Anchors(t) => data.extend_from_slice(&t.entries()[ix].vector),
                SamplePool::Occurrences(occs) => data.extend_from_slice(&occs[ix].vector),
            }
        }
        Tensor::matrix(batch, dim, data)
    }
}

/// Sampling pools plus the anchor tables used for model selection and
/// refinement (for the anchored variant these coincide with the pools).
pub struct TrainingData<'a> {
    pub src_pool: SamplePool<'a>,
    pub tgt_pool: SamplePool<'a>,
    pub src_anchors: &'a AnchorTable,
    pub tgt_anchors: &'a AnchorTable,
}

impl<'a> TrainingData<'a> {
    pub fn anchored(src: &'a AnchorTable, tgt: &'a AnchorTable) -> Self {
        TrainingData {
            src_pool: SamplePool::Anchors(src),
            tgt_pool: SamplePool::Anchors(tgt),
            src_anchors: src,
            tgt_anchors: tgt,
        }
    }

    pub fn context_based(
        src_occurrences: &'a [ContextualOccurrence],
        tgt_occurrences: &'a [ContextualOccurrence],
        src_anchors: &'a AnchorTable,
        tgt_anchors: &'a AnchorTable,
    ) -> Self {
        TrainingData {
            src_pool: SamplePool::Occurrences(src_occurrences),
            tgt_pool: SamplePool::Occurrences(tgt_occurrences),
            src_anchors,
            tgt_anchors,
        }
    }

    fn check(&self, cfg: &AdversarialConfig) -> Result<usize, AdversarialError> {
        match (cfg.variant, &self.src_pool, &self.tgt_pool) {
            (Variant::Anchored, SamplePool::Anchors(_), SamplePool::Anchors(_)) => {}
            (Variant::ContextBased, SamplePool::Occurrences(_), SamplePool::Occurrences(_)) => {}
            _ => {
                return Err(AdversarialError::PoolMismatch(
                    "anchored variant needs anchor tables, context variant needs occurrences"
                        .into(),
                ))
            }
        }
        let d = self
            .src_pool
            .dim()
            .ok_or_else(|| AdversarialError::Config("empty source pool".into()))?;
        for (what, dim) in [
            ("target pool", self.tgt_pool.dim()),
            ("source anchors", Some(self.src_anchors.dim())),
            ("target anchors", Some(self.tgt_anchors.dim())),
        ] {
            let dim =
                dim.ok_or_else(|| AdversarialError::Config(format!("empty {what}")))?;
            if dim != d {
                return Err(AdversarialError::DimMismatch(format!(
                    "{what} has dim {dim}, source pool has {d}"
                )));
            }
        }
        Ok(d)
    }
}

/// Result of adversarial training: the best checkpoint under the
/// unsupervised criterion, with its score.
#[derive(Clone, Debug)]
pub struct AdversarialOutcome {
    pub alignment: AlignmentMatrix,
    pub criterion: f64,
}

/// Parameter magnitude beyond which training is declared divergent; keeps
/// later forward passes from overflowing before the NaN shows up.
const DIVERGENCE_BOUND: f64 = 1e50;

/// One step of the iterative orthogonalization `W ← (1+β)W − β(WWᵀ)W`.
pub fn orthogonalize_step(w: &Mat, beta: f64) -> Mat {
    let wwt = w.matmul_nt(w);
    let wwtw = wwt.matmul(w);
    let mut out = w.clone();
    out.scale(1.0 + beta);
    let mut correction = wwtw;
    correction.scale(beta);
    out.sub(&correction)
}

/// Mean CSLS score of the `criterion_rank` most frequent source anchors to
/// their nearest aligned target neighbor. Higher is better.
pub fn unsupervised_criterion(
    alignment: &AlignmentMatrix,
    src_anchors: &AnchorTable,
    tgt_anchors: &AnchorTable,
    criterion_rank: usize,
    k_csls: usize,
) -> Result<f64, AdversarialError> {
    let src = align_table(alignment, &src_anchors.truncated(criterion_rank))?;
    let tgt = tgt_anchors.truncated(criterion_rank);
    Ok(mean_nn_score(&src, &tgt, k_csls, Metric::Csls)?)
}

fn disc_forward(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &AdversarialConfig,
    x: NodeId,
    rng: &mut ChaCha8Rng,
    bind: bool,
) -> NodeId {
    let fetch = |tape: &mut Tape, name: &str| {
        if bind {
            store.bind(tape, name)
        } else {
            tape.leaf(store.get(name).clone())
        }
    };
    let mut h = tape.dropout(x, cfg.disc_input_dropout, true, rng);
    for layer in 0..cfg.disc_layers {
        let w = fetch(tape, &format!("disc.l{layer}.w"));
        let b = fetch(tape, &format!("disc.l{layer}.b"));
        let lin = tape.matmul(h, w);
        let lin = tape.add_row_broadcast(lin, b);
        h = tape.leaky_relu(lin, 0.2);
    }
    let w = fetch(tape, "disc.out.w");
    let b = fetch(tape, "disc.out.b");
    let lin = tape.matmul(h, w);
    tape.add_row_broadcast(lin, b)
}

fn mat_from_tensor(t: &Tensor) -> Mat {
    Mat::from_vec(t.rows(), t.cols(), t.data().to_vec())
}

/// Adversarial training of the orthogonal map. Initializes W to the
/// identity, alternates discriminator and mapping updates with an
/// orthogonalization step after every mapping update, and returns the
/// checkpoint with the best unsupervised criterion (the identity counts as
/// the first checkpoint).
pub fn train_adversarial(
    data: &TrainingData,
    cfg: &AdversarialConfig,
) -> Result<AdversarialOutcome, AdversarialError> {
    cfg.validate()?;
    let dim = data.check(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut store = ParamStore::new();
    let mut in_dim = dim;
    for layer in 0..cfg.disc_layers {
        store.insert(
            format!("disc.l{layer}.w"),
            init::xavier_uniform(&mut rng, in_dim, cfg.disc_hidden),
        );
        store.insert(format!("disc.l{layer}.b"), init::zeros_vec(cfg.disc_hidden));
        in_dim = cfg.disc_hidden;
    }
    store.insert("disc.out.w", init::xavier_uniform(&mut rng, in_dim, 1));
    store.insert("disc.out.b", init::zeros_vec(1));
    store.insert(
        "map.w",
        Tensor::matrix(dim, dim, Mat::identity(dim).data().to_vec()),
    );

    let evaluate = |w: &Mat| -> Result<(AlignmentMatrix, f64), AdversarialError> {
        let alignment = AlignmentMatrix::new(
            data.src_anchors.space_id(),
            data.tgt_anchors.space_id(),
            w.clone(),
        )
        .map_err(|e| AdversarialError::Config(e.to_string()))?;
        let crit = unsupervised_criterion(
            &alignment,
            data.src_anchors,
            data.tgt_anchors,
            cfg.criterion_rank,
            cfg.k_csls,
        )?;
        Ok((alignment, crit))
    };

    // The identity is checkpoint zero; training must beat it to move W.
    let (ident_alignment, ident_crit) = evaluate(&Mat::identity(dim))?;
    let mut best = AdversarialOutcome {
        alignment: ident_alignment,
        criterion: ident_crit,
    };
    log::info!("step 0 criterion {ident_crit:.4} (identity)");

    let mut map_lr = cfg.map_lr;
    let mut disc_lr = cfg.disc_lr;
    let mut disc_acc_sum = 0.0;
    let mut disc_acc_n = 0usize;

    for step in 1..=cfg.steps {
        // Discriminator update: mapped source labeled (1 − s), target s.
        {
            let xs = data.src_pool.batch(&mut rng, cfg.batch, cfg.feed_top_k, dim);
            let xt = data.tgt_pool.batch(&mut rng, cfg.batch, cfg.feed_top_k, dim);
            let mut tape = Tape::new();
            let w = tape.leaf(store.get("map.w").clone());
            let xs = tape.leaf(xs);
            let xt = tape.leaf(xt);
            let mapped = tape.matmul_nt(xs, w);
            let both = tape.concat_rows(&[mapped, xt]);
            let logits = disc_forward(&mut tape, &store, cfg, both, &mut rng, true);
            let mut labels = vec![1.0 - cfg.label_smoothing; cfg.batch];
            labels.extend(vec![cfg.label_smoothing; cfg.batch]);
            let loss = tape.sigmoid_bce(logits, &labels);
            tape.backward(loss);

            let logit_values = tape.value(logits).data().to_vec();
            let correct = logit_values
                .iter()
                .zip(&labels)
                .filter(|(l, y)| (**l > 0.0) == (**y > 0.5))
                .count();
            disc_acc_sum += correct as f64 / logit_values.len() as f64;
            disc_acc_n += 1;

            let max_abs = sgd_step_filtered(&mut store, &tape, disc_lr, |n| n.starts_with("disc."));
            if !(max_abs < DIVERGENCE_BOUND) {
                return Err(AdversarialError::Diverged {
                    step,
                    last_checkpoint: Box::new(best.alignment),
                });
            }
        }

        // Mapping update: fool the (frozen) discriminator on mapped source.
        {
            let xs = data.src_pool.batch(&mut rng, cfg.batch, cfg.feed_top_k, dim);
            let mut tape = Tape::new();
            let w = store.bind(&mut tape, "map.w");
            let xs = tape.leaf(xs);
            let mapped = tape.matmul_nt(xs, w);
            let logits = disc_forward(&mut tape, &store, cfg, mapped, &mut rng, false);
            let labels = vec![cfg.label_smoothing; cfg.batch];
            let loss = tape.sigmoid_bce(logits, &labels);
            tape.backward(loss);
            let max_abs = sgd_step_filtered(&mut store, &tape, map_lr, |n| n == "map.w");
            if !(max_abs < DIVERGENCE_BOUND) {
                return Err(AdversarialError::Diverged {
                    step,
                    last_checkpoint: Box::new(best.alignment),
                });
            }
        }

        // Pull W back toward the orthogonal manifold.
        let w_mat = mat_from_tensor(store.get("map.w"));
        let w_mat = orthogonalize_step(&w_mat, cfg.ortho_beta);
        if !w_mat.is_finite() {
            return Err(AdversarialError::Diverged {
                step,
                last_checkpoint: Box::new(best.alignment),
            });
        }
        *store.get_mut("map.w") = Tensor::matrix(dim, dim, w_mat.data().to_vec());

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let (alignment, crit) = evaluate(&w_mat)?;
            if !crit.is_finite() {
                return Err(AdversarialError::Diverged {
                    step,
                    last_checkpoint: Box::new(best.alignment),
                });
            }
            let disc_acc = disc_acc_sum / disc_acc_n.max(1) as f64;
            log::info!(
                "step {step} disc_acc {disc_acc:.3} criterion {crit:.4} (best {:.4})",
                best.criterion
            );
            disc_acc_sum = 0.0;
            disc_acc_n = 0;
            if crit > best.criterion {
                best = AdversarialOutcome {
                    alignment,
                    criterion: crit,
                };
            }
            map_lr *= cfg.lr_decay;
            disc_lr *= cfg.lr_decay;
        }
    }

    Ok(best)
}

/// Iterative refinement: synthesize a mutual-NN dictionary in the anchor
/// space under the current map, re-solve Procrustes, and keep the iterate
/// with the best unsupervised criterion. Never returns an iterate scoring
/// below the input `w0`.
pub fn refine(
    w0: &AlignmentMatrix,
    src_anchors: &AnchorTable,
    tgt_anchors: &AnchorTable,
    cfg: &RefineConfig,
) -> Result<AlignmentMatrix, AdversarialError> {
    if cfg.iterations == 0 {
        return Err(AdversarialError::Config("iterations must be >= 1".into()));
    }
    let crit = |w: &AlignmentMatrix| {
        unsupervised_criterion(w, src_anchors, tgt_anchors, cfg.max_rank, cfg.k_csls)
    };
    let mut best = w0.clone();
    let mut best_crit = crit(&best)?;
    log::info!("refine start criterion {best_crit:.4}");

    let mut current = w0.clone();
    for iteration in 1..=cfg.iterations {
        let aligned = align_table(&current, src_anchors)?;
        let dict = match build_synthetic_dictionary(&aligned, tgt_anchors, cfg.max_rank, cfg.k_csls)
        {
            Ok(d) => d,
            Err(RetrievalError::EmptyDictionary) if iteration == 1 => {
                return Err(AdversarialError::EmptyFirstRefinement)
            }
            Err(RetrievalError::EmptyDictionary) => break,
            Err(e) => return Err(e.into()),
        };
        let (pairs, _skipped) = pairs_from_dictionary(src_anchors, tgt_anchors, &dict)?;
        current = orthogonal_procrustes(&pairs)?;
        current.source_space = w0.source_space.clone();
        current.target_space = w0.target_space.clone();
        let c = crit(&current)?;
        log::info!(
            "refine iteration {iteration}: dictionary {} pairs, criterion {c:.4}",
            dict.len()
        );
        if c > best_crit {
            best = current.clone();
            best_crit = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::AnchorEntry;
    use crate::linalg_align::orthogonality_error;
    use crate::mat::random_orthogonal;

    fn skewed_gaussian_table(seed: u64, n: usize, d: usize, prefix: &str) -> AnchorTable {
        // Distinct per-dimension means and variances so no nontrivial
        // orthogonal map preserves the distribution.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|i| {
                let vector = (0..d)
                    .map(|j| {
                        let mean = 0.6 + 0.4 * (j as f64 * 1.7).sin();
                        let scale = 1.0 / (1.0 + 0.25 * j as f64);
                        mean + scale * gauss(&mut rng)
                    })
                    .collect();
                AnchorEntry {
                    token: format!("{prefix}{i}"),
                    count: (n - i) as u64,
                    vector,
                }
            })
            .collect();
        AnchorTable::new(prefix, d, entries).unwrap()
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn rotated_copy(table: &AnchorTable, q: &Mat, prefix: &str) -> AnchorTable {
        let entries = table
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| AnchorEntry {
                token: format!("{prefix}{i}"),
                count: e.count,
                vector: q.matvec(&e.vector),
            })
            .collect();
        AnchorTable::new(prefix, table.dim(), entries).unwrap()
    }

    #[test]
    fn orthogonalize_arithmetic() {
        // W = 2I, β = 0.001: (1+β)·2 − β·8 = 1.994 on the diagonal.
        let mut w = Mat::identity(3);
        w.scale(2.0);
        let out = orthogonalize_step(&w, 0.001);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.994 } else { 0.0 };
                assert!((out.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonalize_fixes_orthogonal_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_orthogonal(&mut rng, 5);
        let out = orthogonalize_step(&q, 0.01);
        assert!(out.sub(&q).frob_norm() < 1e-12);
    }

    #[test]
    fn orthogonalize_converges_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_orthogonal(&mut rng, 4);
        // Perturb to ‖WᵀW − I‖ ≈ 0.1.
        let mut w = q.clone();
        for v in w.data_mut() {
            *v += 0.02 * rng.gen_range(-1.0..1.0);
        }
        let mut err = orthogonality_error(&w);
        assert!(err > 0.01, "perturbation too small: {err}");
        for _ in 0..2000 {
            w = orthogonalize_step(&w, 0.01);
            let next = orthogonality_error(&w);
            assert!(next <= err + 1e-12, "error increased: {next} > {err}");
            err = next;
        }
        assert!(err < 1e-6, "did not converge: {err}");
    }

    #[test]
    fn criterion_identity_beats_random_maps() {
        let table = skewed_gaussian_table(10, 120, 6, "w");
        let ident = AlignmentMatrix::identity(6);
        let ident_crit = unsupervised_criterion(&ident, &table, &table, 120, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let w = AlignmentMatrix::new("s", "t", random_orthogonal(&mut rng, 6)).unwrap();
            let c = unsupervised_criterion(&w, &table, &table, 120, 5).unwrap();
            assert!(c <= ident_crit + 1e-9, "random map scored {c} > {ident_crit}");
        }
        // Determinism.
        let again = unsupervised_criterion(&ident, &table, &table, 120, 5).unwrap();
        assert_eq!(ident_crit.to_bits(), again.to_bits());
    }

    #[test]
    fn criterion_prefers_true_rotation() {
        let src = skewed_gaussian_table(12, 150, 5, "s");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = random_orthogonal(&mut rng, 5);
        let tgt = rotated_copy(&src, &q, "t");
        let true_w = AlignmentMatrix::new("s", "t", q).unwrap();
        let true_crit = unsupervised_criterion(&true_w, &src, &tgt, 150, 5).unwrap();
        let rand_w = AlignmentMatrix::new("s", "t", random_orthogonal(&mut rng, 5)).unwrap();
        let rand_crit = unsupervised_criterion(&rand_w, &src, &tgt, 150, 5).unwrap();
        assert!(true_crit > rand_crit, "{true_crit} vs {rand_crit}");
    }

    #[test]
    fn self_alignment_keeps_identity_criterion() {
        let table = skewed_gaussian_table(20, 80, 4, "w");
        let cfg = AdversarialConfig {
            disc_hidden: 32,
            steps: 300,
            eval_every: 100,
            criterion_rank: 80,
            k_csls: 5,
            seed: 1,
            ..Default::default()
        };
        let data = TrainingData::anchored(&table, &table);
        let out = train_adversarial(&data, &cfg).unwrap();
        let ident_crit = unsupervised_criterion(
            &AlignmentMatrix::identity(4),
            &table,
            &table,
            80,
            5,
        )
        .unwrap();
        assert!(
            out.criterion >= ident_crit - 0.01,
            "criterion {} fell below identity {}",
            out.criterion,
            ident_crit
        );
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let src = skewed_gaussian_table(30, 60, 4, "s");
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q = random_orthogonal(&mut rng, 4);
        let tgt = rotated_copy(&src, &q, "t");
        let cfg = AdversarialConfig {
            disc_hidden: 16,
            steps: 50,
            eval_every: 25,
            criterion_rank: 60,
            k_csls: 3,
            seed: 7,
            ..Default::default()
        };
        let a = train_adversarial(&TrainingData::anchored(&src, &tgt), &cfg).unwrap();
        let b = train_adversarial(&TrainingData::anchored(&src, &tgt), &cfg).unwrap();
        assert_eq!(a.criterion.to_bits(), b.criterion.to_bits());
        assert_eq!(a.alignment.matrix.data(), b.alignment.matrix.data());
    }

    #[test]
    fn divergent_learning_rate_reports_last_checkpoint() {
        let src = skewed_gaussian_table(50, 40, 4, "s");
        let cfg = AdversarialConfig {
            disc_hidden: 8,
            steps: 500,
            eval_every: 50,
            map_lr: 1e12,
            disc_lr: 1e12,
            criterion_rank: 40,
            k_csls: 3,
            seed: 3,
            ..Default::default()
        };
        match train_adversarial(&TrainingData::anchored(&src, &src), &cfg) {
            Err(AdversarialError::Diverged {
                step,
                last_checkpoint,
            }) => {
                assert!(step >= 1);
                assert_eq!(last_checkpoint.dim(), 4);
                // The carried checkpoint is the identity (checkpoint zero).
                assert!(last_checkpoint.orthogonality_error() < 1e-9);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn pool_variant_mismatch_rejected() {
        let table = skewed_gaussian_table(60, 20, 3, "w");
        let cfg = AdversarialConfig {
            variant: Variant::ContextBased,
            steps: 10,
            ..Default::default()
        };
        let data = TrainingData::anchored(&table, &table);
        assert!(matches!(
            train_adversarial(&data, &cfg),
            Err(AdversarialError::PoolMismatch(_))
        ));
    }

    #[test]
    fn refine_is_fixed_point_on_exact_rotation() {
        let src = skewed_gaussian_table(70, 200, 6, "s");
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let q = random_orthogonal(&mut rng, 6);
        let tgt = rotated_copy(&src, &q, "t");
        let w0 = AlignmentMatrix::new("s", "t", q.clone()).unwrap();
        let cfg = RefineConfig {
            iterations: 3,
            max_rank: 200,
            k_csls: 5,
        };
        let refined = refine(&w0, &src, &tgt, &cfg).unwrap();
        // Token i of src must still map onto token i of tgt.
        let aligned = align_table(&refined, &src).unwrap();
        for (a, t) in aligned.entries().iter().zip(tgt.entries()) {
            let mut diff = 0.0;
            for (x, y) in a.vector.iter().zip(&t.vector) {
                diff += (x - y) * (x - y);
            }
            assert!(diff.sqrt() < 1e-6, "refinement moved an exact alignment");
        }
    }

    #[test]
    fn refine_single_iteration_is_one_procrustes_solve() {
        let src = skewed_gaussian_table(80, 100, 5, "s");
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let q = random_orthogonal(&mut rng, 5);
        let tgt = rotated_copy(&src, &q, "t");
        // Perturb the true rotation a little so refinement has work to do.
        let mut w0_mat = q.clone();
        for v in w0_mat.data_mut() {
            *v += 0.01 * rng.gen_range(-1.0..1.0);
        }
        let w0_mat = orthogonalize_full(&w0_mat);
        let w0 = AlignmentMatrix::new("s", "t", w0_mat).unwrap();
        let cfg = RefineConfig {
            iterations: 1,
            max_rank: 100,
            k_csls: 5,
        };
        let refined = refine(&w0, &src, &tgt, &cfg).unwrap();

        // Manual single solve over the synthesized dictionary.
        let aligned = align_table(&w0, &src).unwrap();
        let dict = build_synthetic_dictionary(&aligned, &tgt, 100, 5).unwrap();
        let (pairs, _) = pairs_from_dictionary(&src, &tgt, &dict).unwrap();
        let manual = orthogonal_procrustes(&pairs).unwrap();
        let crit_manual = unsupervised_criterion(&manual, &src, &tgt, 100, 5).unwrap();
        let crit_w0 = unsupervised_criterion(&w0, &src, &tgt, 100, 5).unwrap();
        let expected = if crit_manual > crit_w0 { &manual } else { &w0 };
        assert!(refined.matrix.sub(&expected.matrix).frob_norm() < 1e-12);
    }

    fn orthogonalize_full(w: &Mat) -> Mat {
        let mut out = w.clone();
        for _ in 0..500 {
            out = orthogonalize_step(&out, 0.01);
        }
        out
    }

    #[test]
    fn refine_never_returns_worse_than_input() {
        let src = skewed_gaussian_table(90, 80, 4, "s");
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let q = random_orthogonal(&mut rng, 4);
        let tgt = rotated_copy(&src, &q, "t");
        let w0 = AlignmentMatrix::new("s", "t", q).unwrap();
        let crit0 = unsupervised_criterion(&w0, &src, &tgt, 80, 5).unwrap();
        let cfg = RefineConfig {
            iterations: 4,
            max_rank: 80,
            k_csls: 5,
        };
        let refined = refine(&w0, &src, &tgt, &cfg).unwrap();
        let crit = unsupervised_criterion(&refined, &src, &tgt, 80, 5).unwrap();
        assert!(crit >= crit0 - 1e-12);
    }
}
