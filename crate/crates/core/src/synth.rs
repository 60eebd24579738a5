//! Deterministic synthetic fixtures: rotated anchor-table pairs, Gaussian
//! occurrence clouds, a toy language with parallel treebanks over permuted
//! vocabularies, and raw corpora for LM training.
//!
//! The anchor distributions use distinct per-dimension means and scales so
//! that no nontrivial orthogonal map preserves them; recovering the planted
//! rotation is then well-posed for the unsupervised pipeline.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus_io::{
    AnchorEntry, AnchorTable, ContextualOccurrence, Dictionary, Sentence, Token,
};
use crate::mat::{random_orthogonal, Mat};

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Skewed anisotropic Gaussian sample; dimension `j` has its own mean and
/// scale, which breaks every axis permutation and sign-flip symmetry.
fn skewed_sample(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let mean = 0.6 + 0.4 * (j as f64 * 1.7).sin();
            let scale = 1.0 / (1.0 + 0.25 * j as f64);
            mean + scale * gauss(rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// rotated-anchors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct RotatedAnchorParams {
    pub vocab: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

pub struct RotatedAnchors {
    pub src: AnchorTable,
    pub tgt: AnchorTable,
    /// Gold pairs (source token, target token), one per vocabulary entry.
    pub dictionary: Dictionary,
    pub rotation: Mat,
}

/// A source table plus its image under a random orthogonal map with optional
/// Gaussian noise; token `s…i` translates to `t…i`.
pub fn rotated_anchors(params: &RotatedAnchorParams) -> RotatedAnchors {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rotation = random_orthogonal(&mut rng, params.dim);
    let width = params.vocab.to_string().len();
    let mut src_entries = Vec::with_capacity(params.vocab);
    let mut tgt_entries = Vec::with_capacity(params.vocab);
    let mut pairs = Vec::with_capacity(params.vocab);
    for i in 0..params.vocab {
        let s = skewed_sample(&mut rng, params.dim);
        let mut t = rotation.matvec(&s);
        for v in &mut t {
            *v += params.noise_sigma * gauss(&mut rng);
        }
        let s_tok = format!("s{i:0width$}");
        let t_tok = format!("t{i:0width$}");
        src_entries.push(AnchorEntry {
            token: s_tok.clone(),
            count: (params.vocab - i) as u64,
            vector: s,
        });
        tgt_entries.push(AnchorEntry {
            token: t_tok.clone(),
            count: (params.vocab - i) as u64,
            vector: t,
        });
        pairs.push((s_tok, t_tok));
    }
    RotatedAnchors {
        src: AnchorTable::new("synth-src", params.dim, src_entries).unwrap(),
        tgt: AnchorTable::new("synth-tgt", params.dim, tgt_entries).unwrap(),
        dictionary: Dictionary::new(pairs),
        rotation,
    }
}

// ---------------------------------------------------------------------------
// gaussian-clouds
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GaussianCloudParams {
    pub vocab: usize,
    pub dim: usize,
    pub occurrences_per_token: usize,
    /// Standard deviation of the within-cloud shift around each anchor.
    pub cloud_sigma: f64,
    pub seed: u64,
}

pub struct GaussianClouds {
    pub occurrences: Vec<ContextualOccurrence>,
    /// The generating anchors (the empirical means converge to these).
    pub true_anchors: AnchorTable,
}

/// Per-token isotropic point clouds around well-separated anchors.
pub fn gaussian_clouds(params: &GaussianCloudParams) -> GaussianClouds {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    clouds_around(&mut rng, params, "cloud", None)
}

pub struct GaussianCloudPair {
    pub src: GaussianClouds,
    pub tgt: GaussianClouds,
    pub dictionary: Dictionary,
    pub rotation: Mat,
}

/// Two cloud sets whose anchors are related by a planted rotation; clouds
/// are sampled independently on each side.
pub fn gaussian_cloud_pair(params: &GaussianCloudParams) -> GaussianCloudPair {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rotation = random_orthogonal(&mut rng, params.dim);
    let src = clouds_around(&mut rng, params, "s", None);
    let tgt = clouds_around(&mut rng, params, "t", Some(&(rotation.clone(), &src.true_anchors)));
    let width = params.vocab.to_string().len();
    let pairs = (0..params.vocab)
        .map(|i| (format!("s{i:0width$}"), format!("t{i:0width$}")))
        .collect();
    GaussianCloudPair {
        src,
        tgt,
        dictionary: Dictionary::new(pairs),
        rotation,
    }
}

fn clouds_around(
    rng: &mut ChaCha8Rng,
    params: &GaussianCloudParams,
    prefix: &str,
    rotate_from: Option<&(Mat, &AnchorTable)>,
) -> GaussianClouds {
    let width = params.vocab.to_string().len();
    let mut entries = Vec::with_capacity(params.vocab);
    let mut occurrences = Vec::new();
    let mut sid = 0u64;
    for i in 0..params.vocab {
        let anchor = match rotate_from {
            Some((q, src)) => q.matvec(&src.entries()[i].vector),
            None => skewed_sample(rng, params.dim),
        };
        let token = format!("{prefix}{i:0width$}");
        for _ in 0..params.occurrences_per_token {
            let vector = anchor
                .iter()
                .map(|a| a + params.cloud_sigma * gauss(rng))
                .collect();
            occurrences.push(ContextualOccurrence {
                token: token.clone(),
                sentence_id: sid,
                position: 0,
                vector,
            });
            sid += 1;
        }
        entries.push(AnchorEntry {
            token,
            count: params.occurrences_per_token as u64,
            vector: anchor,
        });
    }
    GaussianClouds {
        occurrences,
        true_anchors: AnchorTable::new(format!("{prefix}-true"), params.dim, entries).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// toy language: parallel treebanks and raw corpora
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum WordClass {
    Det,
    Adj,
    Noun,
    Verb,
    Adv,
    Prep,
    /// Homonym: behaves as a noun or as the main verb depending on context.
    Ambi,
}

const CLASS_SIZES: &[(WordClass, usize)] = &[
    (WordClass::Det, 3),
    (WordClass::Adj, 6),
    (WordClass::Noun, 14),
    (WordClass::Verb, 10),
    (WordClass::Adv, 4),
    (WordClass::Prep, 2),
    (WordClass::Ambi, 6),
];

struct AbstractToken {
    class: WordClass,
    index: usize,
    upos: &'static str,
    head: usize,
    label: &'static str,
}

/// Zipf-flavored index: squaring the uniform favors low indices.
fn sample_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.gen();
    ((u * u) * n as f64) as usize % n
}

fn generate_abstract_sentence(rng: &mut ChaCha8Rng) -> Vec<AbstractToken> {
    use WordClass::*;
    let mut tokens: Vec<AbstractToken> = Vec::new();
    let mut push = |tokens: &mut Vec<AbstractToken>,
                    rng: &mut ChaCha8Rng,
                    class: WordClass,
                    upos: &'static str,
                    head: usize,
                    label: &'static str| {
        let n = CLASS_SIZES.iter().find(|(c, _)| *c == class).unwrap().1;
        tokens.push(AbstractToken {
            class,
            index: sample_index(rng, n),
            upos,
            head,
            label,
        });
    };

    // Noun phrase rooted at the returned position. `at` is the position of
    // the first token (1-based).
    fn np(
        tokens: &mut Vec<AbstractToken>,
        rng: &mut ChaCha8Rng,
        push: &mut impl FnMut(
            &mut Vec<AbstractToken>,
            &mut ChaCha8Rng,
            WordClass,
            &'static str,
            usize,
            &'static str,
        ),
        head_of_np: usize,
        label: &'static str,
        allow_ambi: bool,
    ) -> usize {
        let with_adj = rng.gen::<f64>() < 0.35;
        let noun_pos = tokens.len() + if with_adj { 3 } else { 2 };
        push(tokens, rng, WordClass::Det, "DET", noun_pos, "det");
        if with_adj {
            push(tokens, rng, WordClass::Adj, "ADJ", noun_pos, "amod");
        }
        let as_ambi = allow_ambi && rng.gen::<f64>() < 0.45;
        if as_ambi {
            push(tokens, rng, WordClass::Ambi, "NOUN", head_of_np, label);
        } else {
            push(tokens, rng, WordClass::Noun, "NOUN", head_of_np, label);
        }
        noun_pos
    }

    let template: f64 = rng.gen();
    if template < 0.28 {
        // Subject, ambiguous-or-plain verb, object.
        let as_ambi = rng.gen::<f64>() < 0.45;
        let subj_with_adj = rng.gen::<f64>() < 0.35;
        let verb_pos = if subj_with_adj { 4 } else { 3 };
        push(&mut tokens, rng, Det, "DET", verb_pos - 1, "det");
        if subj_with_adj {
            push(&mut tokens, rng, Adj, "ADJ", verb_pos - 1, "amod");
        }
        push(&mut tokens, rng, Noun, "NOUN", verb_pos, "nsubj");
        if as_ambi {
            push(&mut tokens, rng, Ambi, "VERB", 0, "root");
        } else {
            push(&mut tokens, rng, Verb, "VERB", 0, "root");
        }
        np(&mut tokens, rng, &mut push, verb_pos, "obj", false);
    } else if template < 0.56 {
        // Subject (possibly ambiguous noun), plain verb, object.
        let subj_with_adj = rng.gen::<f64>() < 0.35;
        let verb_pos = if subj_with_adj { 4 } else { 3 };
        push(&mut tokens, rng, Det, "DET", verb_pos - 1, "det");
        if subj_with_adj {
            push(&mut tokens, rng, Adj, "ADJ", verb_pos - 1, "amod");
        }
        let as_ambi = rng.gen::<f64>() < 0.45;
        if as_ambi {
            push(&mut tokens, rng, Ambi, "NOUN", verb_pos, "nsubj");
        } else {
            push(&mut tokens, rng, Noun, "NOUN", verb_pos, "nsubj");
        }
        push(&mut tokens, rng, Verb, "VERB", 0, "root");
        np(&mut tokens, rng, &mut push, verb_pos, "obj", true);
    } else if template < 0.80 {
        // Transitive clause with a prepositional phrase. Low-index verbs
        // take the PP as a verb modifier, the rest attach it to the object.
        push(&mut tokens, rng, Det, "DET", 2, "det");
        push(&mut tokens, rng, Noun, "NOUN", 3, "nsubj");
        let verb_index = sample_index(rng, 10);
        tokens.push(AbstractToken {
            class: Verb,
            index: verb_index,
            upos: "VERB",
            head: 0,
            label: "root",
        });
        let obj_pos = np(&mut tokens, rng, &mut push, 3, "obj", false);
        let (pp_head, pp_label) = if verb_index < 5 {
            (3, "obl")
        } else {
            (obj_pos, "nmod")
        };
        let prep_pos = tokens.len() + 1;
        let _ = prep_pos;
        let pp_noun_pos = tokens.len() + 3;
        push(&mut tokens, rng, Prep, "ADP", pp_noun_pos, "case");
        push(&mut tokens, rng, Det, "DET", pp_noun_pos, "det");
        push(&mut tokens, rng, Noun, "NOUN", pp_head, pp_label);
        // Fix the label of the PP noun (np helper not used here).
        let last = tokens.len() - 1;
        tokens[last].label = pp_label;
    } else if template < 0.92 {
        // Intransitive with adverb.
        push(&mut tokens, rng, Det, "DET", 2, "det");
        let as_ambi = rng.gen::<f64>() < 0.4;
        if as_ambi {
            push(&mut tokens, rng, Ambi, "NOUN", 3, "nsubj");
        } else {
            push(&mut tokens, rng, Noun, "NOUN", 3, "nsubj");
        }
        push(&mut tokens, rng, Verb, "VERB", 0, "root");
        push(&mut tokens, rng, Adv, "ADV", 3, "advmod");
    } else {
        // Bare subject-verb.
        push(&mut tokens, rng, Noun, "NOUN", 2, "nsubj");
        let as_ambi = rng.gen::<f64>() < 0.4;
        if as_ambi {
            push(&mut tokens, rng, Ambi, "VERB", 0, "root");
        } else {
            push(&mut tokens, rng, Verb, "VERB", 0, "root");
        }
    }
    tokens
}

/// Pseudo-word inventory for one language: unique CV-syllable words per
/// (class, index) slot.
fn make_words(lang_seed: u64) -> HashMap<(WordClass, usize), String> {
    let consonants = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    let vowels = ["a", "e", "i", "o", "u"];
    let mut rng = ChaCha8Rng::seed_from_u64(lang_seed ^ 0x746f795f77726473);
    let mut used = std::collections::HashSet::new();
    let mut words = HashMap::new();
    for &(class, size) in CLASS_SIZES {
        for index in 0..size {
            loop {
                let syllables = rng.gen_range(2..=3);
                let mut w = String::new();
                for _ in 0..syllables {
                    w.push_str(consonants[rng.gen_range(0..consonants.len())]);
                    w.push_str(vowels[rng.gen_range(0..vowels.len())]);
                }
                if used.insert(w.clone()) {
                    words.insert((class, index), w);
                    break;
                }
            }
        }
    }
    words
}

#[derive(Clone, Debug)]
pub struct ToyTreebankParams {
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub raw_sentences: usize,
    pub seed: u64,
}

impl Default for ToyTreebankParams {
    fn default() -> Self {
        ToyTreebankParams {
            train_sentences: 160,
            dev_sentences: 60,
            test_sentences: 60,
            raw_sentences: 4000,
            seed: 0,
        }
    }
}

pub struct ToyLanguageData {
    pub name: String,
    /// Tokenized raw corpus for LM training.
    pub raw_corpus: Vec<Vec<String>>,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

pub struct ToyTreebankPair {
    pub lang_a: ToyLanguageData,
    pub lang_b: ToyLanguageData,
    /// Gold pairs (language-A word, language-B word) over the full lexicon.
    pub dictionary_ab: Dictionary,
}

/// Parallel treebanks over permuted vocabularies: the same abstract
/// sentences (identical trees, identical frequencies) rendered with two
/// disjoint word inventories, plus parallel raw corpora and the gold lexicon.
pub fn toy_treebank_pair(params: &ToyTreebankParams) -> ToyTreebankPair {
    let words_a = make_words(params.seed.wrapping_mul(2).wrapping_add(1));
    let words_b = make_words(params.seed.wrapping_mul(2).wrapping_add(2));

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let total =
        params.train_sentences + params.dev_sentences + params.test_sentences + params.raw_sentences;
    let abstract_sentences: Vec<Vec<AbstractToken>> = (0..total)
        .map(|_| generate_abstract_sentence(&mut rng))
        .collect();

    let render = |name: &str, words: &HashMap<(WordClass, usize), String>| {
        let to_sentence = |abs: &Vec<AbstractToken>| Sentence {
            tokens: abs
                .iter()
                .map(|t| Token {
                    form: words[&(t.class, t.index)].clone(),
                    upos: t.upos.to_string(),
                    head: t.head,
                    label: t.label.to_string(),
                })
                .collect(),
            language: name.to_string(),
        };
        let to_text = |abs: &Vec<AbstractToken>| -> Vec<String> {
            abs.iter().map(|t| words[&(t.class, t.index)].clone()).collect()
        };
        let mut it = abstract_sentences.iter();
        let train: Vec<Sentence> = it.by_ref().take(params.train_sentences).map(to_sentence).collect();
        let dev: Vec<Sentence> = it.by_ref().take(params.dev_sentences).map(to_sentence).collect();
        let test: Vec<Sentence> = it.by_ref().take(params.test_sentences).map(to_sentence).collect();
        let raw_corpus: Vec<Vec<String>> = it.map(to_text).collect();
        ToyLanguageData {
            name: name.to_string(),
            raw_corpus,
            train,
            dev,
            test,
        }
    };

    let lang_a = render("toy-a", &words_a);
    let lang_b = render("toy-b", &words_b);

    let mut pairs = Vec::new();
    for &(class, size) in CLASS_SIZES {
        for index in 0..size {
            pairs.push((
                words_a[&(class, index)].clone(),
                words_b[&(class, index)].clone(),
            ));
        }
    }
    ToyTreebankPair {
        lang_a,
        lang_b,
        dictionary_ab: Dictionary::new(pairs),
    }
}

/// Tokenized raw corpus for a single toy language.
pub fn toy_corpus(sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let words = make_words(seed.wrapping_mul(2).wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..sentences)
        .map(|_| {
            generate_abstract_sentence(&mut rng)
                .iter()
                .map(|t| words[&(t.class, t.index)].clone())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg_align::{orthogonal_procrustes, pairs_from_dictionary};

    #[test]
    fn noiseless_rotation_recovered_exactly() {
        let params = RotatedAnchorParams {
            vocab: 200,
            dim: 8,
            noise_sigma: 0.0,
            seed: 5,
        };
        let fixture = rotated_anchors(&params);
        let (pairs, skipped) =
            pairs_from_dictionary(&fixture.src, &fixture.tgt, &fixture.dictionary).unwrap();
        assert_eq!(skipped, 0);
        let w = orthogonal_procrustes(&pairs).unwrap();
        let err = w.matrix.sub(&fixture.rotation).frob_norm();
        assert!(err < 1e-10, "‖W − Q‖_F = {err}");
    }

    #[test]
    fn fixed_seed_reproduces_fixtures() {
        let params = RotatedAnchorParams {
            vocab: 50,
            dim: 5,
            noise_sigma: 0.01,
            seed: 9,
        };
        let a = rotated_anchors(&params);
        let b = rotated_anchors(&params);
        for (x, y) in a.src.entries().iter().zip(b.src.entries()) {
            assert_eq!(x.token, y.token);
            assert_eq!(x.vector, y.vector);
        }
        assert_eq!(a.rotation.data(), b.rotation.data());
    }

    #[test]
    fn clouds_are_tight_around_anchors() {
        let params = GaussianCloudParams {
            vocab: 40,
            dim: 6,
            occurrences_per_token: 20,
            cloud_sigma: 0.02,
            seed: 3,
        };
        let clouds = gaussian_clouds(&params);
        assert_eq!(clouds.occurrences.len(), 40 * 20);
        let stats = crate::anchor_space::geometry_report(
            clouds.occurrences.clone(),
            &clouds.true_anchors,
            None,
            &crate::anchor_space::GeometryConfig::default(),
        );
        assert!(
            stats.mean_within_cloud < stats.mean_between_anchors,
            "within {} vs between {}",
            stats.mean_within_cloud,
            stats.mean_between_anchors
        );
        assert!(stats.mean_within_cloud < 0.05);
    }

    #[test]
    fn treebank_pair_is_parallel() {
        let params = ToyTreebankParams {
            train_sentences: 30,
            dev_sentences: 10,
            test_sentences: 10,
            raw_sentences: 50,
            seed: 11,
        };
        let pair = toy_treebank_pair(&params);
        assert_eq!(pair.lang_a.train.len(), 30);
        assert_eq!(pair.lang_b.raw_corpus.len(), 50);

        // Same trees, same UPOS, different forms.
        let dict: HashMap<&str, &str> = pair
            .dictionary_ab
            .pairs()
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let mut any_form_differs = false;
        for (sa, sb) in pair.lang_a.train.iter().zip(&pair.lang_b.train) {
            assert_eq!(sa.len(), sb.len());
            for (ta, tb) in sa.tokens.iter().zip(&sb.tokens) {
                assert_eq!(ta.head, tb.head);
                assert_eq!(ta.label, tb.label);
                assert_eq!(ta.upos, tb.upos);
                assert_eq!(dict[ta.form.as_str()], tb.form.as_str());
                any_form_differs |= ta.form != tb.form;
            }
        }
        assert!(any_form_differs, "vocabularies should be disjoint");
    }

    #[test]
    fn trees_are_valid_and_single_rooted() {
        let params = ToyTreebankParams {
            train_sentences: 200,
            dev_sentences: 0,
            test_sentences: 0,
            raw_sentences: 0,
            seed: 13,
        };
        let pair = toy_treebank_pair(&params);
        for sent in &pair.lang_a.train {
            sent.validate_tree().expect("generated tree must be valid");
            let roots = sent.tokens.iter().filter(|t| t.head == 0).count();
            assert_eq!(roots, 1, "exactly one root per sentence");
        }
    }

    #[test]
    fn homonyms_occur_in_both_roles() {
        let pair = toy_treebank_pair(&ToyTreebankParams {
            train_sentences: 300,
            dev_sentences: 0,
            test_sentences: 0,
            raw_sentences: 0,
            seed: 17,
        });
        let words = make_words(17u64.wrapping_mul(2).wrapping_add(1));
        let ambi_words: std::collections::HashSet<String> = (0..6)
            .map(|i| words[&(WordClass::Ambi, i)].clone())
            .collect();
        let (mut as_noun, mut as_verb) = (0, 0);
        for sent in &pair.lang_a.train {
            for tok in &sent.tokens {
                if ambi_words.contains(&tok.form) {
                    match tok.upos.as_str() {
                        "NOUN" => as_noun += 1,
                        "VERB" => as_verb += 1,
                        other => panic!("unexpected UPOS {other} for homonym"),
                    }
                }
            }
        }
        assert!(as_noun > 20, "noun usages: {as_noun}");
        assert!(as_verb > 20, "verb usages: {as_verb}");
    }

    #[test]
    fn toy_corpus_tokens_are_alphabetic() {
        let corpus = toy_corpus(50, 23);
        assert_eq!(corpus.len(), 50);
        for sent in &corpus {
            assert!(!sent.is_empty());
            for tok in sent {
                assert!(tok.chars().all(char::is_alphabetic), "token {tok:?}");
            }
        }
    }
}
