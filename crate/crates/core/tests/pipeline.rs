//! End-to-end flows across resources, corpus, model, training and analysis.

use approx::assert_relative_eq;

use lrlstm::analysis::{evaluate, extract_phrase_pairs, run_ablation, AblationSpec, ModifierSet};
use lrlstm::corpus::{corpus_stats, extract_subset, mr_from_text, split_dataset, Dataset, LabelScheme, RoleFilter, Sentence};
use lrlstm::model::{read_checkpoint, write_checkpoint, ModelParams, Variant};
use lrlstm::regularizers::EnabledSet;
use lrlstm::resources::{build_lexicon, parse_lexicon_tsv, tokenize, EmbeddingTable, Lexicon, Vocab, WordLists};
use lrlstm::synthetic::separable_corpus;
use lrlstm::training::{train, TrainConfig};
use lrlstm::Error;

fn setup(extra_vocab: &[&str], variant: Variant) -> (Dataset, ModelParams) {
    let (mut ds, lex) = separable_corpus(40, 2);
    let lists = WordLists::default();
    ds.annotate(&lex, &lists);
    let words = ds.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str)).chain(extra_vocab.iter().copied());
    let vocab = Vocab::from_words(words);
    let emb = EmbeddingTable::random(vocab, 8, 2);
    let model = ModelParams::init(2, variant, 8, 2, &lists, emb).unwrap();
    (ds, model)
}

fn small_config(max_batches: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 10,
        max_batches,
        eval_every: 4,
        seed: 9,
        threads: 2,
        ..TrainConfig::default()
    }
}

fn sentence(text: &str, label: usize) -> Sentence {
    Sentence::new(tokenize(text), label)
}

#[test]
fn unseen_embedding_rows_are_never_touched() {
    let (ds, model) = setup(&["zebra", "quokka"], Variant::BiLstm);
    let embed = model.handles.embed;
    let rows: Vec<usize> = ["zebra", "quokka"].iter().map(|w| model.vocab.get(w).unwrap()).collect();
    let before: Vec<Vec<f64>> = rows.iter().map(|&r| model.store.get(embed).row(r).to_vec()).collect();
    let out = train(&ds, &ds, model, &small_config(8)).unwrap();
    assert!(out.aborted.is_none());
    for (r, b) in rows.iter().zip(&before) {
        let after = out.last.store.get(embed).row(*r);
        assert!(after.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let seen = out.last.vocab.get(&ds.sentences[0].tokens[0]).unwrap();
    assert_ne!(out.last.store.get(embed).row(seen), setup(&["zebra", "quokka"], Variant::BiLstm).1.store.get(embed).row(seen));
}

#[test]
fn accumulators_only_grow() {
    let (ds, model) = setup(&[], Variant::Lstm);
    let short = train(&ds, &ds, model.clone(), &small_config(4)).unwrap();
    let long = train(&ds, &ds, model, &small_config(8)).unwrap();
    for (a, b) in short.optimizer.accumulators.iter().zip(&long.optimizer.accumulators) {
        match (a, b) {
            (Some(a), Some(b)) => {
                assert!(a.iter().all(|v| *v >= 0.0 && v.is_finite()));
                assert!(a.iter().zip(b).all(|(x, y)| y >= x));
            }
            (None, None) => {}
            _ => panic!("accumulator layout differs"),
        }
    }
}

#[test]
fn zero_batches_keeps_the_initial_model() {
    let (ds, model) = setup(&[], Variant::BiLstm);
    let out = train(&ds, &ds, model.clone(), &small_config(0)).unwrap();
    assert_eq!(out.log.records.len(), 1);
    assert_eq!(out.log.records[0].batch, 0);
    assert_eq!(out.log.records[0].train_loss, None);
    assert_eq!(out.best.store, model.store);
    assert_eq!(out.log.to_csv().lines().nth(1).unwrap().split(',').nth(1), Some(""));
}

#[test]
fn same_seed_gives_the_same_log() {
    let (ds, model) = setup(&[], Variant::BiLstm);
    let a = train(&ds, &ds, model.clone(), &small_config(8)).unwrap();
    let b = train(&ds, &ds, model.clone(), &small_config(8)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(write_checkpoint(&a.best), write_checkpoint(&b.best));
    let mut other = small_config(8);
    other.seed = 10;
    let c = train(&ds, &ds, model, &other).unwrap();
    assert_ne!(write_checkpoint(&a.last), write_checkpoint(&c.last));
}

#[test]
fn evaluate_counts_argmax_hits() {
    let (_, mut model) = setup(&["it", "was", "fine"], Variant::Lstm);
    let s = model.handles.predictor.s;
    let bias = model.handles.predictor.bias;
    model.store.get_mut(s).data.iter_mut().for_each(|v| *v = 0.0);
    model.store.get_mut(bias).data.copy_from_slice(&[0.0, 10.0]);
    let ds = Dataset::new(
        "rigged",
        LabelScheme::binary(),
        vec![sentence("it was fine", 1), sentence("fine", 1), sentence("it was", 0)],
    )
    .unwrap();
    assert_relative_eq!(evaluate(&model, &ds).unwrap(), 2.0 / 3.0, epsilon = 1e-15);

    let five = Dataset::new("five", LabelScheme::five_class(), vec![sentence("fine", 4)]).unwrap();
    assert!(matches!(evaluate(&model, &five), Err(Error::Config(_))));
}

#[test]
fn phrase_pairs_strip_the_modifier() {
    let (_, model) = setup(&["i", "found", "it", "not", "interesting", "is"], Variant::BiLstm);
    let ds = Dataset::new(
        "pairs",
        LabelScheme::binary(),
        vec![sentence("i found it not interesting", 0), sentence("it is not interesting", 0)],
    )
    .unwrap();
    let pairs = extract_phrase_pairs(&model, &ds, ModifierSet::Negators, None).unwrap();
    assert_eq!(pairs.len(), 2);
    let p = &pairs[0];
    assert_eq!((p.sentence_id, p.position, p.modifier.as_str()), (0, 3, "not"));
    assert_eq!(p.base, vec!["interesting"]);
    assert_eq!(p.modified, vec!["not", "interesting"]);
    assert_eq!(p.base_dist, model.predict(&p.base).unwrap());
    assert_eq!(p.modified_dist, model.predict(&p.modified).unwrap());
    let q = &pairs[1];
    assert_eq!(q.modifier, "is not");
    assert_eq!(q.modified, vec!["is", "not", "interesting"]);
    assert_eq!(q.base, vec!["interesting"]);
    assert!(extract_phrase_pairs(&model, &ds, ModifierSet::Intensifiers, None).unwrap().is_empty());
}

#[test]
fn single_config_ablation_gives_one_row_per_set() {
    let (ds, model) = setup(&[], Variant::Lstm);
    let spec = AblationSpec::new(vec![EnabledSet::ALL]).unwrap();
    let (rows, runs) = run_ablation(&spec, &model, &ds, &ds, &[&ds], &small_config(4)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(runs.len(), 1);
    assert_eq!(rows[0].config_id, "none");
    assert_eq!(rows[0].accuracy, evaluate(&runs[0].best, &ds).unwrap());
    assert!(AblationSpec::new(vec![EnabledSet::NONE]).is_err());
}

#[test]
fn checkpoint_survives_a_round_trip_and_rejects_damage() {
    let (ds, model) = setup(&[], Variant::BiLstm);
    let out = train(&ds, &ds, model, &small_config(4)).unwrap();
    let bytes = write_checkpoint(&out.best);
    let back = read_checkpoint(&bytes).unwrap();
    let q = out.best.quantized();
    for s in &ds.sentences {
        assert_eq!(back.predict(&s.tokens).unwrap(), q.predict(&s.tokens).unwrap());
    }
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(&bad).is_err());
}

#[test]
fn lexicon_corpus_and_subsets_agree() {
    let a = parse_lexicon_tsv("good\tweak_pos\ngreat\tstrong_pos\nbad\tweak_neg\n", "a").unwrap();
    let b = parse_lexicon_tsv("bad\tstrong_neg\nawful\tstrong_neg\n", "b").unwrap();
    let (lexicon, report) = build_lexicon(&a, &b);
    assert_eq!((report.kept, report.dropped), (3, 1));
    assert_eq!(lexicon.get("bad"), None);

    let pos = "a good movie .\nnot great at all\nvery good indeed\nplain words here\n";
    let neg = "an awful film\nnever good\nquite awful\nnothing to see\n";
    let (all, _) = mr_from_text(pos, neg).unwrap();
    assert_eq!(all.len(), 8);
    let lists = WordLists::default();
    let stats = corpus_stats(&all, &lists, &lexicon);
    assert_eq!((stats.total, stats.with_sentiment), (8, 6));
    assert_eq!((stats.with_negation, stats.with_intensity), (3, 2));

    let neg_subset = extract_subset(&all, RoleFilter::ContainsNegator, &lists, &lexicon);
    assert_eq!(neg_subset.len(), 3);
    let mut annotated = all.clone();
    annotated.annotate(&lexicon, &lists);
    let tokens = |d: &Dataset| d.sentences.iter().map(|s| s.tokens.clone()).collect::<Vec<_>>();
    assert_eq!(tokens(&extract_subset(&annotated, RoleFilter::ContainsNegator, &lists, &lexicon)), tokens(&neg_subset));
    assert_eq!(extract_subset(&all, RoleFilter::ContainsNegator, &lists, &Lexicon::default()).len(), 3);

    let (tr, va, te) = split_dataset(&all, [0.5, 0.25, 0.25], 4).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (4, 2, 2));
    let mut joined: Vec<_> = tr.sentences.iter().chain(&va.sentences).chain(&te.sentences).map(|s| s.tokens.join(" ")).collect();
    let mut original: Vec<_> = all.sentences.iter().map(|s| s.tokens.join(" ")).collect();
    joined.sort();
    original.sort();
    assert_eq!(joined, original);
}
