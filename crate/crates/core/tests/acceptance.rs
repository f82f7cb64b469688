//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 8's corpus counts need the official data under
//! `$LRLSTM_DATA_DIR` (`mr/rt-polarity.pos`, `mr/rt-polarity.neg`,
//! `sst/{train,dev,test}.txt`, `lexicon.tsv`); without it that half is
//! reported as SKIP.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use lrlstm::analysis::evaluate;
use lrlstm::corpus::{corpus_stats, load_mr, load_sst_splits, parse_sst_tree, Dataset};
use lrlstm::model::{load_checkpoint, save_checkpoint, write_checkpoint, ModelParams, Variant};
use lrlstm::numeric::{floor_renormalize, softmax, stream_rng, sym_kl, uniform_vec, StreamRng};
use lrlstm::regularizers::{
    assign_regularizer, baseline_loss, bidirectional_reg_loss, nsr_loss, sr_loss, total_loss, transform_loss,
    EnabledSet, RegKind, Regularizer, RegularizerConfig, Side,
};
use lrlstm::resources::{build_lexicon, load_lexicon_tsv, EmbeddingTable, LexClass, Vocab, WordLists};
use lrlstm::synthetic::{check_instance, grad_instance, separable_corpus, templated_corpus, TemplateConfig};
use lrlstm::training::{train, Objective, TrainConfig};

const GRAD_TOLERANCE: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const SYM_KL_PIN: f64 = 0.1373;
const SYM_KL_PIN_TOLERANCE: f64 = 1e-4;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(60);
const GAP_POINTS: f64 = 5.0;
const TABLE_TOLERANCE: f64 = 0.01;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn random_dist(rng: &mut StreamRng, c: usize) -> Vec<f64> {
    let z = uniform_vec(rng, c, -4.0, 4.0);
    floor_renormalize(&softmax(&z).unwrap())
}

/// Independent symmetric KL: `½[KL(p‖q) + KL(q‖p)]` written term by term.
fn sym_kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    0.5 * (kl(p, q) + kl(q, p))
}

fn hinge(x: f64, m: f64) -> f64 {
    (x - m).max(0.0)
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut covered = [[false; 4]; 2];
    let mut n = 0;
    for i in 0..20u64 {
        let variant = if i % 2 == 0 { Variant::Lstm } else { Variant::BiLstm };
        let classes = if i % 4 < 2 { 2 } else { 5 };
        let len = 2 + (i as usize % 5);
        let inst = match grad_instance(1000 + i, variant, classes, len, 8) {
            Ok(x) => x,
            Err(e) => return Outcome::Fail(format!("instance {i}: {e}")),
        };
        for r in assign_regularizer(&inst.sentence.roles, variant, EnabledSet::ALL).into_iter().flatten() {
            covered[usize::from(variant == Variant::BiLstm)][RegKind::ALL.iter().position(|k| *k == r.kind()).unwrap()] = true;
        }
        match check_instance(&inst, GRAD_STEP) {
            Ok(r) => {
                n += r.entries_checked;
                if r.max_relative_error > worst {
                    worst = r.max_relative_error;
                    worst_at = format!("instance {i} {:?}", r.worst);
                }
            }
            Err(e) => return Outcome::Fail(format!("instance {i}: {e}")),
        }
    }
    let all_covered = covered.iter().all(|v| v.iter().all(|&b| b));
    check(
        worst <= GRAD_TOLERANCE && all_covered,
        format!(
            "20 instances, {n} entries, max relative error {worst:.2e} (<= {GRAD_TOLERANCE:.0e}) at {worst_at}; every regularizer on both variants: {all_covered}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = stream_rng(2, "acceptance/kl");
    let pinned = sym_kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    let oracle = sym_kl_oracle(&[0.5, 0.5], &[0.25, 0.75]);
    let mut props = true;
    for _ in 0..1000 {
        let c = rng.gen_range(2..6);
        let (p, q) = (random_dist(&mut rng, c), random_dist(&mut rng, c));
        let a = sym_kl(&p, &q).unwrap();
        let b = sym_kl(&q, &p).unwrap();
        props &= a >= 0.0 && a.to_bits() == b.to_bits() && (a - sym_kl_oracle(&p, &q)).abs() <= 1e-12 * (1.0 + a);
        props &= sym_kl(&p, &p).unwrap() == 0.0;
    }
    let mut min_loss = f64::INFINITY;
    for _ in 0..1000 {
        let c = rng.gen_range(2..6);
        let m = rng.gen_range(0.0..0.5);
        let (pt, pa, pb) = (random_dist(&mut rng, c), random_dist(&mut rng, c), random_dist(&mut rng, c));
        let shift = uniform_vec(&mut rng, c, -1.0, 1.0);
        let t = uniform_vec(&mut rng, c * c, -3.0, 3.0);
        let seq_f = vec![pa.clone(), pt.clone(), pb.clone()];
        let seq_b = vec![pb.clone(), random_dist(&mut rng, c), pa.clone()];
        let losses = [
            nsr_loss(&pt, &pa, m).unwrap(),
            sr_loss(&pt, &pa, &shift, m).unwrap(),
            transform_loss(&pt, Some(&pa), Some(&pb), &t, m).unwrap().0,
            bidirectional_reg_loss(&seq_f, &seq_b, 1, Regularizer::Nr(0), &shift, &t, m).unwrap().0,
            bidirectional_reg_loss(&seq_f, &seq_b, 1, Regularizer::Sr(LexClass::WeakPos), &shift, &t, m).unwrap().0,
        ];
        for l in losses {
            min_loss = min_loss.min(l);
        }
    }
    check(
        (pinned - SYM_KL_PIN).abs() <= SYM_KL_PIN_TOLERANCE && (pinned - oracle).abs() < 1e-15 && props && min_loss >= 0.0,
        format!(
            "sym_kl([.5,.5],[.25,.75]) = {pinned:.10} (oracle {oracle:.10}, pin {SYM_KL_PIN} ± {SYM_KL_PIN_TOLERANCE}); nonnegativity/symmetry on 1000 pairs: {props}; min regularizer loss over 1000 inputs x 5 forms = {min_loss:.3e}"
        ),
    )
}

fn tiny_setup(variant: Variant, seed: u64) -> (ModelParams, Dataset, Dataset) {
    let cfg = TemplateConfig {
        train: 120,
        valid: 40,
        test: 10,
        words_per_class: 6,
        neutral_words: 20,
        seed,
        ..Default::default()
    };
    let corpus = templated_corpus(&cfg).unwrap();
    let emb = EmbeddingTable::random(corpus.vocab.clone(), 8, seed);
    let model = ModelParams::init(seed, variant, 8, 2, &corpus.lists, emb).unwrap();
    (model, corpus.train, corpus.valid)
}

fn criterion_3() -> Outcome {
    let (model, train_set, valid) = tiny_setup(Variant::BiLstm, 3);
    let batch: Vec<_> = train_set.sentences.iter().take(25).collect();
    let mut rng = stream_rng(3, "acceptance/masks");
    let masks: Vec<_> = batch
        .iter()
        .map(|_| Some(lrlstm::model::dropout_mask(&mut rng, model.representation_dim(), 0.5)))
        .collect();
    let off = RegularizerConfig {
        enabled: EnabledSet::NONE,
        ..Default::default()
    };
    let a = total_loss(&batch, &model, &off, &masks).unwrap();
    let b = baseline_loss(&batch, &model, off.beta, &masks).unwrap();
    let same_loss = a.loss.to_bits() == b.loss.to_bits();
    let same_grad = a.grads == b.grads;

    let cfg = TrainConfig {
        max_batches: 30,
        eval_every: 10,
        seed: 3,
        regularizers: off,
        ..Default::default()
    };
    let base_cfg = TrainConfig {
        objective: Objective::Baseline,
        ..cfg.clone()
    };
    let ta = train(&train_set, &valid, model.clone(), &cfg).unwrap();
    let tb = train(&train_set, &valid, model, &base_cfg).unwrap();
    let same_params = write_checkpoint(&ta.last) == write_checkpoint(&tb.last) && ta.last.store == tb.last.store;
    check(
        same_loss && same_grad && same_params && ta.log == tb.log,
        format!("loss bits equal: {same_loss}; gradients equal: {same_grad}; trained parameters equal after 30 batches: {same_params}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = stream_rng(4, "acceptance/reductions");
    let mut sr_exact = true;
    let mut single_exact = true;
    let mut bi_exact = true;
    let mut worst_single: f64 = 0.0;
    for _ in 0..500 {
        let c = rng.gen_range(2..6);
        let m = rng.gen_range(0.0..0.3);
        let (pt, pa) = (random_dist(&mut rng, c), random_dist(&mut rng, c));
        sr_exact &= sr_loss(&pt, &pa, &vec![0.0; c], m).unwrap().to_bits() == nsr_loss(&pt, &pa, m).unwrap().to_bits();

        let t = uniform_vec(&mut rng, c * c, -3.0, 3.0);
        let mapped: Vec<f64> = t.chunks(c).map(|row| row.iter().zip(&pa).map(|(x, y)| x * y).sum()).collect();
        let branch = hinge(sym_kl_oracle(&pt, &floor_renormalize(&softmax(&mapped).unwrap())), m);
        let (prev_only, side_p) = transform_loss(&pt, Some(&pa), None, &t, m).unwrap();
        let (next_only, side_n) = transform_loss(&pt, None, Some(&pa), &t, m).unwrap();
        let err = (prev_only - branch).abs().max((next_only - branch).abs());
        worst_single = worst_single.max(err);
        single_exact &= err <= 1e-12 && side_p == Side::Previous && side_n == Side::Next && prev_only.to_bits() == next_only.to_bits();

        // Brute force over the two explicitly built branches.
        let n = 4;
        let fwd: Vec<Vec<f64>> = (0..n).map(|_| random_dist(&mut rng, c)).collect();
        let bwd: Vec<Vec<f64>> = (0..n).map(|_| random_dist(&mut rng, c)).collect();
        let shift = uniform_vec(&mut rng, c, -0.5, 0.5);
        for t_pos in 0..n {
            for reg in [Regularizer::Nsr, Regularizer::Sr(LexClass::StrongNeg), Regularizer::Nr(0)] {
                let cand = |nb: &[f64]| -> Vec<f64> {
                    match reg {
                        Regularizer::Nsr => nb.to_vec(),
                        Regularizer::Sr(_) => floor_renormalize(&nb.iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>()),
                        _ => {
                            let z: Vec<f64> = t.chunks(c).map(|row| row.iter().zip(nb).map(|(x, y)| x * y).sum()).collect();
                            floor_renormalize(&softmax(&z).unwrap())
                        }
                    }
                };
                let mut branches = Vec::new();
                if t_pos > 0 {
                    branches.push((hinge(sym_kl_oracle(&fwd[t_pos], &cand(&fwd[t_pos - 1])), m), Side::Previous));
                }
                if t_pos + 1 < n {
                    branches.push((hinge(sym_kl_oracle(&bwd[t_pos], &cand(&bwd[t_pos + 1])), m), Side::Next));
                }
                let best = branches.iter().copied().fold(None, |acc: Option<(f64, Side)>, b| match acc {
                    Some(a) if a.0 <= b.0 => Some(a),
                    _ => Some(b),
                });
                let (got, side) = bidirectional_reg_loss(&fwd, &bwd, t_pos, reg, &shift, &t, m).unwrap();
                let (want, want_side) = best.unwrap();
                let tie = branches.len() == 2 && (branches[0].0 - branches[1].0).abs() <= 1e-12;
                bi_exact &= (got - want).abs() <= 1e-12 && (tie || side == Some(want_side));
            }
        }
    }
    check(
        sr_exact && single_exact && bi_exact,
        format!(
            "sr(zero shift) == nsr bitwise: {sr_exact}; single-neighbor transform == its branch (max diff {worst_single:.1e}): {single_exact}; bidirectional == brute-force min: {bi_exact} (500 instances)"
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (mut ds, lex) = separable_corpus(50, 5);
    let lists = WordLists::default();
    ds.annotate(&lex, &lists);
    let vocab = Vocab::from_words(ds.sentences.iter().flat_map(|s| s.tokens.iter()));
    let emb = EmbeddingTable::random(vocab, 16, 5);
    let model = ModelParams::init(5, Variant::Lstm, 16, 2, &lists, emb).unwrap();
    let batches_per_epoch = 2;
    let cfg = TrainConfig {
        max_batches: OVERFIT_EPOCHS * batches_per_epoch,
        eval_every: batches_per_epoch,
        seed: 5,
        regularizers: RegularizerConfig {
            alpha: 0.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let out = train(&ds, &ds, model, &cfg).unwrap();
    let first_perfect = out.log.records.iter().find(|r| r.valid_accuracy == 1.0).map(|r| r.batch / batches_per_epoch);
    let acc = evaluate(&out.best, &ds).unwrap();
    let elapsed = start.elapsed();
    check(
        acc == 1.0 && first_perfect.is_some() && elapsed < OVERFIT_BUDGET,
        format!("train accuracy {acc:.3}, first perfect at epoch {first_perfect:?} (<= {OVERFIT_EPOCHS}), {elapsed:.1?} (< {OVERFIT_BUDGET:?})"),
    )
}

fn criterion_6() -> Outcome {
    const MARGINS: [f64; 3] = [0.05, 0.1, 0.3];
    let mut gaps = Vec::new();
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let corpus = templated_corpus(&TemplateConfig {
            seed,
            ..Default::default()
        })
        .unwrap();
        let run = |enabled: EnabledSet, margin: f64| {
            let emb = EmbeddingTable::random(corpus.vocab.clone(), 16, seed);
            let model = ModelParams::init(seed, Variant::BiLstm, 16, 2, &corpus.lists, emb).unwrap();
            let mut cfg = TrainConfig {
                seed,
                max_batches: 600,
                eval_every: 50,
                ..Default::default()
            };
            cfg.regularizers.enabled = enabled;
            cfg.regularizers.margin = margin;
            let out = train(&corpus.train, &corpus.valid, model, &cfg).unwrap();
            let valid = out.log.best_record().unwrap().valid_accuracy;
            (valid, evaluate(&out.best, &corpus.test).unwrap(), margin)
        };
        // The margin is picked on validation accuracy only.
        let reg = MARGINS
            .iter()
            .map(|&m| run(EnabledSet::ALL, m))
            .fold(None, |best: Option<(f64, f64, f64)>, r| match best {
                Some(b) if b.0 >= r.0 => Some(b),
                _ => Some(r),
            })
            .unwrap();
        let plain = run(EnabledSet::NONE, 0.3);
        gaps.push(100.0 * (reg.1 - plain.1));
        lines.push(format!("seed {seed}: {:.1} vs {:.1} (M = {})", 100.0 * reg.1, 100.0 * plain.1, reg.2));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    check(
        mean >= GAP_POINTS,
        format!("regularized minus plain Bi-LSTM test accuracy, mean {mean:.2} points (>= {GAP_POINTS}); {}", lines.join("; ")),
    )
}

fn criterion_7() -> Outcome {
    let (model, train_set, valid) = tiny_setup(Variant::BiLstm, 7);
    let cfg = |threads| TrainConfig {
        max_batches: 40,
        eval_every: 10,
        seed: 7,
        threads,
        ..Default::default()
    };
    let one = train(&train_set, &valid, model.clone(), &cfg(1)).unwrap();
    let four = train(&train_set, &valid, model, &cfg(4)).unwrap();
    let same = write_checkpoint(&one.best) == write_checkpoint(&four.best)
        && write_checkpoint(&one.last) == write_checkpoint(&four.last)
        && one.log == four.log;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&one.best, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let reference = one.best.quantized();
    let mut exact = true;
    for s in valid.sentences.iter().chain(&train_set.sentences) {
        let a = loaded.predict(&s.tokens).unwrap();
        let b = reference.predict(&s.tokens).unwrap();
        exact &= a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    }
    check(
        same && exact,
        format!("threads 1 vs 4 checkpoints and logs identical: {same}; reloaded predictions bit-identical on {} sentences: {exact}", valid.len() + train_set.len()),
    )
}

fn table_counts(dir: &Path) -> Result<String, String> {
    let lexicon = load_lexicon_tsv(&dir.join("lexicon.tsv")).map_err(|e| e.to_string())?;
    let (lexicon, _) = build_lexicon(&lexicon, &[]);
    let lists = WordLists::default();
    let (mr, _) = load_mr(&dir.join("mr/rt-polarity.pos"), &dir.join("mr/rt-polarity.neg")).map_err(|e| e.to_string())?;
    let (tr, dv, te) = load_sst_splits(&dir.join("sst"))
        .map_err(|e| e.to_string())?
        .ok_or("sst split files missing")?;
    let sst = Dataset::new("sst", tr.scheme.clone(), [tr.sentences, dv.sentences, te.sentences].concat()).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    let mut report = Vec::new();
    for (name, ds, want) in [("mr", &mr, [10_662, 10_446, 1_644, 2_687]), ("sst", &sst, [11_885, 11_211, 1_832, 2_472])] {
        let s = corpus_stats(ds, &lists, &lexicon);
        let got = [s.total, s.with_sentiment, s.with_negation, s.with_intensity];
        for (g, w) in got.iter().zip(want) {
            if (*g as f64 - w as f64).abs() > TABLE_TOLERANCE * w as f64 {
                failures.push(format!("{name}: {g} vs {w}"));
            }
        }
        report.push(format!("{name} {got:?}"));
    }
    if failures.is_empty() {
        Ok(report.join(", "))
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_8() -> Vec<(String, Outcome)> {
    let trees = [
        "(3 (2 it) (4 (3 (2 is) (4 great)) (2 .)))",
        "(1 (2 (2 not) (3 good)) (2 ,) (1 (2 really) (1 dull)))",
        "(2 single)",
    ];
    let mut ok = true;
    let mut leaves = 0;
    for t in trees {
        let parsed = parse_sst_tree(t, "acceptance").unwrap();
        let expected: Vec<String> = t
            .split(['(', ')'])
            .filter_map(|chunk| chunk.split_whitespace().nth(1).map(String::from))
            .collect();
        leaves += expected.len();
        ok &= parsed.sentence.tokens == expected;
        let polar: Vec<(String, u8)> = t
            .split(['(', ')'])
            .filter_map(|chunk| {
                let mut it = chunk.split_whitespace();
                let label: u8 = it.next()?.parse().ok()?;
                let word = it.next()?;
                (label != 2).then(|| (word.to_string(), label))
            })
            .collect();
        ok &= parsed.polar_leaves == polar;
    }
    let parser = check(ok, format!("{} trees, {leaves} leaves reproduced in order with labels", trees.len()));
    let counts = match std::env::var_os("LRLSTM_DATA_DIR").map(PathBuf::from) {
        None => Outcome::Skip("LRLSTM_DATA_DIR not set; official MR/SST files unavailable".into()),
        Some(dir) => match table_counts(&dir) {
            Ok(r) => Outcome::Pass(format!("within ±1%: {r}")),
            Err(e) => Outcome::Fail(e),
        },
    };
    vec![("8a sst-parser-roundtrip".into(), parser), ("8b corpus-statistics".into(), counts)]
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| args.is_empty() || args.iter().any(|a| name.contains(a.as_str()));
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 gradient-correctness", criterion_1),
        ("2 kl-and-hinge-properties", criterion_2),
        ("3 ablation-identity", criterion_3),
        ("4 reduction-identities", criterion_4),
        ("5 overfit", criterion_5),
        ("6 synthetic-linguistics-gain", criterion_6),
        ("7 determinism-and-roundtrip", criterion_7),
    ];
    let mut results: Vec<(String, Outcome)> = Vec::new();
    for (name, f) in criteria {
        if wanted(name) {
            results.push((name.to_string(), f()));
        }
    }
    if wanted("8 parser-and-stats") {
        results.extend(criterion_8());
    }
    let mut failed = 0;
    for (name, outcome) in &results {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("acceptance {name}: {tag} - {detail}");
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
