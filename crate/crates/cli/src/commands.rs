use std::fs;
use std::path::{Path, PathBuf};

use lrlstm::analysis::{
    accuracy_csv, evaluate, extract_phrase_pairs, intensity_transitions, matrices_csv, negation_curve, pairs_csv,
    run_ablation, AblationSpec, AccuracyRow, ModifierSet,
};
use lrlstm::corpus::{
    corpus_stats, extract_subset, load_mr, load_sst_splits, split_dataset, CorpusStats, Dataset, LabelScheme,
    RoleFilter,
};
use lrlstm::model::{load_checkpoint, save_checkpoint, ModelParams, Variant};
use lrlstm::resources::{
    build_lexicon, load_embeddings, load_lexicon_tsv, parse_mpqa_clues, EmbeddingTable, Lexicon, Vocab, WordLists,
};
use lrlstm::synthetic::{check_instance, grad_instance, templated_corpus, TemplateConfig};
use lrlstm::training::train as train_model;

use crate::config::{write_file, DataSource, RunConfig, SEED_FILE, SNAPSHOT_FILE};
use crate::CliError;

pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub lexicon: Lexicon,
    pub lists: WordLists,
}

impl Splits {
    fn all(&self) -> [&Dataset; 3] {
        [&self.train, &self.valid, &self.test]
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))
}

/// Lexicon sources named in the configuration; `None` when there are none.
fn configured_lexicon(cfg: &RunConfig) -> Result<Option<Lexicon>, CliError> {
    let r = &cfg.resources;
    if r.lexicon.is_none() && r.mpqa.is_none() {
        return Ok(None);
    }
    let a = match &r.lexicon {
        Some(p) => load_lexicon_tsv(p)?,
        None => Vec::new(),
    };
    let b = match &r.mpqa {
        Some(p) => parse_mpqa_clues(&read(p)?, &p.display().to_string())?,
        None => Vec::new(),
    };
    let (lexicon, report) = build_lexicon(&a, &b);
    log::info!("lexicon: {} entries kept, {} dropped as conflicting", report.kept, report.dropped);
    Ok(Some(lexicon))
}

fn configured_lists(cfg: &RunConfig) -> Result<Option<WordLists>, CliError> {
    match (&cfg.resources.negators, &cfg.resources.intensifiers) {
        (Some(n), Some(i)) => Ok(Some(WordLists::from_files(n, i)?)),
        _ => Ok(None),
    }
}

/// Loads the configured data source and annotates every split.
pub fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let d = &cfg.data;
    let seed = cfg.run.seed;
    let lexicon = configured_lexicon(cfg)?;
    let lists = configured_lists(cfg)?;
    let (train, valid, test, default_lexicon, default_lists) = match d.source {
        DataSource::Templated => {
            let corpus = templated_corpus(&TemplateConfig {
                seed,
                ..TemplateConfig::default()
            })?;
            (corpus.train, corpus.valid, corpus.test, corpus.lexicon, corpus.lists)
        }
        DataSource::Mr => {
            let (all, report) = load_mr(d.mr_pos.as_deref().unwrap(), d.mr_neg.as_deref().unwrap())?;
            log::info!("mr: {} sentences, ingest {:?}", all.len(), report);
            let (a, b, c) = split_dataset(&all, d.split, seed)?;
            (a, b, c, Lexicon::default(), WordLists::default())
        }
        DataSource::Sst => {
            let dir = d.sst_dir.as_deref().unwrap();
            let (a, b, c) = load_sst_splits(dir)?
                .ok_or_else(|| CliError::Usage(format!("data.sst_dir: {} lacks train/dev/test.txt", dir.display())))?;
            (a, b, c, Lexicon::default(), WordLists::default())
        }
        DataSource::Tsv => {
            let scheme = LabelScheme::for_classes(d.classes)?;
            let load = |key: &Option<PathBuf>, name: &str| -> Result<Dataset, CliError> {
                let path = key.as_deref().unwrap();
                let (ds, report) = Dataset::from_tsv(&read(path)?, name, scheme.clone())?;
                log::info!("{name}: {} sentences, ingest {:?}", ds.len(), report);
                Ok(ds)
            };
            (
                load(&d.train, "train")?,
                load(&d.valid, "valid")?,
                load(&d.test, "test")?,
                Lexicon::default(),
                WordLists::default(),
            )
        }
    };
    if lexicon.is_none() && d.source != DataSource::Templated {
        log::warn!("no lexicon configured; sentiment regularizers will not fire");
    }
    let mut s = Splits {
        train,
        valid,
        test,
        lexicon: lexicon.unwrap_or(default_lexicon),
        lists: lists.unwrap_or(default_lists),
    };
    for ds in [&mut s.train, &mut s.valid, &mut s.test] {
        ds.annotate(&s.lexicon, &s.lists);
    }
    Ok(s)
}

fn init_model(cfg: &RunConfig, splits: &Splits) -> Result<ModelParams, CliError> {
    let variant = cfg.variant()?;
    let vocab = Vocab::from_words(splits.all().iter().flat_map(|ds| ds.sentences.iter().flat_map(|s| s.tokens.iter())));
    let seed = cfg.run.seed;
    let dim = cfg.model.embed_dim;
    let embeddings = match &cfg.resources.embeddings {
        Some(path) => load_embeddings(path, vocab, dim, seed)?,
        None => EmbeddingTable::random(vocab, dim, seed),
    };
    let classes = splits.train.scheme.classes();
    Ok(ModelParams::init(seed, variant, cfg.model.hidden, classes, &splits.lists, embeddings)?)
}

fn checkpoint(cfg: &RunConfig) -> Result<ModelParams, CliError> {
    let path = cfg.model.checkpoint.as_deref().unwrap();
    Ok(load_checkpoint(path)?)
}

/// The test split followed by its non-empty negation and intensity subsets.
fn eval_sets(splits: &Splits) -> Vec<Dataset> {
    let mut sets = vec![splits.test.clone()];
    for filter in [RoleFilter::ContainsNegator, RoleFilter::ContainsIntensifier] {
        let sub = extract_subset(&splits.test, filter, &splits.lists, &splits.lexicon);
        if !sub.is_empty() {
            sets.push(sub);
        }
    }
    sets
}

fn score(model: &ModelParams, sets: &[Dataset], config_id: &str) -> Result<Vec<AccuracyRow>, CliError> {
    sets.iter()
        .map(|ds| {
            Ok(AccuracyRow {
                config_id: config_id.to_string(),
                dataset: ds.name.clone(),
                accuracy: evaluate(model, ds)?,
            })
        })
        .collect()
}

fn print_rows(rows: &[AccuracyRow]) {
    for r in rows {
        println!("{} {}: accuracy {:.4}", r.config_id, r.dataset, r.accuracy);
    }
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let splits = load_splits(cfg)?;
    let model = init_model(cfg, &splits)?;
    let tc = cfg.train_config()?;
    let outcome = train_model(&splits.train, &splits.valid, model, &tc)?;
    let out = &cfg.run.out;
    save_checkpoint(&outcome.best, &out.join("best.ckpt"))?;
    save_checkpoint(&outcome.last, &out.join("last.ckpt"))?;
    write_file(&out.join("train_log.csv"), &outcome.log.to_csv())?;
    if let Some(e) = outcome.aborted {
        return Err(CliError::Runtime(format!("training stopped early: {e}")));
    }
    if let Some(best) = outcome.log.best_record() {
        println!("best validation accuracy {:.4} at batch {}", best.valid_accuracy, best.batch);
    }
    let rows = score(&outcome.best, &eval_sets(&splits), "best")?;
    print_rows(&rows);
    write_file(&out.join("accuracy.csv"), &accuracy_csv(&rows))
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let model = checkpoint(cfg)?;
    let splits = load_splits(cfg)?;
    let rows = score(&model, &eval_sets(&splits), "checkpoint")?;
    print_rows(&rows);
    write_file(&cfg.run.out.join("accuracy.csv"), &accuracy_csv(&rows))
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let splits = load_splits(cfg)?;
    let initial = init_model(cfg, &splits)?;
    let tc = cfg.train_config()?;
    let sets = eval_sets(&splits);
    let refs: Vec<&Dataset> = sets.iter().collect();
    let (rows, runs) = run_ablation(&AblationSpec::leave_one_out(), &initial, &splits.train, &splits.valid, &refs, &tc)?;
    let logs = cfg.run.out.join("ablation_logs");
    fs::create_dir_all(&logs).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", logs.display())))?;
    for run in &runs {
        let off = run.enabled.disabled();
        let label = if off.is_empty() {
            "none".to_string()
        } else {
            off.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
        };
        write_file(&logs.join(format!("disable-{label}.csv")), &run.log.to_csv())?;
    }
    print_rows(&rows);
    write_file(&cfg.run.out.join("ablation.csv"), &accuracy_csv(&rows))
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let splits = load_splits(cfg)?;
    let mut csv = format!("{}\n", CorpusStats::CSV_HEADER);
    let mut report = String::new();
    let mut total = CorpusStats::default();
    for ds in splits.all() {
        let s = corpus_stats(ds, &splits.lists, &splits.lexicon);
        total.total += s.total;
        total.with_sentiment += s.with_sentiment;
        total.with_negation += s.with_negation;
        total.with_intensity += s.with_intensity;
        csv.push_str(&s.to_csv_row(&ds.name));
        csv.push('\n');
        report.push_str(&s.to_report(&ds.name));
        report.push('\n');
    }
    csv.push_str(&total.to_csv_row("all"));
    csv.push('\n');
    report.push_str(&total.to_report("all"));
    print!("{report}");
    write_file(&cfg.run.out.join("stats.csv"), &csv)
}

pub fn subset(cfg: &RunConfig) -> Result<(), CliError> {
    let splits = load_splits(cfg)?;
    for ds in splits.all() {
        for filter in [RoleFilter::ContainsNegator, RoleFilter::ContainsIntensifier] {
            let sub = extract_subset(ds, filter, &splits.lists, &splits.lexicon);
            println!("{}: {} sentences", sub.name, sub.len());
            write_file(&cfg.run.out.join(format!("{}.tsv", sub.name)), &sub.to_tsv())?;
        }
    }
    Ok(())
}

fn file_stem(word: &str) -> String {
    word.chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect()
}

fn window(cfg: &RunConfig) -> Option<usize> {
    (cfg.analysis.window > 0).then_some(cfg.analysis.window)
}

pub fn analyze_negation(cfg: &RunConfig) -> Result<(), CliError> {
    let model = checkpoint(cfg)?;
    let splits = load_splits(cfg)?;
    let out = &cfg.run.out;
    let curves = out.join("negation_curves");
    fs::create_dir_all(&curves).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", curves.display())))?;
    let classes = model.dims.classes;
    for (word, id) in model.lists.negators().iter().zip(&model.handles.linguistic.negators) {
        let curve = negation_curve(&model.store.get(*id).data, classes, cfg.analysis.grid)?;
        write_file(&curves.join(format!("{}.csv", file_stem(word))), &curve.to_csv())?;
    }
    let pairs = extract_phrase_pairs(&model, &splits.test, ModifierSet::Negators, window(cfg))?;
    let flipped = pairs.iter().filter(|p| p.base_label() != p.modified_label()).count();
    println!("{} negator phrase pairs, {} change the predicted label", pairs.len(), flipped);
    write_file(&out.join("negation_pairs.csv"), &pairs_csv(&pairs))
}

pub fn analyze_intensity(cfg: &RunConfig) -> Result<(), CliError> {
    let model = checkpoint(cfg)?;
    let splits = load_splits(cfg)?;
    let out = &cfg.run.out;
    let pairs = extract_phrase_pairs(&model, &splits.test, ModifierSet::Intensifiers, window(cfg))?;
    let matrices: Vec<_> = model
        .lists
        .intensifiers()
        .iter()
        .map(|w| intensity_transitions(&pairs, w, model.dims.classes))
        .filter(|m| m.total() > 0)
        .collect();
    println!("{} intensifier phrase pairs over {} words", pairs.len(), matrices.len());
    write_file(&out.join("intensity_pairs.csv"), &pairs_csv(&pairs))?;
    write_file(&out.join("intensity_matrices.csv"), &matrices_csv(&matrices))
}

pub fn export_lexicon(cfg: &RunConfig) -> Result<(), CliError> {
    let lexicon = configured_lexicon(cfg)?
        .ok_or_else(|| CliError::Usage("export-lexicon needs resources.lexicon or resources.mpqa".into()))?;
    println!("{} lexicon entries", lexicon.len());
    write_file(&cfg.run.out.join("lexicon.tsv"), &lexicon.to_tsv())
}

pub struct GradcheckOptions {
    pub seed: u64,
    pub variant: Variant,
    pub classes: usize,
    pub len: usize,
    pub hidden: usize,
    pub step: f64,
    pub tolerance: f64,
    pub out: Option<PathBuf>,
}

pub fn gradcheck(o: &GradcheckOptions) -> Result<(), CliError> {
    if !(2..=5).contains(&o.classes) || !(1..=6).contains(&o.len) || o.hidden == 0 {
        return Err(CliError::Usage("gradcheck needs 2 <= --classes <= 5, 1 <= --len <= 6 and --hidden >= 1".into()));
    }
    if !(o.step > 0.0) {
        return Err(CliError::Usage(format!("--step must be > 0, got {}", o.step)));
    }
    let inst = grad_instance(o.seed, o.variant, o.classes, o.len, o.hidden)?;
    let report = check_instance(&inst, o.step)?;
    let (block, index) = report.worst.clone().unwrap_or_default();
    println!(
        "gradcheck seed {} {}: max relative error {:.3e} over {} entries (worst {block}[{index}])",
        o.seed, o.variant, report.max_relative_error, report.entries_checked
    );
    if let Some(dir) = &o.out {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        let snapshot = format!(
            "[gradcheck]\nseed = {}\nmodel = \"{}\"\nclasses = {}\nlen = {}\nhidden = {}\nstep = {:e}\ntolerance = {:e}\n",
            o.seed, o.variant, o.classes, o.len, o.hidden, o.step, o.tolerance
        );
        write_file(&dir.join(SNAPSHOT_FILE), &snapshot)?;
        write_file(&dir.join(SEED_FILE), &format!("{}\n", o.seed))?;
    }
    if report.max_relative_error <= o.tolerance {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_relative_error, o.tolerance
        )))
    }
}
